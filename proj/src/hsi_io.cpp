#include "cvm/hsi_io.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include <json.hpp>

namespace cvm {

namespace {

struct ByteReader {
    const std::uint8_t* p;
    std::size_t size;
    std::size_t off = 0;

    void need(std::size_t n, const char* what) {
        if (off + n > size)
            throw FormatError(std::string("truncated ") + what + " at byte offset " +
                              std::to_string(off) + " (need " + std::to_string(n) + " bytes, " +
                              std::to_string(size - off) + " remain)");
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return p[off++];
    }
    std::uint16_t u16(const char* what) {
        need(2, what);
        std::uint16_t v = static_cast<std::uint16_t>(p[off] | (p[off + 1] << 8));
        off += 2;
        return v;
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | p[off + static_cast<std::size_t>(i)];
        off += 4;
        return v;
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 7; i >= 0; --i) v = (v << 8) | p[off + static_cast<std::size_t>(i)];
        off += 8;
        return v;
    }
    float f32(const char* what) {
        std::uint32_t bits = u32(what);
        float v;
        std::memcpy(&v, &bits, sizeof v);
        return v;
    }
    double f64(const char* what) {
        std::uint64_t bits = u64(what);
        double v;
        std::memcpy(&v, &bits, sizeof v);
        return v;
    }
    std::string str(std::size_t n, const char* what) {
        need(n, what);
        std::string s(reinterpret_cast<const char*>(p + off), n);
        off += n;
        return s;
    }
};

struct ByteWriter {
    std::vector<std::uint8_t> buf;

    void u8(std::uint8_t v) { buf.push_back(v); }
    void u16(std::uint16_t v) {
        buf.push_back(static_cast<std::uint8_t>(v));
        buf.push_back(static_cast<std::uint8_t>(v >> 8));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        u32(bits);
    }
    void f64(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        u64(bits);
    }
    void str(const std::string& s) { buf.insert(buf.end(), s.begin(), s.end()); }
};

void check_magic(ByteReader& r, const char* magic, const char* what) {
    std::string m = r.str(4, "magic");
    if (m != magic)
        throw FormatError(std::string("bad magic \"") + m + "\" for " + what + " at byte offset 0 (expected \"" +
                          magic + "\")");
}

void expect_end(const ByteReader& r, const char* what) {
    if (r.off != r.size)
        throw FormatError(std::string(what) + " has " + std::to_string(r.size - r.off) +
                          " trailing bytes at byte offset " + std::to_string(r.off));
}

} // namespace

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open \"" + path + "\" for reading");
    in.seekg(0, std::ios::end);
    std::streamoff n = in.tellg();
    in.seekg(0, std::ios::beg);
    std::vector<std::uint8_t> buf(static_cast<std::size_t>(n));
    if (n > 0) in.read(reinterpret_cast<char*>(buf.data()), n);
    if (!in) throw FormatError("failed reading \"" + path + "\"");
    return buf;
}

void write_file(const std::string& path, const void* data, std::size_t size) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open \"" + path + "\" for writing");
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!out) throw FormatError("failed writing \"" + path + "\"");
}

void HsiCube::validate() const {
    if (height < 1 || width < 1 || bands < 1)
        throw DimensionError("cube dimensions must be >= 1, got " + std::to_string(height) + "x" +
                             std::to_string(width) + "x" + std::to_string(bands));
    if (data.size() != static_cast<std::size_t>(height) * width * bands)
        throw DimensionError("cube payload size does not match dimensions");
    for (std::size_t i = 0; i < data.size(); ++i)
        if (!std::isfinite(data[i]))
            throw DataError("non-finite cube value at flat index " + std::to_string(i));
}

std::size_t LabelMap::labeled_count() const {
    std::size_t n = 0;
    for (auto v : labels)
        if (v != 0) ++n;
    return n;
}

void LabelMap::validate() const {
    if (height < 1 || width < 1)
        throw DimensionError("label map dimensions must be >= 1");
    if (labels.size() != static_cast<std::size_t>(height) * width)
        throw DimensionError("label payload size does not match dimensions");
    if (!class_names.empty() && static_cast<int>(class_names.size()) != num_classes)
        throw DataError("class_names must have one entry per declared class");
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] > num_classes)
            throw DataError("label " + std::to_string(labels[i]) + " exceeds declared class count " +
                            std::to_string(num_classes) + " at flat index " + std::to_string(i));
}

HsiCube read_cube(const std::string& path) {
    auto bytes = read_file(path);
    ByteReader r{bytes.data(), bytes.size()};
    check_magic(r, "HSI1", "cube");
    HsiCube cube;
    cube.height = static_cast<int>(r.u32("cube header"));
    cube.width = static_cast<int>(r.u32("cube header"));
    cube.bands = static_cast<int>(r.u32("cube header"));
    if (cube.height < 1 || cube.width < 1 || cube.bands < 1)
        throw FormatError("cube header declares empty dimensions at byte offset 4");
    const std::size_t n = static_cast<std::size_t>(cube.height) * cube.width * cube.bands;
    const std::size_t expected = r.off + n * 4;
    if (bytes.size() < expected)
        throw FormatError("truncated cube payload: expected " + std::to_string(expected) +
                          " bytes, file ends at byte offset " + std::to_string(bytes.size()));
    cube.data.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t at = r.off;
        cube.data[i] = r.f32("cube payload");
        if (!std::isfinite(cube.data[i]))
            throw FormatError("non-finite cube value at byte offset " + std::to_string(at));
    }
    expect_end(r, "cube");
    return cube;
}

void write_cube(const HsiCube& cube, const std::string& path) {
    cube.validate();
    ByteWriter w;
    w.str("HSI1");
    w.u32(static_cast<std::uint32_t>(cube.height));
    w.u32(static_cast<std::uint32_t>(cube.width));
    w.u32(static_cast<std::uint32_t>(cube.bands));
    for (float v : cube.data) w.f32(v);
    write_file(path, w.buf.data(), w.buf.size());
}

LabelMap read_labels(const std::string& path) {
    auto bytes = read_file(path);
    ByteReader r{bytes.data(), bytes.size()};
    check_magic(r, "LBL1", "label map");
    LabelMap map;
    map.height = static_cast<int>(r.u32("label header"));
    map.width = static_cast<int>(r.u32("label header"));
    map.num_classes = static_cast<int>(r.u32("label header"));
    if (map.height < 1 || map.width < 1)
        throw FormatError("label header declares empty dimensions at byte offset 4");
    const bool named = r.u8("label header") != 0;
    if (named) {
        map.class_names.resize(static_cast<std::size_t>(map.num_classes));
        for (auto& name : map.class_names) name = r.str(r.u16("class name length"), "class name");
    }
    const std::size_t n = static_cast<std::size_t>(map.height) * map.width;
    const std::size_t expected = r.off + n * 2;
    if (bytes.size() < expected)
        throw FormatError("truncated label payload: expected " + std::to_string(expected) +
                          " bytes, file ends at byte offset " + std::to_string(bytes.size()));
    map.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t at = r.off;
        map.labels[i] = r.u16("label payload");
        if (map.labels[i] > map.num_classes)
            throw FormatError("label " + std::to_string(map.labels[i]) + " exceeds declared class count " +
                              std::to_string(map.num_classes) + " at byte offset " + std::to_string(at));
    }
    expect_end(r, "label map");
    return map;
}

void write_labels(const LabelMap& map, const std::string& path) {
    map.validate();
    ByteWriter w;
    w.str("LBL1");
    w.u32(static_cast<std::uint32_t>(map.height));
    w.u32(static_cast<std::uint32_t>(map.width));
    w.u32(static_cast<std::uint32_t>(map.num_classes));
    w.u8(map.class_names.empty() ? 0 : 1);
    for (const auto& name : map.class_names) {
        w.u16(static_cast<std::uint16_t>(name.size()));
        w.str(name);
    }
    for (std::uint16_t v : map.labels) w.u16(v);
    write_file(path, w.buf.data(), w.buf.size());
}

void save_checkpoint(const NamedTensorList& params, const CheckpointMeta& meta,
                     const std::string& path) {
    {
        std::set<std::string> seen;
        for (const auto& kv : params)
            if (!seen.insert(kv.first).second)
                throw CheckpointError("duplicate parameter \"" + kv.first + "\"");
    }
    ByteWriter w;
    w.str("CKP1");
    w.u32(meta.epoch);
    w.f64(meta.val_accuracy);
    w.u8(meta.has_optimizer_state ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(params.size()));
    std::uint64_t offset = 0;
    for (const auto& [name, tensor] : params) {
        w.u16(static_cast<std::uint16_t>(name.size()));
        w.str(name);
        w.u32(static_cast<std::uint32_t>(tensor.ndim()));
        for (int d : tensor.shape()) w.u32(static_cast<std::uint32_t>(d));
        w.u64(offset);
        offset += static_cast<std::uint64_t>(tensor.numel()) * 4;
    }
    w.u64(offset);
    for (const auto& kv : params)
        for (float v : kv.second.data()) w.f32(v);
    write_file(path, w.buf.data(), w.buf.size());
}

std::pair<NamedTensorList, CheckpointMeta> load_checkpoint(const std::string& path) {
    auto bytes = read_file(path);
    ByteReader r{bytes.data(), bytes.size()};
    check_magic(r, "CKP1", "checkpoint");
    CheckpointMeta meta;
    meta.epoch = r.u32("checkpoint meta");
    meta.val_accuracy = r.f64("checkpoint meta");
    meta.has_optimizer_state = r.u8("checkpoint meta") != 0;
    const std::uint32_t n = r.u32("checkpoint manifest");

    struct Entry {
        std::string name;
        Shape shape;
        std::uint64_t offset;
        std::uint64_t bytes;
    };
    std::vector<Entry> entries;
    entries.reserve(n);
    std::set<std::string> seen;
    for (std::uint32_t i = 0; i < n; ++i) {
        Entry e;
        e.name = r.str(r.u16("manifest name length"), "manifest name");
        if (!seen.insert(e.name).second)
            throw CheckpointError("corrupt manifest: duplicate parameter \"" + e.name + "\"");
        const std::uint32_t ndim = r.u32("manifest shape");
        for (std::uint32_t d = 0; d < ndim; ++d) {
            const std::uint32_t ext = r.u32("manifest shape");
            if (ext == 0) throw CheckpointError("corrupt manifest: zero extent in \"" + e.name + "\"");
            e.shape.push_back(static_cast<int>(ext));
        }
        e.offset = r.u64("manifest offset");
        e.bytes = static_cast<std::uint64_t>(numel_of(e.shape)) * 4;
        entries.push_back(std::move(e));
    }
    const std::uint64_t blob_size = r.u64("blob size");
    if (r.off + blob_size != bytes.size())
        throw FormatError("checkpoint blob size " + std::to_string(blob_size) +
                          " disagrees with file length at byte offset " + std::to_string(r.off));

    std::vector<std::pair<std::uint64_t, std::uint64_t>> spans;
    for (const auto& e : entries) {
        if (e.offset > blob_size || e.bytes > blob_size - e.offset)
            throw CheckpointError("corrupt manifest: \"" + e.name + "\" spans past end of blob (offset " +
                                  std::to_string(e.offset) + " + " + std::to_string(e.bytes) + " > " +
                                  std::to_string(blob_size) + ")");
        spans.emplace_back(e.offset, e.bytes);
    }
    std::sort(spans.begin(), spans.end());
    for (std::size_t i = 1; i < spans.size(); ++i)
        if (spans[i].first < spans[i - 1].first + spans[i - 1].second)
            throw CheckpointError("corrupt manifest: overlapping tensor spans");

    const std::size_t blob_base = r.off;
    NamedTensorList out;
    out.reserve(entries.size());
    for (const auto& e : entries) {
        Tensorf t(e.shape);
        ByteReader fr{bytes.data(), bytes.size(), blob_base + static_cast<std::size_t>(e.offset)};
        for (std::int64_t i = 0; i < t.numel(); ++i)
            t[static_cast<std::size_t>(i)] = fr.f32("checkpoint blob");
        out.emplace_back(e.name, std::move(t));
    }
    return {std::move(out), meta};
}

std::vector<std::uint8_t> render_map(const LabelMap& predictions, const Palette& palette) {
    predictions.validate();
    std::string header = "P6\n" + std::to_string(predictions.width) + " " +
                         std::to_string(predictions.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.reserve(out.size() + predictions.labels.size() * 3);
    for (std::uint16_t v : predictions.labels) {
        if (v == 0) {
            out.insert(out.end(), {0, 0, 0});
            continue;
        }
        auto it = palette.find(static_cast<int>(v));
        if (it == palette.end())
            throw PaletteError("no palette entry for label " + std::to_string(v));
        out.insert(out.end(), it->second.begin(), it->second.end());
    }
    return out;
}

Palette load_palette(const std::string& path) {
    auto bytes = read_file(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("palette \"" + path + "\": " + e.what());
    }
    if (!j.is_object()) throw FormatError("palette must be a JSON object of label -> [r,g,b]");
    Palette p;
    for (auto it = j.begin(); it != j.end(); ++it) {
        int label = 0;
        try {
            label = std::stoi(it.key());
        } catch (...) {
            throw FormatError("palette key \"" + it.key() + "\" is not a label id");
        }
        const auto& rgb = it.value();
        if (!rgb.is_array() || rgb.size() != 3)
            throw FormatError("palette entry for label " + it.key() + " must be [r,g,b]");
        p[label] = {rgb[0].get<std::uint8_t>(), rgb[1].get<std::uint8_t>(), rgb[2].get<std::uint8_t>()};
    }
    return p;
}

// Evenly spaced hues so rendered maps are usable without a palette file.
Palette default_palette(int num_classes) {
    Palette p;
    for (int k = 1; k <= num_classes; ++k) {
        const double h = 6.0 * (k - 1) / std::max(1, num_classes);
        const int i = static_cast<int>(h);
        const double f = h - i;
        const auto q = static_cast<std::uint8_t>(255 * (1.0 - f));
        const auto t = static_cast<std::uint8_t>(255 * f);
        switch (i % 6) {
            case 0: p[k] = {255, t, 0}; break;
            case 1: p[k] = {q, 255, 0}; break;
            case 2: p[k] = {0, 255, t}; break;
            case 3: p[k] = {0, q, 255}; break;
            case 4: p[k] = {t, 0, 255}; break;
            default: p[k] = {255, 0, q}; break;
        }
    }
    return p;
}

} // namespace cvm

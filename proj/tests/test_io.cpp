#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <unistd.h>

#include "cvm/hsi_io.hpp"
#include "cvm/model.hpp"
#include "cvm/rng.hpp"

using namespace cvm;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("cvm_io_" + std::to_string(::getpid()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

HsiCube random_cube(int h, int w, int c, Rng& rng) {
    HsiCube cube{h, w, c, {}};
    cube.data.resize(static_cast<std::size_t>(h) * w * c);
    for (auto& v : cube.data) v = static_cast<float>(rng.normal());
    return cube;
}

} // namespace

TEST_CASE("cube round-trip is bit-exact") {
    TempDir dir;
    Rng rng(1);
    HsiCube cube = random_cube(4, 5, 6, rng);
    write_cube(cube, dir.file("a.hsi"));
    HsiCube back = read_cube(dir.file("a.hsi"));
    CHECK(back.height == 4);
    CHECK(back.width == 5);
    CHECK(back.bands == 6);
    CHECK(back.data == cube.data);
    write_cube(back, dir.file("b.hsi"));
    CHECK(read_file(dir.file("a.hsi")) == read_file(dir.file("b.hsi")));
}

TEST_CASE("cube reader rejects a bad magic") {
    TempDir dir;
    const char bytes[] = "XXXXgarbage";
    write_file(dir.file("bad.hsi"), bytes, sizeof bytes);
    CHECK_THROWS_WITH_AS(read_cube(dir.file("bad.hsi")), doctest::Contains("bad magic"), FormatError);
}

TEST_CASE("truncated cube payload reports the computed offset") {
    TempDir dir;
    Rng rng(2);
    HsiCube cube = random_cube(2, 2, 3, rng);
    write_cube(cube, dir.file("full.hsi"));
    auto bytes = read_file(dir.file("full.hsi"));
    REQUIRE(bytes.size() == 64); // 16 header + 48 payload
    bytes.resize(bytes.size() - 4);
    write_file(dir.file("cut.hsi"), bytes.data(), bytes.size());
    CHECK_THROWS_WITH_AS(read_cube(dir.file("cut.hsi")),
                         doctest::Contains("expected 64 bytes, file ends at byte offset 60"),
                         FormatError);
}

TEST_CASE("cube reader rejects trailing bytes and non-finite values") {
    TempDir dir;
    Rng rng(3);
    HsiCube cube = random_cube(2, 2, 2, rng);
    write_cube(cube, dir.file("c.hsi"));
    auto bytes = read_file(dir.file("c.hsi"));

    auto extended = bytes;
    extended.push_back(0);
    write_file(dir.file("c_ext.hsi"), extended.data(), extended.size());
    CHECK_THROWS_WITH_AS(read_cube(dir.file("c_ext.hsi")), doctest::Contains("trailing"), FormatError);

    auto poisoned = bytes;
    poisoned[16] = 0x00; // first payload float -> NaN
    poisoned[17] = 0x00;
    poisoned[18] = 0xc0;
    poisoned[19] = 0x7f;
    write_file(dir.file("c_nan.hsi"), poisoned.data(), poisoned.size());
    CHECK_THROWS_WITH_AS(read_cube(dir.file("c_nan.hsi")),
                         doctest::Contains("non-finite cube value at byte offset 16"), FormatError);
}

TEST_CASE("label map round-trip and validation") {
    TempDir dir;
    LabelMap map;
    map.height = 3;
    map.width = 3;
    map.num_classes = 4;
    map.labels = {0, 1, 2, 3, 4, 0, 1, 2, 3};
    map.class_names = {"water", "grass", "road", "roof"};
    write_labels(map, dir.file("m.lbl"));
    LabelMap back = read_labels(dir.file("m.lbl"));
    CHECK(back.labels == map.labels);
    CHECK(back.class_names == map.class_names);
    write_labels(back, dir.file("m2.lbl"));
    CHECK(read_file(dir.file("m.lbl")) == read_file(dir.file("m2.lbl")));
}

TEST_CASE("labels beyond the declared class count are rejected") {
    TempDir dir;
    LabelMap map;
    map.height = 1;
    map.width = 3;
    map.num_classes = 2;
    map.labels = {0, 1, 3};
    CHECK_THROWS_WITH_AS(write_labels(map, dir.file("bad.lbl")), doctest::Contains("label 3"),
                         DataError);

    map.labels = {0, 1, 2};
    write_labels(map, dir.file("ok.lbl"));
    auto bytes = read_file(dir.file("ok.lbl"));
    bytes[bytes.size() - 2] = 9; // last u16 label -> 9
    write_file(dir.file("tampered.lbl"), bytes.data(), bytes.size());
    CHECK_THROWS_WITH_AS(read_labels(dir.file("tampered.lbl")), doctest::Contains("label 9"),
                         FormatError);
}

TEST_CASE("an all-zero label map is valid with zero labeled pixels") {
    TempDir dir;
    LabelMap map;
    map.height = 2;
    map.width = 2;
    map.num_classes = 3;
    map.labels = {0, 0, 0, 0};
    write_labels(map, dir.file("z.lbl"));
    CHECK(read_labels(dir.file("z.lbl")).labeled_count() == 0);
}

TEST_CASE("checkpoint round-trips full model parameters bit-exactly") {
    TempDir dir;
    ModelConfig cfg;
    cfg.patch_size = 5;
    cfg.input_bands = 4;
    cfg.embed_dim = 16;
    cfg.heads = 2;
    cfg.encoder_layers = 1;
    cfg.head_hidden = 8;
    cfg.num_classes = 3;
    ModelParamsF params = init_params(cfg, 9);
    CheckpointMeta meta{42, 0.875, false};
    save_checkpoint(params.items, meta, dir.file("p.ckpt"));
    auto [back, back_meta] = load_checkpoint(dir.file("p.ckpt"));
    CHECK(back_meta.epoch == 42);
    CHECK(back_meta.val_accuracy == 0.875);
    REQUIRE(back.size() == params.items.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].first == params.items[i].first);
        CHECK(back[i].second.data() == params.items[i].second.data());
    }
    ModelParamsF restored = params_from_tensors(cfg, back);
    for (std::size_t i = 0; i < restored.items.size(); ++i)
        CHECK(restored.items[i].second.data() == params.items[i].second.data());
}

TEST_CASE("loading into a different architecture names the offending tensor") {
    TempDir dir;
    ModelConfig small;
    small.patch_size = 5;
    small.input_bands = 4;
    small.embed_dim = 16;
    small.heads = 2;
    small.encoder_layers = 1;
    small.head_hidden = 8;
    small.num_classes = 3;
    save_checkpoint(init_params(small, 1).items, CheckpointMeta{}, dir.file("s.ckpt"));
    auto [tensors, meta] = load_checkpoint(dir.file("s.ckpt"));

    ModelConfig wide = small;
    wide.embed_dim = 32;
    CHECK_THROWS_WITH_AS(params_from_tensors(wide, tensors), doctest::Contains("shape mismatch"),
                         CheckpointError);

    NamedTensorList missing(tensors.begin(), tensors.end() - 1);
    CHECK_THROWS_WITH_AS(params_from_tensors(small, missing), doctest::Contains("missing parameter"),
                         CheckpointError);
}

TEST_CASE("corrupt manifest offsets are rejected") {
    TempDir dir;
    NamedTensorList params;
    params.emplace_back("a", Tensorf(Shape{2}, {1.0f, 2.0f}));
    save_checkpoint(params, CheckpointMeta{}, dir.file("one.ckpt"));
    auto bytes = read_file(dir.file("one.ckpt"));
    // layout up to the offset field: magic(4) epoch(4) val(8) flag(1) count(4)
    // name_len(2) name(1) ndim(4) dim(4)
    const std::size_t offset_pos = 4 + 4 + 8 + 1 + 4 + 2 + 1 + 4 + 4;
    for (int i = 0; i < 8; ++i) bytes[offset_pos + static_cast<std::size_t>(i)] = 0xff;
    write_file(dir.file("corrupt.ckpt"), bytes.data(), bytes.size());
    CHECK_THROWS_WITH_AS(load_checkpoint(dir.file("corrupt.ckpt")),
                         doctest::Contains("past end of blob"), CheckpointError);

    NamedTensorList dup;
    dup.emplace_back("x", Tensorf(Shape{1}, {0.0f}));
    dup.emplace_back("x", Tensorf(Shape{1}, {1.0f}));
    CHECK_THROWS_AS(save_checkpoint(dup, CheckpointMeta{}, dir.file("dup.ckpt")), CheckpointError);
}

TEST_CASE("render_map produces deterministic P6 bytes") {
    LabelMap map;
    map.height = 1;
    map.width = 2;
    map.num_classes = 1;
    map.labels = {0, 1};
    Palette palette{{1, {255, 0, 0}}};
    auto bytes = render_map(map, palette);
    const std::string header = "P6\n2 1\n255\n";
    REQUIRE(bytes.size() == header.size() + 6);
    CHECK(std::equal(header.begin(), header.end(), bytes.begin()));
    const std::size_t p = header.size();
    CHECK(bytes[p + 0] == 0);
    CHECK(bytes[p + 1] == 0);
    CHECK(bytes[p + 2] == 0);
    CHECK(bytes[p + 3] == 255);
    CHECK(bytes[p + 4] == 0);
    CHECK(bytes[p + 5] == 0);
    CHECK(render_map(map, palette) == bytes);

    LabelMap all1;
    all1.height = 2;
    all1.width = 2;
    all1.num_classes = 1;
    all1.labels = {1, 1, 1, 1};
    auto b2 = render_map(all1, palette);
    CHECK(b2.size() - std::string("P6\n2 2\n255\n").size() == 12);

    LabelMap unknown = all1;
    unknown.num_classes = 2;
    unknown.labels = {1, 2, 1, 1};
    CHECK_THROWS_WITH_AS(render_map(unknown, palette), doctest::Contains("label 2"), PaletteError);
}

TEST_CASE("randomized round-trip property for all three formats") {
    TempDir dir;
    Rng rng(1234);
    for (int trial = 0; trial < 10; ++trial) {
        HsiCube cube = random_cube(1 + static_cast<int>(rng.uniform_index(5)),
                                   1 + static_cast<int>(rng.uniform_index(5)),
                                   1 + static_cast<int>(rng.uniform_index(6)), rng);
        write_cube(cube, dir.file("r.hsi"));
        CHECK(read_cube(dir.file("r.hsi")).data == cube.data);

        LabelMap map;
        map.height = cube.height;
        map.width = cube.width;
        map.num_classes = 5;
        map.labels.resize(static_cast<std::size_t>(cube.height) * cube.width);
        for (auto& v : map.labels) v = static_cast<std::uint16_t>(rng.uniform_index(6));
        write_labels(map, dir.file("r.lbl"));
        CHECK(read_labels(dir.file("r.lbl")).labels == map.labels);

        NamedTensorList list;
        const int count = 1 + static_cast<int>(rng.uniform_index(4));
        for (int i = 0; i < count; ++i) {
            Tensorf t(Shape{1 + static_cast<int>(rng.uniform_index(4)),
                            1 + static_cast<int>(rng.uniform_index(4))});
            for (auto& v : t.data()) v = static_cast<float>(rng.normal());
            list.emplace_back("t" + std::to_string(i), std::move(t));
        }
        save_checkpoint(list, CheckpointMeta{7, 0.5, true}, dir.file("r.ckpt"));
        auto [back, meta] = load_checkpoint(dir.file("r.ckpt"));
        REQUIRE(back.size() == list.size());
        for (std::size_t i = 0; i < back.size(); ++i)
            CHECK(back[i].second.data() == list[i].second.data());
        CHECK(meta.has_optimizer_state);
    }
}

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cvm/error.hpp"
#include "cvm/tensor.hpp"

namespace cvm {

// Reflectance cube, pixel-interleaved: index = (y*W + x)*C + b.
struct HsiCube {
    int height = 0;
    int width = 0;
    int bands = 0;
    std::vector<float> data;

    float& at(int y, int x, int b) {
        return data[(static_cast<std::size_t>(y) * width + x) * bands + b];
    }
    float at(int y, int x, int b) const {
        return data[(static_cast<std::size_t>(y) * width + x) * bands + b];
    }
    void validate() const;
};

// Per-pixel class ids; 0 means unlabeled. num_classes is the declared K.
struct LabelMap {
    int height = 0;
    int width = 0;
    int num_classes = 0;
    std::vector<std::uint16_t> labels;
    std::vector<std::string> class_names; // optional; indexed from 1 when present

    std::uint16_t at(int y, int x) const {
        return labels[static_cast<std::size_t>(y) * width + x];
    }
    std::size_t labeled_count() const;
    void validate() const;
};

struct CheckpointMeta {
    std::uint32_t epoch = 0;
    double val_accuracy = 0.0;
    bool has_optimizer_state = false;
};

using NamedTensorList = std::vector<std::pair<std::string, Tensorf>>;

using Palette = std::map<int, std::array<std::uint8_t, 3>>;

// Binary formats (all little-endian):
//   cube       "HSI1" | u32 H,W,C            | H*W*C f32
//   labels     "LBL1" | u32 H,W,K | u8 named | [K strings] | H*W u16
//   checkpoint "CKP1" | u32 epoch | f64 val_acc | u8 opt_flag | u32 n
//              | n x (u16 len, name, u32 ndim, u32 dims[], u64 offset)
//              | u64 blob_size | blob f32
HsiCube read_cube(const std::string& path);
void write_cube(const HsiCube& cube, const std::string& path);

LabelMap read_labels(const std::string& path);
void write_labels(const LabelMap& map, const std::string& path);

void save_checkpoint(const NamedTensorList& params, const CheckpointMeta& meta,
                     const std::string& path);
std::pair<NamedTensorList, CheckpointMeta> load_checkpoint(const std::string& path);

// Binary P6 pixmap; label 0 renders black, every other label must have a
// palette entry.
std::vector<std::uint8_t> render_map(const LabelMap& predictions, const Palette& palette);

Palette load_palette(const std::string& path);
Palette default_palette(int num_classes);

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const void* data, std::size_t size);

} // namespace cvm

#pragma once

#include <cstdint>

#include "cvm/hsi_io.hpp"

namespace cvm {

// Seeded synthetic scene: K Gaussian spectral prototypes, per-pixel noise and
// a blocky spatial class layout, with a near-balanced set of labeled pixels.
struct SyntheticSpec {
    int height = 32;
    int width = 32;
    int bands = 16;
    int classes = 4;
    int labeled = 200;
    int block = 8;        // spatial cell size of the class layout
    double noise = 0.05;  // per-band Gaussian noise sigma
    std::uint64_t seed = 0;
};

struct SyntheticScene {
    HsiCube cube;
    LabelMap labels;
};

SyntheticScene make_synthetic(const SyntheticSpec& spec);

} // namespace cvm

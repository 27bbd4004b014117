#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "cvm/hsi_io.hpp"
#include "cvm/tensor.hpp"

namespace cvm {

// Orthonormal spectral projection fitted on cube pixels. components is C x B
// row-major; column j holds the j-th principal direction (descending
// eigenvalue order, largest-|entry| coordinate positive).
struct PcaModel {
    int input_bands = 0; // C
    int retained = 0;    // B
    std::vector<float> mean;
    std::vector<float> components;
    std::vector<float> eigenvalues;
};

PcaModel pca_fit(const HsiCube& cube, int retain, int sample_stride = 1);
HsiCube pca_apply(const HsiCube& cube, const PcaModel& model);
HsiCube pca_inverse(const HsiCube& reduced, const PcaModel& model);

// Checkpoint-format serialisation under the reserved names
// "pca.mean", "pca.components", "pca.eigenvalues".
NamedTensorList pca_to_tensors(const PcaModel& model);
PcaModel pca_from_tensors(const NamedTensorList& tensors);

// Symmetric eigensolver used by pca_fit, exposed for reuse: cyclic Jacobi
// sweeps until the off-diagonal Frobenius norm drops below `tol`.
// Returns eigenvalues (descending) and column eigenvectors (n x n row-major).
std::pair<std::vector<double>, std::vector<double>> jacobi_eigh(std::vector<double> a, int n,
                                                                double tol = 1e-9,
                                                                int max_sweeps = 100);

// One zero-padded S x S x B patch per labeled pixel, row-major scan order.
struct PatchSet {
    int patch_size = 0;
    int bands = 0;
    Tensorf patches;                         // [N,S,S,B]
    std::vector<int> labels;                 // class ids >= 1
    std::vector<std::pair<int, int>> coords; // (y, x)

    int count() const { return static_cast<int>(labels.size()); }
};

PatchSet extract_patches(const HsiCube& cube, const LabelMap& labels, int patch_size);

enum class SplitTag : std::uint8_t { Train, Val, Test };

struct SplitSpec {
    std::uint64_t seed = 0;
    double val_fraction = 0.3;   // carved out of the training pool, per class
    double train_fraction = 0.3; // pool size per class when no mask is given
};

struct SplitResult {
    std::vector<SplitTag> assignment; // per sample
    std::vector<int> train_idx, val_idx, test_idx;
    std::vector<int> small_classes; // kept entirely in train (fewer than 2 pool samples)
};

// Stratified deterministic split. With a train mask, masked labeled pixels
// form the train pool and every other labeled pixel is test; otherwise the
// pool is a seeded per-class draw of train_fraction.
SplitResult split(const PatchSet& set, const SplitSpec& spec, const LabelMap* train_mask = nullptr);

} // namespace cvm

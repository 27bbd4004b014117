#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "cvm/rng.hpp"
#include "cvm/tensor.hpp"

namespace cvm {

// Central-difference gradient check, evaluated in 64-bit. The loss function
// must be deterministic and must re-read the leaf tensors on every call (the
// leaves are perturbed in place between evaluations). Returns the maximum of
// |analytic - numeric| / (|analytic| + |numeric| + 1e-8) over the sampled
// coordinates.
template <typename F>
double gradcheck_leaves(F&& loss_fn, std::vector<Tensord> leaves, int samples, double step,
                        Rng& rng) {
    if (samples < 1) throw ContractError("gradcheck requires samples >= 1");
    if (leaves.empty()) throw ContractError("gradcheck requires at least one leaf");
    for (auto& leaf : leaves) {
        leaf.set_requires_grad(true);
        leaf.grad(); // allocate
        leaf.zero_grad();
    }

    Taped tape;
    Tensord loss = loss_fn(&tape);
    if (loss.numel() != 1)
        throw ContractError("gradcheck loss must be scalar, got " + shape_str(loss.shape()));
    tape.backward(loss);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(leaves.size());
    for (auto& leaf : leaves) analytic.push_back(leaf.grad());
    tape.clear();

    std::int64_t total = 0;
    for (const auto& leaf : leaves) total += leaf.numel();

    double max_rel = 0.0;
    for (int s = 0; s < samples; ++s) {
        std::int64_t flat = static_cast<std::int64_t>(rng.uniform_index(static_cast<std::uint64_t>(total)));
        std::size_t li = 0;
        while (flat >= leaves[li].numel()) {
            flat -= leaves[li].numel();
            ++li;
        }
        const std::size_t ci = static_cast<std::size_t>(flat);
        const std::string where = "leaf " + std::to_string(li) + " coordinate " + std::to_string(ci);

        double& slot = leaves[li].data()[ci];
        const double saved = slot;
        slot = saved + step;
        const double fplus = loss_fn(nullptr).item();
        slot = saved - step;
        const double fminus = loss_fn(nullptr).item();
        slot = saved;

        const double numeric = (fplus - fminus) / (2.0 * step);
        const double a = analytic[li][ci];
        if (!std::isfinite(numeric) || !std::isfinite(a))
            throw NumericError("gradcheck produced non-finite value at " + where);
        const double rel = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-8);
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

// Single-tensor form: f maps the input tensor to a scalar loss.
template <typename F>
double gradcheck(F&& f, const Tensord& x, int samples, double step, Rng& rng) {
    Tensord leaf = x.clone();
    auto loss_fn = [&](Taped* tape) { return f(leaf, tape); };
    return gradcheck_leaves(loss_fn, {leaf}, samples, step, rng);
}

} // namespace cvm

#include "cvm/synthetic.hpp"

#include <algorithm>
#include <vector>

#include "cvm/rng.hpp"

namespace cvm {

SyntheticScene make_synthetic(const SyntheticSpec& spec) {
    if (spec.height < 1 || spec.width < 1 || spec.bands < 1)
        throw ConfigError("synthetic scene dimensions must be >= 1");
    if (spec.classes < 2) throw ConfigError("synthetic scene needs at least 2 classes");
    if (spec.block < 1) throw ConfigError("synthetic block size must be >= 1");
    const std::size_t pixels = static_cast<std::size_t>(spec.height) * spec.width;
    if (spec.labeled < 0 || static_cast<std::size_t>(spec.labeled) > pixels)
        throw ConfigError("labeled pixel count out of range");

    Rng rng(spec.seed);

    std::vector<float> prototypes(static_cast<std::size_t>(spec.classes) * spec.bands);
    for (auto& v : prototypes) v = static_cast<float>(rng.normal());

    // blocky class layout; the first K cells of a shuffled order take the K
    // distinct classes so every class is present whenever cells >= classes
    const int by = (spec.height + spec.block - 1) / spec.block;
    const int bx = (spec.width + spec.block - 1) / spec.block;
    std::vector<int> cell_class(static_cast<std::size_t>(by) * bx);
    for (std::size_t i = 0; i < cell_class.size(); ++i)
        cell_class[i] = 1 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(spec.classes)));
    std::vector<std::size_t> order(cell_class.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    for (int k = 0; k < spec.classes && static_cast<std::size_t>(k) < order.size(); ++k)
        cell_class[order[static_cast<std::size_t>(k)]] = k + 1;

    SyntheticScene scene;
    scene.cube.height = spec.height;
    scene.cube.width = spec.width;
    scene.cube.bands = spec.bands;
    scene.cube.data.resize(pixels * static_cast<std::size_t>(spec.bands));
    std::vector<int> pixel_class(pixels);
    for (int y = 0; y < spec.height; ++y)
        for (int x = 0; x < spec.width; ++x) {
            const int cls = cell_class[static_cast<std::size_t>(y / spec.block) * bx + x / spec.block];
            pixel_class[static_cast<std::size_t>(y) * spec.width + x] = cls;
            const float* proto = prototypes.data() + static_cast<std::size_t>(cls - 1) * spec.bands;
            float* px = scene.cube.data.data() +
                        (static_cast<std::size_t>(y) * spec.width + x) * spec.bands;
            for (int b = 0; b < spec.bands; ++b)
                px[b] = proto[b] + static_cast<float>(spec.noise * rng.normal());
        }

    // round-robin over per-class pixel lists keeps the labeled set balanced
    std::vector<std::vector<std::size_t>> per_class(static_cast<std::size_t>(spec.classes));
    for (std::size_t p = 0; p < pixels; ++p)
        per_class[static_cast<std::size_t>(pixel_class[p] - 1)].push_back(p);
    for (auto& list : per_class) rng.shuffle(list);

    scene.labels.height = spec.height;
    scene.labels.width = spec.width;
    scene.labels.num_classes = spec.classes;
    scene.labels.labels.assign(pixels, 0);
    int assigned = 0;
    std::size_t round = 0;
    while (assigned < spec.labeled) {
        bool any = false;
        for (int k = 0; k < spec.classes && assigned < spec.labeled; ++k) {
            auto& list = per_class[static_cast<std::size_t>(k)];
            if (round < list.size()) {
                scene.labels.labels[list[round]] = static_cast<std::uint16_t>(k + 1);
                ++assigned;
                any = true;
            }
        }
        if (!any) break; // fewer pixels than requested labels
        ++round;
    }
    return scene;
}

} // namespace cvm

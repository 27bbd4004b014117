#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "cvm/metrics.hpp"
#include "cvm/rng.hpp"
#include "cvm/synthetic.hpp"

using namespace cvm;

namespace {

ConfusionMatrix worked_example() {
    // rows = reference, cols = prediction
    ConfusionMatrix cm;
    cm.num_classes = 2;
    cm.counts = {5, 1, 2, 2};
    return cm;
}

// Brute-force recomputation of all three metrics straight from (pred, ref)
// pairs, independent of the ConfusionMatrix path.
struct BruteMetrics {
    double oa, aa, kappa;
};

BruteMetrics brute_force(const std::vector<int>& preds, const std::vector<int>& refs, int K) {
    const double n = static_cast<double>(preds.size());
    double hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == refs[i];

    double aa_sum = 0;
    int present = 0;
    for (int c = 1; c <= K; ++c) {
        double total = 0, correct = 0;
        for (std::size_t i = 0; i < refs.size(); ++i)
            if (refs[i] == c) {
                total += 1;
                correct += preds[i] == c;
            }
        if (total > 0) {
            aa_sum += correct / total;
            ++present;
        }
    }

    double pe = 0;
    for (int c = 1; c <= K; ++c) {
        double row = 0, col = 0;
        for (std::size_t i = 0; i < refs.size(); ++i) {
            row += refs[i] == c;
            col += preds[i] == c;
        }
        pe += (row / n) * (col / n);
    }
    const double po = hits / n;
    return {po, aa_sum / present, (po - pe) / (1.0 - pe)};
}

} // namespace

TEST_CASE("confusion matrix construction and permutation invariance") {
    std::vector<int> preds{1, 2, 1, 2}, refs{1, 2, 2, 1};
    ConfusionMatrix cm = confusion(preds, refs, 2);
    CHECK(cm.at(0, 0) == 1);
    CHECK(cm.at(1, 1) == 1);
    CHECK(cm.at(0, 1) == 1);
    CHECK(cm.at(1, 0) == 1);

    ConfusionMatrix single = confusion({1}, {2}, 2);
    CHECK(single.at(1, 0) == 1);
    CHECK(single.total() == 1);

    std::vector<int> p2{2, 1, 2, 1}, r2{1, 2, 2, 1}; // same multiset of pairs, shuffled
    Rng rng(3);
    std::vector<std::size_t> order{0, 1, 2, 3};
    rng.shuffle(order);
    std::vector<int> ps, rs;
    for (auto i : order) {
        ps.push_back(preds[i]);
        rs.push_back(refs[i]);
    }
    CHECK(confusion(ps, rs, 2).counts == cm.counts);

    CHECK_THROWS_WITH_AS(confusion({3}, {1}, 2), doctest::Contains("index 0"), DataError);
}

TEST_CASE("overall accuracy on the worked example and degenerate matrices") {
    CHECK(oa(worked_example()) == doctest::Approx(0.7));

    ConfusionMatrix diag;
    diag.num_classes = 2;
    diag.counts = {3, 0, 0, 4};
    CHECK(oa(diag) == 1.0);

    ConfusionMatrix off;
    off.num_classes = 2;
    off.counts = {0, 5, 7, 0};
    CHECK(oa(off) == 0.0);

    ConfusionMatrix empty;
    empty.num_classes = 2;
    empty.counts = {0, 0, 0, 0};
    CHECK_THROWS_AS(oa(empty), MetricError);
}

TEST_CASE("average accuracy with and without empty reference rows") {
    CHECK(aa(worked_example()) == doctest::Approx(5.0 / 6.0 / 2 + 0.5 / 2).epsilon(1e-9));
    CHECK(aa(worked_example()) == doctest::Approx(0.66667).epsilon(1e-4));

    ConfusionMatrix diag;
    diag.num_classes = 2;
    diag.counts = {3, 0, 0, 4};
    CHECK(aa(diag) == 1.0);

    ConfusionMatrix hole;
    hole.num_classes = 2;
    hole.counts = {10, 0, 0, 0};
    std::vector<int> excluded;
    CHECK(aa(hole, &excluded) == 1.0);
    CHECK(excluded == std::vector<int>{2});

    ConfusionMatrix empty;
    empty.num_classes = 2;
    empty.counts = {0, 0, 0, 0};
    CHECK_THROWS_AS(aa(empty), MetricError);
}

TEST_CASE("kappa worked example, chance agreement and the diagonal identity") {
    CHECK(kappa(worked_example()) == doctest::Approx(0.34783).epsilon(1e-4));

    ConfusionMatrix chance;
    chance.num_classes = 2;
    chance.counts = {1, 1, 1, 1};
    CHECK(kappa(chance) == 0.0);

    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const int K = 2 + static_cast<int>(rng.uniform_index(4));
        ConfusionMatrix diag;
        diag.num_classes = K;
        diag.counts.assign(static_cast<std::size_t>(K) * K, 0);
        for (int i = 0; i < K; ++i)
            diag.counts[static_cast<std::size_t>(i) * K + i] = 1 + static_cast<std::int64_t>(rng.uniform_index(20));
        CHECK(kappa(diag) == 1.0); // kappa == 1 exactly on diagonal matrices

        // add off-diagonal mass: kappa drops strictly below 1
        ConfusionMatrix noisy = diag;
        noisy.counts[1] += 3;
        CHECK(kappa(noisy) < 1.0);
    }

    // p_e == 1 with perfect agreement: everything in one diagonal cell
    ConfusionMatrix onecell;
    onecell.num_classes = 2;
    onecell.counts = {9, 0, 0, 0};
    CHECK(kappa(onecell) == 1.0);
    // total disagreement concentrated in one off-diagonal cell: p_o = p_e = 0
    ConfusionMatrix onecol;
    onecol.num_classes = 2;
    onecol.counts = {0, 0, 9, 0};
    CHECK(kappa(onecol) == 0.0);
}

TEST_CASE("metrics match brute-force recomputation on 100 random instances") {
    Rng rng(99);
    for (int trial = 0; trial < 100; ++trial) {
        const int K = 2 + static_cast<int>(rng.uniform_index(5));
        const int n = 5 + static_cast<int>(rng.uniform_index(200));
        std::vector<int> preds(static_cast<std::size_t>(n)), refs(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            preds[static_cast<std::size_t>(i)] = 1 + static_cast<int>(rng.uniform_index(K));
            refs[static_cast<std::size_t>(i)] = 1 + static_cast<int>(rng.uniform_index(K));
        }
        ConfusionMatrix cm = confusion(preds, refs, K);
        BruteMetrics ref = brute_force(preds, refs, K);
        CHECK(std::abs(oa(cm) - ref.oa) < 1e-12);
        CHECK(std::abs(aa(cm) - ref.aa) < 1e-12);
        CHECK(std::abs(kappa(cm) - ref.kappa) < 1e-12);
    }
}

TEST_CASE("evaluate_predictions fills per-class accuracies and exclusions") {
    EvalReport rep = evaluate_predictions({1, 1, 2, 2, 1}, {1, 1, 2, 2, 2}, 3);
    CHECK(rep.samples == 5);
    CHECK(rep.per_class[0] == doctest::Approx(1.0));
    CHECK(rep.per_class[1] == doctest::Approx(2.0 / 3.0));
    CHECK(std::isnan(rep.per_class[2]));
    CHECK(rep.excluded_classes == std::vector<int>{3});
}

TEST_CASE("predict_scene covers the requested pixels deterministically") {
    SyntheticSpec spec;
    spec.height = 10;
    spec.width = 9;
    spec.bands = 6;
    spec.classes = 3;
    spec.labeled = 40;
    spec.seed = 4;
    SyntheticScene scene = make_synthetic(spec);

    ModelConfig cfg;
    cfg.patch_size = 3;
    cfg.input_bands = 6;
    cfg.ms_filters = 2;
    cfg.embed_dim = 8;
    cfg.heads = 2;
    cfg.encoder_layers = 1;
    cfg.head_hidden = 8;
    cfg.num_classes = 3;
    ModelParamsF params = init_params(cfg, 11);

    ScenePrediction full = predict_scene(scene.cube, &scene.labels, cfg, params, 16, false);
    std::size_t predicted = 0;
    for (auto v : full.predictions.labels) predicted += v != 0;
    CHECK(predicted == static_cast<std::size_t>(10 * 9)); // every pixel classified

    ScenePrediction masked = predict_scene(scene.cube, &scene.labels, cfg, params, 16, true);
    std::size_t masked_count = 0;
    for (std::size_t i = 0; i < masked.predictions.labels.size(); ++i) {
        masked_count += masked.predictions.labels[i] != 0;
        if (scene.labels.labels[i] == 0) CHECK(masked.predictions.labels[i] == 0);
    }
    CHECK(masked_count == scene.labels.labeled_count());
    CHECK(masked.has_report);

    ScenePrediction again = predict_scene(scene.cube, &scene.labels, cfg, params, 16, false);
    CHECK(again.predictions.labels == full.predictions.labels);
}

TEST_CASE("argmax ties break toward the lowest class id") {
    ModelConfig cfg;
    cfg.patch_size = 3;
    cfg.input_bands = 2;
    cfg.ms_filters = 2;
    cfg.embed_dim = 4;
    cfg.heads = 1;
    cfg.encoder_layers = 1;
    cfg.head_hidden = 4;
    cfg.num_classes = 5;
    ModelParamsF params = init_params(cfg, 1);
    for (auto& [name, t] : params.items) std::fill(t.data().begin(), t.data().end(), 0.0f);
    auto& bias = params.at("head.fc2.b");
    bias.data() = {-1.0f, 3.0f, 0.0f, 0.0f, 3.0f}; // classes 2 and 5 tie

    SyntheticSpec spec;
    spec.height = 4;
    spec.width = 4;
    spec.bands = 2;
    spec.classes = 5;
    spec.labeled = 8;
    spec.seed = 2;
    SyntheticScene scene = make_synthetic(spec);
    ScenePrediction sp = predict_scene(scene.cube, nullptr, cfg, params, 8, false);
    for (auto v : sp.predictions.labels) CHECK(v == 2);
}

TEST_CASE("ablation suite produces the four paper variants deterministically") {
    SyntheticSpec spec;
    spec.height = 12;
    spec.width = 12;
    spec.bands = 6;
    spec.classes = 2;
    spec.labeled = 40;
    spec.seed = 31;
    SyntheticScene scene = make_synthetic(spec);
    PcaModel pca = pca_fit(scene.cube, 3);
    PatchSet patches = extract_patches(pca_apply(scene.cube, pca), scene.labels, 3);
    SplitSpec sp;
    sp.seed = 31;
    sp.train_fraction = 0.6;
    SplitResult split_res = split(patches, sp);

    ModelConfig cfg;
    cfg.patch_size = 3;
    cfg.input_bands = 3;
    cfg.ms_filters = 2;
    cfg.embed_dim = 4;
    cfg.heads = 1;
    cfg.encoder_layers = 1;
    cfg.head_hidden = 4;
    cfg.num_classes = 2;
    cfg.dropout = 0.0;
    TrainSchedule sched;
    sched.max_epochs = 2;
    sched.seed = 31;

    auto rows = ablation_suite(cfg, patches, split_res, sched);
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].use_msfe);
    CHECK(rows[0].use_vit);
    CHECK(rows[0].use_mamba);
    CHECK_FALSE(rows[1].use_msfe);
    CHECK_FALSE(rows[2].use_vit);
    CHECK_FALSE(rows[3].use_mamba);
    for (std::size_t i = 1; i < 4; ++i) CHECK(rows[0].param_count > rows[i].param_count);

    auto rows2 = ablation_suite(cfg, patches, split_res, sched);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(rows[i].report.oa == rows2[i].report.oa);
        CHECK(rows[i].report.kappa == rows2[i].report.kappa);
    }
}

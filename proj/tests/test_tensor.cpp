#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cvm/gradcheck.hpp"
#include "cvm/ops.hpp"
#include "cvm/rng.hpp"
#include "cvm/tensor.hpp"
#include "oracles.hpp"

using namespace cvm;

namespace {

Tensord random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
    Tensord t(std::move(shape));
    for (auto& v : t.data()) v = scale * rng.normal();
    return t;
}

} // namespace

TEST_CASE("matmul identity and dot product") {
    Tensorf a(Shape{2, 2}, {1, 2, 3, 4});
    Tensorf eye(Shape{2, 2}, {1, 0, 0, 1});
    auto c = matmul(a, eye);
    CHECK(c.data() == std::vector<float>{1, 2, 3, 4});

    Tensorf row(Shape{1, 2}, {1, 2});
    Tensorf col(Shape{2, 1}, {3, 4});
    CHECK(matmul(row, col).item() == doctest::Approx(11.0f));
}

TEST_CASE("matmul matches the triple-loop oracle") {
    Rng rng(11);
    Tensord a = random_tensor({3, 4}, rng);
    Tensord b = random_tensor({4, 2}, rng);
    auto c = matmul(a, b);
    auto ref = oracle::matmul(a.data(), b.data(), 3, 4, 2);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(c[i] - ref[i]) < 1e-6);
}

TEST_CASE("matmul rejects mismatched inner extents") {
    Tensorf a(Shape{2, 3});
    Tensorf b(Shape{4, 2});
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2x3]"), DimensionError);
}

TEST_CASE("batched matmul agrees with per-slice oracle") {
    Rng rng(12);
    Tensord a = random_tensor({2, 3, 4, 5}, rng);
    Tensord b = random_tensor({2, 3, 5, 2}, rng);
    auto c = matmul(a, b);
    for (int s = 0; s < 6; ++s) {
        std::vector<double> as(a.data().begin() + s * 20, a.data().begin() + (s + 1) * 20);
        std::vector<double> bs(b.data().begin() + s * 10, b.data().begin() + (s + 1) * 10);
        auto ref = oracle::matmul(as, bs, 4, 5, 2);
        for (int i = 0; i < 8; ++i) CHECK(c[static_cast<std::size_t>(s) * 8 + i] == doctest::Approx(ref[static_cast<std::size_t>(i)]));
    }
}

TEST_CASE("elementwise examples") {
    CHECK(sigmoid(Tensorf::scalar(0.0f)).item() == doctest::Approx(0.5f));
    CHECK(gelu(Tensorf::scalar(0.0f)).item() == doctest::Approx(0.0f));
    auto prod = mul(Tensorf(Shape{2}, {2, 3}), Tensorf(Shape{2}, {4, 5}));
    CHECK(prod.data() == std::vector<float>{8, 15});
    CHECK_THROWS_AS(add(Tensorf(Shape{2}), Tensorf(Shape{3})), DimensionError);
}

TEST_CASE("layernorm closed forms") {
    Tensorf gamma1 = Tensorf::ones(Shape{3});
    Tensorf beta0 = Tensorf::zeros(Shape{3});
    auto flat = layernorm(Tensorf(Shape{1, 3}, {5, 5, 5}), gamma1, beta0, 1e-12f);
    for (float v : flat.data()) CHECK(v == doctest::Approx(0.0f));

    auto two = layernorm(Tensorf(Shape{1, 2}, {1, 3}), Tensorf::ones(Shape{2}),
                         Tensorf::zeros(Shape{2}), 1e-12f);
    CHECK(two[0] == doctest::Approx(-1.0f).epsilon(1e-4));
    CHECK(two[1] == doctest::Approx(1.0f).epsilon(1e-4));

    auto affine = layernorm(Tensorf(Shape{1, 2}, {1, 3}), Tensorf::zeros(Shape{2}),
                            Tensorf::full(Shape{2}, 7.0f), 1e-12f);
    CHECK(affine[0] == doctest::Approx(7.0f));
    CHECK(affine[1] == doctest::Approx(7.0f));
}

TEST_CASE("softmax closed forms and stability") {
    auto sym = softmax_lastaxis(Tensorf(Shape{1, 2}, {0, 0}));
    CHECK(sym[0] == doctest::Approx(0.5f));

    auto big = softmax_lastaxis(Tensorf(Shape{1, 2}, {1000, 1000}));
    CHECK(big[0] == doctest::Approx(0.5f));
    CHECK(std::isfinite(big[1]));

    auto skew = softmax_lastaxis(Tensorf(Shape{1, 2}, {0.0f, std::log(3.0f)}));
    CHECK(skew[0] == doctest::Approx(0.25f));
    CHECK(skew[1] == doctest::Approx(0.75f));
}

TEST_CASE("softmax rows sum to 1 for magnitudes up to 1e4") {
    Rng rng(3);
    for (int trial = 0; trial < 25; ++trial) {
        Tensorf x(Shape{4, 7});
        for (auto& v : x.data()) v = static_cast<float>(rng.uniform(-1e4, 1e4));
        auto y = softmax_lastaxis(x);
        for (int r = 0; r < 4; ++r) {
            float s = 0;
            for (int j = 0; j < 7; ++j) s += y[static_cast<std::size_t>(r) * 7 + j];
            CHECK(std::abs(s - 1.0f) < 1e-6f);
        }
    }
}

TEST_CASE("backward of sum and of a quadratic") {
    Tapef tape;
    Tensorf x(Shape{3}, {1, 2, 3});
    x.set_requires_grad(true);
    tape.backward(sum_all(x, &tape));
    CHECK(x.grad() == std::vector<float>{1, 1, 1});

    Tapef tape2;
    Tensorf y(Shape{2}, {1, 2});
    y.set_requires_grad(true);
    tape2.backward(sum_all(mul(y, y, &tape2), &tape2));
    CHECK(y.grad() == std::vector<float>{2, 4});
}

TEST_CASE("backward accumulates across calls and rejects non-scalar losses") {
    Tapef tape;
    Tensorf x(Shape{2}, {1, 2});
    x.set_requires_grad(true);
    auto loss = sum_all(x, &tape);
    tape.backward(loss);
    tape.backward(loss);
    CHECK(x.grad() == std::vector<float>{2, 2});

    Tapef tape2;
    Tensorf z(Shape{2}, {1, 2});
    z.set_requires_grad(true);
    auto vec = mul(z, z, &tape2);
    CHECK_THROWS_AS(tape2.backward(vec), ContractError);
}

TEST_CASE("backward is deterministic") {
    auto run = [] {
        Rng rng(99);
        Tapef tape;
        Tensorf x(Shape{4, 5});
        for (auto& v : x.data()) v = static_cast<float>(rng.normal());
        x.set_requires_grad(true);
        Tensorf w(Shape{5, 3});
        for (auto& v : w.data()) v = static_cast<float>(rng.normal());
        w.set_requires_grad(true);
        auto loss = mean_all(gelu(matmul(x, w, &tape), &tape), &tape);
        tape.backward(loss);
        auto g = x.grad();
        g.insert(g.end(), w.grad().begin(), w.grad().end());
        return g;
    };
    CHECK(run() == run());
}

TEST_CASE("broadcast is restricted to trailing-axis bias expansion") {
    Tensorf x(Shape{2, 3});
    CHECK_NOTHROW(add_bias(x, Tensorf(Shape{3})));
    CHECK_THROWS_AS(add_bias(x, Tensorf(Shape{2})), DimensionError);
    CHECK_THROWS_AS(add(x, Tensorf(Shape{3})), DimensionError);
}

TEST_CASE("gradcheck on the identity is exact") {
    Rng rng(1);
    auto err = gradcheck([](const Tensord& x, Taped* t) { return sum_all(x, t); },
                         random_tensor({3, 3}, rng), 9, 1e-4, rng);
    CHECK(err < 1e-10);
}

TEST_CASE("gradcheck of matmul with fixed weights") {
    Rng rng(2);
    Tensord w = random_tensor({4, 3}, rng);
    auto err = gradcheck([&](const Tensord& x, Taped* t) { return mean_all(matmul(x, w, t), t); },
                         random_tensor({2, 4}, rng), 16, 1e-4, rng);
    CHECK(err < 1e-6);
}

TEST_CASE("every primitive passes gradcheck on random shapes") {
    Rng rng(7);
    const Shape shapes[3] = {{2, 5}, {3, 4}, {2, 3, 4}};
    for (const auto& shape : shapes) {
        Tensord x = random_tensor(shape, rng);

        auto check1 = [&](auto f) {
            const double err = gradcheck(f, x, 10, 1e-5, rng);
            CHECK(err < 1e-4);
        };
        check1([](const Tensord& v, Taped* t) { return mean_all(sigmoid(v, t), t); });
        check1([](const Tensord& v, Taped* t) { return mean_all(gelu(v, t), t); });
        // weight the softmax rows so the checked gradient is non-trivial
        Tensord sw = random_tensor(shape, rng);
        check1([&](const Tensord& v, Taped* t) {
            return mean_all(mul(softmax_lastaxis(v, t), sw, t), t);
        });
        check1([](const Tensord& v, Taped* t) { return mean_all(scale(v, 2.5, t), t); });

        // relu needs inputs away from the kink
        Tensord xr = x.clone();
        for (auto& v : xr.data()) v += (v >= 0 ? 0.5 : -0.5);
        const double relu_err =
            gradcheck([](const Tensord& v, Taped* t) { return mean_all(relu(v, t), t); }, xr, 10,
                      1e-5, rng);
        CHECK(relu_err < 1e-4);

        // binary ops: check both operands as leaves
        Tensord other = random_tensor(shape, rng);
        auto binary_err = gradcheck_leaves(
            [&](Taped* t) { return mean_all(mul(add(x, other, t), other, t), t); },
            {x, other}, 10, 1e-5, rng);
        CHECK(binary_err < 1e-4);
    }

    // layernorm with affine leaves
    Tensord x = random_tensor({3, 6}, rng);
    Tensord gamma = random_tensor({6}, rng);
    Tensord beta = random_tensor({6}, rng);
    auto ln_err = gradcheck_leaves(
        [&](Taped* t) {
            return mean_all(mul(layernorm(x, gamma, beta, 1e-6, t), x, t), t);
        },
        {x, gamma, beta}, 20, 1e-5, rng);
    CHECK(ln_err < 1e-4);

    // matmul, both operands
    Tensord a = random_tensor({3, 4}, rng);
    Tensord b = random_tensor({4, 2}, rng);
    auto mm_err = gradcheck_leaves(
        [&](Taped* t) { return mean_all(gelu(matmul(a, b, t), t), t); }, {a, b}, 20, 1e-5, rng);
    CHECK(mm_err < 1e-4);

    // shape plumbing: transpose/swap/slice/concat/mean_tokens/add_bias
    Tensord p = random_tensor({2, 3, 4}, rng);
    Tensord bias = random_tensor({4}, rng);
    auto plumb_err = gradcheck_leaves(
        [&](Taped* t) {
            auto h = add_bias(p, bias, t);
            auto four = reshape(h, Shape{2, 3, 2, 2}, t);
            auto sw = swap_axes12(four, t);
            auto tr = transpose_last2(sw, t);
            auto back = reshape(tr, Shape{2, 3, 4}, t);
            auto left = slice_lastaxis(back, 0, 2, t);
            auto right = slice_lastaxis(back, 2, 2, t);
            auto cat = concat_lastaxis<double>({mul(left, right, t), left}, t);
            return mean_all(mean_tokens(cat, t), t);
        },
        {p, bias}, 25, 1e-5, rng);
    CHECK(plumb_err < 1e-4);
}

TEST_CASE("cross entropy gradcheck and closed forms") {
    Rng rng(21);
    Tensord logits = random_tensor({3, 5}, rng);
    std::vector<int> labels{2, 5, 1};
    auto err = gradcheck(
        [&](const Tensord& v, Taped* t) { return cross_entropy(v, labels, t); }, logits, 15, 1e-5,
        rng);
    CHECK(err < 1e-4);

    auto uniform = cross_entropy(Tensorf::zeros(Shape{1, 4}), std::vector<int>{3});
    CHECK(uniform.item() == doctest::Approx(std::log(4.0)).epsilon(1e-6));

    Tensorf hot(Shape{1, 3});
    hot.at({0, 1}) = 1000.0f;
    CHECK(cross_entropy(hot, std::vector<int>{2}).item() < 1e-6);

    CHECK_THROWS_WITH_AS(cross_entropy(Tensorf::zeros(Shape{2, 3}), std::vector<int>{1, 4}),
                         doctest::Contains("sample 1"), DataError);
}

TEST_CASE("cross entropy matches the direct 64-bit oracle") {
    Rng rng(31);
    Tensord logits = random_tensor({3, 5}, rng, 2.0);
    std::vector<int> labels{4, 1, 3};
    const double ref = oracle::cross_entropy(logits.data(), labels, 3, 5);
    CHECK(std::abs(cross_entropy(logits, labels).item() - ref) < 1e-6);
}

TEST_CASE("dropout is identity at p=0 and rescales survivors") {
    Rng rng(5);
    Tensorf x = Tensorf::full(Shape{1000}, 1.0f);
    auto same = dropout(x, 0.0, rng);
    CHECK(same.data() == x.data());

    auto dropped = dropout(x, 0.5, rng);
    int kept = 0;
    for (float v : dropped.data()) {
        CHECK((v == 0.0f || v == 2.0f));
        if (v != 0.0f) ++kept;
    }
    CHECK(kept > 350);
    CHECK(kept < 650);
}

TEST_CASE("tape clear frees produced gradient state") {
    Tapef tape;
    Tensorf x(Shape{2}, {1, 2});
    x.set_requires_grad(true);
    auto mid = mul(x, x, &tape);
    auto loss = sum_all(mid, &tape);
    tape.backward(loss);
    CHECK(mid.has_grad());
    tape.clear();
    CHECK(!mid.has_grad());
    CHECK(x.has_grad()); // leaves keep their gradients
}

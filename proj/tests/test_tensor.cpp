#include <doctest.h>

#include <functional>
#include <limits>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "xmm/errors.hpp"
#include "xmm/tensor.hpp"

using namespace xmm;

TEST_CASE("matmul identity and 1x1") {
    Tensor eye = Tensor::from_values({2, 2}, {1, 0, 0, 1});
    Tensor b = Tensor::from_values({2, 2}, {3, 4, 5, 6});
    Tensor out = matmul(eye, b);
    CHECK(out.values() == std::vector<double>{3, 4, 5, 6});

    Tensor a1 = Tensor::from_values({1, 1}, {2});
    Tensor b1 = Tensor::from_values({1, 1}, {3});
    CHECK(matmul(a1, b1).item() == 6.0);
}

TEST_CASE("matmul against triple-loop oracle") {
    std::mt19937_64 rng(11);
    auto av = oracles::random_values(12, rng);
    auto bv = oracles::random_values(8, rng);
    Tensor a = Tensor::from_values({3, 4}, av);
    Tensor b = Tensor::from_values({4, 2}, bv);
    Tensor out = matmul(a, b);
    auto expected = oracles::matmul_reference(av, bv, 3, 4, 2);
    for (std::size_t i = 0; i < expected.size(); ++i)
        CHECK(std::abs(out.at(i) - expected[i]) < 1e-12);
}

TEST_CASE("matmul rejects mismatched shapes naming both") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 2});
    bool threw = false;
    try {
        matmul(a, b);
    } catch (const DimensionError& e) {
        threw = true;
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("[4x2]") != std::string::npos);
    }
    CHECK(threw);
}

TEST_CASE("softmax rows") {
    SUBCASE("uniform logits") {
        Tensor x = Tensor::zeros({1, 4});
        Tensor s = softmax_rows(x);
        for (std::size_t j = 0; j < 4; ++j) CHECK(s.at(0, j) == doctest::Approx(0.25).epsilon(1e-12));
    }
    SUBCASE("stability under large shift") {
        Tensor x = Tensor::from_values({1, 2}, {1000.0, 0.0});
        Tensor s = softmax_rows(x);
        CHECK(std::abs(s.at(0, 0) - 1.0) < 1e-9);
        CHECK(std::abs(s.at(0, 1) - 0.0) < 1e-9);
    }
    SUBCASE("matches direct-formula oracle and rows sum to one") {
        std::mt19937_64 rng(5);
        auto v = oracles::random_values(7, rng, 3.0);
        Tensor x = Tensor::from_values({1, 7}, v);
        Tensor s = softmax_rows(x);
        auto expected = oracles::softmax_reference(v);
        double total = 0.0;
        for (std::size_t j = 0; j < 7; ++j) {
            CHECK(std::abs(s.at(0, j) - expected[j]) < 1e-12);
            total += s.at(0, j);
        }
        CHECK(std::abs(total - 1.0) < 1e-9);
    }
}

TEST_CASE("layer_norm") {
    Tensor gamma = Tensor::full({4}, 1.0);
    Tensor beta = Tensor::zeros({4});
    SUBCASE("constant row collapses to beta") {
        Tensor x = Tensor::full({1, 4}, 3.7);
        Tensor out = layer_norm(x, gamma, beta, 1e-5);
        for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(out.at(0, j)) < 1e-9);
    }
    SUBCASE("symmetric two-element row") {
        Tensor g2 = Tensor::full({2}, 1.0);
        Tensor b2 = Tensor::zeros({2});
        Tensor x = Tensor::from_values({1, 2}, {1, 3});
        Tensor out = layer_norm(x, g2, b2, 1e-9);
        CHECK(out.at(0, 0) == doctest::Approx(-1.0).epsilon(1e-4));
        CHECK(out.at(0, 1) == doctest::Approx(1.0).epsilon(1e-4));
    }
    SUBCASE("matches explicit mean/variance oracle") {
        std::mt19937_64 rng(17);
        auto v = oracles::random_values(4, rng, 2.0);
        Tensor x = Tensor::from_values({1, 4}, v);
        Tensor out = layer_norm(x, gamma, beta, 1e-5);
        auto expected = oracles::layer_norm_reference(v, 1.0, 0.0, 1e-5);
        for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(out.at(0, j) - expected[j]) < 1e-10);
    }
}

TEST_CASE("gelu") {
    CHECK(gelu(Tensor::scalar(0.0)).item() == 0.0);
    CHECK(std::abs(gelu(Tensor::scalar(10.0)).item() - 10.0) < 1e-6);
    // tanh approximation stays within 1e-3 of the exact erf form
    CHECK(std::abs(gelu(Tensor::scalar(1.0)).item() - oracles::gelu_erf_reference(1.0)) < 1e-3);
}

TEST_CASE("cross entropy") {
    SUBCASE("uniform logits give ln C") {
        Tensor logits = Tensor::zeros({4});
        CHECK(cross_entropy(logits, 2).item() == doctest::Approx(std::log(4.0)).epsilon(1e-9));
    }
    SUBCASE("saturated correct prediction") {
        Tensor logits = Tensor::from_values({2}, {100.0, -100.0});
        CHECK(cross_entropy(logits, 0).item() < 1e-9);
    }
    SUBCASE("matches log-sum-exp oracle") {
        std::mt19937_64 rng(23);
        auto v = oracles::random_values(9, rng, 2.5);
        Tensor logits = Tensor::from_values({9}, v);
        CHECK(std::abs(cross_entropy(logits, 4).item() - oracles::cross_entropy_reference(v, 4)) <
              1e-10);
    }
    SUBCASE("label out of range") {
        CHECK_THROWS_AS(cross_entropy(Tensor::zeros({3}), 3), IndexError);
    }
}

TEST_CASE("backward basics") {
    SUBCASE("loss = sum(w) gives unit gradients") {
        Tensor w = Tensor::from_values({2, 3}, {1, 2, 3, 4, 5, 6}, true);
        backward(sum(w));
        for (double g : w.grad()) CHECK(g == 1.0);
    }
    SUBCASE("disconnected parameter keeps zero gradient") {
        Tensor w = Tensor::from_values({2}, {1, 2}, true);
        Tensor used = Tensor::from_values({2}, {3, 4}, true);
        backward(sum(used));
        CHECK(w.grad().empty());  // never touched = semantically zero
    }
    SUBCASE("gradient accumulation is additive across backward calls") {
        Tensor w = Tensor::from_values({2}, {1, 2}, true);
        backward(sum(w));
        backward(sum(w));
        for (double g : w.grad()) CHECK(g == 2.0);
    }
    SUBCASE("backward rejects non-scalar loss") {
        Tensor w = Tensor::from_values({2}, {1, 2}, true);
        CHECK_THROWS_AS(backward(scale(w, 2.0)), ContractError);
    }
}

TEST_CASE("finite-difference gradients for every differentiable op") {
    std::mt19937_64 rng(101);
    auto check = [&](const oracles::LossBuilder& build, const std::vector<Tensor>& leaves) {
        auto result = oracles::finite_difference_check(build, leaves);
        CHECK(result.checked > 0);
        CHECK(result.max_rel_error < 1e-4);
    };
    auto leaf = [&](std::vector<std::size_t> shape, double scale = 1.0) {
        auto n = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
        return Tensor::from_values(shape, oracles::random_values(n, rng, scale), true);
    };

    for (int round = 0; round < 8; ++round) {
        std::uniform_int_distribution<std::size_t> dim(1, 5);
        const std::size_t m = dim(rng), k = dim(rng), n = dim(rng);
        {
            Tensor a = leaf({m, k}), b = leaf({k, n});
            auto w = oracles::random_values(m * n, rng);
            check([&] { return oracles::weighted_sum(matmul(a, b), w); }, {a, b});
        }
        {
            Tensor a = leaf({m, k}), b = leaf({n, k});
            auto w = oracles::random_values(m * n, rng);
            check([&] { return oracles::weighted_sum(matmul_nt(a, b), w); }, {a, b});
        }
        {
            Tensor a = leaf({m, n}), b = leaf({m, n});
            auto w = oracles::random_values(m * n, rng);
            check([&] { return oracles::weighted_sum(add(a, b), w); }, {a, b});
            check([&] { return oracles::weighted_sum(mul(a, b), w); }, {a, b});
        }
        {
            Tensor x = leaf({m, n});
            Tensor bias = leaf({n});
            auto w = oracles::random_values(m * n, rng);
            check([&] { return oracles::weighted_sum(add_row_bias(x, bias), w); }, {x, bias});
            check([&] { return oracles::weighted_sum(scale(x, 1.7), w); }, {x});
            check([&] { return oracles::weighted_sum(add_const(x, -0.3), w); }, {x});
            check([&] { return oracles::weighted_sum(softmax_rows(x), w); }, {x});
            check([&] { return oracles::weighted_sum(gelu(x), w); }, {x});
        }
        {
            Tensor x = leaf({m, 4});
            Tensor gamma = leaf({4});
            Tensor beta = leaf({4});
            auto w = oracles::random_values(m * 4, rng);
            check([&] { return oracles::weighted_sum(layer_norm(x, gamma, beta, 1e-5), w); },
                  {x, gamma, beta});
        }
        {
            Tensor logits = leaf({5}, 2.0);
            check([&] { return cross_entropy(logits, 2); }, {logits});
            Tensor batch = leaf({m, 4}, 2.0);
            std::vector<std::size_t> labels(m);
            for (auto& l : labels) l = rng() % 4;
            check([&] { return cross_entropy_rows(batch, labels); }, {batch});
        }
        {
            Tensor table = leaf({4, n});
            std::vector<std::size_t> idx = {0, 2, 2, 3};
            auto w = oracles::random_values(idx.size() * n, rng);
            check([&] { return oracles::weighted_sum(gather_rows(table, idx), w); }, {table});
        }
        {
            Tensor x = leaf({4, 5});
            auto w1 = oracles::random_values(2 * 5, rng);
            check([&] { return oracles::weighted_sum(slice_rows(x, 1, 3), w1); }, {x});
            auto w2 = oracles::random_values(4 * 2, rng);
            check([&] { return oracles::weighted_sum(slice_cols(x, 2, 4), w2); }, {x});
        }
        {
            Tensor a = leaf({2, n}), b = leaf({3, n});
            auto w = oracles::random_values(5 * n, rng);
            check([&] { return oracles::weighted_sum(concat_rows({a, b}), w); }, {a, b});
            Tensor c = leaf({m, 2}), d = leaf({m, 3});
            auto w2 = oracles::random_values(m * 5, rng);
            check([&] { return oracles::weighted_sum(concat_cols({c, d}), w2); }, {c, d});
        }
        {
            Tensor x = leaf({m, n});
            check([&] { return sum(x); }, {x});
            check([&] { return mean_all(x); }, {x});
            auto w = oracles::random_values(m * n, rng);
            check([&] { return oracles::weighted_sum(reshape(x, {m * n}), w); }, {x});
        }
    }
}

TEST_CASE("check_finite flags bad values") {
    Tensor ok = Tensor::from_values({2}, {1.0, 2.0});
    CHECK_NOTHROW(check_finite(ok, "ok"));
    Tensor bad = Tensor::from_values({2}, {1.0, std::numeric_limits<double>::infinity()});
    CHECK_THROWS_AS(check_finite(bad, "bad"), ContractError);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <vector>

#include "solarpi/mgda.hpp"
#include "solarpi/rng.hpp"

using namespace solarpi;
namespace M = solarpi::mgda;

namespace {

std::vector<double> random_vec(size_t n, Rng& rng, double scale = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = scale * rng.uniform(-1.0, 1.0);
    return v;
}

/// Grid-search oracle for min_a ||a g1 + (1-a) g2||^2 on [0,1].
double grid_min_norm(const std::vector<double>& g1, const std::vector<double>& g2,
                     double step = 1e-4) {
    double best_a = 0.0, best = 1e300;
    for (double a = 0.0; a <= 1.0 + 1e-12; a += step) {
        double n2 = 0.0;
        for (size_t i = 0; i < g1.size(); ++i) {
            const double v = a * g1[i] + (1.0 - a) * g2[i];
            n2 += v * v;
        }
        if (n2 < best) {
            best = n2;
            best_a = a;
        }
    }
    return best_a;
}

}  // namespace

TEST_CASE("closed-form weights: worked examples") {
    std::vector<double> g1{1.0, 0.0}, g2{0.0, 1.0};
    auto w = M::min_norm_weights(g1, g2);
    CHECK(w.gamma1 == doctest::Approx(0.5).epsilon(1e-14));

    // aligned, g1 shorter: all weight goes to the smaller gradient
    std::vector<double> a1{1.0, 0.0}, a2{2.0, 0.0};
    auto wa = M::min_norm_weights(a1, a2);
    CHECK(wa.gamma1 == 1.0);
    CHECK(wa.gamma2 == 0.0);

    // identical gradients hit the degenerate rule
    auto wi = M::min_norm_weights(a1, a1);
    CHECK(wi.gamma1 == 0.5);
    CHECK(wi.gamma2 == 0.5);

    // both zero: Pareto-stationary signal
    std::vector<double> z{0.0, 0.0};
    CHECK(M::min_norm_weights(z, z).pareto_stationary);
}

TEST_CASE("combine: vertices and the interior minimum") {
    std::vector<double> g1{1.0, 0.0}, g2{0.0, 1.0};
    auto g = M::combine({1.0, 0.0, false}, g1, g2);
    CHECK(g == g1);
    auto mid = M::combine({0.5, 0.5, false}, g1, g2);
    CHECK(mid[0] == 0.5);
    CHECK(mid[1] == 0.5);
    CHECK(std::sqrt(M::norm2(mid)) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-14));
    CHECK(std::fabs(grid_min_norm(g1, g2) - 0.5) <= 1e-3);
}

TEST_CASE("oracle equivalence over random pairs in several dimensions") {
    Rng rng(2024);
    for (size_t dim : {2ul, 10ul, 50ul}) {
        for (int trial = 0; trial < 120; ++trial) {
            auto g1 = random_vec(dim, rng, rng.uniform(0.1, 3.0));
            auto g2 = random_vec(dim, rng, rng.uniform(0.1, 3.0));
            auto w = M::min_norm_weights(g1, g2);
            const double a_star = grid_min_norm(g1, g2);
            CHECK(std::fabs(w.gamma1 - a_star) <= 1e-3);

            auto g = M::combine(w, g1, g2);
            CHECK(M::assert_common_descent(g, g1, g2, M::descent_tolerance(g1, g2)));
            CHECK(M::norm2(g) <= M::norm2(g1) + 1e-12);
            CHECK(M::norm2(g) <= M::norm2(g2) + 1e-12);
        }
    }
}

TEST_CASE("interior solutions satisfy the Theorem 1 equality") {
    Rng rng(77);
    int interior_seen = 0;
    for (int trial = 0; trial < 500; ++trial) {
        auto g1 = random_vec(8, rng);
        auto g2 = random_vec(8, rng);
        auto w = M::min_norm_weights(g1, g2);
        if (w.gamma1 <= 1e-6 || w.gamma1 >= 1.0 - 1e-6) continue;
        ++interior_seen;
        auto g = M::combine(w, g1, g2);
        const double gn = M::norm2(g);
        CHECK(std::fabs(M::dot(g1, g) - gn) <= 1e-8);
        CHECK(std::fabs(M::dot(g2, g) - gn) <= 1e-8);
    }
    CHECK(interior_seen > 50);
}

TEST_CASE("case boundaries produce the predicted vertex or interior solutions") {
    // Case 1: <g1,g2> >= ||g2||^2  ->  gamma1 = 0
    std::vector<double> g2{1.0, 1.0};
    std::vector<double> g1{3.0, 3.0};
    auto w1 = M::min_norm_weights(g1, g2);
    CHECK(w1.gamma1 == 0.0);

    // Case 3: <g1,g2> >= ||g1||^2  ->  gamma1 = 1
    auto w3 = M::min_norm_weights(g2, g1);
    CHECK(w3.gamma1 == 1.0);

    // Case 2: opposing-ish gradients land strictly inside
    std::vector<double> o1{1.0, 0.2}, o2{-1.0, 0.4};
    auto w2 = M::min_norm_weights(o1, o2);
    CHECK(w2.gamma1 > 0.0);
    CHECK(w2.gamma1 < 1.0);
}

TEST_CASE("opposing gradients: min-norm point is ~0 and trivially a descent") {
    std::vector<double> g1{0.6, -0.8}, g2{-0.6, 0.8};
    auto w = M::min_norm_weights(g1, g2);
    auto g = M::combine(w, g1, g2);
    CHECK(M::norm2(g) <= 1e-20);
    CHECK(M::assert_common_descent(g, g1, g2, M::descent_tolerance(g1, g2)));
}

TEST_CASE("scaling one gradient moves the weights per the closed form") {
    Rng rng(5);
    auto g1 = random_vec(6, rng);
    auto g2 = random_vec(6, rng);
    const double c = 3.7;
    std::vector<double> g2c(g2);
    for (auto& v : g2c) v *= c;
    auto w = M::min_norm_weights(g1, g2c);
    // directly re-evaluate the formula
    double diff2 = 0, dd = 0;
    for (size_t i = 0; i < g1.size(); ++i) {
        const double d = g2c[i] - g1[i];
        diff2 += d * d;
        dd += d * g2c[i];
    }
    const double expect = std::min(1.0, std::max(0.0, dd / diff2));
    CHECK(w.gamma1 == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("gamma regime replication: tiny aligned g1 takes all the weight") {
    Rng rng(9);
    for (int trial = 0; trial < 50; ++trial) {
        auto g1 = random_vec(20, rng, 0.01);
        std::vector<double> g2(g1);
        for (size_t i = 0; i < g2.size(); ++i) g2[i] = 60.0 * g1[i] + 0.05 * rng.uniform(-1, 1);
        auto w = M::min_norm_weights(g1, g2);
        CHECK(w.gamma1 == 1.0);
        CHECK(w.gamma1 + w.gamma2 == 1.0);
    }
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>

#include "solarpi/diffcore.hpp"
#include "solarpi/rng.hpp"

using namespace solarpi;
using ad::Graph;
using ad::Value;

namespace {

ParameterSet single_param(const std::string& name, Tensor t) {
    ParameterSet ps;
    ps.add(name, std::move(t));
    return ps;
}

Tensor random_tensor(std::vector<int64_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.values) v = rng.uniform(lo, hi);
    return t;
}

}  // namespace

TEST_CASE("sum of squares: value and gradient") {
    auto ps = single_param("theta", Tensor({2}, {1.0, 2.0}));
    auto res = ad::eval_with_gradient(ps, [](Graph& g, const std::vector<Value>& p) {
        return ad::sum_all(g, ad::mul(g, p[0], p[0]));
    });
    CHECK(res.value == doctest::Approx(5.0).epsilon(1e-14));
    CHECK(res.grad[0] == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(res.grad[1] == doctest::Approx(4.0).epsilon(1e-14));
}

TEST_CASE("softplus at zero: value ln 2, gradient one half") {
    auto ps = single_param("theta", Tensor({1}, {0.0}));
    auto res = ad::eval_with_gradient(ps, [](Graph& g, const std::vector<Value>& p) {
        return ad::sum_all(g, ad::softplus_(g, p[0]));
    });
    CHECK(res.value == doctest::Approx(std::log(2.0)).epsilon(1e-14));
    CHECK(res.grad[0] == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("random 3-layer composition matches central differences to 1e-6") {
    Rng rng(7);
    ParameterSet ps;
    ps.add("w1", random_tensor({2, 2}, rng));
    ps.add("b1", random_tensor({2}, rng));
    ps.add("w2", random_tensor({2, 1}, rng));
    ps.add("b2", random_tensor({1}, rng));
    ps.add("a", random_tensor({1}, rng, 0.5, 1.5));
    REQUIRE(ps.total_size() == 10);
    Tensor x = random_tensor({4, 2}, rng);

    auto build = [&x](Graph& g, const std::vector<Value>& p) {
        Value h = ad::tanh_(g, ad::linear(g, g.constant(x), p[0], p[1]));
        Value o = ad::softplus_(g, ad::linear(g, h, p[2], p[3]));
        return ad::mul(g, ad::mean_all(g, o), ad::sum_all(g, p[4]));
    };
    auto fd = ad::finite_difference_check(ps, build, 1e-6);
    CHECK(fd.subgradient_coords.empty());
    CHECK(fd.max_rel_error <= 1e-6);
}

TEST_CASE("finite differences on a quadratic are exact to rounding") {
    Rng rng(3);
    auto ps = single_param("theta", random_tensor({6}, rng));
    auto fd = ad::finite_difference_check(
        ps,
        [](Graph& g, const std::vector<Value>& p) {
            return ad::sum_all(g, ad::mul(g, p[0], p[0]));
        },
        1e-5);
    CHECK(fd.max_rel_error <= 1e-9);
}

TEST_CASE("tied top-k boundary is reported as a subgradient point, not failed") {
    auto ps = single_param("w", Tensor({4}, {2.0, 1.0, 1.0, 0.0}));
    auto fd = ad::finite_difference_check(
        ps,
        [](Graph& g, const std::vector<Value>& p) { return ad::topk_sum(g, p[0], 2); },
        1e-6);
    // coordinates 1 and 2 straddle the selection boundary
    CHECK(fd.is_subgradient(1));
    CHECK(fd.is_subgradient(2));
    CHECK_FALSE(fd.is_subgradient(0));
    CHECK_FALSE(fd.is_subgradient(3));
    CHECK(fd.max_rel_error <= 1e-9);
}

TEST_CASE("gradient is linear in the loss") {
    Rng rng(11);
    ParameterSet ps;
    ps.add("w", random_tensor({5}, rng));
    const double a = 0.7, b = -1.3;

    auto loss1 = [](Graph& g, const std::vector<Value>& p) {
        return ad::sum_all(g, ad::mul(g, p[0], p[0]));
    };
    auto loss2 = [](Graph& g, const std::vector<Value>& p) {
        return ad::sum_all(g, ad::tanh_(g, p[0]));
    };
    auto combined = [&](Graph& g, const std::vector<Value>& p) {
        return ad::add(g, ad::mul_scalar(g, loss1(g, p), a), ad::mul_scalar(g, loss2(g, p), b));
    };

    auto g1 = ad::eval_with_gradient(ps, loss1);
    auto g2 = ad::eval_with_gradient(ps, loss2);
    auto gc = ad::eval_with_gradient(ps, combined);
    for (size_t i = 0; i < gc.grad.size(); ++i)
        CHECK(std::fabs(gc.grad[i] - (a * g1.grad[i] + b * g2.grad[i])) <= 1e-10);
}

TEST_CASE("evaluation is deterministic bit for bit") {
    Rng rng(23);
    ParameterSet ps;
    ps.add("w", random_tensor({3, 3}, rng));
    ps.add("b", random_tensor({3}, rng));
    Tensor x = random_tensor({5, 3}, rng);
    auto build = [&x](Graph& g, const std::vector<Value>& p) {
        return ad::mean_all(g, ad::sigmoid_(g, ad::linear(g, g.constant(x), p[0], p[1])));
    };
    auto r1 = ad::eval_with_gradient(ps, build);
    auto r2 = ad::eval_with_gradient(ps, build);
    CHECK(std::memcmp(&r1.value, &r2.value, sizeof(double)) == 0);
    REQUIRE(r1.grad.size() == r2.grad.size());
    CHECK(std::memcmp(r1.grad.data(), r2.grad.data(), r1.grad.size() * sizeof(double)) == 0);
}

TEST_CASE("non-finite forward value names the primitive") {
    auto ps = single_param("theta", Tensor({1}, {-1.0}));
    CHECK_THROWS_WITH_AS(
        ad::eval_with_gradient(ps,
                               [](Graph& g, const std::vector<Value>& p) {
                                   return ad::sum_all(g, ad::log_(g, p[0]));
                               }),
        doctest::Contains("log"), numeric_error);
}

TEST_CASE("shape mismatches are rejected when the expression is built") {
    Graph g;
    Value a = g.leaf(Tensor({2}), true);
    Value b = g.leaf(Tensor({3}), true);
    CHECK_THROWS_AS(ad::add(g, a, b), std::invalid_argument);
    Value m = g.leaf(Tensor({2, 3}), true);
    Value n = g.leaf(Tensor({2, 3}), true);
    CHECK_THROWS_AS(ad::matmul(g, m, n), std::invalid_argument);
}

TEST_CASE("every primitive passes a finite-difference sweep") {
    Rng rng(101);

    auto check = [&](const char* what, ParameterSet ps, auto build, double tol = 2e-6) {
        INFO(what);
        auto fd = ad::finite_difference_check(ps, build, 1e-6);
        CHECK(fd.subgradient_coords.empty());
        CHECK(fd.max_rel_error <= tol);
    };

    {
        ParameterSet ps;
        ps.add("a", random_tensor({4}, rng));
        ps.add("b", random_tensor({4}, rng, 0.5, 1.5));
        check("add/sub/mul/div", std::move(ps), [](Graph& g, const std::vector<Value>& p) {
            Value s = ad::add(g, p[0], p[1]);
            s = ad::sub(g, s, ad::mul(g, p[0], p[1]));
            s = ad::div(g, s, p[1]);
            return ad::sum_all(g, s);
        });
    }
    {
        ParameterSet ps;
        ps.add("x", random_tensor({5}, rng));
        check("affine/tanh/sigmoid/softplus/exp", std::move(ps),
              [](Graph& g, const std::vector<Value>& p) {
                  Value v = ad::affine(g, p[0], 1.7, -0.3);
                  v = ad::tanh_(g, v);
                  v = ad::sigmoid_(g, v);
                  v = ad::softplus_(g, v);
                  v = ad::exp_(g, v);
                  return ad::mean_all(g, v);
              });
    }
    {
        ParameterSet ps;
        ps.add("x", random_tensor({5}, rng, 0.5, 2.0));
        check("log", std::move(ps), [](Graph& g, const std::vector<Value>& p) {
            return ad::sum_all(g, ad::log_(g, p[0]));
        });
    }
    {
        ParameterSet ps;
        ps.add("x", Tensor({4}, {-1.5, -0.2, 0.3, 1.8}));
        check("abs/relu/max0 away from kinks", std::move(ps),
              [](Graph& g, const std::vector<Value>& p) {
                  Value v = ad::add(g, ad::abs_(g, p[0]), ad::relu_(g, p[0]));
                  return ad::sum_all(g, ad::max_scalar(g, v, 0.1));
              });
    }
    {
        ParameterSet ps;
        ps.add("x", Tensor({4}, {-1.5, -0.2, 0.3, 1.8}));
        check("min/clamp away from kinks", std::move(ps),
              [](Graph& g, const std::vector<Value>& p) {
                  Value v = ad::min_scalar(g, p[0], 1.0);
                  return ad::sum_all(g, ad::clamp_(g, v, -1.0, 0.9));
              });
    }
    {
        ParameterSet ps;
        ps.add("a", Tensor({3}, {0.3, -0.5, 1.2}));
        ps.add("b", Tensor({3}, {-0.4, 0.8, 0.1}));
        check("elementwise max/min pair", std::move(ps),
              [](Graph& g, const std::vector<Value>& p) {
                  return ad::sum_all(
                      g, ad::add(g, ad::maximum(g, p[0], p[1]), ad::minimum(g, p[0], p[1])));
              });
    }
    {
        ParameterSet ps;
        ps.add("w", Tensor({5}, {3.0, 1.0, 4.0, 1.5, 2.5}));
        check("topk without ties", std::move(ps), [](Graph& g, const std::vector<Value>& p) {
            return ad::topk_sum(g, p[0], 2);
        });
    }
    {
        ParameterSet ps;
        ps.add("a", random_tensor({3, 4}, rng));
        ps.add("b", random_tensor({4, 2}, rng));
        check("matmul", std::move(ps), [](Graph& g, const std::vector<Value>& p) {
            return ad::mean_all(g, ad::matmul(g, p[0], p[1]));
        });
    }
    {
        ParameterSet ps;
        ps.add("x", random_tensor({3, 4}, rng));
        ps.add("w", random_tensor({4, 2}, rng));
        ps.add("b", random_tensor({2}, rng));
        check("linear + select_col + concat", std::move(ps),
              [](Graph& g, const std::vector<Value>& p) {
                  Value y = ad::linear(g, p[0], p[1], p[2]);
                  Value c = ad::concat_cols(g, y, p[0]);
                  return ad::add(g, ad::sum_all(g, ad::select_col(g, c, 1)),
                                 ad::mean_all(g, c));
              });
    }
    {
        ParameterSet ps;
        ps.add("xh", random_tensor({3, 5}, rng));
        ps.add("c0", random_tensor({3, 2}, rng));
        ps.add("w", random_tensor({5, 8}, rng));
        ps.add("b", random_tensor({8}, rng));
        check("lstm_cell", std::move(ps), [](Graph& g, const std::vector<Value>& p) {
            auto [h, c] = ad::lstm_cell(g, p[0], p[1], p[2], p[3], 1.0);
            return ad::add(g, ad::mean_all(g, h), ad::mul_scalar(g, ad::mean_all(g, c), 0.5));
        });
    }
    {
        ParameterSet ps;
        ps.add("x", random_tensor({6, 3}, rng));
        ps.add("gamma", random_tensor({3}, rng, 0.5, 1.5));
        ps.add("beta", random_tensor({3}, rng));
        auto buffers = std::make_shared<ad::BnBuffers>(ad::BnBuffers::fresh(3));
        check("batchnorm training mode", std::move(ps),
              [buffers](Graph& g, const std::vector<Value>& p) {
                  Value y = ad::batchnorm(g, p[0], p[1], p[2], *buffers, true, 0.1, 1e-5,
                                          /*update_stats=*/false);
                  return ad::mean_all(g, ad::mul(g, y, y));
              },
              5e-5);
    }
    {
        ParameterSet ps;
        ps.add("x", random_tensor({6, 3}, rng));
        ps.add("gamma", random_tensor({3}, rng, 0.5, 1.5));
        ps.add("beta", random_tensor({3}, rng));
        auto buffers = std::make_shared<ad::BnBuffers>(ad::BnBuffers::fresh(3));
        for (int64_t j = 0; j < 3; ++j) {
            buffers->running_mean[j] = 0.1 * static_cast<double>(j);
            buffers->running_var[j] = 1.0 + 0.2 * static_cast<double>(j);
        }
        check("batchnorm inference mode", std::move(ps),
              [buffers](Graph& g, const std::vector<Value>& p) {
                  Value y = ad::batchnorm(g, p[0], p[1], p[2], *buffers, false, 0.1, 1e-5);
                  return ad::mean_all(g, ad::mul(g, y, y));
              });
    }
    {
        ParameterSet ps;
        ps.add("z", Tensor({2}, {-2.0, 0.5}));  // one per branch for r = 1
        check("extended log-barrier, both branches", std::move(ps),
              [](Graph& g, const std::vector<Value>& p) {
                  return ad::sum_all(g, ad::ext_log_barrier(g, p[0], 1.0));
              });
    }
}

TEST_CASE("parameter flattening is a bijection") {
    Rng rng(5);
    ParameterSet ps;
    ps.add("a", random_tensor({2, 3}, rng));
    ps.add("b", random_tensor({4}, rng));
    ps.add("c", random_tensor({1}, rng));
    auto flat = ps.flatten();
    REQUIRE(static_cast<int64_t>(flat.size()) == ps.total_size());

    ParameterSet ps2;
    ps2.add("a", Tensor({2, 3}));
    ps2.add("b", Tensor({4}));
    ps2.add("c", Tensor({1}));
    ps2.unflatten(flat);
    CHECK(ps2.flatten() == flat);
    for (int64_t i = 0; i < ps.total_size(); ++i) CHECK(ps.get_flat(i) == ps2.get_flat(i));

    ps2.set_flat(3, 42.0);
    CHECK(ps2.at("a")[3] == 42.0);
    CHECK(ps2.describe_coord(7) == "b[1]");
}

#pragma once

#include <string>
#include <vector>

#include "solarpi/diffcore.hpp"
#include "solarpi/graph.hpp"
#include "solarpi/kernels.hpp"
#include "solarpi/param_set.hpp"
#include "solarpi/rng.hpp"
#include "solarpi/tensor.hpp"

namespace solarpi::model {

struct ModelConfig {
    int lag_window = 16;
    int horizon = 16;
    int n_lag_features = 2;
    int n_future_features = 3;
    int encoder_hidden = 70;
    int encoder_cells = 1;
    std::vector<int> submodel_widths = {100, 100};
    uint64_t seed = 0;

    void validate() const {
        if (lag_window < 1 || horizon < 1 || n_lag_features < 1 || n_future_features < 1 ||
            encoder_hidden < 1 || encoder_cells < 1)
            throw std::invalid_argument("model config: all extents must be >= 1");
        for (int w : submodel_widths)
            if (w < 1) throw std::invalid_argument("model config: zero-width submodel layer");
    }
};

/// Joint forecast of a batch: lower/point/upper, each N x H in normalized
/// target units. The construction guarantees lower <= point <= upper with
/// strictly positive width.
struct ForecastBatch {
    Tensor lower;
    Tensor point;
    Tensor upper;
};

constexpr double kForgetBias = 1.0;
constexpr double kBnMomentum = 0.1;
constexpr double kBnEps = 1e-5;

/// The forecasting network: a shared gated-recurrent encoder over the lag
/// window (final state batch-normalized and ReLU-activated), and one
/// feed-forward submodel per horizon step consuming [encoding | future
/// regressors]. Each submodel head emits (y_raw, a, b); the interval is
/// y_raw -/+ softplus(a|b), so the point forecast sits inside the interval
/// by construction and the width gradient never vanishes.
class Model {
public:
    explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        init_params();
    }

    const ModelConfig& config() const { return cfg_; }
    ParameterSet& params() { return params_; }
    const ParameterSet& params() const { return params_; }
    std::vector<ad::BnBuffers>& bn_buffers() { return bn_; }
    const std::vector<ad::BnBuffers>& bn_buffers() const { return bn_; }
    const std::vector<std::string>& bn_names() const { return bn_names_; }

    /// Differentiable forward pass. `leaves` must be parameter leaves created
    /// on `g` in ParameterSet order (eval_with_gradient does this). In
    /// training mode batch statistics normalize and, when update_stats is
    /// set, refresh the running buffers; single-writer contract applies.
    struct GraphOut {
        std::vector<ad::Value> point;  // per step, shape {N}
        std::vector<ad::Value> lower;
        std::vector<ad::Value> upper;
    };

    GraphOut forward_graph(ad::Graph& g, const std::vector<ad::Value>& leaves,
                           const Tensor& lag, const Tensor& future, bool training,
                           bool update_stats = true) {
        check_input_shapes(lag, future);
        const int64_t n = lag.shape[0];
        auto leaf = [&](const std::string& name) -> ad::Value {
            return leaves[param_index(name)];
        };

        // encoder
        ad::Value h;
        std::vector<ad::Value> prev_seq;
        for (int cell = 0; cell < cfg_.encoder_cells; ++cell) {
            const std::string p = "enc" + std::to_string(cell);
            ad::Value w = leaf(p + ".w"), b = leaf(p + ".b");
            Tensor h0({n, cfg_.encoder_hidden});
            ad::Value hs = g.constant(h0);
            ad::Value cs = g.constant(h0);
            std::vector<ad::Value> cur_seq;
            for (int t = 0; t < cfg_.lag_window; ++t) {
                ad::Value x_t = cell == 0 ? g.constant(slice_lag(lag, t))
                                          : prev_seq[static_cast<size_t>(t)];
                ad::Value xh = ad::concat_cols(g, x_t, hs);
                auto [hn, cn] = ad::lstm_cell(g, xh, cs, w, b, kForgetBias);
                hs = hn;
                cs = cn;
                if (cell + 1 < cfg_.encoder_cells) cur_seq.push_back(hn);
            }
            h = hs;
            prev_seq = std::move(cur_seq);
        }
        h = ad::batchnorm(g, h, leaf("enc_bn.gamma"), leaf("enc_bn.beta"), bn_[0], training,
                          kBnMomentum, kBnEps, update_stats);
        h = ad::relu_(g, h);

        // horizon submodels
        GraphOut out;
        size_t bn_idx = 1;
        for (int k = 0; k < cfg_.horizon; ++k) {
            ad::Value z = g.constant(slice_future(future, k));
            ad::Value a = ad::concat_cols(g, h, z);
            const std::string sp = "sub" + std::to_string(k);
            for (size_t l = 0; l < cfg_.submodel_widths.size(); ++l) {
                const std::string lp = sp + ".l" + std::to_string(l);
                a = ad::linear(g, a, leaf(lp + ".w"), leaf(lp + ".b"));
                a = ad::batchnorm(g, a, leaf(lp + ".gamma"), leaf(lp + ".beta"), bn_[bn_idx++],
                                  training, kBnMomentum, kBnEps, update_stats);
                a = ad::relu_(g, a);
            }
            ad::Value head = ad::linear(g, a, leaf(sp + ".head.w"), leaf(sp + ".head.b"));
            ad::Value y_raw = ad::select_col(g, head, 0);
            ad::Value d_lo = ad::softplus_(g, ad::select_col(g, head, 1));
            ad::Value d_hi = ad::softplus_(g, ad::select_col(g, head, 2));
            out.point.push_back(y_raw);
            out.lower.push_back(ad::sub(g, y_raw, d_lo));
            out.upper.push_back(ad::add(g, y_raw, d_hi));
        }
        return out;
    }

    /// Inference-mode forward pass without a tape: frozen running statistics,
    /// pure function of (params, inputs).
    ForecastBatch forward_infer(const Tensor& lag, const Tensor& future) const {
        check_input_shapes(lag, future);
        const int64_t n = lag.shape[0];
        Tensor h = encode_infer(lag);

        ForecastBatch out{Tensor({n, cfg_.horizon}), Tensor({n, cfg_.horizon}),
                          Tensor({n, cfg_.horizon})};
        size_t bn_idx = 1;
        for (int k = 0; k < cfg_.horizon; ++k) {
            Tensor a = concat2(h, slice_future(future, k));
            const std::string sp = "sub" + std::to_string(k);
            for (size_t l = 0; l < cfg_.submodel_widths.size(); ++l) {
                const std::string lp = sp + ".l" + std::to_string(l);
                a = linear_fwd(a, params_.at(lp + ".w"), params_.at(lp + ".b"));
                bn_infer_inplace(a, params_.at(lp + ".gamma"), params_.at(lp + ".beta"),
                                 bn_[bn_idx++]);
                for (double& v : a.values) v = v > 0.0 ? v : 0.0;
            }
            Tensor head = linear_fwd(a, params_.at(sp + ".head.w"), params_.at(sp + ".head.b"));
            for (int64_t i = 0; i < n; ++i) {
                const double y = head.at2(i, 0);
                out.point.at2(i, k) = y;
                out.lower.at2(i, k) = y - kern::softplus(head.at2(i, 1));
                out.upper.at2(i, k) = y + kern::softplus(head.at2(i, 2));
            }
        }
        if (!out.point.all_finite() || !out.lower.all_finite() || !out.upper.all_finite())
            throw numeric_error("model forward produced non-finite output");
        return out;
    }

    /// Encoder output alone (inference mode): recurrent sweep over the lag
    /// window, then frozen batch normalization and ReLU.
    Tensor encode_infer(const Tensor& lag) const {
        if (lag.rank() != 3 || lag.shape[1] != cfg_.lag_window ||
            lag.shape[2] != cfg_.n_lag_features)
            throw std::invalid_argument("encode: lag shape mismatch " + lag.shape_str());
        const int64_t n = lag.shape[0];
        const int64_t hid = cfg_.encoder_hidden;
        Tensor h({n, hid});
        std::vector<Tensor> prev_seq;
        for (int cell = 0; cell < cfg_.encoder_cells; ++cell) {
            const std::string p = "enc" + std::to_string(cell);
            const Tensor& w = params_.at(p + ".w");
            const Tensor& b = params_.at(p + ".b");
            Tensor hs({n, hid}), cs({n, hid});
            std::vector<Tensor> cur_seq;
            for (int t = 0; t < cfg_.lag_window; ++t) {
                const Tensor x_t = cell == 0 ? slice_lag(lag, t) : prev_seq[static_cast<size_t>(t)];
                auto cellout = kern::lstm_cell_forward(concat2(x_t, hs), cs, w, b, kForgetBias);
                hs = std::move(cellout.h);
                cs = std::move(cellout.c);
                if (cell + 1 < cfg_.encoder_cells) cur_seq.push_back(hs);
            }
            h = std::move(hs);
            prev_seq = std::move(cur_seq);
        }
        bn_infer_inplace(h, params_.at("enc_bn.gamma"), params_.at("enc_bn.beta"), bn_[0]);
        for (double& v : h.values) v = v > 0.0 ? v : 0.0;
        return h;
    }

    size_t param_index(const std::string& name) const { return params_.index_of(name); }

private:
    void check_input_shapes(const Tensor& lag, const Tensor& future) const {
        if (lag.rank() != 3 || lag.shape[1] != cfg_.lag_window ||
            lag.shape[2] != cfg_.n_lag_features)
            throw std::invalid_argument("forward: lag block shape mismatch " + lag.shape_str());
        if (future.rank() != 3 || future.shape[0] != lag.shape[0] ||
            future.shape[1] != cfg_.horizon || future.shape[2] != cfg_.n_future_features)
            throw std::invalid_argument("forward: future block shape mismatch " +
                                        future.shape_str());
    }

    static Tensor concat2(const Tensor& a, const Tensor& b) {
        const int64_t m = a.shape[0], ca = a.shape[1], cb = b.shape[1];
        Tensor out({m, ca + cb});
        for (int64_t i = 0; i < m; ++i) {
            std::copy_n(a.data() + i * ca, ca, out.data() + i * (ca + cb));
            std::copy_n(b.data() + i * cb, cb, out.data() + i * (ca + cb) + ca);
        }
        return out;
    }

    static Tensor linear_fwd(const Tensor& x, const Tensor& w, const Tensor& b) {
        const int64_t m = x.shape[0], k = x.shape[1], n = w.shape[1];
        Tensor out({m, n});
        kern::matmul_nn(x.data(), w.data(), out.data(), m, k, n, false);
        kern::add_row_bias(out.data(), b.data(), m, n);
        return out;
    }

    static void bn_infer_inplace(Tensor& x, const Tensor& gamma, const Tensor& beta,
                                 const ad::BnBuffers& buf) {
        const int64_t n = x.shape[0], c = x.shape[1];
        for (int64_t j = 0; j < c; ++j) {
            const double invstd = 1.0 / std::sqrt(buf.running_var[j] + kBnEps);
            const double scale = gamma[j] * invstd;
            const double shift = beta[j] - buf.running_mean[j] * scale;
            for (int64_t i = 0; i < n; ++i) x.at2(i, j) = scale * x.at2(i, j) + shift;
        }
    }

    Tensor slice_lag(const Tensor& lag, int t) const {
        const int64_t n = lag.shape[0], f = lag.shape[2];
        Tensor out({n, f});
        for (int64_t i = 0; i < n; ++i)
            std::copy_n(lag.data() + (i * cfg_.lag_window + t) * f, f, out.data() + i * f);
        return out;
    }

    Tensor slice_future(const Tensor& future, int k) const {
        const int64_t n = future.shape[0], f = future.shape[2];
        Tensor out({n, f});
        for (int64_t i = 0; i < n; ++i)
            std::copy_n(future.data() + (i * cfg_.horizon + k) * f, f, out.data() + i * f);
        return out;
    }

    /// Scaled-uniform fan-in init for weights, zero biases, unit BN scale.
    void init_params() {
        Rng rng(cfg_.seed);
        auto uniform_tensor = [&](std::vector<int64_t> shape, int64_t fan_in) {
            Tensor t(std::move(shape));
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            for (double& v : t.values) v = rng.uniform(-bound, bound);
            return t;
        };
        auto add_bn = [&](const std::string& name, int64_t c) {
            Tensor gamma({c});
            gamma.fill(1.0);
            params_.add(name + ".gamma", std::move(gamma));
            params_.add(name + ".beta", Tensor({c}));
            bn_.push_back(ad::BnBuffers::fresh(c));
            bn_names_.push_back(name);
        };

        const int64_t hid = cfg_.encoder_hidden;
        for (int cell = 0; cell < cfg_.encoder_cells; ++cell) {
            const int64_t in_dim = (cell == 0 ? cfg_.n_lag_features : hid) + hid;
            const std::string p = "enc" + std::to_string(cell);
            params_.add(p + ".w", uniform_tensor({in_dim, 4 * hid}, in_dim));
            params_.add(p + ".b", Tensor({4 * hid}));
        }
        add_bn("enc_bn", hid);

        for (int k = 0; k < cfg_.horizon; ++k) {
            const std::string sp = "sub" + std::to_string(k);
            int64_t in_dim = hid + cfg_.n_future_features;
            for (size_t l = 0; l < cfg_.submodel_widths.size(); ++l) {
                const int64_t w = cfg_.submodel_widths[l];
                const std::string lp = sp + ".l" + std::to_string(l);
                params_.add(lp + ".w", uniform_tensor({in_dim, w}, in_dim));
                params_.add(lp + ".b", Tensor({w}));
                add_bn(lp, w);
                in_dim = w;
            }
            params_.add(sp + ".head.w", uniform_tensor({in_dim, 3}, in_dim));
            params_.add(sp + ".head.b", Tensor({3}));
        }
    }

    ModelConfig cfg_;
    ParameterSet params_;
    std::vector<ad::BnBuffers> bn_;
    std::vector<std::string> bn_names_;
};

}  // namespace solarpi::model

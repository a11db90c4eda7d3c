#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "solarpi/graph.hpp"
#include "solarpi/tensor.hpp"

namespace solarpi::losses {

/// Hyperparameters of the composite objective. Targets, smoothing and the
/// night threshold are expressed in normalized target units (y / R_Q), so
/// r_q here is 1.0 whenever the data pipeline has already normalized.
struct LossConfig {
    double p_day = 0.90;
    double p_night = 0.15;
    double rho = 10.0;
    double r_cap = 100.0;
    double lambda = 0.8;
    double k_frac = 0.3;
    double s = 50.0;
    double night_threshold = 0.001;
    double r_q = 1.0;

    void validate() const {
        if (!(p_night > 0.0 && p_night < p_day && p_day < 1.0))
            throw std::invalid_argument("loss config: need 0 < p_night < p_day < 1");
        if (!(rho > 0.0)) throw std::invalid_argument("loss config: rho must be > 0");
        if (!(r_cap > 0.0)) throw std::invalid_argument("loss config: r_cap must be > 0");
        if (!(lambda >= 0.0 && lambda < 1.0))
            throw std::invalid_argument("loss config: lambda must be in [0,1)");
        if (!(k_frac > 0.0 && k_frac < 1.0))
            throw std::invalid_argument("loss config: k_frac must be in (0,1)");
        if (!(s > 0.0)) throw std::invalid_argument("loss config: s must be > 0");
        if (!(r_q > 0.0)) throw std::invalid_argument("loss config: r_q must be > 0");
    }
};

/// Per-step, per-regime barrier hardness, refreshed once per epoch from the
/// full-train coverage.
struct BarrierState {
    std::vector<double> r_day;
    std::vector<double> r_night;

    static BarrierState uniform(int horizon, double r) {
        return BarrierState{std::vector<double>(static_cast<size_t>(horizon), r),
                            std::vector<double>(static_cast<size_t>(horizon), r)};
    }
};

/// Number of "large width" samples for a pooling context of n samples.
inline int64_t sumk_count(int64_t n, double k_frac) {
    return std::max<int64_t>(1, static_cast<int64_t>(std::floor(k_frac * static_cast<double>(n))));
}

// ---------------------------------------------------------------------------
// Plain (non-differentiable-path) evaluations
// ---------------------------------------------------------------------------

/// Range-normalized MAE over an N x H block: (1/(H N R_Q)) sum |y - yhat|.
inline double point_loss(const Tensor& targets, const Tensor& point, double r_q) {
    if (!(r_q > 0.0)) throw std::invalid_argument("point_loss: R_Q must be > 0");
    require_same_shape(targets, point, "point_loss");
    double s = 0.0;
    for (int64_t i = 0; i < targets.size(); ++i) s += std::fabs(targets[i] - point[i]);
    return s / (static_cast<double>(targets.size()) * r_q);
}

/// Extended log-barrier: -(1/r)log(-z) for z <= -1/r^2, first-order Taylor
/// continuation above the knot. Total, convex, C1.
inline double extended_log_barrier(double z, double r) {
    if (!(r > 0.0)) throw std::invalid_argument("extended_log_barrier: r must be > 0");
    const double knot = -1.0 / (r * r);
    if (z <= knot) return -std::log(-z) / r;
    return r * z - std::log(1.0 / (r * r)) / r + 1.0 / r;
}

inline double extended_log_barrier_dz(double z, double r) {
    const double knot = -1.0 / (r * r);
    return z <= knot ? -1.0 / (r * z) : r;
}

/// r = min(r_cap, rho / |p - picp|); the exact-hit case returns the cap.
inline double adaptive_r(double p, double picp, double rho, double r_cap) {
    if (!(rho > 0.0)) throw std::invalid_argument("adaptive_r: rho must be > 0");
    const double dev = std::fabs(p - picp);
    if (dev == 0.0) return r_cap;
    return std::min(r_cap, rho / dev);
}

/// Sum-k width penalty: mean of the K largest widths plus lambda-weighted
/// mean of the rest, divided by R_Q.
inline double sumk_width(std::span<const double> w, int64_t k, double lambda, double r_q) {
    const int64_t n = static_cast<int64_t>(w.size());
    if (k < 1 || k >= n) throw std::invalid_argument("sumk_width: need 1 <= K < N");
    if (!(r_q > 0.0)) throw std::invalid_argument("sumk_width: R_Q must be > 0");
    auto sel = ad::topk_indices(w.data(), n, k);
    std::vector<char> in_top(static_cast<size_t>(n), 0);
    double top = 0.0, rest = 0.0;
    for (int64_t i : sel) in_top[static_cast<size_t>(i)] = 1;
    for (int64_t i = 0; i < n; ++i)
        (in_top[static_cast<size_t>(i)] ? top : rest) += w[static_cast<size_t>(i)];
    return (top / static_cast<double>(k) +
            lambda * rest / static_cast<double>(n - k)) / r_q;
}

inline double smooth_indicator(double y, double lo, double hi, double s) {
    const double v = std::tanh(s * (y - lo)) + std::tanh(s * (hi - y));
    return 0.5 * std::max(0.0, v);
}

/// Smooth tanh approximation of the coverage probability.
inline double smooth_picp(std::span<const double> y, std::span<const double> lo,
                          std::span<const double> hi, double s) {
    if (!(s > 0.0)) throw std::invalid_argument("smooth_picp: s must be > 0");
    if (y.size() != lo.size() || y.size() != hi.size() || y.empty())
        throw std::invalid_argument("smooth_picp: bad extents");
    double acc = 0.0;
    for (size_t i = 0; i < y.size(); ++i) acc += smooth_indicator(y[i], lo[i], hi[i], s);
    return acc / static_cast<double>(y.size());
}

/// Mask-sum floor below which a regime is treated as absent.
constexpr double kRegimeEps = 1e-9;

struct DayNightPicp {
    double day = std::numeric_limits<double>::quiet_NaN();
    double night = std::numeric_limits<double>::quiet_NaN();
    double n_day_eff = 0.0;
    double n_night_eff = 0.0;

    bool day_defined() const { return n_day_eff >= kRegimeEps; }
    bool night_defined() const { return n_night_eff >= kRegimeEps; }
};

inline double day_mask(double y, double threshold, double s) {
    return std::max(0.0, std::tanh(s * (y - threshold)));
}
inline double night_mask(double y, double threshold, double s) {
    return std::max(0.0, std::tanh(s * (threshold - y)));
}

/// Smooth-mask coverage split into day and night regimes. A regime whose
/// effective sample mass vanishes is reported as undefined (NaN sentinel).
inline DayNightPicp day_night_picp(std::span<const double> y, std::span<const double> lo,
                                   std::span<const double> hi, double s, double threshold) {
    if (!(s > 0.0)) throw std::invalid_argument("day_night_picp: s must be > 0");
    DayNightPicp out;
    double acc_day = 0.0, acc_night = 0.0;
    for (size_t i = 0; i < y.size(); ++i) {
        const double ind = smooth_indicator(y[i], lo[i], hi[i], s);
        const double md = day_mask(y[i], threshold, s);
        const double mn = night_mask(y[i], threshold, s);
        acc_day += ind * md;
        acc_night += ind * mn;
        out.n_day_eff += md;
        out.n_night_eff += mn;
    }
    if (out.day_defined()) out.day = acc_day / out.n_day_eff;
    if (out.night_defined()) out.night = acc_night / out.n_night_eff;
    return out;
}

/// Per-step PI loss: barrier on the day/night coverage deviations plus the
/// Sum-k width term, averaged over the horizon. Columns of the N x H blocks
/// are pooled independently, one barrier state entry per step.
inline double pi_loss(const Tensor& targets, const Tensor& lower, const Tensor& upper,
                      const BarrierState& barrier, const LossConfig& cfg) {
    cfg.validate();
    require_same_shape(targets, lower, "pi_loss");
    require_same_shape(targets, upper, "pi_loss");
    const int64_t n = targets.shape[0], h = targets.shape[1];
    if (static_cast<int64_t>(barrier.r_day.size()) != h ||
        static_cast<int64_t>(barrier.r_night.size()) != h)
        throw std::invalid_argument("pi_loss: barrier state not populated for all steps");
    std::vector<double> yk(static_cast<size_t>(n)), lk(static_cast<size_t>(n)),
        uk(static_cast<size_t>(n)), wk(static_cast<size_t>(n));
    double total = 0.0;
    for (int64_t k = 0; k < h; ++k) {
        for (int64_t i = 0; i < n; ++i) {
            yk[static_cast<size_t>(i)] = targets.at2(i, k);
            lk[static_cast<size_t>(i)] = lower.at2(i, k);
            uk[static_cast<size_t>(i)] = upper.at2(i, k);
            wk[static_cast<size_t>(i)] = upper.at2(i, k) - lower.at2(i, k);
        }
        DayNightPicp picp = day_night_picp(yk, lk, uk, cfg.s, cfg.night_threshold);
        double step_loss = 0.0;
        if (picp.day_defined())
            step_loss += extended_log_barrier(cfg.p_day - picp.day,
                                              barrier.r_day[static_cast<size_t>(k)]);
        if (picp.night_defined())
            step_loss += extended_log_barrier(cfg.p_night - picp.night,
                                              barrier.r_night[static_cast<size_t>(k)]);
        step_loss += sumk_width(wk, sumk_count(n, cfg.k_frac), cfg.lambda, cfg.r_q);
        total += step_loss;
    }
    return total / static_cast<double>(h);
}

inline double pinball(double tau, double residual) {
    return std::max(tau * residual, (tau - 1.0) * residual);
}

/// Two-sided quantile (pinball) loss targeting coverage 1 - alpha.
inline double pinball_loss(const Tensor& targets, const Tensor& lower, const Tensor& upper,
                           double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0))
        throw std::invalid_argument("pinball_loss: alpha must be in (0,1)");
    require_same_shape(targets, lower, "pinball_loss");
    require_same_shape(targets, upper, "pinball_loss");
    double s = 0.0;
    for (int64_t i = 0; i < targets.size(); ++i)
        s += pinball(alpha / 2.0, targets[i] - lower[i]) +
             pinball(1.0 - alpha / 2.0, targets[i] - upper[i]);
    return s / static_cast<double>(targets.size());
}

// ---------------------------------------------------------------------------
// Graph (differentiable) builders. Targets are constants; predictions are
// per-step Values of shape {N}.
// ---------------------------------------------------------------------------

/// (1/(H N R_Q)) sum_k sum_t |y - yhat|.
inline ad::Value point_loss_graph(ad::Graph& g, const std::vector<ad::Value>& point_by_step,
                                  const Tensor& targets, double r_q) {
    if (!(r_q > 0.0)) throw std::invalid_argument("point_loss: R_Q must be > 0");
    const int64_t n = targets.shape[0];
    const int64_t h = targets.shape[1];
    if (static_cast<int64_t>(point_by_step.size()) != h)
        throw std::invalid_argument("point_loss: steps mismatch");
    ad::Value total;
    for (int64_t k = 0; k < h; ++k) {
        Tensor yk({n});
        for (int64_t i = 0; i < n; ++i) yk[i] = targets.at2(i, k);
        ad::Value diff = ad::sub(g, g.constant(std::move(yk)), point_by_step[static_cast<size_t>(k)]);
        ad::Value s = ad::sum_all(g, ad::abs_(g, diff));
        total = total.valid() ? ad::add(g, total, s) : s;
    }
    return ad::mul_scalar(g, total, 1.0 / (static_cast<double>(n * h) * r_q));
}

/// Smooth masked coverage of one step; mask weights depend only on the
/// (constant) targets, so they are folded in as fixed coefficients.
struct StepPicpGraph {
    ad::Value day;    // invalid when the regime is empty
    ad::Value night;
    double n_day_eff = 0.0;
    double n_night_eff = 0.0;
};

inline StepPicpGraph step_picp_graph(ad::Graph& g, const std::vector<double>& yk, ad::Value lo,
                                     ad::Value hi, const LossConfig& cfg) {
    const int64_t n = static_cast<int64_t>(yk.size());
    Tensor yt({n}), md({n}), mn({n});
    StepPicpGraph out;
    for (int64_t i = 0; i < n; ++i) {
        yt[i] = yk[static_cast<size_t>(i)];
        md[i] = day_mask(yt[i], cfg.night_threshold, cfg.s);
        mn[i] = night_mask(yt[i], cfg.night_threshold, cfg.s);
        out.n_day_eff += md[i];
        out.n_night_eff += mn[i];
    }
    ad::Value y_const = g.constant(yt);
    // 0.5 * max(0, tanh(s(y-l)) + tanh(s(u-y)))
    ad::Value t_lo = ad::tanh_(g, ad::mul_scalar(g, ad::sub(g, y_const, lo), cfg.s));
    ad::Value t_hi = ad::tanh_(g, ad::mul_scalar(g, ad::sub(g, hi, y_const), cfg.s));
    ad::Value ind = ad::mul_scalar(g, ad::max_scalar(g, ad::add(g, t_lo, t_hi), 0.0), 0.5);
    if (out.n_day_eff >= kRegimeEps)
        out.day = ad::mul_scalar(g, ad::sum_all(g, ad::mul(g, ind, g.constant(md))),
                                 1.0 / out.n_day_eff);
    if (out.n_night_eff >= kRegimeEps)
        out.night = ad::mul_scalar(g, ad::sum_all(g, ad::mul(g, ind, g.constant(mn))),
                                   1.0 / out.n_night_eff);
    return out;
}

inline ad::Value sumk_width_graph(ad::Graph& g, ad::Value widths, int64_t k, double lambda,
                                  double r_q) {
    const int64_t n = g.value(widths).size();
    if (k < 1 || k >= n) throw std::invalid_argument("sumk_width: need 1 <= K < N");
    ad::Value top = ad::topk_sum(g, widths, k);
    ad::Value all = ad::sum_all(g, widths);
    const double a = (1.0 / static_cast<double>(k) - lambda / static_cast<double>(n - k)) / r_q;
    const double b = lambda / (static_cast<double>(n - k) * r_q);
    return ad::add(g, ad::mul_scalar(g, top, a), ad::mul_scalar(g, all, b));
}

struct PiLossGraph {
    ad::Value loss;
    int skipped_day_terms = 0;
    int skipped_night_terms = 0;
};

/// Eq-for-eq graph version of pi_loss; barrier terms for an empty regime are
/// skipped and counted.
inline PiLossGraph pi_loss_graph(ad::Graph& g, const std::vector<ad::Value>& lower_by_step,
                                 const std::vector<ad::Value>& upper_by_step,
                                 const Tensor& targets, const BarrierState& barrier,
                                 const LossConfig& cfg) {
    cfg.validate();
    const int64_t n = targets.shape[0], h = targets.shape[1];
    if (static_cast<int64_t>(lower_by_step.size()) != h ||
        static_cast<int64_t>(upper_by_step.size()) != h)
        throw std::invalid_argument("pi_loss: steps mismatch");
    if (static_cast<int64_t>(barrier.r_day.size()) != h ||
        static_cast<int64_t>(barrier.r_night.size()) != h)
        throw std::invalid_argument("pi_loss: barrier state not populated for all steps");
    PiLossGraph out;
    std::vector<double> yk(static_cast<size_t>(n));
    ad::Value total;
    for (int64_t k = 0; k < h; ++k) {
        for (int64_t i = 0; i < n; ++i) yk[static_cast<size_t>(i)] = targets.at2(i, k);
        ad::Value lo = lower_by_step[static_cast<size_t>(k)];
        ad::Value hi = upper_by_step[static_cast<size_t>(k)];
        StepPicpGraph picp = step_picp_graph(g, yk, lo, hi, cfg);
        ad::Value step_loss;
        if (picp.day.valid()) {
            ad::Value z = ad::affine(g, picp.day, -1.0, cfg.p_day);
            step_loss = ad::ext_log_barrier(g, z, barrier.r_day[static_cast<size_t>(k)]);
        } else {
            ++out.skipped_day_terms;
        }
        if (picp.night.valid()) {
            ad::Value z = ad::affine(g, picp.night, -1.0, cfg.p_night);
            ad::Value b = ad::ext_log_barrier(g, z, barrier.r_night[static_cast<size_t>(k)]);
            step_loss = step_loss.valid() ? ad::add(g, step_loss, b) : b;
        } else {
            ++out.skipped_night_terms;
        }
        ad::Value w = ad::sub(g, hi, lo);
        ad::Value wterm = sumk_width_graph(g, w, sumk_count(n, cfg.k_frac), cfg.lambda, cfg.r_q);
        step_loss = step_loss.valid() ? ad::add(g, step_loss, wterm) : wterm;
        total = total.valid() ? ad::add(g, total, step_loss) : step_loss;
    }
    out.loss = ad::mul_scalar(g, total, 1.0 / static_cast<double>(h));
    return out;
}

/// Pinball loss over all steps (mean over samples and steps).
inline ad::Value pinball_loss_graph(ad::Graph& g, const std::vector<ad::Value>& lower_by_step,
                                    const std::vector<ad::Value>& upper_by_step,
                                    const Tensor& targets, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0))
        throw std::invalid_argument("pinball_loss: alpha must be in (0,1)");
    const int64_t n = targets.shape[0], h = targets.shape[1];
    const double tau_lo = alpha / 2.0, tau_hi = 1.0 - alpha / 2.0;
    ad::Value total;
    for (int64_t k = 0; k < h; ++k) {
        Tensor yk({n});
        for (int64_t i = 0; i < n; ++i) yk[i] = targets.at2(i, k);
        ad::Value y_const = g.constant(std::move(yk));
        ad::Value r_lo = ad::sub(g, y_const, lower_by_step[static_cast<size_t>(k)]);
        ad::Value r_hi = ad::sub(g, y_const, upper_by_step[static_cast<size_t>(k)]);
        // rho_tau(r) = max(tau r, (tau-1) r)
        ad::Value p_lo = ad::maximum(g, ad::mul_scalar(g, r_lo, tau_lo),
                                     ad::mul_scalar(g, r_lo, tau_lo - 1.0));
        ad::Value p_hi = ad::maximum(g, ad::mul_scalar(g, r_hi, tau_hi),
                                     ad::mul_scalar(g, r_hi, tau_hi - 1.0));
        ad::Value s = ad::add(g, ad::sum_all(g, p_lo), ad::sum_all(g, p_hi));
        total = total.valid() ? ad::add(g, total, s) : s;
    }
    return ad::mul_scalar(g, total, 1.0 / static_cast<double>(n * h));
}

}  // namespace solarpi::losses

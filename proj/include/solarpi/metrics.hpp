#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace solarpi::metrics {

/// Hard-count coverage of closed intervals: mean of 1{l <= y <= u}.
inline double picp_hard(std::span<const double> y, std::span<const double> lo,
                        std::span<const double> hi) {
    if (y.empty() || y.size() != lo.size() || y.size() != hi.size())
        throw std::invalid_argument("picp_hard: bad extents");
    size_t covered = 0;
    for (size_t i = 0; i < y.size(); ++i)
        if (lo[i] <= y[i] && y[i] <= hi[i]) ++covered;
    return static_cast<double>(covered) / static_cast<double>(y.size());
}

/// Mean interval width over R_Q.
inline double pinaw(std::span<const double> lo, std::span<const double> hi, double r_q) {
    if (!(r_q > 0.0)) throw std::invalid_argument("pinaw: R_Q must be > 0");
    if (lo.empty() || lo.size() != hi.size()) throw std::invalid_argument("pinaw: bad extents");
    double s = 0.0;
    for (size_t i = 0; i < lo.size(); ++i) {
        const double w = hi[i] - lo[i];
        if (w < 0.0) throw std::invalid_argument("pinaw: negative interval width");
        s += w;
    }
    return s / (static_cast<double>(lo.size()) * r_q);
}

/// Mean of the K = floor((1-tau) N) largest widths over R_Q.
inline double pinalw(std::span<const double> lo, std::span<const double> hi, double tau,
                     double r_q) {
    if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("pinalw: tau must be in (0,1)");
    if (!(r_q > 0.0)) throw std::invalid_argument("pinalw: R_Q must be > 0");
    const size_t n = lo.size();
    const auto k = static_cast<size_t>(std::floor((1.0 - tau) * static_cast<double>(n)));
    if (k < 1) throw std::invalid_argument("pinalw: K = floor((1-tau)N) must be >= 1");
    std::vector<double> w(n);
    for (size_t i = 0; i < n; ++i) w[i] = hi[i] - lo[i];
    std::nth_element(w.begin(), w.begin() + static_cast<int64_t>(k - 1), w.end(),
                     std::greater<>());
    double s = 0.0;
    for (size_t i = 0; i < k; ++i) s += w[i];
    return s / (static_cast<double>(k) * r_q);
}

/// Winkler score with nominal probability p, normalized by R_Q.
inline double winkler(std::span<const double> y, std::span<const double> lo,
                      std::span<const double> hi, double p, double r_q) {
    if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("winkler: p must be in (0,1)");
    if (!(r_q > 0.0)) throw std::invalid_argument("winkler: R_Q must be > 0");
    if (y.empty() || y.size() != lo.size() || y.size() != hi.size())
        throw std::invalid_argument("winkler: bad extents");
    const double penalty = 2.0 / (1.0 - p);
    double s = 0.0;
    for (size_t i = 0; i < y.size(); ++i) {
        s += hi[i] - lo[i];
        if (y[i] < lo[i]) s += penalty * (lo[i] - y[i]);
        if (y[i] > hi[i]) s += penalty * (y[i] - hi[i]);
    }
    return s / (static_cast<double>(y.size()) * r_q);
}

struct PointMetrics {
    double mae = 0.0;
    double rmse = 0.0;
    double mbe = 0.0;
};

/// MAE, RMSE and signed mean bias mean(y - yhat).
inline PointMetrics point_metrics(std::span<const double> y, std::span<const double> yhat) {
    if (y.empty() || y.size() != yhat.size())
        throw std::invalid_argument("point_metrics: bad extents");
    PointMetrics m;
    double se = 0.0;
    for (size_t i = 0; i < y.size(); ++i) {
        const double e = y[i] - yhat[i];
        m.mae += std::fabs(e);
        se += e * e;
        m.mbe += e;
    }
    const double n = static_cast<double>(y.size());
    m.mae /= n;
    m.rmse = std::sqrt(se / n);
    m.mbe /= n;
    return m;
}

/// Linear-interpolation empirical quantile (type 7).
inline double quantile(std::span<const double> sorted, double q) {
    const size_t n = sorted.size();
    if (n == 0) throw std::invalid_argument("quantile: empty sample");
    if (n == 1) return sorted[0];
    const double h = q * static_cast<double>(n - 1);
    const auto lo = static_cast<size_t>(std::floor(h));
    const size_t hi = std::min(lo + 1, n - 1);
    const double frac = h - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

/// R_Q = q(hi) - q(lo); errors out on degenerate data so the caller can
/// supply an explicit range instead.
inline double interquantile_range(std::span<const double> y, double lo = 0.05,
                                  double hi = 0.95) {
    if (!(hi > lo)) throw std::invalid_argument("interquantile_range: hi must exceed lo");
    if (y.size() < 2) throw std::invalid_argument("interquantile_range: need >= 2 samples");
    std::vector<double> sorted(y.begin(), y.end());
    std::sort(sorted.begin(), sorted.end());
    const double r = quantile(sorted, hi) - quantile(sorted, lo);
    if (!(r > 0.0))
        throw std::invalid_argument(
            "interquantile_range: degenerate sample; supply an explicit R_Q");
    return r;
}

/// Retains indices whose local hour lies in [6, 18).
inline bool is_daytime_hour(double hour) { return hour >= 6.0 && hour < 18.0; }

// ---------------------------------------------------------------------------
// Per-horizon evaluation report
// ---------------------------------------------------------------------------

struct StepMetrics {
    int step = 0;  // 1-based horizon step; 0 marks the pooled row
    size_t n = 0;
    double picp = 0.0;
    double pinaw = 0.0;
    double pinalw = 0.0;
    double winkler = 0.0;
    double mae = 0.0;
    double rmse = 0.0;
    double mbe = 0.0;
};

struct MetricReport {
    std::vector<StepMetrics> per_step;
    StepMetrics pooled;
    double r_q = 1.0;
    double tau = 0.5;
    double p = 0.9;
    bool daytime_only = true;

    std::string to_csv() const {
        std::ostringstream os;
        os << "step,n,picp,pinaw,pinalw,winkler,mae,rmse,mbe\n";
        auto row = [&os](const StepMetrics& m, const std::string& label) {
            char buf[256];
            std::snprintf(buf, sizeof(buf), "%s,%zu,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n",
                          label.c_str(), m.n, m.picp, m.pinaw, m.pinalw, m.winkler, m.mae,
                          m.rmse, m.mbe);
            os << buf;
        };
        for (const auto& m : per_step) row(m, std::to_string(m.step));
        row(pooled, "pooled");
        return os.str();
    }

    std::string to_table() const {
        std::ostringstream os;
        char buf[256];
        std::snprintf(buf, sizeof(buf), "%-8s %8s %7s %7s %8s %8s %8s %8s %8s\n", "step", "n",
                      "PICP", "PINAW", "PINALW", "Winkler", "MAE", "RMSE", "MBE");
        os << buf;
        auto row = [&](const StepMetrics& m, const std::string& label) {
            std::snprintf(buf, sizeof(buf),
                          "%-8s %8zu %7.3f %7.3f %8.3f %8.3f %8.2f %8.2f %8.2f\n", label.c_str(),
                          m.n, m.picp, m.pinaw, m.pinalw, m.winkler, m.mae, m.rmse, m.mbe);
            os << buf;
        };
        for (const auto& m : per_step) row(m, std::to_string(m.step));
        row(pooled, "pooled");
        return os.str();
    }
};

/// Metrics of one flat slice (all series in the same physical units).
inline StepMetrics compute_step_metrics(std::span<const double> y, std::span<const double> yhat,
                                        std::span<const double> lo, std::span<const double> hi,
                                        double p, double tau, double r_q) {
    StepMetrics m;
    m.n = y.size();
    if (y.empty()) return m;
    m.picp = picp_hard(y, lo, hi);
    m.pinaw = pinaw(lo, hi, r_q);
    m.pinalw = pinalw(lo, hi, tau, r_q);
    m.winkler = winkler(y, lo, hi, p, r_q);
    const PointMetrics pm = point_metrics(y, yhat);
    m.mae = pm.mae;
    m.rmse = pm.rmse;
    m.mbe = pm.mbe;
    return m;
}

}  // namespace solarpi::metrics

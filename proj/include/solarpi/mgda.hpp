#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

namespace solarpi::mgda {

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(std::span<const double> a) { return dot(a, a); }

/// Convex weights of the minimum-norm point on the segment [g1, g2].
struct MgdaWeights {
    double gamma1 = 0.5;
    double gamma2 = 0.5;
    /// Both gradients vanished: the caller sits at a Pareto-stationary point.
    bool pareto_stationary = false;
};

/// Squared-distance floor below which the two gradients are treated as
/// identical (the quotient is 0/0 and every weighting gives the same g).
constexpr double kDegenerateDiff = 1e-24;

/// Closed-form solution of min_a ||a g1 + (1-a) g2||^2 over a in [0,1]:
/// gamma1 = clip((g2 - g1).g2 / ||g2 - g1||^2, 0, 1).
inline MgdaWeights min_norm_weights(std::span<const double> g1, std::span<const double> g2) {
    if (g1.size() != g2.size()) throw std::invalid_argument("min_norm_weights: length mismatch");
    if (g1.empty()) throw std::invalid_argument("min_norm_weights: empty gradients");
    double diff2 = 0.0, diff_dot_g2 = 0.0, n1 = 0.0, n2 = 0.0;
    for (size_t i = 0; i < g1.size(); ++i) {
        const double d = g2[i] - g1[i];
        diff2 += d * d;
        diff_dot_g2 += d * g2[i];
        n1 += g1[i] * g1[i];
        n2 += g2[i] * g2[i];
    }
    MgdaWeights w;
    if (n1 == 0.0 && n2 == 0.0) {
        w.pareto_stationary = true;
        return w;
    }
    if (diff2 < kDegenerateDiff) {
        w.gamma1 = 0.5;
        w.gamma2 = 0.5;
        return w;
    }
    w.gamma1 = std::min(1.0, std::max(0.0, diff_dot_g2 / diff2));
    w.gamma2 = 1.0 - w.gamma1;
    return w;
}

inline std::vector<double> combine(const MgdaWeights& w, std::span<const double> g1,
                                   std::span<const double> g2) {
    if (g1.size() != g2.size()) throw std::invalid_argument("combine: length mismatch");
    std::vector<double> g(g1.size());
    for (size_t i = 0; i < g1.size(); ++i) g[i] = w.gamma1 * g1[i] + w.gamma2 * g2[i];
    return g;
}

/// True iff -g is a non-ascent direction for both tasks: <g_i, g> >= -tol.
/// For g from min_norm_weights this holds by the variational inequality of
/// the projection; tol absorbs floating-point slack.
inline bool assert_common_descent(std::span<const double> g, std::span<const double> g1,
                                  std::span<const double> g2, double tol) {
    return dot(g1, g) >= -tol && dot(g2, g) >= -tol;
}

/// Descent tolerance scaled to the gradients at hand.
inline double descent_tolerance(std::span<const double> g1, std::span<const double> g2) {
    return 1e-8 * std::max(norm2(g1), norm2(g2));
}

}  // namespace solarpi::mgda

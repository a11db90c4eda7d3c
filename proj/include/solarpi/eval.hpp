#pragma once

#include <stdexcept>
#include <vector>

#include "solarpi/metrics.hpp"
#include "solarpi/model.hpp"
#include "solarpi/timeutil.hpp"
#include "solarpi/windows.hpp"

namespace solarpi::eval {

enum class DayRule { hour, threshold };

struct EvalOptions {
    bool daytime_only = true;
    DayRule rule = DayRule::hour;       // 06:00-18:00 on the target timestamp
    double night_threshold = 0.001;     // normalized units, threshold rule only
    double tau = 0.5;
    double p = 0.9;
};

/// Per-horizon and pooled metrics in physical units. Forecasts arrive in
/// normalized target units and are scaled back by r_q.
inline metrics::MetricReport evaluate_forecasts(const data::WindowBatch& set,
                                                const model::ForecastBatch& fc, double r_q,
                                                const EvalOptions& opt = {}) {
    if (!(r_q > 0.0)) throw std::invalid_argument("evaluate: R_Q must be > 0");
    const int64_t n = set.size();
    const int h = set.horizon;
    if (fc.point.shape[0] != n || fc.point.shape[1] != h)
        throw std::invalid_argument("evaluate: forecast/window shape mismatch");

    metrics::MetricReport rep;
    rep.r_q = r_q;
    rep.tau = opt.tau;
    rep.p = opt.p;
    rep.daytime_only = opt.daytime_only;

    std::vector<double> py, pyh, plo, phi;  // pooled
    for (int k = 0; k < h; ++k) {
        std::vector<double> y, yh, lo, hi;
        for (int64_t i = 0; i < n; ++i) {
            if (opt.daytime_only) {
                if (opt.rule == DayRule::hour) {
                    const double hour = hour_of_day(set.target_time(i, k));
                    if (!metrics::is_daytime_hour(hour)) continue;
                } else {
                    if (!(set.target.at2(i, k) > opt.night_threshold)) continue;
                }
            }
            y.push_back(set.target.at2(i, k) * r_q);
            yh.push_back(fc.point.at2(i, k) * r_q);
            lo.push_back(fc.lower.at2(i, k) * r_q);
            hi.push_back(fc.upper.at2(i, k) * r_q);
        }
        if (y.size() < 2)
            throw std::runtime_error(
                "evaluate: no daytime samples at horizon step " + std::to_string(k + 1) +
                "; an all-night segment cannot be scored");
        metrics::StepMetrics sm =
            metrics::compute_step_metrics(y, yh, lo, hi, opt.p, opt.tau, r_q);
        sm.step = k + 1;
        rep.per_step.push_back(sm);
        py.insert(py.end(), y.begin(), y.end());
        pyh.insert(pyh.end(), yh.begin(), yh.end());
        plo.insert(plo.end(), lo.begin(), lo.end());
        phi.insert(phi.end(), hi.begin(), hi.end());
    }
    rep.pooled = metrics::compute_step_metrics(py, pyh, plo, phi, opt.p, opt.tau, r_q);
    rep.pooled.step = 0;
    return rep;
}

}  // namespace solarpi::eval

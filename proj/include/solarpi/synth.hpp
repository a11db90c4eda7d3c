#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "solarpi/rng.hpp"
#include "solarpi/series.hpp"
#include "solarpi/timeutil.hpp"

namespace solarpi::data {

/// Synthetic solar-like series: a smooth diurnal clear-sky bell (exactly
/// zero outside 06:00-18:30) attenuated by a bounded mean-reverting
/// clear-sky-index process with a per-day sky regime. Stands in for the
/// measurement data; everything is deterministic in the seed.
struct SynthConfig {
    int sites = 1;
    int days = 30;
    uint64_t seed = 0;
    double mix_clear = 1.0 / 3.0;
    double mix_partly = 1.0 / 3.0;
    double mix_cloudy = 1.0 / 3.0;
    // first generated timestamp: 2023-01-01T00:00 local
    int start_year = 2023, start_month = 1, start_day = 1;

    void validate() const {
        if (sites < 1) throw std::invalid_argument("synth: sites must be >= 1");
        if (days < 1) throw std::invalid_argument("synth: days must be >= 1");
        if (mix_clear < 0 || mix_partly < 0 || mix_cloudy < 0 ||
            mix_clear + mix_partly + mix_cloudy <= 0)
            throw std::invalid_argument("synth: regime mix must be a nonnegative mixture");
    }
};

namespace synth_detail {

struct Regime {
    double mean, sigma, revert;
};

inline Regime regime_params(int r) {
    switch (r) {
        case 0: return {0.92, 0.020, 0.25};  // clear
        case 1: return {0.55, 0.065, 0.20};  // partly cloudy
        default: return {0.30, 0.085, 0.16}; // cloudy
    }
}

/// Diurnal bell: zero before 06:00 and after 18:30, smooth in between.
inline double clearsky_shape(double hour) {
    constexpr double rise = 6.0, set = 18.5;
    if (hour <= rise || hour >= set) return 0.0;
    const double x = (hour - rise) / (set - rise);
    return std::pow(std::sin(3.141592653589793 * x), 1.3);
}

}  // namespace synth_detail

inline SeriesTable synth_generate(const SynthConfig& cfg) {
    cfg.validate();
    const double mix_total = cfg.mix_clear + cfg.mix_partly + cfg.mix_cloudy;
    const double p_clear = cfg.mix_clear / mix_total;
    const double p_partly = cfg.mix_partly / mix_total;

    SeriesTable table;
    const int64_t day0 = days_from_civil(cfg.start_year, cfg.start_month, cfg.start_day);
    const int64_t rows_per_day = 86400 / kGridSeconds;

    for (int s = 0; s < cfg.sites; ++s) {
        Rng rng(derive_seed(cfg.seed, static_cast<uint64_t>(s)));
        Site site;
        site.id = "S" + std::to_string(s + 1);
        site.t0 = day0 * 86400;
        const int64_t n = static_cast<int64_t>(cfg.days) * rows_per_day;
        site.resize(n);

        const double peak = 850.0 + 35.0 * static_cast<double>(s);
        for (int d = 0; d < cfg.days; ++d) {
            const double u = rng.uniform();
            const int regime = u < p_clear ? 0 : (u < p_clear + p_partly ? 1 : 2);
            const auto rp = synth_detail::regime_params(regime);
            // mild deterministic seasonal modulation of the peak
            const double day_peak =
                peak * (0.92 + 0.08 * std::sin(2.0 * 3.141592653589793 *
                                               static_cast<double>(d) / 365.0));
            double k = rp.mean;
            for (int64_t r = 0; r < rows_per_day; ++r) {
                const int64_t i = static_cast<int64_t>(d) * rows_per_day + r;
                const double hour = static_cast<double>(r * kGridSeconds) / 3600.0;
                const double clr = day_peak * synth_detail::clearsky_shape(hour);
                k += rp.revert * (rp.mean - k) + rp.sigma * rng.normal();
                k = std::clamp(k, 0.0, 1.1);
                const size_t idx = static_cast<size_t>(i);
                site.i_clr[idx] = clr;
                site.y[idx] = clr * k;
                site.ci[idx] = std::clamp(1.0 - k + 0.04 * rng.normal(), 0.0, 1.0);
            }
        }
        // reanalysis-like future channel: centered moving average of y with
        // multiplicative noise that grows with cloudiness, mirroring how
        // reanalysis skill degrades under broken skies
        for (int64_t i = 0; i < n; ++i) {
            double acc = 0.0;
            int cnt = 0;
            for (int64_t j = std::max<int64_t>(0, i - 2); j <= std::min(n - 1, i + 2); ++j) {
                acc += site.y[static_cast<size_t>(j)];
                ++cnt;
            }
            const double smooth = acc / static_cast<double>(cnt);
            const size_t idx = static_cast<size_t>(i);
            const double k_here =
                site.i_clr[idx] > 0.0 ? std::clamp(site.y[idx] / site.i_clr[idx], 0.0, 1.1) : 1.0;
            const double sigma = 0.01 + 0.06 * (1.1 - k_here);
            site.i_cams[idx] = std::max(0.0, smooth * (1.0 + sigma * rng.normal()));
        }
        site.refresh_validity();
        table.sites.push_back(std::move(site));
    }
    return table;
}

}  // namespace solarpi::data

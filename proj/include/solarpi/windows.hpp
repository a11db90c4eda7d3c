#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "solarpi/metrics.hpp"
#include "solarpi/series.hpp"
#include "solarpi/tensor.hpp"
#include "solarpi/timeutil.hpp"

namespace solarpi::data {

/// Scaling computed on the training split only and applied identically to
/// every split. Targets, y-lags and the irradiance-unit future channels are
/// divided by r_q; the cloud-index channel is already dimensionless.
struct Normalization {
    double r_q = 1.0;

    static Normalization fit(const SeriesTable& train) {
        std::vector<double> ys;
        for (const auto& site : train.sites)
            for (int64_t i = 0; i < site.rows(); ++i)
                if (site.valid[static_cast<size_t>(i)]) ys.push_back(site.y[static_cast<size_t>(i)]);
        Normalization n;
        n.r_q = metrics::interquantile_range(ys);
        return n;
    }
};

constexpr int kLagFeatures = 2;     // y (normalized), ci
constexpr int kFutureFeatures = 3;  // i_clr, i_cams (normalized), sin(pi h / 24)

/// Cyclical hour encoding; continuous across midnight since sin(0) = sin(pi).
inline double hour_encoding(double hour) { return std::sin(3.141592653589793 * hour / 24.0); }

/// Aligned training samples: lag block, future block, normalized multi-step
/// targets and per-sample anchor metadata. No window overlaps a masked cell.
struct WindowBatch {
    Tensor lag;       // {N, L, kLagFeatures}
    Tensor future;    // {N, H, kFutureFeatures}
    Tensor target;    // {N, H}
    Tensor day_mask;  // {N, H}: 1 where normalized target exceeds the night threshold
    struct Meta {
        int site_index = 0;
        int64_t anchor_time = 0;  // time of the last lag point
    };
    std::vector<Meta> meta;
    int lag_window = 0;
    int horizon = 0;

    int64_t size() const { return static_cast<int64_t>(meta.size()); }

    /// Target timestamp of (sample, step) with 1-based step k.
    int64_t target_time(int64_t i, int64_t k) const {
        return meta[static_cast<size_t>(i)].anchor_time + (k + 1) * kGridSeconds;
    }

    WindowBatch gather(const std::vector<int64_t>& idx) const {
        WindowBatch out;
        out.lag_window = lag_window;
        out.horizon = horizon;
        const int64_t n = static_cast<int64_t>(idx.size());
        out.lag = Tensor({n, lag_window, kLagFeatures});
        out.future = Tensor({n, horizon, kFutureFeatures});
        out.target = Tensor({n, horizon});
        out.day_mask = Tensor({n, horizon});
        const int64_t lag_row = static_cast<int64_t>(lag_window) * kLagFeatures;
        const int64_t fut_row = static_cast<int64_t>(horizon) * kFutureFeatures;
        for (int64_t r = 0; r < n; ++r) {
            const int64_t s = idx[static_cast<size_t>(r)];
            std::copy_n(lag.data() + s * lag_row, lag_row, out.lag.data() + r * lag_row);
            std::copy_n(future.data() + s * fut_row, fut_row, out.future.data() + r * fut_row);
            std::copy_n(target.data() + s * horizon, horizon, out.target.data() + r * horizon);
            std::copy_n(day_mask.data() + s * horizon, horizon,
                        out.day_mask.data() + r * horizon);
            out.meta.push_back(meta[static_cast<size_t>(s)]);
        }
        return out;
    }
};

/// Sliding windows with stride one. A window is emitted only when all
/// lag_window + horizon cells are valid, so masked gaps and split boundaries
/// are never crossed.
inline WindowBatch build_windows(const SeriesTable& table, int lag_window, int horizon,
                                 const Normalization& norm, double night_threshold = 0.001) {
    if (lag_window < 1 || horizon < 1)
        throw std::invalid_argument("build_windows: L and H must be >= 1");
    WindowBatch out;
    out.lag_window = lag_window;
    out.horizon = horizon;

    // count first
    int64_t count = 0;
    for (const auto& site : table.sites) {
        const int64_t n = site.rows();
        int64_t run = 0;
        for (int64_t i = 0; i < n; ++i) {
            run = site.valid[static_cast<size_t>(i)] ? run + 1 : 0;
            if (run >= lag_window + horizon) ++count;
        }
    }
    out.lag = Tensor({count, lag_window, kLagFeatures});
    out.future = Tensor({count, horizon, kFutureFeatures});
    out.target = Tensor({count, horizon});
    out.day_mask = Tensor({count, horizon});
    out.meta.reserve(static_cast<size_t>(count));

    const double inv_rq = 1.0 / norm.r_q;
    int64_t w = 0;
    for (size_t si = 0; si < table.sites.size(); ++si) {
        const Site& site = table.sites[si];
        const int64_t n = site.rows();
        int64_t run = 0;
        for (int64_t i = 0; i < n; ++i) {
            run = site.valid[static_cast<size_t>(i)] ? run + 1 : 0;
            if (run < lag_window + horizon) continue;
            const int64_t anchor = i - horizon;  // last lag index
            double* lagp = out.lag.data() + w * lag_window * kLagFeatures;
            for (int64_t t = 0; t < lag_window; ++t) {
                const size_t s = static_cast<size_t>(anchor - lag_window + 1 + t);
                lagp[t * kLagFeatures + 0] = site.y[s] * inv_rq;
                lagp[t * kLagFeatures + 1] = site.ci[s];
            }
            double* futp = out.future.data() + w * horizon * kFutureFeatures;
            for (int64_t k = 0; k < horizon; ++k) {
                const size_t s = static_cast<size_t>(anchor + 1 + k);
                futp[k * kFutureFeatures + 0] = site.i_clr[s] * inv_rq;
                futp[k * kFutureFeatures + 1] = site.i_cams[s] * inv_rq;
                futp[k * kFutureFeatures + 2] =
                    hour_encoding(hour_of_day(site.time_at(static_cast<int64_t>(s))));
                const double ty = site.y[s] * inv_rq;
                out.target[w * horizon + k] = ty;
                out.day_mask[w * horizon + k] = ty > night_threshold ? 1.0 : 0.0;
            }
            out.meta.push_back(
                WindowBatch::Meta{static_cast<int>(si), site.time_at(anchor)});
            ++w;
        }
    }
    return out;
}

}  // namespace solarpi::data

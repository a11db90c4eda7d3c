#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "solarpi/losses.hpp"
#include "solarpi/mgda.hpp"
#include "solarpi/model.hpp"
#include "solarpi/optim.hpp"
#include "solarpi/rng.hpp"
#include "solarpi/windows.hpp"

namespace solarpi::trainer {

enum class Objective { solarpointpi, pinball };

inline const char* objective_name(Objective o) {
    return o == Objective::solarpointpi ? "solarpointpi" : "pinball";
}

struct TrainConfig {
    double lr = 1e-3;
    int min_epoch = 10;
    int max_epoch = 60;
    int patience = 5;
    int batch_size = 4096;
    double warmup_fraction = 0.05;
    optim::AdamConfig adam;
    uint64_t seed = 0;
    losses::LossConfig loss;
    Objective objective = Objective::solarpointpi;
    double pinball_alpha = 0.1;

    void validate() const {
        if (!(lr > 0.0)) throw std::invalid_argument("train config: lr must be > 0");
        if (min_epoch > max_epoch)
            throw std::invalid_argument("train config: min_epoch must not exceed max_epoch");
        if (patience < 1) throw std::invalid_argument("train config: patience must be >= 1");
        if (batch_size < 2) throw std::invalid_argument("train config: batch_size must be >= 2");
        if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0))
            throw std::invalid_argument("train config: warmup_fraction must be in [0,1)");
        if (!(pinball_alpha > 0.0 && pinball_alpha < 1.0))
            throw std::invalid_argument("train config: pinball_alpha must be in (0,1)");
        loss.validate();
    }
};

struct EpochRow {
    int epoch = 0;
    double l_point_train = 0.0;
    double l_pi_train = 0.0;
    double l_val = 0.0;
    double l_point_val = 0.0;
    double l_pi_val = 0.0;
    double gamma1_mean = 0.0;
    double r_day_mean = 0.0;
    double r_night_mean = 0.0;
    double grad_norm_1 = 0.0;
    double grad_norm_2 = 0.0;
    double lr = 0.0;
};

struct BatchRecord {
    double gamma1 = 0.0;
    double gamma2 = 0.0;
    double g1_norm = 0.0;
    double g2_norm = 0.0;
    double g1_dot_g2 = 0.0;
    double lr = 0.0;
};

struct TrainReport {
    std::vector<EpochRow> epochs;
    std::vector<BatchRecord> batches;
    std::vector<std::vector<double>> r_day_hist;     // per epoch, per step
    std::vector<std::vector<double>> r_night_hist;
    std::vector<std::vector<double>> dev_day_hist;   // |p - picp| fed into Eq. (3)
    std::vector<std::vector<double>> dev_night_hist;
    int best_epoch = 0;
    double best_l_val = std::numeric_limits<double>::infinity();
    std::string stop_reason;
    int descent_violations = 0;
    int pareto_stationary_batches = 0;
    int skipped_day_terms = 0;
    int skipped_night_terms = 0;
    int dropped_tiny_batches = 0;
    // state at the final epoch, before the best snapshot is restored
    std::vector<double> last_params_flat;
    std::vector<ad::BnBuffers> last_bn;
    losses::BarrierState final_barrier;

    /// Per-epoch CSV; stop_reason is carried on the final row.
    std::string to_csv() const {
        std::ostringstream os;
        os << "epoch,l_point_train,l_pi_train,l_val,gamma1_mean,r_day_mean,r_night_mean,"
              "grad_norm_1,grad_norm_2,lr,stop_reason\n";
        char buf[320];
        for (size_t i = 0; i < epochs.size(); ++i) {
            const EpochRow& e = epochs[i];
            std::snprintf(buf, sizeof(buf),
                          "%d,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%s\n",
                          e.epoch, e.l_point_train, e.l_pi_train, e.l_val, e.gamma1_mean,
                          e.r_day_mean, e.r_night_mean, e.grad_norm_1, e.grad_norm_2, e.lr,
                          i + 1 == epochs.size() ? stop_reason.c_str() : "");
            os << buf;
        }
        return os.str();
    }
};

/// Hard (counting) coverage per step and regime over a full window set,
/// evaluated in inference mode and in batches.
struct HardPicp {
    std::vector<double> day, night;       // NaN where the regime is empty
    std::vector<int64_t> n_day, n_night;
};

inline HardPicp hard_picp_by_step(const model::Model& m, const data::WindowBatch& set,
                                  int batch_size, double night_threshold) {
    const int h = set.horizon;
    HardPicp out;
    std::vector<int64_t> cov_day(static_cast<size_t>(h), 0), cov_night(static_cast<size_t>(h), 0);
    out.n_day.assign(static_cast<size_t>(h), 0);
    out.n_night.assign(static_cast<size_t>(h), 0);
    const int64_t n = set.size();
    for (int64_t start = 0; start < n; start += batch_size) {
        const int64_t stop = std::min(n, start + batch_size);
        std::vector<int64_t> idx(static_cast<size_t>(stop - start));
        std::iota(idx.begin(), idx.end(), start);
        data::WindowBatch chunk = set.gather(idx);
        model::ForecastBatch fc = m.forward_infer(chunk.lag, chunk.future);
        for (int64_t i = 0; i < chunk.size(); ++i)
            for (int k = 0; k < h; ++k) {
                const double y = chunk.target.at2(i, k);
                const bool covered =
                    fc.lower.at2(i, k) <= y && y <= fc.upper.at2(i, k);
                if (y > night_threshold) {
                    ++out.n_day[static_cast<size_t>(k)];
                    cov_day[static_cast<size_t>(k)] += covered;
                } else if (y < night_threshold) {
                    ++out.n_night[static_cast<size_t>(k)];
                    cov_night[static_cast<size_t>(k)] += covered;
                }
            }
    }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (int k = 0; k < h; ++k) {
        const size_t s = static_cast<size_t>(k);
        out.day.push_back(out.n_day[s] ? static_cast<double>(cov_day[s]) /
                                             static_cast<double>(out.n_day[s])
                                       : nan);
        out.night.push_back(out.n_night[s] ? static_cast<double>(cov_night[s]) /
                                                 static_cast<double>(out.n_night[s])
                                           : nan);
    }
    return out;
}

/// Inference forward over a whole window set, batched.
inline model::ForecastBatch forward_all(const model::Model& m, const data::WindowBatch& set,
                                        int batch_size) {
    const int64_t n = set.size();
    const int h = set.horizon;
    model::ForecastBatch out{Tensor({n, h}), Tensor({n, h}), Tensor({n, h})};
    for (int64_t start = 0; start < n; start += batch_size) {
        const int64_t stop = std::min(n, start + batch_size);
        std::vector<int64_t> idx(static_cast<size_t>(stop - start));
        std::iota(idx.begin(), idx.end(), start);
        data::WindowBatch chunk = set.gather(idx);
        model::ForecastBatch fc = m.forward_infer(chunk.lag, chunk.future);
        for (int64_t i = 0; i < chunk.size(); ++i)
            for (int k = 0; k < h; ++k) {
                out.lower.at2(start + i, k) = fc.lower.at2(i, k);
                out.point.at2(start + i, k) = fc.point.at2(i, k);
                out.upper.at2(start + i, k) = fc.upper.at2(i, k);
            }
    }
    return out;
}

struct ValidationLosses {
    double l_point = 0.0;
    double l_pi = 0.0;
    double l_val = 0.0;
};

/// L_val = L_point + L_PI on a window set, inference mode, current r values.
inline ValidationLosses validate(const model::Model& m, const data::WindowBatch& set,
                                 const losses::LossConfig& loss_cfg,
                                 const losses::BarrierState& barrier, int batch_size) {
    if (set.size() == 0) throw std::invalid_argument("validate: empty validation set");
    model::ForecastBatch fc = forward_all(m, set, batch_size);
    ValidationLosses out;
    out.l_point = losses::point_loss(set.target, fc.point, loss_cfg.r_q);
    out.l_pi = losses::pi_loss(set.target, fc.lower, fc.upper, barrier, loss_cfg);
    out.l_val = out.l_point + out.l_pi;
    return out;
}

/// Pinball objective analogue of validate(): the monitored quantity is the
/// two-sided quantile loss alone.
inline ValidationLosses validate_pinball(const model::Model& m, const data::WindowBatch& set,
                                         double alpha, int batch_size) {
    if (set.size() == 0) throw std::invalid_argument("validate: empty validation set");
    model::ForecastBatch fc = forward_all(m, set, batch_size);
    ValidationLosses out;
    out.l_point = losses::pinball_loss(set.target, fc.lower, fc.upper, alpha);
    out.l_val = out.l_point;
    return out;
}

namespace detail {

inline std::vector<double> extract_flat_grad(ad::Graph& g, const std::vector<ad::Value>& leaves,
                                             int64_t total) {
    std::vector<double> out;
    out.reserve(static_cast<size_t>(total));
    for (ad::Value v : leaves) {
        const Tensor* gr = g.grad_if_live(v);
        const int64_t n = g.value(v).size();
        if (gr)
            out.insert(out.end(), gr->values.begin(), gr->values.end());
        else
            out.insert(out.end(), static_cast<size_t>(n), 0.0);
    }
    return out;
}

}  // namespace detail

/// The full training loop: per epoch, refresh the adaptive barrier r from
/// full-train hard coverage, then per shuffled mini-batch compute both task
/// gradients on one tape, solve the two-objective min-norm problem and step
/// Adam along the consensus direction under a warmup + cosine schedule.
/// Early stopping monitors L_point + L_PI on the validation set; the model
/// is left holding the best-validation parameters and buffers.
inline TrainReport train(model::Model& m, const data::WindowBatch& train_set,
                         const data::WindowBatch& val_set, const TrainConfig& cfg) {
    cfg.validate();
    if (val_set.size() == 0) throw std::invalid_argument("train: validation set is empty");
    if (train_set.size() < 2) throw std::invalid_argument("train: need at least 2 windows");
    const int h = train_set.horizon;
    const int64_t n_train = train_set.size();

    // deterministic batch count (tail batches of one sample are dropped)
    const int64_t full = n_train / cfg.batch_size;
    const int64_t rem = n_train % cfg.batch_size;
    const int64_t batches_per_epoch = full + (rem >= 2 ? 1 : 0);
    if (batches_per_epoch == 0) throw std::invalid_argument("train: no usable batches");
    const int64_t total_steps = static_cast<int64_t>(cfg.max_epoch) * batches_per_epoch;
    const int64_t warmup_steps =
        static_cast<int64_t>(std::floor(cfg.warmup_fraction * static_cast<double>(total_steps)));

    const bool mgda_mode = cfg.objective == Objective::solarpointpi;
    losses::LossConfig loss_cfg = cfg.loss;
    losses::BarrierState barrier = losses::BarrierState::uniform(h, loss_cfg.rho);

    optim::AdamState adam(static_cast<size_t>(m.params().total_size()));
    optim::EarlyStopper stopper(cfg.min_epoch, cfg.max_epoch, cfg.patience);
    TrainReport report;

    std::vector<double> best_flat = m.params().flatten();
    std::vector<ad::BnBuffers> best_bn = m.bn_buffers();

    int64_t step_counter = 0;
    for (int epoch = 1; epoch <= cfg.max_epoch; ++epoch) {
        // (a,b) adaptive r from full-train hard PICP, per step and regime
        if (mgda_mode) {
            HardPicp picp = hard_picp_by_step(m, train_set, cfg.batch_size,
                                              loss_cfg.night_threshold);
            std::vector<double> dev_day(static_cast<size_t>(h),
                                        std::numeric_limits<double>::quiet_NaN()),
                dev_night(static_cast<size_t>(h), std::numeric_limits<double>::quiet_NaN());
            for (int k = 0; k < h; ++k) {
                const size_t s = static_cast<size_t>(k);
                if (picp.n_day[s]) {
                    dev_day[s] = std::fabs(loss_cfg.p_day - picp.day[s]);
                    barrier.r_day[s] =
                        losses::adaptive_r(loss_cfg.p_day, picp.day[s], loss_cfg.rho,
                                           loss_cfg.r_cap);
                }
                if (picp.n_night[s]) {
                    dev_night[s] = std::fabs(loss_cfg.p_night - picp.night[s]);
                    barrier.r_night[s] =
                        losses::adaptive_r(loss_cfg.p_night, picp.night[s], loss_cfg.rho,
                                           loss_cfg.r_cap);
                }
            }
            report.r_day_hist.push_back(barrier.r_day);
            report.r_night_hist.push_back(barrier.r_night);
            report.dev_day_hist.push_back(std::move(dev_day));
            report.dev_night_hist.push_back(std::move(dev_night));
        }

        // shuffled mini-batches, reseeded per epoch from the run seed
        std::vector<int64_t> order(static_cast<size_t>(n_train));
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(derive_seed(cfg.seed, static_cast<uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        EpochRow row;
        row.epoch = epoch;
        int64_t used_batches = 0;
        for (int64_t b = 0; b * cfg.batch_size < n_train; ++b) {
            const int64_t start = b * cfg.batch_size;
            const int64_t stop = std::min(n_train, start + cfg.batch_size);
            if (stop - start < 2) {
                ++report.dropped_tiny_batches;
                continue;
            }
            std::vector<int64_t> idx(order.begin() + start, order.begin() + stop);
            data::WindowBatch batch = train_set.gather(idx);

            ad::Graph g;
            std::vector<ad::Value> leaves;
            leaves.reserve(m.params().count());
            for (const auto& e : m.params().entries()) leaves.push_back(g.leaf(e.tensor, true));

            double v1 = 0.0, v2 = 0.0;
            std::vector<double> g1, g2, gstep;
            BatchRecord rec;
            try {
                auto out = m.forward_graph(g, leaves, batch.lag, batch.future,
                                           /*training=*/true, /*update_stats=*/true);
                if (mgda_mode) {
                    ad::Value l1 =
                        losses::point_loss_graph(g, out.point, batch.target, loss_cfg.r_q);
                    auto pi = losses::pi_loss_graph(g, out.lower, out.upper, batch.target,
                                                    barrier, loss_cfg);
                    report.skipped_day_terms += pi.skipped_day_terms;
                    report.skipped_night_terms += pi.skipped_night_terms;
                    v1 = g.scalar(l1);
                    v2 = g.scalar(pi.loss);
                    g.backward(l1);
                    g1 = detail::extract_flat_grad(g, leaves, m.params().total_size());
                    g.clear_grads();
                    g.backward(pi.loss);
                    g2 = detail::extract_flat_grad(g, leaves, m.params().total_size());
                } else {
                    ad::Value l = losses::pinball_loss_graph(g, out.lower, out.upper,
                                                             batch.target, cfg.pinball_alpha);
                    v1 = g.scalar(l);
                    g.backward(l);
                    g1 = detail::extract_flat_grad(g, leaves, m.params().total_size());
                }
            } catch (const numeric_error& e) {
                throw numeric_error("training aborted at epoch " + std::to_string(epoch) +
                                    ", batch " + std::to_string(b) + ": " + e.what());
            }

            if (mgda_mode) {
                auto w = mgda::min_norm_weights(g1, g2);
                if (w.pareto_stationary) {
                    ++report.pareto_stationary_batches;
                    gstep.assign(g1.size(), 0.0);
                    rec.gamma1 = w.gamma1;
                    rec.gamma2 = w.gamma2;
                } else {
                    gstep = mgda::combine(w, g1, g2);
                    if (!mgda::assert_common_descent(gstep, g1, g2,
                                                     mgda::descent_tolerance(g1, g2)))
                        ++report.descent_violations;
                    rec.gamma1 = w.gamma1;
                    rec.gamma2 = w.gamma2;
                }
                rec.g1_norm = std::sqrt(mgda::norm2(g1));
                rec.g2_norm = std::sqrt(mgda::norm2(g2));
                rec.g1_dot_g2 = mgda::dot(g1, g2);
            } else {
                gstep = g1;
                rec.gamma1 = 1.0;
                rec.gamma2 = 0.0;
                rec.g1_norm = std::sqrt(mgda::norm2(g1));
            }

            ++step_counter;
            const double lr = optim::lr_at(step_counter, total_steps, warmup_steps, cfg.lr);
            rec.lr = lr;
            std::vector<double> flat = m.params().flatten();
            optim::adam_step(adam, flat, gstep, lr, cfg.adam);
            m.params().unflatten(flat);

            row.l_point_train += v1;
            row.l_pi_train += v2;
            row.gamma1_mean += rec.gamma1;
            row.grad_norm_1 += rec.g1_norm;
            row.grad_norm_2 += rec.g2_norm;
            row.lr = lr;
            report.batches.push_back(rec);
            ++used_batches;
        }
        if (used_batches > 0) {
            const double nb = static_cast<double>(used_batches);
            row.l_point_train /= nb;
            row.l_pi_train /= nb;
            row.gamma1_mean /= nb;
            row.grad_norm_1 /= nb;
            row.grad_norm_2 /= nb;
        }
        if (mgda_mode) {
            for (int k = 0; k < h; ++k) {
                row.r_day_mean += barrier.r_day[static_cast<size_t>(k)];
                row.r_night_mean += barrier.r_night[static_cast<size_t>(k)];
            }
            row.r_day_mean /= static_cast<double>(h);
            row.r_night_mean /= static_cast<double>(h);
        }

        // validation with the current r values, inference mode
        ValidationLosses val =
            mgda_mode ? validate(m, val_set, loss_cfg, barrier, cfg.batch_size)
                      : validate_pinball(m, val_set, cfg.pinball_alpha, cfg.batch_size);
        row.l_val = val.l_val;
        row.l_point_val = val.l_point;
        row.l_pi_val = val.l_pi;

        auto decision = stopper.observe(epoch, val.l_val);
        if (decision.improved) {
            best_flat = m.params().flatten();
            best_bn = m.bn_buffers();
        }
        report.epochs.push_back(row);
        if (decision.stop) {
            report.stop_reason = decision.reason;
            break;
        }
    }
    if (report.stop_reason.empty()) report.stop_reason = "max_epoch";

    report.best_epoch = stopper.best_epoch();
    report.best_l_val = stopper.best();
    report.last_params_flat = m.params().flatten();
    report.last_bn = m.bn_buffers();
    report.final_barrier = barrier;
    m.params().unflatten(best_flat);
    m.bn_buffers() = best_bn;
    return report;
}

}  // namespace solarpi::trainer

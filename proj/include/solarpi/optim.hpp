#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace solarpi::optim {

/// Adam moment estimates. The direction fed in is the MGDA consensus
/// direction rather than a raw stochastic gradient; the update rule is
/// unchanged.
struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    int64_t step = 0;

    explicit AdamState(size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // decoupled; 0 disables
};

/// One bias-corrected Adam update of `params` along direction `g`.
inline void adam_step(AdamState& state, std::span<double> params, std::span<const double> g,
                      double lr, const AdamConfig& cfg = {}) {
    if (params.size() != g.size() || params.size() != state.m.size())
        throw std::invalid_argument("adam_step: dimension mismatch");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (size_t i = 0; i < params.size(); ++i) {
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g[i];
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        if (cfg.weight_decay > 0.0) params[i] -= lr * cfg.weight_decay * params[i];
        params[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}

/// Linear warmup to base_lr over warmup_steps, then cosine annealing to 0 at
/// total_steps. `step` counts 1..total_steps.
inline double lr_at(int64_t step, int64_t total_steps, int64_t warmup_steps, double base_lr) {
    if (step < 0 || step > total_steps || warmup_steps >= total_steps)
        throw std::invalid_argument("lr_at: bad step bounds");
    if (warmup_steps > 0 && step <= warmup_steps)
        return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
    const double progress = static_cast<double>(step - warmup_steps) /
                            static_cast<double>(total_steps - warmup_steps);
    return base_lr * 0.5 * (1.0 + std::cos(3.141592653589793238462643383279 * progress));
}

/// Validation-loss early stopping: stop once epoch >= min_epoch and either
/// the patience budget is exhausted or max_epoch is reached.
class EarlyStopper {
public:
    EarlyStopper(int min_epoch, int max_epoch, int patience)
        : min_epoch_(min_epoch), max_epoch_(max_epoch), patience_(patience) {
        if (min_epoch > max_epoch) throw std::invalid_argument("early stop: min_epoch > max_epoch");
        if (patience < 1) throw std::invalid_argument("early stop: patience must be >= 1");
    }

    struct Decision {
        bool improved = false;
        bool stop = false;
        const char* reason = "";  // "patience" or "max_epoch" when stopping
    };

    /// Feed the validation loss of epoch e (1-based, consecutive).
    Decision observe(int epoch, double val_loss) {
        Decision d;
        if (val_loss < best_) {
            best_ = val_loss;
            best_epoch_ = epoch;
            counter_ = 0;
            d.improved = true;
        } else {
            ++counter_;
        }
        if (epoch >= min_epoch_ && (counter_ >= patience_ || epoch >= max_epoch_)) {
            d.stop = true;
            d.reason = counter_ >= patience_ ? "patience" : "max_epoch";
        }
        return d;
    }

    double best() const { return best_; }
    int best_epoch() const { return best_epoch_; }

private:
    int min_epoch_, max_epoch_, patience_;
    int counter_ = 0;
    int best_epoch_ = 0;
    double best_ = std::numeric_limits<double>::infinity();
};

}  // namespace solarpi::optim

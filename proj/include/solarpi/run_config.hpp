#pragma once

#include <set>
#include <string>

#include <json.hpp>

#include "solarpi/model.hpp"
#include "solarpi/sky.hpp"
#include "solarpi/trainer.hpp"

namespace solarpi {

/// Complete description of a run: model, training, loss and split settings
/// plus optional default paths. Parsed strictly; unknown keys are rejected
/// with their field path so typos cannot silently change a run.
struct RunConfig {
    model::ModelConfig model;
    trainer::TrainConfig train;
    data::SplitSpec split;
    std::string data_path;  // optional; flags may override
    std::string out_dir;    // optional

    void validate() const {
        model.validate();
        train.validate();
        split.validate();
    }
};

namespace runcfg_detail {

using nlohmann::json;

inline void reject_unknown(const json& j, const std::set<std::string>& allowed,
                           const std::string& path) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            throw std::invalid_argument("config: unknown key '" + path + it.key() + "'");
}

template <class T>
void get_to_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) j.at(key).get_to(out);
}

}  // namespace runcfg_detail

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    using runcfg_detail::get_to_if;
    using runcfg_detail::reject_unknown;
    RunConfig cfg;
    reject_unknown(j, {"model", "train", "loss", "split", "paths"}, "");

    if (j.contains("model")) {
        const auto& m = j.at("model");
        reject_unknown(m,
                       {"lag_window", "horizon", "n_lag_features", "n_future_features",
                        "encoder_hidden", "encoder_cells", "submodel_widths", "seed"},
                       "model.");
        get_to_if(m, "lag_window", cfg.model.lag_window);
        get_to_if(m, "horizon", cfg.model.horizon);
        get_to_if(m, "n_lag_features", cfg.model.n_lag_features);
        get_to_if(m, "n_future_features", cfg.model.n_future_features);
        get_to_if(m, "encoder_hidden", cfg.model.encoder_hidden);
        get_to_if(m, "encoder_cells", cfg.model.encoder_cells);
        get_to_if(m, "submodel_widths", cfg.model.submodel_widths);
        get_to_if(m, "seed", cfg.model.seed);
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        reject_unknown(t,
                       {"lr", "min_epoch", "max_epoch", "patience", "batch_size",
                        "warmup_fraction", "adam_beta1", "adam_beta2", "adam_eps",
                        "weight_decay", "seed", "objective", "pinball_alpha"},
                       "train.");
        get_to_if(t, "lr", cfg.train.lr);
        get_to_if(t, "min_epoch", cfg.train.min_epoch);
        get_to_if(t, "max_epoch", cfg.train.max_epoch);
        get_to_if(t, "patience", cfg.train.patience);
        get_to_if(t, "batch_size", cfg.train.batch_size);
        get_to_if(t, "warmup_fraction", cfg.train.warmup_fraction);
        get_to_if(t, "adam_beta1", cfg.train.adam.beta1);
        get_to_if(t, "adam_beta2", cfg.train.adam.beta2);
        get_to_if(t, "adam_eps", cfg.train.adam.eps);
        get_to_if(t, "weight_decay", cfg.train.adam.weight_decay);
        get_to_if(t, "seed", cfg.train.seed);
        get_to_if(t, "pinball_alpha", cfg.train.pinball_alpha);
        if (t.contains("objective")) {
            const std::string o = t.at("objective").get<std::string>();
            if (o == "solarpointpi")
                cfg.train.objective = trainer::Objective::solarpointpi;
            else if (o == "pinball")
                cfg.train.objective = trainer::Objective::pinball;
            else
                throw std::invalid_argument("config: train.objective must be 'solarpointpi' or "
                                            "'pinball', got '" + o + "'");
        }
    }
    if (j.contains("loss")) {
        const auto& l = j.at("loss");
        reject_unknown(l,
                       {"p_day", "p_night", "rho", "r_cap", "lambda", "k_frac", "s",
                        "night_threshold"},
                       "loss.");
        get_to_if(l, "p_day", cfg.train.loss.p_day);
        get_to_if(l, "p_night", cfg.train.loss.p_night);
        get_to_if(l, "rho", cfg.train.loss.rho);
        get_to_if(l, "r_cap", cfg.train.loss.r_cap);
        get_to_if(l, "lambda", cfg.train.loss.lambda);
        get_to_if(l, "k_frac", cfg.train.loss.k_frac);
        get_to_if(l, "s", cfg.train.loss.s);
        get_to_if(l, "night_threshold", cfg.train.loss.night_threshold);
    }
    if (j.contains("split")) {
        const auto& s = j.at("split");
        reject_unknown(s, {"train", "val", "test", "seed"}, "split.");
        get_to_if(s, "train", cfg.split.train);
        get_to_if(s, "val", cfg.split.val);
        get_to_if(s, "test", cfg.split.test);
        get_to_if(s, "seed", cfg.split.seed);
    }
    if (j.contains("paths")) {
        const auto& p = j.at("paths");
        reject_unknown(p, {"data", "out_dir"}, "paths.");
        get_to_if(p, "data", cfg.data_path);
        get_to_if(p, "out_dir", cfg.out_dir);
    }
    cfg.validate();
    return cfg;
}

inline nlohmann::json run_config_to_json(const RunConfig& cfg) {
    nlohmann::json j;
    j["model"] = {{"lag_window", cfg.model.lag_window},
                  {"horizon", cfg.model.horizon},
                  {"n_lag_features", cfg.model.n_lag_features},
                  {"n_future_features", cfg.model.n_future_features},
                  {"encoder_hidden", cfg.model.encoder_hidden},
                  {"encoder_cells", cfg.model.encoder_cells},
                  {"submodel_widths", cfg.model.submodel_widths},
                  {"seed", cfg.model.seed}};
    j["train"] = {{"lr", cfg.train.lr},
                  {"min_epoch", cfg.train.min_epoch},
                  {"max_epoch", cfg.train.max_epoch},
                  {"patience", cfg.train.patience},
                  {"batch_size", cfg.train.batch_size},
                  {"warmup_fraction", cfg.train.warmup_fraction},
                  {"adam_beta1", cfg.train.adam.beta1},
                  {"adam_beta2", cfg.train.adam.beta2},
                  {"adam_eps", cfg.train.adam.eps},
                  {"weight_decay", cfg.train.adam.weight_decay},
                  {"seed", cfg.train.seed},
                  {"objective", trainer::objective_name(cfg.train.objective)},
                  {"pinball_alpha", cfg.train.pinball_alpha}};
    j["loss"] = {{"p_day", cfg.train.loss.p_day},
                 {"p_night", cfg.train.loss.p_night},
                 {"rho", cfg.train.loss.rho},
                 {"r_cap", cfg.train.loss.r_cap},
                 {"lambda", cfg.train.loss.lambda},
                 {"k_frac", cfg.train.loss.k_frac},
                 {"s", cfg.train.loss.s},
                 {"night_threshold", cfg.train.loss.night_threshold}};
    j["split"] = {{"train", cfg.split.train},
                  {"val", cfg.split.val},
                  {"test", cfg.split.test},
                  {"seed", cfg.split.seed}};
    if (!cfg.data_path.empty() || !cfg.out_dir.empty()) {
        j["paths"] = nlohmann::json::object();
        if (!cfg.data_path.empty()) j["paths"]["data"] = cfg.data_path;
        if (!cfg.out_dir.empty()) j["paths"]["out_dir"] = cfg.out_dir;
    }
    return j;
}

}  // namespace solarpi

// solarpi: generate synthetic data, train, evaluate, predict and render
// report figures for the joint point + prediction-interval forecaster.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "solarpi/checkpoint.hpp"
#include "solarpi/eval.hpp"
#include "solarpi/run_config.hpp"
#include "solarpi/series.hpp"
#include "solarpi/sky.hpp"
#include "solarpi/svg.hpp"
#include "solarpi/synth.hpp"
#include "solarpi/trainer.hpp"

namespace fs = std::filesystem;
using namespace solarpi;

namespace {

constexpr int64_t kMaxGapSeconds = 6 * 3600;  // linear interpolation limit

void write_file_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + tmp);
        out << content;
    }
    fs::rename(tmp, path);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

struct LoadedData {
    data::SeriesTable table;
    data::SplitResult split;
    data::Normalization norm;
};

/// Shared pipeline: parse CSV, interpolate short gaps, split by day blocks,
/// fit the normalization on the training split only.
LoadedData prepare_data(const std::string& path, const data::SplitSpec& spec) {
    LoadedData d;
    d.table = data::fill_gaps(data::load_csv(path), kMaxGapSeconds);
    d.split = data::split_dayblocks(d.table, spec);
    d.norm = data::Normalization::fit(d.split.train);
    return d;
}

const data::SeriesTable& pick_split(const data::SplitResult& s, const std::string& name) {
    if (name == "train") return s.train;
    if (name == "val") return s.val;
    if (name == "test") return s.test;
    throw std::invalid_argument("unknown split '" + name + "' (want train|val|test)");
}

struct RestoredModel {
    RunConfig cfg;
    model::Model model;
    double r_q;
};

RestoredModel load_model(const std::string& ckpt_path) {
    auto raw = checkpoint::load_raw(ckpt_path);
    RunConfig cfg = run_config_from_json(nlohmann::json::parse(raw.config_json));
    RestoredModel out{cfg, model::Model(cfg.model), raw.r_q};
    checkpoint::restore_into(out.model, raw);
    return out;
}

metrics::MetricReport evaluate_model(const model::Model& m, const data::WindowBatch& windows,
                                     double r_q, const RunConfig& cfg, bool daytime_only,
                                     eval::DayRule rule) {
    model::ForecastBatch fc = trainer::forward_all(m, windows, cfg.train.batch_size);
    eval::EvalOptions opt;
    opt.daytime_only = daytime_only;
    opt.rule = rule;
    opt.night_threshold = cfg.train.loss.night_threshold;
    opt.p = cfg.train.loss.p_day;
    opt.tau = 0.5;
    return eval::evaluate_forecasts(windows, fc, r_q, opt);
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

int cmd_synth(const std::string& out, int days, int sites, uint64_t seed,
              const std::string& mix) {
    data::SynthConfig cfg;
    cfg.days = days;
    cfg.sites = sites;
    cfg.seed = seed;
    if (!mix.empty()) {
        if (std::sscanf(mix.c_str(), "%lf,%lf,%lf", &cfg.mix_clear, &cfg.mix_partly,
                        &cfg.mix_cloudy) != 3)
            throw std::invalid_argument("--regime-mix expects three comma-separated numbers");
    }
    cfg.validate();
    data::SeriesTable t = data::synth_generate(cfg);
    std::ostringstream os;
    data::save_csv(t, os);
    write_file_atomic(out, os.str());
    std::cout << "wrote " << t.total_rows() << " rows (" << sites << " site(s), " << days
              << " day(s)) to " << out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int cmd_train(const std::string& config_path, std::string data_path, std::string out_dir,
              bool force) {
    RunConfig cfg = run_config_from_json(nlohmann::json::parse(read_file(config_path)));
    if (data_path.empty()) data_path = cfg.data_path;
    if (out_dir.empty()) out_dir = cfg.out_dir;
    if (data_path.empty()) throw std::invalid_argument("no data file given (--data or paths.data)");
    if (out_dir.empty())
        throw std::invalid_argument("no output directory given (--out-dir or paths.out_dir)");
    if (fs::exists(out_dir) && !force)
        throw std::runtime_error("output directory '" + out_dir +
                                 "' already exists; pass --force to reuse it");
    fs::create_directories(out_dir);
    const fs::path out(out_dir);

    try {
        LoadedData d = prepare_data(data_path, cfg.split);
        const int L = cfg.model.lag_window, H = cfg.model.horizon;
        const double thr = cfg.train.loss.night_threshold;
        data::WindowBatch train_w = data::build_windows(d.split.train, L, H, d.norm, thr);
        data::WindowBatch val_w = data::build_windows(d.split.val, L, H, d.norm, thr);
        if (train_w.size() == 0) throw std::runtime_error("training split produced no windows");
        if (val_w.size() == 0) throw std::runtime_error("validation split produced no windows");

        model::Model m(cfg.model);
        trainer::TrainReport rep = trainer::train(m, train_w, val_w, cfg.train);

        const std::string cfg_json = run_config_to_json(cfg).dump();
        checkpoint::save((out / "checkpoint_best.ckpt").string(), m, cfg_json, d.norm.r_q);
        {
            model::Model last(cfg.model);
            last.params().unflatten(rep.last_params_flat);
            last.bn_buffers() = rep.last_bn;
            checkpoint::save((out / "checkpoint_last.ckpt").string(), last, cfg_json, d.norm.r_q);
        }
        write_file_atomic((out / "train_report.csv").string(), rep.to_csv());
        write_file_atomic((out / "split_manifest.csv").string(), d.split.manifest_csv(d.table));
        write_file_atomic((out / "config_resolved.json").string(),
                          run_config_to_json(cfg).dump(2) + "\n");
        {
            metrics::MetricReport train_metrics = evaluate_model(
                m, train_w, d.norm.r_q, cfg, /*daytime_only=*/true, eval::DayRule::hour);
            write_file_atomic((out / "train_metrics.csv").string(), train_metrics.to_csv());
        }

        std::cout << "stopped after " << rep.epochs.size() << " epoch(s): " << rep.stop_reason
                  << "\nbest validation loss " << rep.best_l_val << " at epoch "
                  << rep.best_epoch << "\ndescent violations: " << rep.descent_violations
                  << "\noutputs in " << out_dir << "\n";
        return 0;
    } catch (...) {
        std::ofstream mark(out / "FAILED.txt");
        mark << "run did not complete; outputs in this directory are partial\n";
        throw;
    }
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

int cmd_eval(const std::string& ckpt, const std::string& data_path, const std::string& split,
             bool daytime_only, const std::string& day_rule, const std::string& out_csv,
             const std::string& baseline) {
    RestoredModel rm = load_model(ckpt);
    LoadedData d = prepare_data(data_path, rm.cfg.split);
    const data::SeriesTable& table = pick_split(d.split, split);
    data::WindowBatch w = data::build_windows(table, rm.cfg.model.lag_window,
                                              rm.cfg.model.horizon, d.norm,
                                              rm.cfg.train.loss.night_threshold);
    if (w.size() == 0) throw std::runtime_error("split '" + split + "' produced no windows");
    const eval::DayRule rule =
        day_rule == "threshold" ? eval::DayRule::threshold : eval::DayRule::hour;

    metrics::MetricReport rep =
        evaluate_model(rm.model, w, rm.r_q, rm.cfg, daytime_only, rule);
    if (!daytime_only)
        std::cout << "note: nighttime samples included; trivial zero-irradiance coverage "
                     "inflates PICP\n";
    std::cout << "split: " << split << "  windows: " << w.size() << "  R_Q: " << rm.r_q
              << " W/m^2\n"
              << rep.to_table();

    if (!baseline.empty()) {
        RestoredModel bm = load_model(baseline);
        if (bm.cfg.model.horizon != rm.cfg.model.horizon)
            throw std::runtime_error("baseline horizon mismatch: " +
                                     std::to_string(bm.cfg.model.horizon) + " vs " +
                                     std::to_string(rm.cfg.model.horizon));
        metrics::MetricReport brep =
            evaluate_model(bm.model, w, bm.r_q, bm.cfg, daytime_only, rule);
        std::cout << "\nbaseline (" << baseline << "):\n" << brep.to_table();
        std::cout << "\nPINALW(0.5) primary vs baseline per step:\n";
        for (size_t k = 0; k < rep.per_step.size(); ++k) {
            char buf[160];
            std::snprintf(buf, sizeof(buf), "  step %zu: %.4f vs %.4f %s\n", k + 1,
                          rep.per_step[k].pinalw, brep.per_step[k].pinalw,
                          rep.per_step[k].pinalw < brep.per_step[k].pinalw ? "(narrower)"
                                                                           : "");
            std::cout << buf;
        }
    }
    if (!out_csv.empty()) write_file_atomic(out_csv, rep.to_csv());
    return 0;
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

int cmd_predict(const std::string& ckpt, const std::string& data_path, const std::string& split,
                const std::string& out) {
    RestoredModel rm = load_model(ckpt);
    LoadedData d = prepare_data(data_path, rm.cfg.split);
    const data::SeriesTable& table = pick_split(d.split, split);
    data::WindowBatch w = data::build_windows(table, rm.cfg.model.lag_window,
                                              rm.cfg.model.horizon, d.norm,
                                              rm.cfg.train.loss.night_threshold);
    if (w.size() == 0) throw std::runtime_error("split '" + split + "' produced no windows");
    model::ForecastBatch fc = trainer::forward_all(rm.model, w, rm.cfg.train.batch_size);

    std::ostringstream os;
    os << "timestamp,site_id,k,l_hat,y_hat,u_hat\n";
    char buf[200];
    for (int64_t i = 0; i < w.size(); ++i) {
        const auto& meta = w.meta[static_cast<size_t>(i)];
        const std::string& site = d.table.sites[static_cast<size_t>(meta.site_index)].id;
        for (int k = 0; k < w.horizon; ++k) {
            std::snprintf(buf, sizeof(buf), "%s,%s,%d,%.10g,%.10g,%.10g\n",
                          format_iso8601(w.target_time(i, k)).c_str(), site.c_str(), k + 1,
                          fc.lower.at2(i, k) * rm.r_q, fc.point.at2(i, k) * rm.r_q,
                          fc.upper.at2(i, k) * rm.r_q);
            os << buf;
        }
    }
    write_file_atomic(out, os.str());
    std::cout << "wrote " << w.size() * w.horizon << " forecast rows to " << out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

struct Csv {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int col(const std::string& name) const {
        for (size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<int>(i);
        throw std::runtime_error("malformed CSV: missing column '" + name + "'");
    }
    std::vector<double> numbers(const std::string& name) const {
        const int c = col(name);
        std::vector<double> out;
        for (const auto& r : rows)
            out.push_back(std::strtod(r[static_cast<size_t>(c)].c_str(), nullptr));
        return out;
    }
};

Csv read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    Csv csv;
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path + ": empty CSV");
    csv.header = data::detail::split_csv_line(line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto f = data::detail::split_csv_line(line);
        if (f.size() != csv.header.size()) throw std::runtime_error(path + ": ragged CSV row");
        csv.rows.push_back(std::move(f));
    }
    return csv;
}

int cmd_report(const std::string& train_report, const std::string& eval_csv,
               const std::string& out_dir, const std::string& predictions,
               const std::string& truth) {
    fs::create_directories(out_dir);
    const fs::path out(out_dir);

    {
        Csv tr = read_csv(train_report);
        auto epoch = tr.numbers("epoch");
        svg::Plot losses(420, 300, "training and validation losses");
        losses.line(epoch, tr.numbers("l_point_train"), "#1f77b4", "L_point (train)");
        losses.line(epoch, tr.numbers("l_pi_train"), "#d62728", "L_PI (train)");
        losses.line(epoch, tr.numbers("l_val"), "#2ca02c", "L_val", true);
        write_file_atomic((out / "loss_curves.svg").string(), svg::document({losses}));

        svg::Plot gamma(420, 300, "MGDA weight trajectory");
        gamma.y_range(0, 1.05);
        gamma.line(epoch, tr.numbers("gamma1_mean"), "#1f77b4", "gamma1 (epoch mean)");
        write_file_atomic((out / "gamma_trajectory.svg").string(), svg::document({gamma}));

        svg::Plot rplot(420, 300, "adaptive barrier hardness r");
        rplot.line(epoch, tr.numbers("r_day_mean"), "#ff7f0e", "r day (mean)");
        rplot.line(epoch, tr.numbers("r_night_mean"), "#9467bd", "r night (mean)");
        write_file_atomic((out / "r_trajectory.svg").string(), svg::document({rplot}));
    }

    {
        Csv ev = read_csv(eval_csv);
        Csv steps = ev;  // drop the pooled row for the per-step bars
        steps.rows.clear();
        for (const auto& r : ev.rows)
            if (r[0] != "pooled") steps.rows.push_back(r);
        auto ks = steps.numbers("step");
        svg::Plot picp(320, 300, "PICP per horizon step");
        picp.y_range(0, 1.05);
        picp.bars(ks, steps.numbers("picp"), "#1f77b4", "PICP");
        picp.hline(0.9, "#d62728", "target 0.9");
        svg::Plot widths(320, 300, "PINAW per step");
        widths.bars(ks, steps.numbers("pinaw"), "#2ca02c", "PINAW");
        svg::Plot lwidths(320, 300, "PINALW(0.5) per step");
        lwidths.bars(ks, steps.numbers("pinalw"), "#ff7f0e", "PINALW");
        write_file_atomic((out / "metrics_bars.svg").string(),
                          svg::document({picp, widths, lwidths}));
    }

    if (!predictions.empty()) {
        Csv pr = read_csv(predictions);
        const int kcol = pr.col("k"), tcol = pr.col("timestamp");
        const std::string site = pr.rows.empty() ? "" : pr.rows[0][1];
        std::vector<double> xs, lo, hi, yh;
        std::vector<int64_t> times;
        for (const auto& r : pr.rows) {
            if (r[static_cast<size_t>(kcol)] != "1" || r[1] != site) continue;
            const int64_t t = parse_iso8601(r[static_cast<size_t>(tcol)]);
            if (!times.empty() && t - times.front() > 2 * 86400) break;  // two days
            times.push_back(t);
            xs.push_back(static_cast<double>(t - times.front()) / 3600.0);
            lo.push_back(std::strtod(r[static_cast<size_t>(pr.col("l_hat"))].c_str(), nullptr));
            yh.push_back(std::strtod(r[static_cast<size_t>(pr.col("y_hat"))].c_str(), nullptr));
            hi.push_back(std::strtod(r[static_cast<size_t>(pr.col("u_hat"))].c_str(), nullptr));
        }
        svg::Plot ts(720, 320, "one-step forecasts with PI band (" + site + ")");
        ts.band(xs, lo, hi, "#1f77b4", "PI band");
        ts.line(xs, yh, "#d62728", "y_hat");
        if (!truth.empty() && !times.empty()) {
            data::SeriesTable t = data::load_csv(truth);
            for (const auto& s : t.sites) {
                if (s.id != site) continue;
                std::vector<double> tx, ty;
                for (int64_t i = 0; i < s.rows(); ++i) {
                    const int64_t tm = s.time_at(i);
                    if (tm < times.front() || tm > times.back()) continue;
                    if (!s.valid[static_cast<size_t>(i)]) continue;
                    tx.push_back(static_cast<double>(tm - times.front()) / 3600.0);
                    ty.push_back(s.y[static_cast<size_t>(i)]);
                }
                ts.line(tx, ty, "#2ca02c", "y");
            }
        }
        write_file_atomic((out / "timeseries.svg").string(), svg::document({ts}));
    }
    std::cout << "report panels written to " << out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"joint point and prediction-interval solar forecasting"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic solar-like CSV");
    std::string synth_out, synth_mix;
    int synth_days = 30, synth_sites = 1;
    uint64_t synth_seed = 0;
    synth->add_option("--out", synth_out, "output CSV path")->required();
    synth->add_option("--days", synth_days, "days per site")->check(CLI::PositiveNumber);
    synth->add_option("--sites", synth_sites, "number of sites")->check(CLI::PositiveNumber);
    synth->add_option("--seed", synth_seed, "generator seed");
    synth->add_option("--regime-mix", synth_mix, "clear,partly,cloudy weights (e.g. 0.4,0.3,0.3)");

    // train
    auto* train = app.add_subcommand("train", "train a model from a run configuration");
    std::string train_config, train_data, train_out;
    bool train_force = false;
    train->add_option("--config", train_config, "run configuration JSON")->required();
    train->add_option("--data", train_data, "input data CSV");
    train->add_option("--out-dir", train_out, "output directory");
    train->add_flag("--force", train_force, "reuse an existing output directory");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a split");
    std::string eval_ckpt, eval_data, eval_split = "test", eval_rule = "hour", eval_out,
                             eval_baseline;
    bool eval_daytime = true;
    eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
    eval_cmd->add_option("--data", eval_data, "input data CSV")->required();
    eval_cmd->add_option("--split", eval_split, "train|val|test (default test)");
    eval_cmd->add_flag("--daytime-only,!--no-daytime-only", eval_daytime,
                       "restrict scoring to 06:00-18:00 targets (default on)");
    eval_cmd->add_option("--day-rule", eval_rule, "daytime rule: hour|threshold");
    eval_cmd->add_option("--out", eval_out, "also write the metric report CSV here");
    eval_cmd->add_option("--baseline", eval_baseline, "second checkpoint to compare against");

    // predict
    auto* predict = app.add_subcommand("predict", "write denormalized forecasts as CSV");
    std::string pred_ckpt, pred_data, pred_split = "test", pred_out;
    predict->add_option("--checkpoint", pred_ckpt, "checkpoint file")->required();
    predict->add_option("--data", pred_data, "input data CSV")->required();
    predict->add_option("--split", pred_split, "train|val|test (default test)");
    predict->add_option("--out", pred_out, "output forecast CSV")->required();

    // report
    auto* report = app.add_subcommand("report", "render SVG report panels from run artifacts");
    std::string rep_train, rep_eval, rep_out, rep_pred, rep_truth;
    report->add_option("--train-report", rep_train, "train_report.csv from a run")->required();
    report->add_option("--eval-csv", rep_eval, "metric report CSV from eval")->required();
    report->add_option("--out-dir", rep_out, "directory for the SVG panels")->required();
    report->add_option("--predictions", rep_pred, "forecast CSV for the time-series panel");
    report->add_option("--truth", rep_truth, "data CSV to overlay measured y");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed())
            return cmd_synth(synth_out, synth_days, synth_sites, synth_seed, synth_mix);
        if (train->parsed()) return cmd_train(train_config, train_data, train_out, train_force);
        if (eval_cmd->parsed())
            return cmd_eval(eval_ckpt, eval_data, eval_split, eval_daytime, eval_rule, eval_out,
                            eval_baseline);
        if (predict->parsed()) return cmd_predict(pred_ckpt, pred_data, pred_split, pred_out);
        if (report->parsed())
            return cmd_report(rep_train, rep_eval, rep_out, rep_pred, rep_truth);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}

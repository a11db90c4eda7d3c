#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "solarpi/series.hpp"
#include "solarpi/sky.hpp"
#include "solarpi/synth.hpp"
#include "solarpi/timeutil.hpp"
#include "solarpi/windows.hpp"

using namespace solarpi;
using namespace solarpi::data;

namespace {

bool tables_equal(const SeriesTable& a, const SeriesTable& b) {
    if (a.sites.size() != b.sites.size()) return false;
    for (size_t s = 0; s < a.sites.size(); ++s) {
        const Site &x = a.sites[s], &y = b.sites[s];
        if (x.id != y.id || x.t0 != y.t0 || x.rows() != y.rows()) return false;
        for (int64_t i = 0; i < x.rows(); ++i) {
            const size_t k = static_cast<size_t>(i);
            if (x.valid[k] != y.valid[k]) return false;
            for (int c = 0; c < kChannels; ++c) {
                const double u = x.channel(c)[i], v = y.channel(c)[i];
                if (std::isfinite(u) != std::isfinite(v)) return false;
                if (std::isfinite(u) && u != v) return false;
            }
        }
    }
    return true;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("timestamp parsing and formatting") {
    const int64_t t = parse_iso8601("2023-06-15T12:45:00");
    CHECK(format_iso8601(t) == "2023-06-15T12:45:00");
    CHECK(hour_of_day(t) == doctest::Approx(12.75));
    CHECK(day_index(t) == days_from_civil(2023, 6, 15));
    CHECK_THROWS_AS(parse_iso8601("2023-13-01T00:00:00"), std::invalid_argument);
    CHECK_THROWS_AS(parse_iso8601("garbage"), std::invalid_argument);
}

TEST_CASE("a well-formed one-day file loads to 96 rows per site") {
    SynthConfig cfg;
    cfg.sites = 1;
    cfg.days = 1;
    cfg.seed = 5;
    SeriesTable t = synth_generate(cfg);
    const std::string path = temp_path("solarpi_oneday.csv");
    save_csv(t, path);
    SeriesTable back = load_csv(path);
    REQUIRE(back.sites.size() == 1);
    CHECK(back.sites[0].rows() == 96);
    std::filesystem::remove(path);
}

TEST_CASE("csv round trip is lossless") {
    SynthConfig cfg;
    cfg.sites = 2;
    cfg.days = 3;
    cfg.seed = 11;
    SeriesTable t = synth_generate(cfg);
    // knock a few holes in it
    t.sites[0].y[40] = std::numeric_limits<double>::quiet_NaN();
    t.sites[1].ci[7] = std::numeric_limits<double>::quiet_NaN();
    t.sites[0].refresh_validity();
    t.sites[1].refresh_validity();

    const std::string path = temp_path("solarpi_roundtrip.csv");
    save_csv(t, path);
    SeriesTable back = load_csv(path);
    CHECK(tables_equal(t, back));
    std::filesystem::remove(path);
}

TEST_CASE("csv loader rejects malformed input with line numbers") {
    auto write_and_load = [](const std::string& body) {
        const std::string path = temp_path("solarpi_bad.csv");
        std::ofstream out(path);
        out << body;
        out.close();
        SeriesTable t;
        try {
            t = load_csv(path);
            std::filesystem::remove(path);
            return std::string();
        } catch (const std::exception& e) {
            std::filesystem::remove(path);
            return std::string(e.what());
        }
    };

    CHECK(write_and_load("wrong,header\n") .find("header") != std::string::npos);

    const std::string hdr = "timestamp,site_id,y,ci,i_clr,i_cams\n";
    // duplicate timestamp names the offending line
    std::string dup = hdr;
    dup += "2023-01-01T00:00:00,S1,1,0.5,2,1\n";
    dup += "2023-01-01T00:00:00,S1,2,0.5,2,1\n";
    auto msg = write_and_load(dup);
    CHECK(msg.find("duplicate") != std::string::npos);
    CHECK(msg.find("line 3") != std::string::npos);

    // off-grid timestamp
    std::string off = hdr + "2023-01-01T00:07:00,S1,1,0.5,2,1\n";
    CHECK(write_and_load(off).find("grid") != std::string::npos);

    // unparseable numeric field
    std::string bad = hdr + "2023-01-01T00:00:00,S1,abc,0.5,2,1\n";
    msg = write_and_load(bad);
    CHECK(msg.find("unparseable") != std::string::npos);
    CHECK(msg.find("line 2") != std::string::npos);
}

TEST_CASE("gap filling") {
    Site site;
    site.id = "S1";
    site.t0 = days_from_civil(2023, 1, 1) * 86400;
    site.resize(96);
    for (int64_t i = 0; i < 96; ++i) {
        site.y[static_cast<size_t>(i)] = 100.0;
        site.ci[static_cast<size_t>(i)] = 0.5;
        site.i_clr[static_cast<size_t>(i)] = 500.0;
        site.i_cams[static_cast<size_t>(i)] = 90.0;
    }

    SUBCASE("single missing point between 100 and 200 interpolates to 150") {
        site.y[10] = std::numeric_limits<double>::quiet_NaN();
        site.y[9] = 100.0;
        site.y[11] = 200.0;
        site.refresh_validity();
        SeriesTable t;
        t.sites.push_back(site);
        SeriesTable f = fill_gaps(t, 6 * 3600);
        CHECK(f.sites[0].y[10] == doctest::Approx(150.0));
        CHECK(f.sites[0].valid[10] == 1);
    }

    SUBCASE("a 7-hour gap stays masked under a 6-hour limit") {
        for (int64_t i = 20; i < 20 + 28; ++i)  // 28 points = 7 h
            site.y[static_cast<size_t>(i)] = std::numeric_limits<double>::quiet_NaN();
        site.refresh_validity();
        SeriesTable t;
        t.sites.push_back(site);
        SeriesTable f = fill_gaps(t, 6 * 3600);
        for (int64_t i = 20; i < 48; ++i) CHECK(f.sites[0].valid[static_cast<size_t>(i)] == 0);
        // exactly 6 h (24 points) interpolates
        SeriesTable f2 = fill_gaps(t, 7 * 3600);
        for (int64_t i = 20; i < 48; ++i) CHECK(f2.sites[0].valid[static_cast<size_t>(i)] == 1);
    }

    SUBCASE("interpolation never exceeds the bracketing endpoints") {
        Rng rng(17);
        for (int trial = 0; trial < 20; ++trial) {
            Site s2 = site;
            const int64_t start = 5 + static_cast<int64_t>(rng.bounded(60));
            const int64_t len = 1 + static_cast<int64_t>(rng.bounded(10));
            const double a = rng.uniform(0, 300), b = rng.uniform(0, 300);
            s2.y[static_cast<size_t>(start - 1)] = a;
            s2.y[static_cast<size_t>(start + len)] = b;
            for (int64_t i = start; i < start + len; ++i)
                s2.y[static_cast<size_t>(i)] = std::numeric_limits<double>::quiet_NaN();
            s2.refresh_validity();
            SeriesTable t;
            t.sites.push_back(s2);
            SeriesTable f = fill_gaps(t, 24 * 3600);
            for (int64_t i = start; i < start + len; ++i) {
                const double v = f.sites[0].y[static_cast<size_t>(i)];
                CHECK(v >= std::min(a, b) - 1e-12);
                CHECK(v <= std::max(a, b) + 1e-12);
            }
        }
    }

    SUBCASE("leading gaps have no bracket and stay masked") {
        site.y[0] = std::numeric_limits<double>::quiet_NaN();
        site.refresh_validity();
        SeriesTable t;
        t.sites.push_back(site);
        SeriesTable f = fill_gaps(t, 24 * 3600);
        CHECK(f.sites[0].valid[0] == 0);
    }
}

TEST_CASE("hour encoding: peak at noon, continuous at midnight") {
    CHECK(hour_encoding(12.0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(std::fabs(hour_encoding(0.0)) <= 1e-12);
    CHECK(std::fabs(hour_encoding(24.0)) <= 1e-12);
    CHECK(std::fabs(hour_encoding(0.0) - hour_encoding(24.0)) <= 1e-12);
}

TEST_CASE("window construction") {
    // 200 contiguous valid points on one site
    Site site;
    site.id = "S1";
    site.t0 = days_from_civil(2023, 3, 1) * 86400;
    site.resize(200);
    Rng rng(3);
    for (int64_t i = 0; i < 200; ++i) {
        const size_t s = static_cast<size_t>(i);
        site.y[s] = rng.uniform(0, 800);
        site.ci[s] = rng.uniform(0, 1);
        site.i_clr[s] = rng.uniform(100, 900);
        site.i_cams[s] = rng.uniform(0, 800);
    }
    site.refresh_validity();
    SeriesTable t;
    t.sites.push_back(site);

    Normalization norm;
    norm.r_q = 500.0;
    WindowBatch w = build_windows(t, 16, 16, norm);
    CHECK(w.size() == 200 - 16 - 16 + 1);
    CHECK(w.lag.shape == std::vector<int64_t>{w.size(), 16, kLagFeatures});
    CHECK(w.future.shape == std::vector<int64_t>{w.size(), 16, kFutureFeatures});
    CHECK(w.target.shape == std::vector<int64_t>{w.size(), 16});

    // windows are reproducible byte for byte
    WindowBatch w2 = build_windows(t, 16, 16, norm);
    CHECK(w.lag.values == w2.lag.values);
    CHECK(w.future.values == w2.future.values);
    CHECK(w.target.values == w2.target.values);

    // normalization: targets are y / R_Q
    CHECK(w.target[0] == doctest::Approx(site.y[16] / 500.0).epsilon(1e-15));

    // a masked cell in the middle suppresses every window that overlaps it
    t.sites[0].y[100] = std::numeric_limits<double>::quiet_NaN();
    t.sites[0].refresh_validity();
    WindowBatch w3 = build_windows(t, 16, 16, norm);
    CHECK(w3.size() == w.size() - 32);

    // insufficient data: empty batch
    SeriesTable small;
    Site s2 = site;
    s2.resize(10);
    small.sites.push_back(s2);
    CHECK(build_windows(small, 16, 16, norm).size() == 0);
}

TEST_CASE("sky classification by daily clear-sky index") {
    auto make_day = [](double k) {
        Site site;
        site.id = "S";
        site.t0 = days_from_civil(2023, 1, 1) * 86400;
        site.resize(96);
        for (int64_t i = 0; i < 96; ++i) {
            const double hour = static_cast<double>(i) * 0.25;
            const double clr = (hour > 6 && hour < 18.5)
                                   ? 800.0 * std::sin(3.14159 * (hour - 6) / 12.5)
                                   : 0.0;
            const size_t s = static_cast<size_t>(i);
            site.i_clr[s] = clr;
            site.y[s] = k * clr;
            site.ci[s] = 1.0 - k;
            site.i_cams[s] = k * clr;
        }
        site.refresh_validity();
        return site;
    };
    const int64_t day = days_from_civil(2023, 1, 1);
    CHECK(classify_sky(make_day(0.95), day) == SkyLabel::clear);
    CHECK(classify_sky(make_day(0.55), day) == SkyLabel::partly_cloudy);
    CHECK(classify_sky(make_day(0.2), day) == SkyLabel::cloudy);

    Site empty = make_day(0.5);
    for (auto& v : empty.valid) v = 0;
    CHECK(classify_sky(empty, day) == SkyLabel::unknown);
}

TEST_CASE("day-block splitting") {
    SynthConfig cfg;
    cfg.sites = 1;
    cfg.days = 100;
    cfg.seed = 21;
    SeriesTable t = synth_generate(cfg);
    SplitSpec spec;
    spec.seed = 77;

    SplitResult r = split_dayblocks(t, spec);
    REQUIRE(r.manifest.size() == 100);

    int counts[3] = {0, 0, 0};
    for (const auto& a : r.manifest) counts[a.split]++;
    // 80/10/10 within +-1 day per stratum; at most 3 strata
    CHECK(counts[0] >= 77);
    CHECK(counts[0] <= 83);
    CHECK(counts[1] >= 7);
    CHECK(counts[1] <= 13);
    CHECK(counts[2] >= 7);
    CHECK(counts[2] <= 13);

    // determinism
    SplitResult r2 = split_dayblocks(t, spec);
    REQUIRE(r2.manifest.size() == r.manifest.size());
    for (size_t i = 0; i < r.manifest.size(); ++i) {
        CHECK(r.manifest[i].day_idx == r2.manifest[i].day_idx);
        CHECK(r.manifest[i].split == r2.manifest[i].split);
    }

    // day-disjoint: each day's rows are valid in exactly one split table
    std::map<int64_t, int> day_split;
    for (const auto& a : r.manifest) day_split[a.day_idx] = a.split;
    const SeriesTable* tables[3] = {&r.train, &r.val, &r.test};
    for (int s = 0; s < 3; ++s)
        for (int64_t i = 0; i < tables[s]->sites[0].rows(); ++i) {
            if (!tables[s]->sites[0].valid[static_cast<size_t>(i)]) continue;
            const int64_t d = day_index(tables[s]->sites[0].time_at(i));
            CHECK(day_split.at(d) == s);
        }

    // stratification: per-label proportions within 5 points of global
    std::map<SkyLabel, std::array<int, 4>> by_label;  // total, train, val, test
    for (const auto& a : r.manifest) {
        auto& e = by_label[a.label];
        e[0]++;
        e[1 + a.split]++;
    }
    for (const auto& [label, e] : by_label) {
        if (e[0] < 20) continue;  // tiny strata honor +-1 day only
        CHECK(std::fabs(static_cast<double>(e[1]) / e[0] - 0.8) <= 0.05);
    }

    // manifest CSV exists and mentions all three splits
    const std::string manifest = r.manifest_csv(t);
    CHECK(manifest.find("site_id,date,sky_label,split") == 0);
    CHECK(manifest.find("train") != std::string::npos);
}

TEST_CASE("windows never span a split boundary") {
    SynthConfig cfg;
    cfg.sites = 1;
    cfg.days = 20;
    cfg.seed = 5;
    SeriesTable t = synth_generate(cfg);
    SplitSpec spec;
    SplitResult r = split_dayblocks(t, spec);

    std::set<int64_t> val_days;
    for (const auto& a : r.manifest)
        if (a.split == 1) val_days.insert(a.day_idx);

    Normalization norm;
    norm.r_q = 600.0;
    WindowBatch w = build_windows(r.val, 16, 8, norm);
    for (int64_t i = 0; i < w.size(); ++i) {
        const int64_t anchor = w.meta[static_cast<size_t>(i)].anchor_time;
        // every timestamp covered by the window must lie in a val day
        for (int64_t off = -15; off <= 8; ++off)
            CHECK(val_days.count(day_index(anchor + off * kGridSeconds)) == 1);
    }
}

TEST_CASE("synthetic generator") {
    SynthConfig cfg;
    cfg.sites = 2;
    cfg.days = 30;
    cfg.seed = 31;
    SeriesTable t = synth_generate(cfg);
    REQUIRE(t.sites.size() == 2);
    CHECK(t.sites[0].rows() == 30 * 96);

    SUBCASE("nighttime values are exactly zero and y <= 1.1 clearsky") {
        for (const auto& site : t.sites)
            for (int64_t i = 0; i < site.rows(); ++i) {
                const size_t s = static_cast<size_t>(i);
                const double hour = hour_of_day(site.time_at(i));
                if (hour < 6.0 || hour >= 18.5) {
                    CHECK(site.y[s] == 0.0);
                    CHECK(site.i_clr[s] == 0.0);
                }
                CHECK(site.y[s] <= 1.1 * site.i_clr[s] + 1e-12);
                CHECK(site.y[s] >= 0.0);
            }
    }

    SUBCASE("generation is deterministic") {
        SeriesTable t2 = synth_generate(cfg);
        CHECK(tables_equal(t, t2));
    }

    SUBCASE("an all-clear regime is classified clear on at least 90% of days") {
        SynthConfig clear_cfg;
        clear_cfg.sites = 1;
        clear_cfg.days = 60;
        clear_cfg.seed = 8;
        clear_cfg.mix_clear = 1.0;
        clear_cfg.mix_partly = 0.0;
        clear_cfg.mix_cloudy = 0.0;
        SeriesTable ct = synth_generate(clear_cfg);
        int clear_days = 0;
        const int64_t day0 = day_index(ct.sites[0].time_at(0));
        for (int d = 0; d < 60; ++d)
            if (classify_sky(ct.sites[0], day0 + d) == SkyLabel::clear) ++clear_days;
        CHECK(clear_days >= 54);
    }

    SUBCASE("an even regime mix is recovered within 10 points") {
        SynthConfig mix_cfg;
        mix_cfg.sites = 1;
        mix_cfg.days = 300;
        mix_cfg.seed = 99;
        SeriesTable mt = synth_generate(mix_cfg);
        std::map<SkyLabel, int> hist;
        const int64_t day0 = day_index(mt.sites[0].time_at(0));
        for (int d = 0; d < 300; ++d) hist[classify_sky(mt.sites[0], day0 + d)]++;
        for (SkyLabel l : {SkyLabel::clear, SkyLabel::partly_cloudy, SkyLabel::cloudy}) {
            const double frac = hist[l] / 300.0;
            CHECK(std::fabs(frac - 1.0 / 3.0) <= 0.10);
        }
    }
}

TEST_CASE("normalization statistics come from the training split alone") {
    SynthConfig cfg;
    cfg.sites = 1;
    cfg.days = 40;
    cfg.seed = 3;
    SeriesTable t = synth_generate(cfg);
    SplitSpec spec;
    SplitResult r = split_dayblocks(t, spec);
    Normalization n_train = Normalization::fit(r.train);
    Normalization n_all = Normalization::fit(t);
    CHECK(n_train.r_q > 0.0);
    CHECK(n_train.r_q != n_all.r_q);  // different day sets, different quantiles
}

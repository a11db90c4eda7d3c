#pragma once

#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "solarpi/rng.hpp"
#include "solarpi/series.hpp"
#include "solarpi/timeutil.hpp"

namespace solarpi::data {

enum class SkyLabel { clear, partly_cloudy, cloudy, unknown };

inline const char* sky_label_name(SkyLabel l) {
    switch (l) {
        case SkyLabel::clear: return "clear";
        case SkyLabel::partly_cloudy: return "partly_cloudy";
        case SkyLabel::cloudy: return "cloudy";
        default: return "unknown";
    }
}

constexpr double kClearThreshold = 0.7;
constexpr double kPartlyThreshold = 0.4;

/// Daily sky condition from the clear-sky index: the i_clr-weighted daily
/// mean of y / i_clr, binned at 0.7 / 0.4. Days without usable daytime rows
/// are labeled unknown and excluded from stratification.
inline SkyLabel classify_sky(const Site& site, int64_t day_idx) {
    double sum_y = 0.0, sum_clr = 0.0;
    for (int64_t i = 0; i < site.rows(); ++i) {
        if (!site.valid[static_cast<size_t>(i)]) continue;
        if (day_index(site.time_at(i)) != day_idx) continue;
        const double clr = site.i_clr[static_cast<size_t>(i)];
        if (clr <= 0.0) continue;
        sum_clr += clr;
        sum_y += site.y[static_cast<size_t>(i)];
    }
    if (sum_clr <= 0.0) return SkyLabel::unknown;
    const double kbar = sum_y / sum_clr;
    if (kbar >= kClearThreshold) return SkyLabel::clear;
    if (kbar >= kPartlyThreshold) return SkyLabel::partly_cloudy;
    return SkyLabel::cloudy;
}

struct SplitSpec {
    double train = 0.8;
    double val = 0.1;
    double test = 0.1;
    uint64_t seed = 0;

    void validate() const {
        if (train < 0 || val < 0 || test < 0 ||
            std::fabs(train + val + test - 1.0) > 1e-9)
            throw std::invalid_argument("split spec: ratios must be nonnegative and sum to 1");
    }
};

struct DayAssignment {
    int site_index = 0;
    int64_t day_idx = 0;
    SkyLabel label = SkyLabel::unknown;
    int split = 0;  // 0 train, 1 val, 2 test
};

struct SplitResult {
    SeriesTable train, val, test;
    std::vector<DayAssignment> manifest;
    bool proportionality_waived = false;

    std::string manifest_csv(const SeriesTable& source) const {
        std::ostringstream os;
        os << "site_id,date,sky_label,split\n";
        const char* names[3] = {"train", "val", "test"};
        for (const auto& a : manifest)
            os << source.sites[static_cast<size_t>(a.site_index)].id << ','
               << format_date(a.day_idx) << ',' << sky_label_name(a.label) << ','
               << names[a.split] << '\n';
        return os.str();
    }
};

/// Whole 24-hour blocks are assigned to splits, stratified by sky label with
/// largest-remainder rounding inside each stratum. Split tables keep the
/// source grid with out-of-split days masked out, so windows can never span
/// a split boundary.
inline SplitResult split_dayblocks(const SeriesTable& table, const SplitSpec& spec) {
    spec.validate();
    SplitResult res;
    res.train = table;
    res.val = table;
    res.test = table;

    std::map<SkyLabel, std::vector<DayAssignment>> strata;
    for (size_t si = 0; si < table.sites.size(); ++si) {
        const Site& site = table.sites[si];
        if (site.rows() == 0) continue;
        const int64_t first_day = day_index(site.time_at(0));
        const int64_t last_day = day_index(site.time_at(site.rows() - 1));
        for (int64_t d = first_day; d <= last_day; ++d) {
            bool any_valid = false;
            for (int64_t i = 0; i < site.rows(); ++i)
                if (site.valid[static_cast<size_t>(i)] && day_index(site.time_at(i)) == d) {
                    any_valid = true;
                    break;
                }
            if (!any_valid) continue;
            DayAssignment a;
            a.site_index = static_cast<int>(si);
            a.day_idx = d;
            a.label = classify_sky(site, d);
            strata[a.label].push_back(a);
        }
    }

    const double ratios[3] = {spec.train, spec.val, spec.test};
    for (auto& [label, days] : strata) {
        if (label == SkyLabel::unknown) continue;  // excluded from stratification
        Rng rng(derive_seed(spec.seed, static_cast<uint64_t>(label)));
        rng.shuffle(days);
        const int64_t n = static_cast<int64_t>(days.size());
        if (n < 3) res.proportionality_waived = true;
        // largest-remainder apportionment
        int64_t counts[3];
        double frac[3];
        int64_t assigned = 0;
        for (int s = 0; s < 3; ++s) {
            const double exact = ratios[s] * static_cast<double>(n);
            counts[s] = static_cast<int64_t>(std::floor(exact));
            frac[s] = exact - static_cast<double>(counts[s]);
            assigned += counts[s];
        }
        while (assigned < n) {
            int best = 0;
            for (int s = 1; s < 3; ++s)
                if (frac[s] > frac[best]) best = s;
            ++counts[best];
            frac[best] = -1.0;
            ++assigned;
        }
        int64_t pos = 0;
        for (int s = 0; s < 3; ++s)
            for (int64_t i = 0; i < counts[s]; ++i) days[static_cast<size_t>(pos++)].split = s;
        for (const auto& a : days) res.manifest.push_back(a);
    }

    // mask out-of-split days in each output table
    for (auto& a : res.manifest) {
        SeriesTable* tables[3] = {&res.train, &res.val, &res.test};
        for (int s = 0; s < 3; ++s) {
            if (s == a.split) continue;
            Site& site = tables[s]->sites[static_cast<size_t>(a.site_index)];
            for (int64_t i = 0; i < site.rows(); ++i)
                if (day_index(site.time_at(i)) == a.day_idx)
                    site.valid[static_cast<size_t>(i)] = 0;
        }
    }
    // unknown days belong nowhere
    for (size_t si = 0; si < table.sites.size(); ++si) {
        const Site& src = table.sites[si];
        std::map<int64_t, bool> assigned_days;
        for (const auto& a : res.manifest)
            if (a.site_index == static_cast<int>(si)) assigned_days[a.day_idx] = true;
        SeriesTable* tables[3] = {&res.train, &res.val, &res.test};
        for (int64_t i = 0; i < src.rows(); ++i) {
            const int64_t d = day_index(src.time_at(i));
            if (!assigned_days.count(d))
                for (auto* t : tables)
                    t->sites[si].valid[static_cast<size_t>(i)] = 0;
        }
    }
    return res;
}

}  // namespace solarpi::data

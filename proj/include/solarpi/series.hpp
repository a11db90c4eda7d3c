#pragma once

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "solarpi/timeutil.hpp"

namespace solarpi::data {

constexpr int kChannels = 4;  // y, ci, i_clr, i_cams
inline constexpr const char* kCsvHeader = "timestamp,site_id,y,ci,i_clr,i_cams";

/// One site's channels on a continuous 15-minute grid. Rows with any missing
/// channel are masked invalid and never enter a training window.
struct Site {
    std::string id;
    int64_t t0 = 0;  // epoch seconds of grid index 0
    std::vector<double> y, ci, i_clr, i_cams;
    std::vector<uint8_t> valid;

    int64_t rows() const { return static_cast<int64_t>(valid.size()); }
    int64_t time_at(int64_t i) const { return t0 + i * kGridSeconds; }

    double* channel(int c) {
        switch (c) {
            case 0: return y.data();
            case 1: return ci.data();
            case 2: return i_clr.data();
            default: return i_cams.data();
        }
    }
    const double* channel(int c) const { return const_cast<Site*>(this)->channel(c); }

    void resize(int64_t n) {
        const double nan = std::numeric_limits<double>::quiet_NaN();
        y.assign(static_cast<size_t>(n), nan);
        ci.assign(static_cast<size_t>(n), nan);
        i_clr.assign(static_cast<size_t>(n), nan);
        i_cams.assign(static_cast<size_t>(n), nan);
        valid.assign(static_cast<size_t>(n), 0);
    }

    void refresh_validity() {
        for (int64_t i = 0; i < rows(); ++i) {
            const size_t s = static_cast<size_t>(i);
            valid[s] = std::isfinite(y[s]) && std::isfinite(ci[s]) && std::isfinite(i_clr[s]) &&
                               std::isfinite(i_cams[s])
                           ? 1
                           : 0;
        }
    }
};

struct SeriesTable {
    std::vector<Site> sites;

    int64_t total_rows() const {
        int64_t n = 0;
        for (const auto& s : sites) n += s.rows();
        return n;
    }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

inline double parse_field(const std::string& s, size_t line_no, const char* what) {
    if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0')
        throw std::invalid_argument("line " + std::to_string(line_no) + ": unparseable " +
                                    what + " '" + s + "'");
    return v;
}

inline std::string format_value(double v) {
    if (!std::isfinite(v)) return "";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

/// Parses the canonical CSV schema onto per-site 15-minute grids. Rejects
/// missing/extra columns, off-grid or duplicated timestamps; missing values
/// (empty fields) become masked entries.
inline SeriesTable load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open data file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::invalid_argument(path + ": empty file");
    {
        auto hdr = detail::split_csv_line(line);
        auto want = detail::split_csv_line(kCsvHeader);
        if (hdr != want)
            throw std::invalid_argument(path + ": header must be exactly '" +
                                        std::string(kCsvHeader) + "'");
    }

    struct Row {
        double v[kChannels];
    };
    std::map<std::string, std::map<int64_t, Row>> by_site;
    size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto f = detail::split_csv_line(line);
        if (f.size() != 6)
            throw std::invalid_argument("line " + std::to_string(line_no) +
                                        ": expected 6 fields, got " + std::to_string(f.size()));
        const int64_t t = parse_iso8601(f[0]);
        if (t % kGridSeconds != 0)
            throw std::invalid_argument("line " + std::to_string(line_no) +
                                        ": timestamp off the 15-minute grid: " + f[0]);
        if (f[1].empty())
            throw std::invalid_argument("line " + std::to_string(line_no) + ": empty site_id");
        Row r{};
        r.v[0] = detail::parse_field(f[2], line_no, "y");
        r.v[1] = detail::parse_field(f[3], line_no, "ci");
        r.v[2] = detail::parse_field(f[4], line_no, "i_clr");
        r.v[3] = detail::parse_field(f[5], line_no, "i_cams");
        auto& rows = by_site[f[1]];
        if (!rows.emplace(t, r).second)
            throw std::invalid_argument("line " + std::to_string(line_no) +
                                        ": duplicate timestamp " + f[0] + " for site " + f[1]);
    }

    SeriesTable table;
    for (auto& [id, rows] : by_site) {
        Site site;
        site.id = id;
        site.t0 = rows.begin()->first;
        const int64_t n = (rows.rbegin()->first - site.t0) / kGridSeconds + 1;
        site.resize(n);
        for (auto& [t, r] : rows) {
            const int64_t i = (t - site.t0) / kGridSeconds;
            site.y[static_cast<size_t>(i)] = r.v[0];
            site.ci[static_cast<size_t>(i)] = r.v[1];
            site.i_clr[static_cast<size_t>(i)] = r.v[2];
            site.i_cams[static_cast<size_t>(i)] = r.v[3];
        }
        site.refresh_validity();
        table.sites.push_back(std::move(site));
    }
    return table;
}

/// Inverse of load_csv: every grid row is written; masked channels are empty
/// fields, so load(save(t)) == t.
inline void save_csv(const SeriesTable& table, std::ostream& out) {
    out << kCsvHeader << "\n";
    for (const auto& site : table.sites)
        for (int64_t i = 0; i < site.rows(); ++i) {
            const size_t s = static_cast<size_t>(i);
            out << format_iso8601(site.time_at(i)) << ',' << site.id << ','
                << detail::format_value(site.y[s]) << ',' << detail::format_value(site.ci[s])
                << ',' << detail::format_value(site.i_clr[s]) << ','
                << detail::format_value(site.i_cams[s]) << '\n';
        }
}

inline void save_csv(const SeriesTable& table, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write data file: " + path);
    save_csv(table, out);
}

/// Linear interpolation of masked runs no longer than max_gap (per channel);
/// longer runs and unbracketed edges stay masked.
inline SeriesTable fill_gaps(SeriesTable table, int64_t max_gap_seconds) {
    for (auto& site : table.sites) {
        const int64_t n = site.rows();
        for (int c = 0; c < kChannels; ++c) {
            double* v = site.channel(c);
            int64_t i = 0;
            while (i < n) {
                if (std::isfinite(v[i])) {
                    ++i;
                    continue;
                }
                const int64_t start = i;
                while (i < n && !std::isfinite(v[i])) ++i;
                const int64_t end = i;  // one past the gap
                const int64_t gap_seconds = (end - start) * kGridSeconds;
                if (start == 0 || end == n || gap_seconds > max_gap_seconds) continue;
                const double lo = v[start - 1];
                const double hi = v[end];
                const double span = static_cast<double>(end - start + 1);
                for (int64_t j = start; j < end; ++j)
                    v[j] = lo + (hi - lo) * static_cast<double>(j - start + 1) / span;
            }
        }
        site.refresh_validity();
    }
    return table;
}

}  // namespace solarpi::data

#pragma once

#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace solarpi {

/// Seconds between grid points. All series in this library live on a fixed
/// 15-minute grid.
constexpr int64_t kGridSeconds = 900;

/// Days since 1970-01-01 for a proleptic Gregorian civil date.
inline int64_t days_from_civil(int y, int m, int d) {
    y -= m <= 2;
    const int64_t era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = static_cast<unsigned>((153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1);
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<int64_t>(doe) - 719468;
}

inline void civil_from_days(int64_t z, int& y, int& m, int& d) {
    z += 719468;
    const int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const int64_t yy = static_cast<int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
    m = static_cast<int>(mp + (mp < 10 ? 3 : -9));
    y = static_cast<int>(yy + (m <= 2));
}

/// Parses "YYYY-MM-DDTHH:MM:SS" (local, timezone-naive) to epoch seconds.
inline int64_t parse_iso8601(const std::string& s) {
    int y, mo, d, h, mi, se;
    char sep;
    if (std::sscanf(s.c_str(), "%d-%d-%d%c%d:%d:%d", &y, &mo, &d, &sep, &h, &mi, &se) != 7 ||
        (sep != 'T' && sep != ' '))
        throw std::invalid_argument("bad timestamp: '" + s + "'");
    if (mo < 1 || mo > 12 || d < 1 || d > 31 || h < 0 || h > 23 || mi < 0 || mi > 59 ||
        se < 0 || se > 59)
        throw std::invalid_argument("timestamp out of range: '" + s + "'");
    return days_from_civil(y, mo, d) * 86400 + h * 3600 + mi * 60 + se;
}

inline std::string format_iso8601(int64_t t) {
    int64_t days = t / 86400;
    int64_t sod = t % 86400;
    if (sod < 0) {
        sod += 86400;
        days -= 1;
    }
    int y, m, d;
    civil_from_days(days, y, m, d);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02lld:%02lld:%02lld", y, m, d,
                  static_cast<long long>(sod / 3600), static_cast<long long>((sod % 3600) / 60),
                  static_cast<long long>(sod % 60));
    return buf;
}

/// Calendar day index (days since epoch, local) of a timestamp.
inline int64_t day_index(int64_t t) {
    return t >= 0 ? t / 86400 : (t - 86399) / 86400;
}

/// Fractional local hour in [0, 24).
inline double hour_of_day(int64_t t) {
    int64_t sod = t % 86400;
    if (sod < 0) sod += 86400;
    return static_cast<double>(sod) / 3600.0;
}

inline std::string format_date(int64_t day_idx) {
    int y, m, d;
    civil_from_days(day_idx, y, m, d);
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", y, m, d);
    return buf;
}

}  // namespace solarpi

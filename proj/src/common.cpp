#include "solarcast/common.hpp"

#include <cstdio>
#include <cstring>

namespace solarcast {

// Howard Hinnant's chrono-compatible civil calendar algorithms.
std::int64_t days_from_civil(int y, int m, int d) {
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153u * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, int& year, int& month, int& day) {
    z += 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    day = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
    month = static_cast<int>(mp + (mp < 10 ? 3 : -9));
    year = static_cast<int>(y + (month <= 2));
}

UnixTime to_unix(const CivilDateTime& c) {
    return days_from_civil(c.year, c.month, c.day) * 86400 + c.hour * 3600 +
           c.minute * 60 + c.second;
}

CivilDateTime from_unix(UnixTime t) {
    std::int64_t days = t / 86400;
    std::int64_t rem = t % 86400;
    if (rem < 0) {
        rem += 86400;
        days -= 1;
    }
    CivilDateTime c;
    civil_from_days(days, c.year, c.month, c.day);
    c.hour = static_cast<int>(rem / 3600);
    c.minute = static_cast<int>((rem / 60) % 60);
    c.second = static_cast<int>(rem % 60);
    return c;
}

double fractional_day_of_year(UnixTime t) {
    const CivilDateTime c = from_unix(t);
    const UnixTime year_start = days_from_civil(c.year, 1, 1) * 86400;
    return static_cast<double>(t - year_start) / 86400.0;
}

double fractional_hour_of_day(UnixTime t) {
    std::int64_t rem = t % 86400;
    if (rem < 0) rem += 86400;
    return static_cast<double>(rem) / 3600.0;
}

std::string format_iso(UnixTime t) {
    const CivilDateTime c = from_unix(t);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02dZ", c.year, c.month,
                  c.day, c.hour, c.minute, c.second);
    return buf;
}

std::string format_compact(UnixTime t) {
    const CivilDateTime c = from_unix(t);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04d%02d%02dT%02d%02dZ", c.year, c.month, c.day,
                  c.hour, c.minute);
    return buf;
}

UnixTime parse_iso(const std::string& s) {
    CivilDateTime c;
    int n = 0;
    if (std::sscanf(s.c_str(), "%d-%d-%dT%d:%d:%d%n", &c.year, &c.month, &c.day, &c.hour,
                    &c.minute, &c.second, &n) == 6 &&
        (s[n] == 'Z' || s[n] == '\0')) {
        return to_unix(c);
    }
    c = CivilDateTime{};
    if (std::sscanf(s.c_str(), "%d-%d-%dT%d:%d%n", &c.year, &c.month, &c.day, &c.hour,
                    &c.minute, &n) == 5 &&
        (s[n] == 'Z' || s[n] == '\0')) {
        return to_unix(c);
    }
    c = CivilDateTime{};
    if (std::sscanf(s.c_str(), "%d-%d-%d%n", &c.year, &c.month, &c.day, &n) == 3 &&
        s[n] == '\0') {
        return to_unix(c);
    }
    throw FormatError("unparseable timestamp: " + s);
}

UnixTime day_start(UnixTime t) {
    std::int64_t days = t / 86400;
    if (t % 86400 < 0) days -= 1;
    return days * 86400;
}

}  // namespace solarcast

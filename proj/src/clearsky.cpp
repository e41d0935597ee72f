#include "solarcast/clearsky.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "solarcast/kernels.hpp"

namespace solarcast {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kDegToRad = kPi / 180.0;
constexpr double kRadToDeg = 180.0 / kPi;
constexpr double kSolarConstant = 1367.0;  // W m^-2

double wrap360(double deg) {
    double v = std::fmod(deg, 360.0);
    if (v < 0.0) v += 360.0;
    return v;
}

struct Ephemeris {
    double declination;       // radians
    double eot_minutes;       // equation of time
    double eccentricity_corr; // Earth-Sun distance factor (I0 multiplier)
};

Ephemeris sun_ephemeris(UnixTime t) {
    // Truncated Meeus series on the Julian century; leap years enter through
    // the Julian date, so there is no day-of-year phase wobble.
    const double jd = static_cast<double>(t) / 86400.0 + 2440587.5;
    const double T = (jd - 2451545.0) / 36525.0;

    const double L0 = wrap360(280.46646 + T * (36000.76983 + T * 0.0003032));
    const double M = wrap360(357.52911 + T * (35999.05029 - T * 0.0001537));
    const double e = 0.016708634 - T * (0.000042037 + T * 0.0000001267);
    const double Mr = M * kDegToRad;
    const double C = (1.914602 - T * (0.004817 + T * 0.000014)) * std::sin(Mr) +
                     (0.019993 - T * 0.000101) * std::sin(2.0 * Mr) +
                     0.000289 * std::sin(3.0 * Mr);
    const double true_lon = L0 + C;
    const double omega = (125.04 - 1934.136 * T) * kDegToRad;
    const double app_lon = true_lon - 0.00569 - 0.00478 * std::sin(omega);

    const double eps0 =
        23.0 + (26.0 + (21.448 - T * (46.815 + T * (0.00059 - T * 0.001813))) / 60.0) / 60.0;
    const double eps = (eps0 + 0.00256 * std::cos(omega)) * kDegToRad;

    const double decl = std::asin(std::sin(eps) * std::sin(app_lon * kDegToRad));

    const double y = std::pow(std::tan(eps / 2.0), 2.0);
    const double L0r = L0 * kDegToRad;
    const double eot_rad = y * std::sin(2.0 * L0r) - 2.0 * e * std::sin(Mr) +
                           4.0 * e * y * std::sin(Mr) * std::cos(2.0 * L0r) -
                           0.5 * y * y * std::sin(4.0 * L0r) -
                           1.25 * e * e * std::sin(2.0 * Mr);

    Ephemeris eph;
    eph.declination = decl;
    eph.eot_minutes = 4.0 * eot_rad * kRadToDeg;
    // Standard ±3.3% annual distance correction, keyed by true anomaly.
    const double nu = (M + C) * kDegToRad;
    const double dist = (1.000001018 * (1.0 - e * e)) / (1.0 + e * std::cos(nu));
    eph.eccentricity_corr = 1.0 / (dist * dist);
    return eph;
}

double utc_minutes_of_day(UnixTime t) {
    std::int64_t sec = t % 86400;
    if (sec < 0) sec += 86400;
    return static_cast<double>(sec) / 60.0;
}

}  // namespace

void ClearSkyParams::validate() const {
    for (double tl : linke_turbidity)
        if (!(tl >= 1.0 && tl <= 10.0))
            throw ConfigError("Linke turbidity must lie in [1, 10]");
    if (!(site_elevation >= -500.0 && site_elevation <= 9000.0))
        throw ConfigError("site elevation must lie in [-500, 9000] m");
}

SolarPosition solar_position(double lat, double lon, UnixTime t) {
    if (!(lat >= -90.0 && lat <= 90.0))
        throw ConfigError("latitude outside [-90, 90]");
    const Ephemeris eph = sun_ephemeris(t);

    const double tst_min =
        utc_minutes_of_day(t) + eph.eot_minutes + 4.0 * lon;  // true solar time
    const double hour_angle = (tst_min / 4.0) - 180.0;        // degrees
    const double H = hour_angle * kDegToRad;
    const double phi = lat * kDegToRad;
    const double decl = eph.declination;

    double cos_zen = std::sin(phi) * std::sin(decl) +
                     std::cos(phi) * std::cos(decl) * std::cos(H);
    cos_zen = std::min(1.0, std::max(-1.0, cos_zen));
    const double zenith = std::acos(cos_zen) * kRadToDeg;

    const double az_rad = std::atan2(
        -std::cos(decl) * std::sin(H),
        std::sin(decl) * std::cos(phi) - std::cos(decl) * std::sin(phi) * std::cos(H));

    SolarPosition pos;
    pos.zenith = zenith;
    pos.azimuth = wrap360(az_rad * kRadToDeg);
    pos.elevation = 90.0 - zenith;
    return pos;
}

double clearsky_ghi(const SolarPosition& pos, const ClearSkyParams& params,
                    UnixTime t) {
    if (pos.elevation <= 0.0) return 0.0;
    const double z = pos.zenith;
    const double cos_zen = std::cos(z * kDegToRad);

    // Kasten-Young relative air mass.
    const double airmass =
        1.0 / (cos_zen + 0.50572 * std::pow(96.07995 - z, -1.6364));

    const double h = params.site_elevation;
    const double fh1 = std::exp(-h / 8000.0);
    const double fh2 = std::exp(-h / 1250.0);
    const double cg1 = 5.09e-5 * h + 0.868;
    const double cg2 = 3.92e-5 * h + 0.0387;

    const CivilDateTime civil = from_unix(t);
    const double tl = params.linke_turbidity[static_cast<std::size_t>(civil.month - 1)];

    const double i0 = kSolarConstant * sun_ephemeris(t).eccentricity_corr;
    const double ghi =
        cg1 * i0 * cos_zen *
        std::exp(-cg2 * airmass * (fh1 + fh2 * (tl - 1.0)));
    return ghi > 0.0 ? ghi : 0.0;
}

GridField clearsky_field(const GridGeometry& geometry, UnixTime t,
                         const ClearSkyParams& params) {
    params.validate();
    GridField out = make_field(geometry, t, GridKind::Ssi, 0.0f);
    for (std::uint32_t i = 0; i < geometry.n_rows; ++i) {
        const double lat = geometry.center_lat(i);
        for (std::uint32_t j = 0; j < geometry.n_cols; ++j) {
            const double lon = geometry.center_lon(j);
            const SolarPosition pos = solar_position(lat, lon, t);
            out.at(i, j) = static_cast<float>(clearsky_ghi(pos, params, t));
        }
    }
    return out;
}

GridField ssi_to_csi(const GridField& ssi, const GridField& clear_sky,
                     const CsiParams& params) {
    if (!(ssi.geometry == clear_sky.geometry))
        throw DimensionError("ssi_to_csi: geometry mismatch");
    if (ssi.timestamp != clear_sky.timestamp)
        throw DimensionError("ssi_to_csi: timestamp mismatch");
    GridField out = make_field(ssi.geometry, ssi.timestamp, GridKind::Csi);
    kernels::ops().csi_from_ssi(out.values.data(), ssi.values.data(),
                                clear_sky.values.data(), params.cs_threshold,
                                params.csi_max, out.values.size());
    return out;
}

GridField csi_to_ssi(const GridField& csi, const GridField& clear_sky,
                     const CsiParams& params) {
    if (!(csi.geometry == clear_sky.geometry))
        throw DimensionError("csi_to_ssi: geometry mismatch");
    GridField out = make_field(csi.geometry, csi.timestamp, GridKind::Ssi);
    kernels::ops().ssi_from_csi(out.values.data(), csi.values.data(),
                                clear_sky.values.data(), params.cs_threshold,
                                out.values.size());
    return out;
}

std::pair<UnixTime, UnixTime> daylight_window(double lat, double lon,
                                              UnixTime t) {
    const UnixTime day = day_start(t);
    // Center the search on local solar noon so dates keep their meaning at
    // any longitude.
    const UnixTime noon_guess =
        day + 43200 - static_cast<UnixTime>(std::llround(lon * 240.0));

    auto elev = [&](UnixTime when) {
        return solar_position(lat, lon, when).elevation;
    };

    constexpr UnixTime kScanStep = 300;  // 5 min
    const UnixTime begin = noon_guess - 43200;
    const UnixTime end = noon_guess + 43200;

    UnixTime rise_lo = 0, rise_hi = 0, set_lo = 0, set_hi = 0;
    bool have_rise = false, have_set = false;
    double prev = elev(begin);
    for (UnixTime s = begin + kScanStep; s <= end; s += kScanStep) {
        const double cur = elev(s);
        if (!have_rise && prev <= 0.0 && cur > 0.0) {
            rise_lo = s - kScanStep;
            rise_hi = s;
            have_rise = true;
        } else if (have_rise && !have_set && prev > 0.0 && cur <= 0.0) {
            set_lo = s - kScanStep;
            set_hi = s;
            have_set = true;
        }
        prev = cur;
    }
    if (!have_rise || !have_set)
        throw PolarConditionError(
            "solar elevation does not cross zero on this date at lat=" +
            std::to_string(lat));

    auto bisect = [&](UnixTime lo, UnixTime hi, bool rising) {
        while (hi - lo > 60) {
            const UnixTime mid = lo + (hi - lo) / 2;
            const bool above = elev(mid) > 0.0;
            if (above == rising)
                hi = mid;
            else
                lo = mid;
        }
        return lo + (hi - lo) / 2;
    };
    return {bisect(rise_lo, rise_hi, true), bisect(set_lo, set_hi, false)};
}

std::array<double, 12> load_turbidity(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open turbidity file " + path);
    std::array<double, 12> tl{};
    std::array<bool, 12> seen{};
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line.rfind("month", 0) == 0) continue;  // header
        std::istringstream ss(line);
        std::string month_tok, tl_tok;
        if (!std::getline(ss, month_tok, ',') || !std::getline(ss, tl_tok))
            throw FormatError(path + ": expected `month,TL` rows");
        int month = 0;
        double value = 0.0;
        try {
            month = std::stoi(month_tok);
            value = std::stod(tl_tok);
        } catch (const std::exception&) {
            throw FormatError(path + ": unparseable row: " + line);
        }
        if (month < 1 || month > 12)
            throw FormatError(path + ": month out of range: " + month_tok);
        if (seen[static_cast<std::size_t>(month - 1)])
            throw FormatError(path + ": duplicate month " + month_tok);
        seen[static_cast<std::size_t>(month - 1)] = true;
        tl[static_cast<std::size_t>(month - 1)] = value;
    }
    for (int m = 0; m < 12; ++m)
        if (!seen[static_cast<std::size_t>(m)])
            throw FormatError(path + ": missing month " + std::to_string(m + 1));
    return tl;
}

}  // namespace solarcast

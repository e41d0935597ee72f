#include <doctest.h>

#include <cmath>
#include <fstream>

#include "helpers.hpp"
#include "solarcast/clearsky.hpp"
#include "solarcast/rng.hpp"

using namespace solarcast;

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kRad = kPi / 180.0;

// Independent high-precision oracle: PSA algorithm with the updated 2020
// coefficient set (valid 2020-2050, ~0.01 deg over 2000-2050). Shares no code
// with the library implementation.
SolarPosition psa_oracle(double lat, double lon, UnixTime t) {
    const double jd = static_cast<double>(t) / 86400.0 + 2440587.5;
    const double n = jd - 2451545.0;
    std::int64_t sec = t % 86400;
    if (sec < 0) sec += 86400;
    const double hour = static_cast<double>(sec) / 3600.0;

    const double omega = 2.267127827 - 9.300339267e-4 * n;
    const double L = 4.895036035 + 1.720279602e-2 * n;
    const double g = 6.239468336 + 1.720200135e-2 * n;
    const double l = L + 3.338320972e-2 * std::sin(g) +
                     3.497596876e-4 * std::sin(2.0 * g) - 1.544353226e-4 -
                     8.689729360e-6 * std::sin(omega);
    const double ep =
        4.090904909e-1 - 6.213605399e-9 * n + 4.418094944e-5 * std::cos(omega);

    double ra = std::atan2(std::cos(ep) * std::sin(l), std::cos(l));
    if (ra < 0.0) ra += 2.0 * kPi;
    const double dec = std::asin(std::sin(ep) * std::sin(l));

    const double gmst = 6.697096103 + 6.570984737e-2 * n + hour;
    const double lmst = (gmst * 15.0 + lon) * kRad;
    const double w = lmst - ra;
    const double latr = lat * kRad;

    double cos_zen = std::cos(latr) * std::cos(w) * std::cos(dec) +
                     std::sin(dec) * std::sin(latr);
    cos_zen = std::min(1.0, std::max(-1.0, cos_zen));
    double zen = std::acos(cos_zen);
    double az = std::atan2(-std::sin(w), std::tan(dec) * std::cos(latr) -
                                             std::sin(latr) * std::cos(w));
    if (az < 0.0) az += 2.0 * kPi;
    zen += (6371.01 / 149597890.0) * std::sin(zen);  // parallax

    SolarPosition pos;
    pos.zenith = zen / kRad;
    pos.azimuth = az / kRad;
    pos.elevation = 90.0 - pos.zenith;
    return pos;
}

double circular_diff_deg(double a, double b) {
    double d = std::fmod(std::abs(a - b), 360.0);
    return d > 180.0 ? 360.0 - d : d;
}

}  // namespace

TEST_CASE("solar position tracks the psa oracle over 2000-2050") {
    Rng rng{2024};
    double max_zen_err = 0.0;
    double max_az_err = 0.0;
    for (int i = 0; i < 500; ++i) {
        const double lat = -80.0 + 160.0 * rng.uniform01();
        const double lon = -180.0 + 360.0 * rng.uniform01();
        const UnixTime t0 = to_unix({2000, 1, 1, 0, 0, 0});
        const UnixTime t1 = to_unix({2050, 12, 31, 0, 0, 0});
        const UnixTime t =
            t0 + static_cast<UnixTime>(rng.uniform01() *
                                       static_cast<double>(t1 - t0));
        const SolarPosition ours = solar_position(lat, lon, t);
        const SolarPosition ref = psa_oracle(lat, lon, t);
        max_zen_err = std::max(max_zen_err, std::abs(ours.zenith - ref.zenith));
        // Azimuth is ill-conditioned near the zenith; compare away from it.
        if (ref.elevation > 5.0 && ref.zenith > 5.0)
            max_az_err = std::max(max_az_err,
                                  circular_diff_deg(ours.azimuth, ref.azimuth));
    }
    CHECK(max_zen_err <= 0.5);
    CHECK(max_az_err <= 1.0);
}

TEST_CASE("solar position invariants and anchor cases") {
    // Equinox 2020 solar noon at the prime meridian / equator.
    const SolarPosition noon =
        solar_position(0.0, 0.0, to_unix({2020, 3, 20, 12, 7, 0}));
    CHECK(noon.zenith < 1.0);

    // Polar night at high northern latitude in December.
    const SolarPosition polar =
        solar_position(89.9, 0.0, to_unix({2020, 12, 21, 12, 0, 0}));
    CHECK(polar.zenith > 90.0);

    Rng rng{7};
    for (int i = 0; i < 200; ++i) {
        const double lat = -90.0 + 180.0 * rng.uniform01();
        const double lon = -180.0 + 360.0 * rng.uniform01();
        const UnixTime t = static_cast<UnixTime>(rng.below(4102444800ull));
        const SolarPosition p = solar_position(lat, lon, t);
        CHECK(p.zenith + p.elevation == 90.0);
        CHECK(p.azimuth >= 0.0);
        CHECK(p.azimuth < 360.0);
        CHECK(p.zenith >= 0.0);
        CHECK(p.zenith <= 180.0);
    }
}

TEST_CASE("solar noon azimuth points south in northern mid-latitudes") {
    const double lat = 46.5, lon = 8.0;
    const UnixTime day = to_unix({2019, 6, 15, 0, 0, 0});
    UnixTime best_t = day;
    double best_zen = 180.0;
    for (UnixTime t = day; t < day + 86400; t += 60) {
        const double z = solar_position(lat, lon, t).zenith;
        if (z < best_zen) {
            best_zen = z;
            best_t = t;
        }
    }
    const SolarPosition p = solar_position(lat, lon, best_t);
    CHECK(circular_diff_deg(p.azimuth, 180.0) <= 2.0);
}

TEST_CASE("ineichen-perez values and monotonicity") {
    ClearSkyParams params;  // TL = 3.0, sea level
    const UnixTime t = to_unix({2020, 6, 15, 12, 0, 0});

    SolarPosition overhead;
    overhead.zenith = 0.0;
    overhead.azimuth = 180.0;
    overhead.elevation = 90.0;
    const double top = clearsky_ghi(overhead, params, t);
    CHECK(top >= 950.0);
    CHECK(top <= 1150.0);

    SolarPosition below;
    below.zenith = 95.0;
    below.elevation = -5.0;
    CHECK(clearsky_ghi(below, params, t) == 0.0);

    // Altitude correction raises clear-sky irradiance.
    ClearSkyParams high = params;
    high.site_elevation = 2500.0;
    SolarPosition mid;
    mid.zenith = 40.0;
    mid.elevation = 50.0;
    CHECK(clearsky_ghi(mid, high, t) > clearsky_ghi(mid, params, t));

    // Monotone non-decreasing in elevation.
    double prev = 0.0;
    for (double elev = 1.0; elev <= 90.0; elev += 1.0) {
        SolarPosition p;
        p.zenith = 90.0 - elev;
        p.elevation = elev;
        const double v = clearsky_ghi(p, params, t);
        CHECK(v >= prev);
        prev = v;
    }
}

TEST_CASE("clear-sky curve is continuous through the day") {
    const double lat = 46.5, lon = 8.0;
    ClearSkyParams params;
    const UnixTime day = to_unix({2020, 6, 15, 0, 0, 0});
    double prev = 0.0;
    double max_step = 0.0;
    for (UnixTime t = day; t <= day + 86400; t += 60) {
        const double v = clearsky_ghi(solar_position(lat, lon, t), params, t);
        if (t > day) max_step = std::max(max_step, std::abs(v - prev));
        prev = v;
    }
    // No jump anywhere, including the sunrise/sunset clamp boundary.
    CHECK(max_step <= 5.0);
}

TEST_CASE("ssi/csi conversion round trip on fields") {
    GridGeometry g;
    g.lon_min = 7.0;
    g.lat_min = 46.0;
    g.cell_size = 0.02;
    g.n_cols = 8;
    g.n_rows = 8;
    ClearSkyParams params;
    const UnixTime t = to_unix({2020, 6, 15, 11, 0, 0});
    const GridField cs = clearsky_field(g, t, params);

    // Daylight at this time/place: clear-sky well above the threshold.
    CHECK(cs.values[0] > 100.0f);

    GridField ssi = make_field(g, t, GridKind::Ssi);
    for (std::size_t i = 0; i < ssi.values.size(); ++i)
        ssi.values[i] = 0.7f * cs.values[i];

    const GridField csi = ssi_to_csi(ssi, cs);
    for (float v : csi.values) CHECK(v == doctest::Approx(0.7).epsilon(1e-5));

    const GridField back = csi_to_ssi(csi, cs);
    for (std::size_t i = 0; i < back.values.size(); ++i)
        CHECK(back.values[i] ==
              doctest::Approx(ssi.values[i]).epsilon(1e-5));

    // Clipping and threshold rules.
    GridField bright = make_field(g, t, GridKind::Ssi);
    for (std::size_t i = 0; i < bright.values.size(); ++i)
        bright.values[i] = 2.0f * cs.values[i];
    for (float v : ssi_to_csi(bright, cs).values)
        CHECK(v == doctest::Approx(1.4));

    GridField night_cs = make_field(g, t, GridKind::Ssi, 5.0f);
    for (float v : ssi_to_csi(ssi, night_cs).values) CHECK(std::isnan(v));
    for (float v : csi_to_ssi(csi, night_cs).values) CHECK(v == 0.0f);

    GridGeometry other = g;
    other.n_cols = 4;
    CHECK_THROWS_AS(
        ssi_to_csi(make_field(other, t, GridKind::Ssi, 1.0f), cs),
        DimensionError);
}

TEST_CASE("daylight window at the equator and ordering") {
    for (int month : {1, 3, 6, 9, 12}) {
        const UnixTime day = to_unix({2020, month, 10, 0, 0, 0});
        const auto [rise, set] = daylight_window(0.0, 0.0, day);
        CHECK(rise < set);
        const double hours = static_cast<double>(set - rise) / 3600.0;
        CHECK(std::abs(hours - 12.0) <= 10.0 / 60.0);

        // Solar noon sits between the crossings with positive elevation.
        const UnixTime mid = rise + (set - rise) / 2;
        CHECK(solar_position(0.0, 0.0, mid).elevation > 0.0);
        // Bisection tolerance: elevation within ~0.02 deg-equivalent of 0.
        CHECK(std::abs(solar_position(0.0, 0.0, rise).elevation) < 0.3);
        CHECK(std::abs(solar_position(0.0, 0.0, set).elevation) < 0.3);
    }
}

TEST_CASE("daylight window polar conditions") {
    // Above the arctic circle: midnight sun at the June solstice.
    CHECK_THROWS_AS(
        daylight_window(66.8, 0.0, to_unix({2020, 6, 21, 0, 0, 0})),
        PolarConditionError);
    // Polar night in December.
    CHECK_THROWS_AS(
        daylight_window(80.0, 0.0, to_unix({2020, 12, 21, 0, 0, 0})),
        PolarConditionError);
    // Far-longitude sanity: window centered on local solar day.
    const auto [rise, set] =
        daylight_window(10.0, 179.0, to_unix({2020, 6, 21, 0, 0, 0}));
    CHECK(rise < set);
}

TEST_CASE("turbidity csv loading") {
    testutil::TempDir dir("turbidity");
    const std::string path = dir.file("tl.csv");
    {
        std::ofstream out(path);
        out << "month,TL\n";
        for (int m = 1; m <= 12; ++m)
            out << m << "," << (2.0 + 0.1 * m) << "\n";
    }
    const auto tl = load_turbidity(path);
    CHECK(tl[0] == doctest::Approx(2.1));
    CHECK(tl[11] == doctest::Approx(3.2));

    const std::string partial = dir.file("partial.csv");
    std::ofstream(partial) << "month,TL\n1,3.0\n";
    CHECK_THROWS_AS(load_turbidity(partial), FormatError);

    const std::string dup = dir.file("dup.csv");
    {
        std::ofstream out(dup);
        out << "month,TL\n";
        for (int m = 1; m <= 12; ++m) out << "1,3.0\n";
    }
    CHECK_THROWS_AS(load_turbidity(dup), FormatError);

    CHECK_THROWS_AS(load_turbidity(dir.file("absent.csv")), IoError);

    ClearSkyParams params;
    params.linke_turbidity[3] = 11.0;
    CHECK_THROWS_AS(params.validate(), ConfigError);
}

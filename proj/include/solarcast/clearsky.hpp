#pragma once

#include <array>
#include <string>

#include "solarcast/common.hpp"
#include "solarcast/grid.hpp"

namespace solarcast {

struct SolarPosition {
    double zenith = 0.0;     // degrees, [0, 180]
    double azimuth = 0.0;    // degrees, [0, 360), clockwise from north
    double elevation = 0.0;  // degrees, = 90 - zenith
};

struct ClearSkyParams {
    // Linke turbidity per calendar month (index 0 = January).
    std::array<double, 12> linke_turbidity{3.0, 3.0, 3.0, 3.0, 3.0, 3.0,
                                           3.0, 3.0, 3.0, 3.0, 3.0, 3.0};
    double site_elevation = 0.0;  // meters a.s.l.

    void validate() const;  // turbidity in [1,10], elevation in [-500,9000]
};

struct CsiParams {
    float cs_threshold = 20.0f;  // W m^-2 below which CSI is undefined
    float csi_max = 1.4f;
};

// Declination + equation-of-time ephemeris (Meeus-style truncation); zenith
// accurate to well under 0.5 degrees for 2000-2050.
SolarPosition solar_position(double lat, double lon, UnixTime t);

// Ineichen-Perez global horizontal clear-sky irradiance with altitude
// correction; 0 when the sun is at or below the horizon.
double clearsky_ghi(const SolarPosition& pos, const ClearSkyParams& params,
                    UnixTime t);

// Clear-sky SSI evaluated at every pixel center of the geometry.
GridField clearsky_field(const GridGeometry& geometry, UnixTime t,
                         const ClearSkyParams& params);

// CSI = SSI / clear-sky where the clear-sky value exceeds the threshold,
// else NaN; clipped to [0, csi_max]. Fields must share geometry + timestamp.
GridField ssi_to_csi(const GridField& ssi, const GridField& clear_sky,
                     const CsiParams& params = {});

// SSI = CSI * clear-sky; 0 where clear-sky <= threshold. Geometry must match.
GridField csi_to_ssi(const GridField& csi, const GridField& clear_sky,
                     const CsiParams& params = {});

// Sunrise/sunset instants (elevation zero crossings) for the solar day
// centered on local solar noon of the UTC day containing t, bisected to
// within 60 s. Throws PolarConditionError when elevation never crosses zero.
std::pair<UnixTime, UnixTime> daylight_window(double lat, double lon,
                                              UnixTime t);

// CSV `month,TL` with 12 rows (months 1..12, any order, no duplicates).
std::array<double, 12> load_turbidity(const std::string& path);

}  // namespace solarcast

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "solarcast/common.hpp"
#include "solarcast/grid.hpp"
#include "solarcast/power.hpp"

namespace solarcast {

// One per-day weather archetype. Static is Blobs with the drift pinned to
// zero, which gives persistence-friendly ground truth.
enum class CloudRegime { Clear, Blobs, Convection, Static };

std::string regime_name(CloudRegime regime);
CloudRegime regime_from_name(const std::string& name);  // ConfigError

struct SyntheticSpec {
    UnixTime start_day = 1560556800;  // 2019-06-15T00:00:00Z
    int n_days = 2;
    GridGeometry geometry{6.8, 45.8, 0.02, 64, 64};
    std::vector<CloudRegime> regimes{CloudRegime::Blobs};  // cycled over days
    int n_stations = 5;
    double p95_min = 5.0;   // kW, uniform draw per station
    double p95_max = 60.0;  // kW
    double power_noise = 0.0;  // noise stddev as a fraction of p95
    double flow_u = 1.2;   // blob drift, pixels east per 15-min step
    double flow_v = -0.6;  // pixels north per step
    int n_blobs = 14;
    double blob_depth = 0.65;   // peak CSI deficit per blob
    double blob_radius = 6.0;   // Gaussian sigma, pixels
    double convection_growth = 0.12;  // amplitude gain per step
    std::uint64_t seed = 0;

    void validate() const;  // ConfigError
};

CloudRegime regime_for_day(const SyntheticSpec& spec, int day_index);

struct SyntheticDataset {
    std::filesystem::path root;
    std::filesystem::path grids_dir;
    std::filesystem::path series_dir;
    std::filesystem::path registry_path;
    std::filesystem::path manifest_path;
    std::vector<UnixTime> timestamps;  // every emitted 15-min instant
    std::vector<Station> stations;     // as written, series included
};

// Writes the full desk-scale dataset: CSI and SSI grids named
// csi_<stamp>.sgf / ssi_<stamp>.sgf at 15-min cadence between sunrise and
// sunset of each day, a station registry, per-station power series following
// power = p95 * clip(csi * cos(sza), 0, 1) + seeded noise, and a manifest
// of every parameter. Reruns with the same spec are byte-identical.
SyntheticDataset generate_synthetic(const SyntheticSpec& spec,
                                    const std::filesystem::path& out_root);

}  // namespace solarcast

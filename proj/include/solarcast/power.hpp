#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "solarcast/cascade.hpp"
#include "solarcast/common.hpp"
#include "solarcast/gbrt.hpp"

namespace solarcast {

using PowerSeries = std::vector<std::pair<UnixTime, double>>;  // kW, 15-min

struct Station {
    std::string id;
    double lon = 0.0;        // degrees east
    double lat = 0.0;        // degrees north
    double elevation = 0.0;  // meters a.s.l.
    double p95 = 0.0;        // kW, 95th percentile of the non-missing series
    PowerSeries series;
};

// 95th empirical percentile over the finite entries; NaN if none.
double power_percentile95(const PowerSeries& series);

struct RejectedStation {
    std::string id;
    std::string reason;
};

// Splits each station's daylight samples by calendar year and compares mean,
// standard deviation and skewness across year pairs; a relative difference
// |m1-m2| / max(|m1|, |m2|, 1e-6) above 0.10 in any metric rejects the
// station, as do single-year records, empty series and non-positive p95.
// Kept stations come back with p95 recomputed.
std::pair<std::vector<Station>, std::vector<RejectedStation>> clean_fleet(
    const std::vector<Station>& fleet);

struct FeatureVector {
    double ssi = 0.0;  // W m^-2
    double sza = 0.0;  // degrees
    double azi = 0.0;  // degrees
    double sin_doy = 0.0;
    double cos_doy = 0.0;
    double sin_hod = 0.0;
    double cos_hod = 0.0;

    static constexpr int n_features = 7;
    std::array<double, n_features> values() const;
};

// Solar position at the station plus cyclic encodings of fractional
// day-of-year (period 365.25) and hour-of-day. A non-finite or negative
// ssi_value yields nullopt, which callers treat as a dropped row.
std::optional<FeatureVector> build_features(const Station& station,
                                            double ssi_value, UnixTime t);

enum class SplitLabel { Train, Val, Test };

// Consecutive non-overlapping 12-day blocks anchored at `origin` (midnight
// UTC): the first 10 days of each block train, day 11 validates and day 12
// tests on even blocks, swapped on odd blocks.
struct SplitPlan {
    UnixTime origin = 0;
    int block_length = 12;
    int train_days = 10;

    SplitLabel label(UnixTime t) const;
    static SplitPlan starting(UnixTime first);  // snaps to day_start(first)
};

struct TrainOptions {
    GbrtParams params;
    bool tune = false;  // random search on the validation split
    int tune_trials = 16;
    std::uint64_t seed = 0;
};

struct StationModel {
    std::string station_id;
    double lon = 0.0;
    double lat = 0.0;
    double elevation = 0.0;
    double p95 = 0.0;  // kW; also the target scale
    std::array<double, FeatureVector::n_features> feature_min{};
    std::array<double, FeatureVector::n_features> feature_max{};
    GbrtModel booster;

    // kW; 0 between local sunset and sunrise regardless of ssi_value, nullopt
    // when ssi_value is missing. The normalized prediction is clipped to
    // [0, 1] before rescaling by p95.
    std::optional<double> predict_kw(double ssi_value, UnixTime t) const;
};

// Joins the station's power series with SSI sampled at the station point,
// keeps daylight rows, splits them by `plan`, min-max scales features over
// the train split and targets by the recomputed p95, then boosts with early
// stopping on the validation split. Throws TrainingError when fewer than 100
// daylight training samples survive or p95 is not positive.
StationModel train_station_model(const Station& station,
                                 const PowerSeries& ssi_series,
                                 const SplitPlan& plan,
                                 const TrainOptions& options = {});

struct StationPrediction {
    std::string station_id;
    // kw[lead-1][member]; nullopt marks a missing prediction.
    std::vector<std::vector<std::optional<double>>> kw;

    int n_leads() const { return static_cast<int>(kw.size()); }
    int n_members() const {
        return kw.empty() ? 0 : static_cast<int>(kw.front().size());
    }
};

// Interpolates each SSI field to the station point and converts to power at
// the valid time. Forecast fields must carry GridKind::Ssi (FormatError
// otherwise); NaN neighbourhoods interpolate to missing predictions.
StationPrediction predict_power(const StationModel& model,
                                const ForecastSet& forecast,
                                const Station& station);

struct FleetTotal {
    double kw = 0.0;
    int n_stations = 0;  // stations with a valid prediction at (lead, member)
};

// Sum over stations with a valid prediction at the 1-based lead and 0-based
// member; stations missing that slot are excluded from both sum and count.
FleetTotal fleet_total(const std::vector<StationPrediction>& predictions,
                       int lead, int member);

// Registry CSV: header `id,lon,lat,elevation_m`. Series CSV: header
// `timestamp_utc,power_kw`, ISO-8601 timestamps; a `nan` or empty power
// field loads as NaN (missing). Malformed content throws FormatError,
// unreadable or unwritable paths IoError.
std::vector<Station> load_station_registry(const std::filesystem::path& path);
void save_station_registry(const std::vector<Station>& fleet,
                           const std::filesystem::path& path);
PowerSeries load_power_series(const std::filesystem::path& path);
void save_power_series(const PowerSeries& series,
                       const std::filesystem::path& path);

// Portable JSON dump of scaling and trees; round-trips predictions exactly.
void save_station_model(const StationModel& model,
                        const std::filesystem::path& path);
StationModel load_station_model(const std::filesystem::path& path);

}  // namespace solarcast

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "solarcast/cascade.hpp"
#include "solarcast/common.hpp"
#include "solarcast/power.hpp"
#include "solarcast/synth.hpp"
#include "solarcast/verify.hpp"

namespace solarcast {

// Orchestration settings shared by every subcommand. Stored as `key = value`
// lines; unknown keys are rejected so typos fail loudly. The
// SOLARCAST_OUTPUT_ROOT environment variable overrides output_dir at load
// time. Input paths must exist when load() runs; output_dir is created on
// demand by the commands.
struct RunConfig {
    std::filesystem::path grids_dir;
    std::filesystem::path registry;
    std::filesystem::path series_dir;
    std::filesystem::path output_dir;
    std::string model = "solarsteps";
    NowcastConfig nowcast;
    double alpha = 0.1;
    std::uint64_t seed = 0;
    int workers = 0;  // 0 = all logical CPUs

    std::filesystem::path forecasts_dir() const { return output_dir / "forecasts"; }
    std::filesystem::path models_dir() const { return output_dir / "models"; }
    std::filesystem::path power_dir() const { return output_dir / "power"; }
    std::filesystem::path scores_dir() const { return output_dir / "scores"; }
    std::filesystem::path reports_dir() const { return output_dir / "reports"; }

    void validate() const;  // ConfigError on bad values or missing inputs
    static RunConfig load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;  // lossless round trip
};

// Full hours in [sunrise + 1 h, sunset - 3 h] at the grid center; empty when
// the window closes before it opens.
std::vector<UnixTime> issue_hours(double lat, double lon, UnixTime day);

// MAM / JJA / SON / DJF by calendar month.
std::string season_of(UnixTime t);

struct SkipRecord {
    UnixTime issue_time = 0;
    std::string reason;
};

struct NowcastResult {
    std::vector<UnixTime> issued;
    std::vector<SkipRecord> skipped;

    int exit_code() const { return issued.empty() ? 1 : 0; }
};

// Runs the configured model for every requested issue time (default: all
// hours derivable from the grids under the daylight-window rule), writing
// one ForecastSet directory per issue time. Individually broken issue times
// are skipped with a reason; only a run with nothing issued fails.
NowcastResult run_nowcast(const RunConfig& config,
                          const std::vector<UnixTime>& requested = {});

struct TrainResult {
    std::vector<std::string> trained;  // registry order
    std::vector<RejectedStation> rejected;
    std::map<std::string, double> val_nrmse;
    std::filesystem::path report_path;
    std::filesystem::path rejected_path;

    int exit_code() const { return trained.empty() ? 1 : 0; }
};

// clean_fleet + per-station training against SSI sampled from the observed
// grids; writes one JSON model per admitted station plus training_report.csv
// and rejected.csv. Stations that fail to train are moved to rejected with
// the error text as reason.
TrainResult run_train_power(const RunConfig& config,
                            const TrainOptions& options = {});

struct PredictResult {
    int n_forecast_sets = 0;
    std::vector<std::string> stations;
    std::vector<SkipRecord> skipped;

    int exit_code() const { return n_forecast_sets == 0 ? 1 : 0; }
};

// Converts every forecast set of the configured model to per-station power:
// CSI members are rescaled by the valid-time clear-sky field first, SSI
// members pass through. Emits predictions.csv + manifest.json per issue.
PredictResult run_predict_power(const RunConfig& config);

struct EvaluateResult {
    std::size_t n_ssi_samples = 0;
    std::size_t n_power_samples = 0;
    std::filesystem::path ssi_csv, ssi_json;
    std::filesystem::path power_csv, power_json;
    std::filesystem::path ranks_json;

    int exit_code() const {
        return n_ssi_samples + n_power_samples == 0 ? 1 : 0;
    }
};

// Scores forecasts against observations: per-pixel SSI ensembles (hourly
// means on the 4x-aggregated grid when the model is `external`), and power
// ensembles against measured series when predictions exist. Strata: all,
// lead, time of day of issue, day regime, and station elevation band for
// power. Emits ScoreTable CSV/JSON plus rank histograms.
EvaluateResult run_evaluate(const RunConfig& config);

struct AggregateResult {
    DailyErrorSummary overall;
    std::map<std::string, DailyErrorSummary> by_season;
    std::filesystem::path report_csv;
    std::filesystem::path report_json;
    std::filesystem::path daily_csv;

    int exit_code() const { return overall.days.empty() ? 1 : 0; }
};

// Daily national totals at the shortest lead from the ensemble-mean fleet
// sum, compared to measured totals over the same stations; relative-error
// distribution overall and per season.
AggregateResult run_aggregate(const RunConfig& config);

}  // namespace solarcast

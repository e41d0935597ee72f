#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "solarcast/common.hpp"
#include "solarcast/grid.hpp"

namespace solarcast {

// One verified forecast: ensemble members (kept sorted), the matching
// observation, and the normalizer f_s (P95 for power, 1 for SSI).
struct EnsembleSample {
    std::vector<double> members;
    double observation = 0.0;
    double normalizer = 1.0;
};

// Validates finiteness and normalizer positivity, sorts the members.
EnsembleSample make_sample(std::vector<double> members, double observation,
                           double normalizer = 1.0);

struct DeterministicScores {
    double nmae = 0.0;
    double nrmse = 0.0;
    double nmbe = 0.0;
};

// Ensemble-mean errors normalized per sample by f_s.
DeterministicScores deterministic_scores(
    const std::vector<EnsembleSample>& samples);

// CRPS of the empirical ensemble CDF against the observation, divided by
// f_s. Closed form: mean|X - y| - (1/2) mean_{i,j} |X_i - X_j|.
double crps(const EnsembleSample& sample);

// Empirical p-quantile by linear interpolation between order statistics
// (position p*(E-1)+1 in 1-based terms). `sorted` must be ascending.
double empirical_quantile(const std::vector<double>& sorted, double p);

struct IntervalScores {
    double picp = 0.0;
    double pinaw = 0.0;
    double mpiw = 0.0;
};

// Central (1-alpha) interval scores; every sample needs E >= 2, otherwise
// UndefinedIntervalError.
IntervalScores interval_scores(const std::vector<EnsembleSample>& samples,
                               double alpha = 0.1);

struct RankHistogram {
    std::vector<std::uint64_t> counts;  // E+1 bins
    double chi_square = 0.0;
    double p_value = 1.0;
};

// Rank = number of members strictly below the observation, ties broken
// uniformly at random with the seeded generator. MixedEnsembleError when
// sample sizes differ.
RankHistogram rank_histogram(const std::vector<EnsembleSample>& samples,
                             std::uint64_t seed = 0);

// Upper-tail p-value of a chi-square statistic (regularized incomplete
// gamma Q(dof/2, x/2)).
double chi_square_p_value(double statistic, int dof);

struct RegimeLabel {
    bool cloudy = false;
    bool sunny = false;
    bool lowvar = false;
    bool highvar = false;
};

struct RegimeLabels {
    std::map<UnixTime, RegimeLabel> days;  // keyed by UTC day start
    double mean_q25 = 0.0, mean_q75 = 0.0;
    double std_q25 = 0.0, std_q75 = 0.0;
};

// Daily CSI mean/stddev quartile classification over the whole record;
// strict inequalities, so ties with a threshold stay unlabeled. Needs at
// least eight distinct days.
RegimeLabels classify_regimes(const std::vector<GridField>& csi_fields);

struct DailyError {
    UnixTime day = 0;  // UTC day start
    double relative_error = 0.0;
};

struct DailyErrorSummary {
    std::vector<DailyError> days;
    std::vector<std::pair<UnixTime, std::string>> excluded;
    double frac_below_1pct = 0.0;
    double frac_below_10pct = 0.0;
};

// |sum_pred - sum_meas| / sum_meas per UTC day of fleet totals; days with
// non-positive measured totals are excluded with a reason.
DailyErrorSummary daily_relative_error(
    const std::vector<std::pair<UnixTime, double>>& predicted,
    const std::vector<std::pair<UnixTime, double>>& measured);

// Stratified score accumulator with compensated two-stage aggregation:
// add() per sample, merge() across shards, identical results either way.
class ScoreTable {
public:
    void add(const std::string& model, int lead_min, const std::string& stratum,
             const EnsembleSample& sample, double alpha = 0.1);
    void merge(const ScoreTable& other);

    struct Row {
        std::string model;
        int lead_min = 0;
        std::string stratum;
        std::string metric;
        double value = 0.0;
        std::uint64_t n = 0;
    };
    // Finalized rows in deterministic (model, lead, stratum, metric) order.
    std::vector<Row> rows() const;

    void write_csv(const std::filesystem::path& path) const;
    void write_json(const std::filesystem::path& path) const;

    bool empty() const { return cells_.empty(); }

private:
    struct Cell {
        KahanSum abs_err, err, sq_err, crps_sum;
        KahanSum hits, width, norm_width;
        std::uint64_t n = 0;
        std::uint64_t n_interval = 0;
    };
    using Key = std::tuple<std::string, int, std::string>;
    std::map<Key, Cell> cells_;
};

}  // namespace solarcast

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "json.hpp"
#include "solarcast/common.hpp"

namespace solarcast {

// Histogram-based gradient-boosted regression trees with squared-error loss.
// Splits are evaluated on at most n_bins quantile bins per feature, so a fit
// is deterministic for fixed data and parameters (no row or column sampling).
struct GbrtParams {
    int n_trees = 200;
    int max_depth = 5;
    double learning_rate = 0.1;
    double l1 = 0.0;
    double l2 = 1.0;
    int n_bins = 32;
    int patience = 20;  // early-stopping rounds on the validation split

    void validate() const;  // ConfigError on nonsensical values
};

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;  // leaf contribution, learning rate included

    bool is_leaf() const { return feature < 0; }
};

struct Tree {
    std::vector<TreeNode> nodes;

    // x points at n_features values; descends "x[feature] < threshold -> left".
    double eval(const double* x) const;
};

class GbrtModel {
public:
    double base_score = 0.0;
    int n_features = 0;
    std::vector<Tree> trees;

    double predict_row(const double* x, std::size_t n) const;
    double predict(const std::vector<double>& x) const;

    nlohmann::json to_json() const;
    static GbrtModel from_json(const nlohmann::json& j);  // FormatError
};

struct FitDiagnostics {
    std::vector<double> val_rmse;  // after each boosting round
    int best_iteration = 0;        // number of trees kept
};

// Rows of x are samples with equal length; y matches x in size. The model is
// truncated to the round with the lowest validation RMSE once `patience`
// rounds pass without improvement; with an empty validation set all n_trees
// rounds run. Throws TrainingError on empty input and DimensionError on
// ragged rows or mismatched sizes.
GbrtModel fit_gbrt(const std::vector<std::vector<double>>& x_train,
                   const std::vector<double>& y_train,
                   const std::vector<std::vector<double>>& x_val,
                   const std::vector<double>& y_val,
                   const GbrtParams& params = {},
                   FitDiagnostics* diagnostics = nullptr);

// Seeded random search over max_depth in {3..7}, learning_rate log-uniform in
// [0.03, 0.3], l2 log-uniform in [0.1, 10] and l1 in {0} or log-uniform in
// [1e-3, 1]; n_trees, n_bins and patience stay at `base`. Returns the trial
// with the lowest validation RMSE. Requires a non-empty validation set.
GbrtParams random_search(const std::vector<std::vector<double>>& x_train,
                         const std::vector<double>& y_train,
                         const std::vector<std::vector<double>>& x_val,
                         const std::vector<double>& y_val,
                         int n_trials, std::uint64_t seed,
                         const GbrtParams& base = {});

}  // namespace solarcast

#include "solarcast/gbrt.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>

#include "solarcast/rng.hpp"

namespace solarcast {

namespace {

constexpr double kMinGain = 1e-12;

double soft_threshold(double g, double l1) {
    if (g > l1) return g - l1;
    if (g < -l1) return g + l1;
    return 0.0;
}

double leaf_weight(double grad_sum, double count, const GbrtParams& p) {
    return -soft_threshold(grad_sum, p.l1) / (count + p.l2);
}

double split_score(double grad_sum, double count, const GbrtParams& p) {
    const double s = soft_threshold(grad_sum, p.l1);
    return s * s / (count + p.l2);
}

// Per-feature quantile bin boundaries; bin(v) = number of boundaries <= v.
struct BinnedColumns {
    std::vector<std::vector<double>> thresholds;  // ascending, deduplicated
    std::vector<std::vector<std::uint8_t>> bins;  // [feature][row]
};

std::vector<double> quantile_thresholds(std::vector<double> column, int n_bins) {
    std::sort(column.begin(), column.end());
    std::vector<double> out;
    const std::size_t n = column.size();
    if (n < 2) return out;
    for (int k = 1; k < n_bins; ++k) {
        const double pos = (static_cast<double>(k) / n_bins) * (n - 1);
        const auto lo = static_cast<std::size_t>(pos);
        const double frac = pos - static_cast<double>(lo);
        const double q = lo + 1 < n
                             ? column[lo] + frac * (column[lo + 1] - column[lo])
                             : column[lo];
        if (out.empty() || q > out.back()) out.push_back(q);
    }
    // A boundary at or below the minimum can never separate two samples.
    while (!out.empty() && out.front() <= column.front()) out.erase(out.begin());
    return out;
}

BinnedColumns bin_columns(const std::vector<std::vector<double>>& x,
                          int n_features, int n_bins) {
    BinnedColumns binned;
    binned.thresholds.resize(n_features);
    binned.bins.resize(n_features);
    std::vector<double> column(x.size());
    for (int f = 0; f < n_features; ++f) {
        for (std::size_t i = 0; i < x.size(); ++i) column[i] = x[i][f];
        binned.thresholds[f] = quantile_thresholds(column, n_bins);
        auto& b = binned.bins[f];
        b.resize(x.size());
        const auto& thr = binned.thresholds[f];
        for (std::size_t i = 0; i < x.size(); ++i) {
            b[i] = static_cast<std::uint8_t>(
                std::upper_bound(thr.begin(), thr.end(), column[i]) - thr.begin());
        }
    }
    return binned;
}

struct TreeBuilder {
    const BinnedColumns& binned;
    const std::vector<double>& gradient;
    const GbrtParams& params;
    Tree tree;

    int build(std::vector<std::uint32_t>& rows, int depth) {
        double grad_sum = 0.0;
        for (std::uint32_t r : rows) grad_sum += gradient[r];
        const double count = static_cast<double>(rows.size());

        int best_feature = -1;
        int best_bin = -1;
        double best_gain = kMinGain;
        const double parent_score = split_score(grad_sum, count, params);
        if (depth < params.max_depth && rows.size() >= 2) {
            const int n_features = static_cast<int>(binned.bins.size());
            for (int f = 0; f < n_features; ++f) {
                const auto& thr = binned.thresholds[f];
                if (thr.empty()) continue;
                const int n_bins = static_cast<int>(thr.size()) + 1;
                std::vector<double> bin_grad(n_bins, 0.0);
                std::vector<double> bin_count(n_bins, 0.0);
                const auto& bins = binned.bins[f];
                for (std::uint32_t r : rows) {
                    bin_grad[bins[r]] += gradient[r];
                    bin_count[bins[r]] += 1.0;
                }
                double left_grad = 0.0;
                double left_count = 0.0;
                for (int b = 0; b + 1 < n_bins; ++b) {
                    left_grad += bin_grad[b];
                    left_count += bin_count[b];
                    if (left_count == 0.0 || left_count == count) continue;
                    const double gain =
                        0.5 * (split_score(left_grad, left_count, params) +
                               split_score(grad_sum - left_grad, count - left_count,
                                           params) -
                               parent_score);
                    if (gain > best_gain) {
                        best_gain = gain;
                        best_feature = f;
                        best_bin = b;
                    }
                }
            }
        }

        const int node_index = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        if (best_feature < 0) {
            tree.nodes[node_index].value =
                params.learning_rate * leaf_weight(grad_sum, count, params);
            return node_index;
        }

        std::vector<std::uint32_t> left_rows;
        std::vector<std::uint32_t> right_rows;
        left_rows.reserve(rows.size());
        right_rows.reserve(rows.size());
        const auto& bins = binned.bins[best_feature];
        for (std::uint32_t r : rows) {
            (bins[r] <= best_bin ? left_rows : right_rows).push_back(r);
        }
        rows.clear();
        rows.shrink_to_fit();

        tree.nodes[node_index].feature = best_feature;
        tree.nodes[node_index].threshold =
            binned.thresholds[best_feature][best_bin];
        const int left = build(left_rows, depth + 1);
        tree.nodes[node_index].left = left;
        const int right = build(right_rows, depth + 1);
        tree.nodes[node_index].right = right;
        return node_index;
    }
};

double rmse(const std::vector<double>& pred, const std::vector<double>& truth) {
    KahanSum sq;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - truth[i];
        sq.add(d * d);
    }
    return std::sqrt(sq.value() / static_cast<double>(pred.size()));
}

void check_matrix(const std::vector<std::vector<double>>& x,
                  const std::vector<double>& y, int n_features,
                  const char* split) {
    if (x.size() != y.size()) {
        throw DimensionError(std::string(split) + " features and targets disagree: " +
                             std::to_string(x.size()) + " rows vs " +
                             std::to_string(y.size()) + " targets");
    }
    for (const auto& row : x) {
        if (static_cast<int>(row.size()) != n_features) {
            throw DimensionError(std::string(split) + " row has " +
                                 std::to_string(row.size()) + " features, expected " +
                                 std::to_string(n_features));
        }
    }
}

}  // namespace

void GbrtParams::validate() const {
    if (n_trees < 1) throw ConfigError("n_trees must be >= 1");
    if (max_depth < 1 || max_depth > 16) throw ConfigError("max_depth must be in [1, 16]");
    if (!(learning_rate > 0.0) || learning_rate > 1.0) {
        throw ConfigError("learning_rate must be in (0, 1]");
    }
    if (l1 < 0.0 || l2 < 0.0) throw ConfigError("l1 and l2 must be >= 0");
    if (n_bins < 2 || n_bins > 256) throw ConfigError("n_bins must be in [2, 256]");
    if (patience < 1) throw ConfigError("patience must be >= 1");
}

double Tree::eval(const double* x) const {
    int node = 0;
    while (!nodes[node].is_leaf()) {
        node = x[nodes[node].feature] < nodes[node].threshold ? nodes[node].left
                                                              : nodes[node].right;
    }
    return nodes[node].value;
}

double GbrtModel::predict_row(const double* x, std::size_t n) const {
    if (static_cast<int>(n) != n_features) {
        throw DimensionError("prediction row has " + std::to_string(n) +
                             " features, model expects " + std::to_string(n_features));
    }
    double out = base_score;
    for (const Tree& tree : trees) out += tree.eval(x);
    return out;
}

double GbrtModel::predict(const std::vector<double>& x) const {
    return predict_row(x.data(), x.size());
}

nlohmann::json GbrtModel::to_json() const {
    nlohmann::json j;
    j["base_score"] = base_score;
    j["n_features"] = n_features;
    nlohmann::json trees_json = nlohmann::json::array();
    for (const Tree& tree : trees) {
        nlohmann::json nodes = nlohmann::json::array();
        for (const TreeNode& n : tree.nodes) {
            nodes.push_back({{"feature", n.feature},
                             {"threshold", n.threshold},
                             {"left", n.left},
                             {"right", n.right},
                             {"value", n.value}});
        }
        trees_json.push_back(std::move(nodes));
    }
    j["trees"] = std::move(trees_json);
    return j;
}

GbrtModel GbrtModel::from_json(const nlohmann::json& j) {
    GbrtModel model;
    try {
        model.base_score = j.at("base_score").get<double>();
        model.n_features = j.at("n_features").get<int>();
        for (const auto& tree_json : j.at("trees")) {
            Tree tree;
            for (const auto& node_json : tree_json) {
                TreeNode n;
                n.feature = node_json.at("feature").get<int>();
                n.threshold = node_json.at("threshold").get<double>();
                n.left = node_json.at("left").get<int>();
                n.right = node_json.at("right").get<int>();
                n.value = node_json.at("value").get<double>();
                tree.nodes.push_back(n);
            }
            const int size = static_cast<int>(tree.nodes.size());
            if (tree.nodes.empty()) throw FormatError("tree dump has no nodes");
            for (const TreeNode& n : tree.nodes) {
                if (n.is_leaf()) continue;
                if (n.feature >= model.n_features || n.left < 0 || n.left >= size ||
                    n.right < 0 || n.right >= size) {
                    throw FormatError("tree dump references invalid node or feature");
                }
            }
            model.trees.push_back(std::move(tree));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed model dump: ") + e.what());
    }
    return model;
}

GbrtModel fit_gbrt(const std::vector<std::vector<double>>& x_train,
                   const std::vector<double>& y_train,
                   const std::vector<std::vector<double>>& x_val,
                   const std::vector<double>& y_val, const GbrtParams& params,
                   FitDiagnostics* diagnostics) {
    params.validate();
    if (x_train.empty()) throw TrainingError("no training samples");
    const int n_features = static_cast<int>(x_train.front().size());
    if (n_features == 0) throw TrainingError("training rows have no features");
    check_matrix(x_train, y_train, n_features, "train");
    check_matrix(x_val, y_val, n_features, "validation");

    GbrtModel model;
    model.n_features = n_features;
    KahanSum target_sum;
    for (double y : y_train) target_sum.add(y);
    model.base_score = target_sum.value() / static_cast<double>(y_train.size());

    const BinnedColumns binned = bin_columns(x_train, n_features, params.n_bins);

    std::vector<double> pred(x_train.size(), model.base_score);
    std::vector<double> val_pred(x_val.size(), model.base_score);
    std::vector<double> gradient(x_train.size());

    const bool use_val = !x_val.empty();
    double best_rmse = use_val ? rmse(val_pred, y_val)
                               : std::numeric_limits<double>::infinity();
    int best_iteration = 0;
    int rounds_since_best = 0;

    for (int round = 1; round <= params.n_trees; ++round) {
        for (std::size_t i = 0; i < pred.size(); ++i) {
            gradient[i] = pred[i] - y_train[i];
        }
        std::vector<std::uint32_t> rows(x_train.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            rows[i] = static_cast<std::uint32_t>(i);
        }
        TreeBuilder builder{binned, gradient, params, {}};
        builder.build(rows, 0);
        model.trees.push_back(std::move(builder.tree));
        const Tree& tree = model.trees.back();

        for (std::size_t i = 0; i < pred.size(); ++i) {
            pred[i] += tree.eval(x_train[i].data());
        }
        if (use_val) {
            for (std::size_t i = 0; i < val_pred.size(); ++i) {
                val_pred[i] += tree.eval(x_val[i].data());
            }
            const double score = rmse(val_pred, y_val);
            if (diagnostics) diagnostics->val_rmse.push_back(score);
            if (score < best_rmse - 1e-12) {
                best_rmse = score;
                best_iteration = round;
                rounds_since_best = 0;
            } else if (++rounds_since_best >= params.patience) {
                break;
            }
        } else {
            best_iteration = round;
        }
    }

    model.trees.resize(best_iteration);
    if (diagnostics) diagnostics->best_iteration = best_iteration;
    return model;
}

GbrtParams random_search(const std::vector<std::vector<double>>& x_train,
                         const std::vector<double>& y_train,
                         const std::vector<std::vector<double>>& x_val,
                         const std::vector<double>& y_val, int n_trials,
                         std::uint64_t seed, const GbrtParams& base) {
    if (n_trials < 1) throw ConfigError("random search needs at least one trial");
    if (x_val.empty()) {
        throw EmptyInputError("random search needs a validation split");
    }

    GbrtParams best = base;
    double best_rmse = std::numeric_limits<double>::infinity();
    for (int trial = 0; trial < n_trials; ++trial) {
        Rng rng{seed, 0x74756e65ULL, static_cast<std::uint64_t>(trial)};
        GbrtParams candidate = base;
        candidate.max_depth = 3 + static_cast<int>(rng.below(5));
        candidate.learning_rate = 0.03 * std::exp(std::log(0.3 / 0.03) * rng.uniform01());
        candidate.l2 = 0.1 * std::exp(std::log(10.0 / 0.1) * rng.uniform01());
        const double l1_draw = rng.uniform01();
        candidate.l1 = rng.uniform01() < 0.5
                           ? 0.0
                           : 1e-3 * std::exp(std::log(1.0 / 1e-3) * l1_draw);

        FitDiagnostics diag;
        const GbrtModel model =
            fit_gbrt(x_train, y_train, x_val, y_val, candidate, &diag);
        const double score = diag.val_rmse.empty()
                                 ? std::numeric_limits<double>::infinity()
                                 : *std::min_element(diag.val_rmse.begin(),
                                                     diag.val_rmse.end());
        (void)model;
        if (score < best_rmse) {
            best_rmse = score;
            best = candidate;
        }
    }
    return best;
}

}  // namespace solarcast

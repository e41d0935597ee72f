#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "solarcast/app.hpp"

namespace {

struct CommonOptions {
    std::string config_path;
    std::optional<std::string> model;
    std::optional<std::uint64_t> seed;
    std::optional<int> workers;
    std::optional<double> alpha;
};

void add_common(CLI::App* cmd, CommonOptions& opts) {
    cmd->add_option("--config", opts.config_path, "run configuration file")
        ->required();
    cmd->add_option("--model", opts.model,
                    "override the configured model (persistence, solarsteps, "
                    "solarsteps-pa, external)");
    cmd->add_option("--seed", opts.seed, "override the configured seed");
    cmd->add_option("--workers", opts.workers,
                    "worker threads (default: logical CPUs)");
    cmd->add_option("--alpha", opts.alpha,
                    "central interval miss rate for probabilistic scores");
}

solarcast::RunConfig finish_config(const CommonOptions& opts) {
    solarcast::RunConfig config = solarcast::RunConfig::load(opts.config_path);
    if (opts.model) config.model = *opts.model;
    if (opts.seed) config.seed = *opts.seed;
    if (opts.workers) config.workers = *opts.workers;
    if (opts.alpha) config.alpha = *opts.alpha;
    config.validate();
    return config;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"solar irradiance nowcasting and PV power forecasting"};
    app.require_subcommand(1);

    auto* synth =
        app.add_subcommand("synth", "generate a synthetic benchmark dataset");
    std::string synth_out;
    std::string start_date;
    std::vector<std::string> regime_names;
    int grid_size = 0;
    solarcast::SyntheticSpec spec;
    synth->add_option("--out", synth_out, "dataset root directory")->required();
    synth->add_option("--days", spec.n_days, "number of days");
    synth->add_option("--start", start_date, "first day, YYYY-MM-DD");
    synth->add_option("--seed", spec.seed, "random seed");
    synth->add_option("--stations", spec.n_stations, "number of PV stations");
    synth
        ->add_option("--regimes", regime_names,
                     "daily regime cycle: clear, blobs, convection, static")
        ->delimiter(',');
    synth->add_option("--noise", spec.power_noise,
                      "power noise stddev as a fraction of p95");
    synth->add_option("--size", grid_size, "square grid size in pixels");
    synth->add_option("--lon-min", spec.geometry.lon_min,
                      "west edge of the domain, degrees east");
    synth->add_option("--lat-min", spec.geometry.lat_min,
                      "south edge of the domain, degrees north");
    synth->add_option("--flow-u", spec.flow_u,
                      "blob drift, px/step eastward");
    synth->add_option("--flow-v", spec.flow_v,
                      "blob drift, px/step northward");
    synth->add_option("--blobs", spec.n_blobs, "number of cloud blobs");
    synth->add_option("--blob-depth", spec.blob_depth,
                      "peak CSI deficit per blob");
    synth->add_option("--blob-radius", spec.blob_radius,
                      "blob Gaussian sigma, pixels");

    CommonOptions nowcast_opts, train_opts, predict_opts, evaluate_opts,
        aggregate_opts;
    std::vector<std::string> issue_times;
    bool tune = false;

    auto* nowcast = app.add_subcommand(
        "nowcast", "run the configured model for every admissible issue time");
    add_common(nowcast, nowcast_opts);
    nowcast->add_option(
        "--issue", issue_times,
        "explicit issue times (ISO-8601); default: every admissible hour");

    auto* train =
        app.add_subcommand("train-power", "train per-station power models");
    add_common(train, train_opts);
    train->add_flag("--tune", tune,
                    "random-search hyperparameters on the validation split");

    auto* predict = app.add_subcommand(
        "predict-power", "convert forecast sets to per-station power");
    add_common(predict, predict_opts);

    auto* evaluate = app.add_subcommand(
        "evaluate", "score forecasts against observations");
    add_common(evaluate, evaluate_opts);

    auto* aggregate = app.add_subcommand(
        "aggregate", "daily national totals and seasonal error distribution");
    add_common(aggregate, aggregate_opts);

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) {
            if (!start_date.empty())
                spec.start_day = solarcast::parse_iso(start_date);
            if (grid_size > 0) {
                spec.geometry.n_rows = static_cast<std::uint32_t>(grid_size);
                spec.geometry.n_cols = static_cast<std::uint32_t>(grid_size);
            }
            if (!regime_names.empty()) {
                spec.regimes.clear();
                for (const auto& name : regime_names)
                    spec.regimes.push_back(solarcast::regime_from_name(name));
            }
            const auto dataset = solarcast::generate_synthetic(spec, synth_out);
            std::cout << "synth: " << dataset.timestamps.size()
                      << " grid timestamps, " << dataset.stations.size()
                      << " stations under " << dataset.root.string() << "\n";
            return 0;
        }
        if (nowcast->parsed()) {
            std::vector<solarcast::UnixTime> times;
            times.reserve(issue_times.size());
            for (const auto& s : issue_times)
                times.push_back(solarcast::parse_iso(s));
            return solarcast::run_nowcast(finish_config(nowcast_opts), times)
                .exit_code();
        }
        if (train->parsed()) {
            solarcast::TrainOptions options;
            options.tune = tune;
            return solarcast::run_train_power(finish_config(train_opts), options)
                .exit_code();
        }
        if (predict->parsed())
            return solarcast::run_predict_power(finish_config(predict_opts))
                .exit_code();
        if (evaluate->parsed())
            return solarcast::run_evaluate(finish_config(evaluate_opts))
                .exit_code();
        if (aggregate->parsed())
            return solarcast::run_aggregate(finish_config(aggregate_opts))
                .exit_code();
    } catch (const solarcast::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

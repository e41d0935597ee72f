#include "solarcast/app.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "json.hpp"
#include "solarcast/clearsky.hpp"
#include "solarcast/grid.hpp"

using namespace solarcast;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
}

std::vector<std::vector<std::string>> read_csv_rows(const fs::path& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> fields;
        std::string cur;
        bool quoted = false;
        for (std::size_t i = 0; i < line.size(); ++i) {
            char c = line[i];
            if (quoted) {
                if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else if (c == '"') {
                    quoted = false;
                } else {
                    cur += c;
                }
            } else if (c == '"') {
                quoted = true;
            } else if (c == ',') {
                fields.push_back(cur);
                cur.clear();
            } else {
                cur += c;
            }
        }
        fields.push_back(cur);
        rows.push_back(std::move(fields));
    }
    return rows;
}

// 14 days of deterministic clear weather across the year boundary at a
// southern site: every station survives the year-pair cleaning and
// persistence forecasts reproduce the observations exactly.
struct ClearFixture {
    testutil::TempDir dir{"app-clear"};
    SyntheticDataset data;

    ClearFixture() {
        SyntheticSpec spec;
        spec.start_day = parse_iso("2019-12-25T00:00:00Z");
        spec.n_days = 14;
        spec.geometry = GridGeometry{6.8, -47.14, 0.02, 64, 64};
        spec.regimes = {CloudRegime::Clear};
        spec.n_stations = 4;
        spec.seed = 31;
        data = generate_synthetic(spec, dir.path() / "data");
    }

    RunConfig config(const fs::path& out) const {
        RunConfig c;
        c.grids_dir = data.grids_dir;
        c.registry = data.registry_path;
        c.series_dir = data.series_dir;
        c.output_dir = out;
        c.model = "persistence";
        c.seed = 5;
        c.workers = 1;
        return c;
    }
};

const ClearFixture& clear_fixture() {
    static ClearFixture fixture;
    return fixture;
}

// 4 textured days (static/blobs alternating) for the stochastic models.
struct TextureFixture {
    testutil::TempDir dir{"app-tex"};
    SyntheticDataset data;

    TextureFixture() {
        SyntheticSpec spec;
        spec.start_day = parse_iso("2019-12-25T00:00:00Z");
        spec.n_days = 4;
        spec.geometry = GridGeometry{6.8, -47.14, 0.02, 64, 64};
        spec.regimes = {CloudRegime::Static, CloudRegime::Blobs};
        spec.n_stations = 3;
        spec.seed = 77;
        data = generate_synthetic(spec, dir.path() / "data");
    }

    RunConfig config(const fs::path& out) const {
        RunConfig c;
        c.grids_dir = data.grids_dir;
        c.registry = data.registry_path;
        c.series_dir = data.series_dir;
        c.output_dir = out;
        c.model = "solarsteps";
        c.seed = 5;
        c.workers = 1;
        return c;
    }
};

const TextureFixture& texture_fixture() {
    static TextureFixture fixture;
    return fixture;
}

UnixTime midday_issue(const SyntheticDataset& data, int day_index) {
    const GridField probe = read_grid(
        (data.grids_dir / ("csi_" + format_compact(data.timestamps.front()) +
                           ".sgf"))
            .string());
    const double lat =
        probe.geometry.lat_min +
        0.5 * probe.geometry.cell_size * probe.geometry.n_rows;
    const double lon =
        probe.geometry.lon_min +
        0.5 * probe.geometry.cell_size * probe.geometry.n_cols;
    const UnixTime day =
        day_start(data.timestamps.front()) + 86400LL * day_index;
    const auto hours = issue_hours(lat, lon, day);
    REQUIRE(!hours.empty());
    return hours[hours.size() / 2];
}

}  // namespace

TEST_CASE("a run config survives a save/load round trip unchanged") {
    const auto& fx = clear_fixture();
    testutil::TempDir tmp("cfg");

    RunConfig config = fx.config(tmp.path() / "out");
    config.model = "solarsteps-pa";
    config.alpha = 0.2;
    config.seed = 0xfeedface12345678ULL;
    config.workers = 3;
    config.nowcast.n_levels = 5;
    config.nowcast.n_members = 7;
    config.nowcast.n_leads = 6;
    config.nowcast.csi_clip = 1.3f;
    config.nowcast.noise_enabled = false;
    config.nowcast.perturbation.sigma_speed = 0.12;
    config.nowcast.perturbation.sigma_angle = 4.5;

    const fs::path path = tmp.path() / "run.cfg";
    config.save(path);
    const RunConfig loaded = RunConfig::load(path);

    CHECK(loaded.grids_dir == config.grids_dir);
    CHECK(loaded.registry == config.registry);
    CHECK(loaded.series_dir == config.series_dir);
    CHECK(loaded.output_dir == config.output_dir);
    CHECK(loaded.model == config.model);
    CHECK(loaded.alpha == config.alpha);
    CHECK(loaded.seed == config.seed);
    CHECK(loaded.workers == config.workers);
    CHECK(loaded.nowcast.n_levels == config.nowcast.n_levels);
    CHECK(loaded.nowcast.n_members == config.nowcast.n_members);
    CHECK(loaded.nowcast.n_leads == config.nowcast.n_leads);
    CHECK(loaded.nowcast.csi_clip == config.nowcast.csi_clip);
    CHECK(loaded.nowcast.noise_enabled == config.nowcast.noise_enabled);
    CHECK(loaded.nowcast.perturbation.sigma_speed ==
          config.nowcast.perturbation.sigma_speed);
    CHECK(loaded.nowcast.perturbation.sigma_angle ==
          config.nowcast.perturbation.sigma_angle);

    // Saving the loaded config again reproduces the file byte for byte.
    const fs::path again = tmp.path() / "again.cfg";
    loaded.save(again);
    CHECK(slurp(again) == slurp(path));
}

TEST_CASE("config loading rejects unknown keys, duplicates and bad values") {
    const auto& fx = clear_fixture();
    testutil::TempDir tmp("cfgbad");
    const std::string base = "grids_dir = " + fx.data.grids_dir.string() +
                             "\nregistry = " + fx.data.registry_path.string() +
                             "\nseries_dir = " + fx.data.series_dir.string() +
                             "\noutput_dir = " + tmp.file("out") + "\n";

    const fs::path path = tmp.path() / "run.cfg";

    testutil::write_text(path, base + "grid_dir = oops\n");
    CHECK_THROWS_AS(RunConfig::load(path), ConfigError);

    testutil::write_text(path, base + "model = persistence\nmodel = external\n");
    CHECK_THROWS_AS(RunConfig::load(path), ConfigError);

    testutil::write_text(path, base + "alpha = 1.5\n");
    CHECK_THROWS_AS(RunConfig::load(path), ConfigError);

    testutil::write_text(path, base + "seed = not-a-number\n");
    CHECK_THROWS_AS(RunConfig::load(path), ConfigError);

    testutil::write_text(path, base + "model = gradient-descent\n");
    CHECK_THROWS_AS(RunConfig::load(path), ConfigError);

    testutil::write_text(path,
                         "grids_dir = /nonexistent/grids\nregistry = " +
                             fx.data.registry_path.string() +
                             "\nseries_dir = " + fx.data.series_dir.string() +
                             "\noutput_dir = " + tmp.file("out") + "\n");
    CHECK_THROWS_AS(RunConfig::load(path), ConfigError);

    // Comments and blank lines are fine.
    testutil::write_text(path, "# run settings\n\n" + base);
    CHECK_NOTHROW(RunConfig::load(path));
}

TEST_CASE("SOLARCAST_OUTPUT_ROOT overrides the configured output directory") {
    const auto& fx = clear_fixture();
    testutil::TempDir tmp("cfgenv");
    const fs::path path = tmp.path() / "run.cfg";
    fx.config(tmp.path() / "configured").save(path);

    const std::string forced = tmp.file("forced");
    REQUIRE(setenv("SOLARCAST_OUTPUT_ROOT", forced.c_str(), 1) == 0);
    const RunConfig loaded = RunConfig::load(path);
    REQUIRE(unsetenv("SOLARCAST_OUTPUT_ROOT") == 0);

    CHECK(loaded.output_dir == fs::path(forced));
    CHECK(RunConfig::load(path).output_dir == tmp.path() / "configured");
}

TEST_CASE("issue hours are the full hours inside the daylight window") {
    const double lat = -46.5, lon = 7.44;
    const UnixTime day = parse_iso("2019-12-25T00:00:00Z");
    const auto hours = issue_hours(lat, lon, day);
    REQUIRE(!hours.empty());

    const auto window = daylight_window(lat, lon, day + 43200);
    const UnixTime open = window.first + 3600;
    const UnixTime close = window.second - 10800;
    for (UnixTime h : hours) {
        CHECK(h % 3600 == 0);
        CHECK(h >= open);
        CHECK(h <= close);
    }
    CHECK(std::is_sorted(hours.begin(), hours.end()));
    // Completeness: stepping one hour past either end leaves the window.
    CHECK(hours.front() - 3600 < open);
    CHECK(hours.back() + 3600 > close);

    // A short winter day at high latitude leaves no room at all:
    // sunrise + 1 h is past sunset - 3 h.
    CHECK(issue_hours(69.6, 18.9, parse_iso("2019-12-21T00:00:00Z")).empty());
}

TEST_CASE("seasons follow the meteorological calendar") {
    CHECK(season_of(parse_iso("2019-03-01T00:00:00Z")) == "MAM");
    CHECK(season_of(parse_iso("2019-05-31T23:59:59Z")) == "MAM");
    CHECK(season_of(parse_iso("2019-06-15T12:00:00Z")) == "JJA");
    CHECK(season_of(parse_iso("2019-09-01T00:00:00Z")) == "SON");
    CHECK(season_of(parse_iso("2019-11-30T12:00:00Z")) == "SON");
    CHECK(season_of(parse_iso("2019-12-01T00:00:00Z")) == "DJF");
    CHECK(season_of(parse_iso("2020-01-15T00:00:00Z")) == "DJF");
    CHECK(season_of(parse_iso("2020-02-29T12:00:00Z")) == "DJF");
}

TEST_CASE("nowcast derives every admissible full hour from the grids") {
    const auto& fx = clear_fixture();
    testutil::TempDir out("nowcast-derived");
    RunConfig config = fx.config(out.path());

    const auto result = run_nowcast(config);
    CHECK(result.exit_code() == 0);

    // Oracle: accumulate the issue-hour rule day by day, keeping hours whose
    // four 15-min inputs all exist among the written grids.
    const GridField probe = read_grid(
        (fx.data.grids_dir /
         ("csi_" + format_compact(fx.data.timestamps.front()) + ".sgf"))
            .string());
    const double lat = probe.geometry.lat_min +
                       0.5 * probe.geometry.cell_size * probe.geometry.n_rows;
    const double lon = probe.geometry.lon_min +
                       0.5 * probe.geometry.cell_size * probe.geometry.n_cols;
    std::set<UnixTime> stamps(fx.data.timestamps.begin(),
                              fx.data.timestamps.end());
    std::vector<UnixTime> expected;
    for (int d = 0; d < 14; ++d) {
        const UnixTime day = day_start(fx.data.timestamps.front()) + 86400LL * d;
        for (UnixTime h : issue_hours(lat, lon, day)) {
            bool complete = true;
            for (int k = 0; k < 4; ++k)
                complete = complete && stamps.count(h - 900 * k) > 0;
            if (complete) expected.push_back(h);
        }
    }
    CHECK(result.issued == expected);

    // One forecast-set directory per issue time, named by the compact stamp.
    for (UnixTime t : result.issued) {
        const fs::path set_dir =
            config.forecasts_dir() / "persistence" / format_compact(t);
        CHECK(fs::exists(set_dir / "manifest.json"));
        CHECK(fs::exists(set_dir / "lead1_member0.sgf"));
    }
}

TEST_CASE("nowcast skips issue times that violate the window or lack inputs") {
    const auto& fx = clear_fixture();
    testutil::TempDir out("nowcast-skip");
    RunConfig config = fx.config(out.path());

    const UnixTime good = midday_issue(fx.data, 2);
    const UnixTime midnight = day_start(good);
    const UnixTime before_data = good - 86400LL * 400;

    const auto result = run_nowcast(config, {midnight, before_data, good});
    CHECK(result.exit_code() == 0);
    REQUIRE(result.issued == std::vector<UnixTime>{good});
    REQUIRE(result.skipped.size() == 2);
    for (const auto& skip : result.skipped) {
        CHECK(!skip.reason.empty());
        CHECK((skip.issue_time == midnight || skip.issue_time == before_data));
    }

    // Nothing issued at all is a failure exit.
    testutil::TempDir out2("nowcast-allskip");
    RunConfig config2 = fx.config(out2.path());
    const auto nothing = run_nowcast(config2, {midnight});
    CHECK(nothing.issued.empty());
    CHECK(nothing.exit_code() == 1);
    CHECK(nothing.skipped.size() == 1);
}

TEST_CASE("nowcast refuses the external model") {
    const auto& fx = clear_fixture();
    testutil::TempDir out("nowcast-ext");
    RunConfig config = fx.config(out.path());
    config.model = "external";
    CHECK_THROWS_AS(run_nowcast(config), ConfigError);
}

TEST_CASE("a solarsteps nowcast writes the full ensemble per issue time") {
    const auto& fx = texture_fixture();
    testutil::TempDir out("nowcast-steps");
    RunConfig config = fx.config(out.path());

    const UnixTime issue = midday_issue(fx.data, 1);
    const auto result = run_nowcast(config, {issue});
    REQUIRE(result.issued == std::vector<UnixTime>{issue});

    const fs::path set_dir =
        config.forecasts_dir() / "solarsteps" / format_compact(issue);
    const ForecastSet set = load_forecast(set_dir);
    CHECK(set.model == "solarsteps");
    CHECK(set.n_leads() == 8);
    CHECK(set.n_members() == 10);
    CHECK(set.issue_time == issue);
    CHECK(set.step == 900);
    int files = 0;
    for (const auto& entry : fs::directory_iterator(set_dir))
        files += entry.path().extension() == ".sgf" ? 1 : 0;
    CHECK(files == 80);
}

TEST_CASE("reruns are byte-identical and the seed actually matters") {
    const auto& fx = texture_fixture();
    const UnixTime issue = midday_issue(fx.data, 0);

    auto run_once = [&](std::uint64_t seed, const fs::path& out) {
        RunConfig config = fx.config(out);
        config.seed = seed;
        const auto result = run_nowcast(config, {issue});
        REQUIRE(result.issued.size() == 1);
        return config.forecasts_dir() / "solarsteps" / format_compact(issue);
    };

    testutil::TempDir a("det-a"), b("det-b"), c("det-c");
    const fs::path da = run_once(5, a.path());
    const fs::path db = run_once(5, b.path());
    const fs::path dc = run_once(6, c.path());

    bool identical = true;
    bool any_differs = false;
    for (const auto& entry : fs::directory_iterator(da)) {
        const std::string name = entry.path().filename().string();
        if (entry.path().extension() != ".sgf") continue;
        identical = identical && slurp(entry.path()) == slurp(db / name);
        any_differs = any_differs || slurp(entry.path()) != slurp(dc / name);
    }
    CHECK(identical);
    CHECK(any_differs);
}

TEST_CASE("training admits the clear fleet and reports one row per model") {
    const auto& fx = clear_fixture();
    testutil::TempDir out("train-clear");
    RunConfig config = fx.config(out.path());

    const auto result = run_train_power(config);
    CHECK(result.exit_code() == 0);
    CHECK(result.trained.size() == 4);
    CHECK(result.rejected.empty());

    const auto report = read_csv_rows(result.report_path);
    REQUIRE(report.size() == result.trained.size() + 1);
    CHECK(report[0] ==
          std::vector<std::string>{"station", "val_nrmse", "n_train", "n_val"});
    for (std::size_t i = 1; i < report.size(); ++i) {
        CHECK(report[i][0] == result.trained[i - 1]);
        const double nrmse = std::stod(report[i][1]);
        CHECK(nrmse >= 0.0);
        CHECK(nrmse < 0.05);  // clear-sky fit is tight
        CHECK(std::stoi(report[i][2]) >= 100);
    }

    for (const auto& id : result.trained) {
        CHECK(fs::exists(config.models_dir() / (id + ".json")));
        CHECK(result.val_nrmse.count(id) == 1);
    }

    const auto rejected = read_csv_rows(result.rejected_path);
    REQUIRE(rejected.size() == 1);  // header only
    CHECK(rejected[0] == std::vector<std::string>{"station", "reason"});
}

TEST_CASE("single-year stations are rejected and training then fails") {
    testutil::TempDir dir("train-oneyear");
    SyntheticSpec spec;
    spec.start_day = parse_iso("2019-06-15T00:00:00Z");
    spec.n_days = 2;
    spec.geometry = GridGeometry{6.8, 45.8, 0.02, 32, 32};
    spec.regimes = {CloudRegime::Clear};
    spec.n_stations = 2;
    spec.seed = 3;
    const auto data = generate_synthetic(spec, dir.path() / "data");

    RunConfig config;
    config.grids_dir = data.grids_dir;
    config.registry = data.registry_path;
    config.series_dir = data.series_dir;
    config.output_dir = dir.path() / "out";
    config.workers = 1;

    const auto result = run_train_power(config);
    CHECK(result.exit_code() == 1);
    CHECK(result.trained.empty());
    REQUIRE(result.rejected.size() == 2);
    for (const auto& r : result.rejected)
        CHECK(r.reason.find("single calendar year") != std::string::npos);
}

TEST_CASE("a station without a series file lands in rejected.csv") {
    const auto& fx = clear_fixture();
    testutil::TempDir dir("train-missing");

    // Clone the station tree, then drop one series file.
    const fs::path series = dir.path() / "stations";
    fs::create_directories(series);
    for (const auto& entry : fs::directory_iterator(fx.data.series_dir))
        fs::copy_file(entry.path(), series / entry.path().filename());
    const std::string victim = fx.data.stations.front().id;
    fs::remove(series / (victim + ".csv"));

    RunConfig config = fx.config(dir.path() / "out");
    config.registry = series / "registry.csv";
    config.series_dir = series;

    const auto result = run_train_power(config);
    CHECK(result.exit_code() == 0);
    CHECK(result.trained.size() == 3);
    REQUIRE(result.rejected.size() == 1);
    CHECK(result.rejected[0].id == victim);
    CHECK(result.rejected[0].reason.find("missing series file") !=
          std::string::npos);

    const auto rejected = read_csv_rows(result.rejected_path);
    REQUIRE(rejected.size() == 2);
    CHECK(rejected[1][0] == victim);
}

TEST_CASE("predict-power writes one row per station, lead and member") {
    const auto& fx = clear_fixture();
    testutil::TempDir out("predict");
    RunConfig config = fx.config(out.path());

    REQUIRE(run_train_power(config).trained.size() == 4);
    const UnixTime issue = midday_issue(fx.data, 3);
    REQUIRE(run_nowcast(config, {issue}).issued.size() == 1);

    const auto result = run_predict_power(config);
    CHECK(result.exit_code() == 0);
    CHECK(result.n_forecast_sets == 1);
    CHECK(result.stations.size() == 4);

    const fs::path set_dir =
        config.power_dir() / "persistence" / format_compact(issue);
    const auto rows = read_csv_rows(set_dir / "predictions.csv");
    REQUIRE(rows.size() == 1 + 4 * 8 * 1);  // header + stations x leads x members
    CHECK(rows[0] == std::vector<std::string>{"station", "lead_min", "member",
                                              "power_kw"});

    // Station p95 values bound every prediction.
    std::map<std::string, double> p95;
    for (const auto& st : load_station_registry(fx.data.registry_path)) {
        const auto model =
            load_station_model(config.models_dir() / (st.id + ".json"));
        p95[st.id] = model.p95;
    }
    std::set<std::string> seen;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        REQUIRE(rows[i].size() == 4);
        const int lead_min = std::stoi(rows[i][1]);
        CHECK(lead_min % 15 == 0);
        CHECK(lead_min >= 15);
        CHECK(lead_min <= 120);
        CHECK(rows[i][2] == "0");
        REQUIRE(!rows[i][3].empty());  // midday leads are all daylight
        const double kw = std::stod(rows[i][3]);
        CHECK(kw >= 0.0);
        CHECK(kw <= p95.at(rows[i][0]) + 1e-9);
        seen.insert(rows[i][0]);
    }
    CHECK(seen.size() == 4);

    const auto manifest =
        nlohmann::json::parse(slurp(set_dir / "manifest.json"));
    CHECK(manifest.at("model") == "persistence");
    CHECK(manifest.at("issue_time").get<std::int64_t>() == issue);
    CHECK(manifest.at("step_seconds") == 900);
    CHECK(manifest.at("n_leads") == 8);
    CHECK(manifest.at("n_members") == 1);
    CHECK(manifest.at("n_stations") == 4);

    // A second run reproduces the files byte for byte.
    const std::string before = slurp(set_dir / "predictions.csv");
    const auto again = run_predict_power(config);
    CHECK(again.n_forecast_sets == 1);
    CHECK(slurp(set_dir / "predictions.csv") == before);
}

TEST_CASE("predict-power without models or forecasts fails cleanly") {
    const auto& fx = clear_fixture();

    testutil::TempDir out1("predict-nosets");
    RunConfig config1 = fx.config(out1.path());
    const auto none = run_predict_power(config1);
    CHECK(none.n_forecast_sets == 0);
    CHECK(none.exit_code() == 1);

    testutil::TempDir out2("predict-nomodels");
    RunConfig config2 = fx.config(out2.path());
    const UnixTime issue = midday_issue(fx.data, 3);
    REQUIRE(run_nowcast(config2, {issue}).issued.size() == 1);
    CHECK_THROWS_AS(run_predict_power(config2), ConfigError);
}

TEST_CASE("evaluating persistence against its own inputs scores zero error") {
    const auto& fx = clear_fixture();
    testutil::TempDir out("eval-self");
    RunConfig config = fx.config(out.path());
    config.alpha = 0.1;

    REQUIRE(run_train_power(config).trained.size() == 4);
    const std::vector<UnixTime> issues = {midday_issue(fx.data, 2),
                                          midday_issue(fx.data, 3)};
    REQUIRE(run_nowcast(config, issues).issued.size() == 2);
    REQUIRE(run_predict_power(config).n_forecast_sets == 2);

    const auto result = run_evaluate(config);
    CHECK(result.exit_code() == 0);
    CHECK(result.n_ssi_samples > 0);
    CHECK(result.n_power_samples > 0);
    CHECK(fs::exists(result.ssi_csv));
    CHECK(fs::exists(result.ssi_json));
    CHECK(fs::exists(result.power_csv));
    CHECK(fs::exists(result.power_json));
    CHECK(fs::exists(result.ranks_json));

    // Clear-sky persistence reproduces the observed SSI, so every error
    // metric collapses to zero and the one-member interval always covers.
    const auto rows = read_csv_rows(result.ssi_csv);
    REQUIRE(rows.size() > 1);
    int error_metrics = 0;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        REQUIRE(rows[i].size() == 6);
        const std::string& metric = rows[i][3];
        const double value = std::stod(rows[i][4]);
        if (metric == "nmae" || metric == "nrmse" || metric == "crps" ||
            metric == "mpiw") {
            CHECK(std::abs(value) < 1e-3);
            ++error_metrics;
        } else if (metric == "picp") {
            CHECK(value == doctest::Approx(1.0));
        }
    }
    CHECK(error_metrics > 0);

    // Power scores stay within the station model's fit error.
    const auto prows = read_csv_rows(result.power_csv);
    REQUIRE(prows.size() > 1);
    for (std::size_t i = 1; i < prows.size(); ++i) {
        if (prows[i][3] == "nrmse") CHECK(std::stod(prows[i][4]) < 0.05);
    }

    const auto ranks = nlohmann::json::parse(slurp(result.ranks_json));
    CHECK(ranks.is_array());
    REQUIRE(!ranks.empty());
    for (const auto& entry : ranks) {
        CHECK(entry.contains("domain"));
        CHECK(entry.contains("model"));
        CHECK(entry.contains("lead_min"));
        CHECK(entry.at("counts").is_array());
    }
}

TEST_CASE("evaluate with nothing to score fails with exit code 1") {
    const auto& fx = clear_fixture();
    testutil::TempDir out("eval-empty");
    RunConfig config = fx.config(out.path());
    const auto result = run_evaluate(config);
    CHECK(result.n_ssi_samples == 0);
    CHECK(result.n_power_samples == 0);
    CHECK(result.exit_code() == 1);
}

TEST_CASE("the external model is scored on hourly means of the coarse grid") {
    const auto& fx = clear_fixture();
    testutil::TempDir out("eval-ext");
    RunConfig config = fx.config(out.path());
    config.model = "external";

    // Hand-build an hourly external forecast whose fields equal the
    // aggregated observations, using library primitives as the oracle.
    const UnixTime issue = midday_issue(fx.data, 5);
    const int n_leads = 2;
    ForecastSet set;
    set.model = "external";
    set.issue_time = issue;
    set.step = 3600;
    set.seed = 0;
    for (int lead = 1; lead <= n_leads; ++lead) {
        const UnixTime valid = issue + 3600LL * lead;
        std::vector<GridField> obs;
        for (int k = 3; k >= 0; --k) {
            const fs::path p =
                fx.data.grids_dir /
                ("ssi_" + format_compact(valid - 900LL * k) + ".sgf");
            REQUIRE(fs::exists(p));
            obs.push_back(read_grid(p.string()));
        }
        GridField mean = hourly_average(make_sequence(std::move(obs)), valid);
        GridField coarse = downsample(mean, 4);
        set.fields.push_back({std::move(coarse)});
    }
    set.geometry = set.fields.front().front().geometry;
    save_forecast(set,
                  config.forecasts_dir() / "external" / format_compact(issue));

    const auto result = run_evaluate(config);
    CHECK(result.exit_code() == 0);
    CHECK(result.n_ssi_samples == n_leads * 16 * 16);

    const auto rows = read_csv_rows(result.ssi_csv);
    bool saw_external = false;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        CHECK(rows[i][0] == "external");
        saw_external = true;
        if (rows[i][3] == "nmae" || rows[i][3] == "nrmse")
            CHECK(std::abs(std::stod(rows[i][4])) < 1e-6);
    }
    CHECK(saw_external);
}

TEST_CASE("aggregate reproduces hand-computed daily relative errors") {
    const auto& fx = clear_fixture();
    testutil::TempDir out("agg");
    RunConfig config = fx.config(out.path());

    // Measured lead-1 valid times on two days.
    const UnixTime issue1 = midday_issue(fx.data, 4);
    const UnixTime issue2 = midday_issue(fx.data, 5);
    const auto fleet = load_station_registry(fx.data.registry_path);

    std::map<std::string, std::map<UnixTime, double>> measured;
    for (const auto& st : fleet) {
        for (const auto& [t, kw] :
             load_power_series(fx.data.series_dir / (st.id + ".csv")))
            if (std::isfinite(kw)) measured[st.id][t] = kw;
    }

    auto write_set = [&](UnixTime issue, double scale) {
        const fs::path dir =
            config.power_dir() / "persistence" / format_compact(issue);
        fs::create_directories(dir);
        nlohmann::json manifest{{"model", "persistence"},
                                {"issue_time", issue},
                                {"issue_time_iso", format_iso(issue)},
                                {"step_seconds", 900},
                                {"n_leads", 1},
                                {"n_members", 2},
                                {"n_stations", fleet.size()}};
        testutil::write_text(dir / "manifest.json", manifest.dump(2) + "\n");
        std::ostringstream csv;
        csv << "station,lead_min,member,power_kw\n";
        for (const auto& st : fleet) {
            const double kw = measured.at(st.id).at(issue + 900) * scale;
            // Members straddle the target so their mean hits it exactly.
            csv << st.id << ",15,0," << kw * 0.5 << "\n";
            csv << st.id << ",15,1," << kw * 1.5 << "\n";
        }
        testutil::write_text(dir / "predictions.csv", csv.str());
    };

    write_set(issue1, 1.0);   // ensemble mean = measured: 0% daily error
    write_set(issue2, 1.05);  // 5% high: between the 1% and 10% buckets

    const auto result = run_aggregate(config);
    CHECK(result.exit_code() == 0);
    REQUIRE(result.overall.days.size() == 2);
    CHECK(result.overall.excluded.empty());
    CHECK(result.overall.days[0].relative_error == doctest::Approx(0.0));
    CHECK(result.overall.days[1].relative_error == doctest::Approx(0.05));
    CHECK(result.overall.frac_below_1pct == doctest::Approx(0.5));
    CHECK(result.overall.frac_below_10pct == doctest::Approx(1.0));

    // Both days are southern-summer, i.e. DJF.
    REQUIRE(result.by_season.count("DJF") == 1);
    CHECK(result.by_season.at("DJF").days.size() == 2);

    const auto daily = read_csv_rows(result.daily_csv);
    REQUIRE(daily.size() == 3);
    CHECK(daily[0] == std::vector<std::string>{"date", "predicted_sum_kw",
                                               "measured_sum_kw",
                                               "relative_error"});
    CHECK(daily[1][0] == format_iso(day_start(issue1)).substr(0, 10));

    const auto national = read_csv_rows(result.report_csv);
    REQUIRE(national.size() >= 2);
    CHECK(national[0] ==
          std::vector<std::string>{"scope", "n_days", "n_excluded",
                                   "frac_below_1pct", "frac_below_10pct"});
    CHECK(national[1][0] == "all");
    CHECK(national[1][1] == "2");

    const auto doc = nlohmann::json::parse(slurp(result.report_json));
    CHECK(doc.at("model") == "persistence");
    CHECK(doc.at("overall").at("n_days") == 2);
    CHECK(doc.contains("seasons"));
}

TEST_CASE("aggregate with no predictions fails with exit code 1") {
    const auto& fx = clear_fixture();
    testutil::TempDir out("agg-empty");
    RunConfig config = fx.config(out.path());
    const auto result = run_aggregate(config);
    CHECK(result.overall.days.empty());
    CHECK(result.exit_code() == 1);
}

TEST_CASE("the command-line binary wires arguments through to the library") {
    if (!fs::exists("solarcast")) {
        MESSAGE("solarcast binary not built next to the test runner; skipping");
        return;
    }
    const auto& fx = clear_fixture();
    testutil::TempDir tmp("cli");
    RunConfig config = fx.config(tmp.path() / "out");
    const fs::path cfg = tmp.path() / "run.cfg";
    config.save(cfg);

    const UnixTime issue = midday_issue(fx.data, 1);
    const std::string cmd = "./solarcast nowcast --config " + cfg.string() +
                            " --issue " + format_iso(issue) + " >/dev/null 2>&1";
    REQUIRE(std::system(cmd.c_str()) == 0);
    CHECK(fs::exists(config.forecasts_dir() / "persistence" /
                     format_compact(issue) / "manifest.json"));

    // A config violation surfaces as exit code 2.
    const std::string bad = "./solarcast nowcast --config " + cfg.string() +
                            " --model external >/dev/null 2>&1";
    const int status = std::system(bad.c_str());
    CHECK(WIFEXITED(status));
    CHECK(WEXITSTATUS(status) == 2);
}

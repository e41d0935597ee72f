#include "solarcast/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "json.hpp"
#include "solarcast/clearsky.hpp"
#include "solarcast/flow.hpp"
#include "solarcast/grid.hpp"
#include "solarcast/power.hpp"

using namespace solarcast;

namespace {

SyntheticSpec small_spec() {
    SyntheticSpec spec;
    spec.n_days = 1;
    spec.geometry = GridGeometry{6.8, 45.8, 0.02, 40, 40};
    spec.n_stations = 3;
    spec.seed = 11;
    return spec;
}

std::map<std::string, std::string> slurp_tree(const std::filesystem::path& root) {
    std::map<std::string, std::string> files;
    for (const auto& entry :
         std::filesystem::recursive_directory_iterator(root)) {
        if (!entry.is_regular_file()) continue;
        std::ifstream in(entry.path(), std::ios::binary);
        std::string body((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
        files[std::filesystem::relative(entry.path(), root).string()] =
            std::move(body);
    }
    return files;
}

std::vector<GridField> day_fields(const SyntheticDataset& data,
                                  const std::string& kind_prefix) {
    std::vector<GridField> fields;
    for (UnixTime t : data.timestamps) {
        fields.push_back(read_grid(
            (data.grids_dir / (kind_prefix + "_" + format_compact(t) + ".sgf"))
                .string()));
    }
    return fields;
}

}  // namespace

TEST_CASE("the default start day is the documented midsummer date") {
    CHECK(SyntheticSpec{}.start_day == to_unix({2019, 6, 15, 0, 0, 0}));
}

TEST_CASE("identical specs produce byte-identical datasets") {
    testutil::TempDir tmp("synth-det");
    SyntheticSpec spec = small_spec();
    spec.regimes = {CloudRegime::Blobs, CloudRegime::Convection};
    spec.n_days = 2;
    spec.power_noise = 0.02;

    const auto a = generate_synthetic(spec, tmp.path() / "a");
    const auto b = generate_synthetic(spec, tmp.path() / "b");

    const auto tree_a = slurp_tree(a.root);
    const auto tree_b = slurp_tree(b.root);
    REQUIRE_FALSE(tree_a.empty());
    CHECK(tree_a.size() == tree_b.size());
    CHECK(tree_a == tree_b);

    // A different seed must change the grids.
    SyntheticSpec other = spec;
    other.seed = spec.seed + 1;
    const auto c = generate_synthetic(other, tmp.path() / "c");
    CHECK(slurp_tree(c.root) != tree_a);
}

TEST_CASE("clear regime means unit clear-sky index all day") {
    testutil::TempDir tmp("synth-clear");
    SyntheticSpec spec = small_spec();
    spec.regimes = {CloudRegime::Clear};

    const auto data = generate_synthetic(spec, tmp.path() / "d");
    REQUIRE_FALSE(data.timestamps.empty());

    for (const GridField& csi : day_fields(data, "csi")) {
        for (float v : csi.values) CHECK(v == 1.0f);
    }

    // SSI then equals the clear-sky curve wherever it is defined.
    const GridField ssi = read_grid(
        (data.grids_dir /
         ("ssi_" + format_compact(data.timestamps[data.timestamps.size() / 2]) +
          ".sgf"))
            .string());
    const GridField clear =
        clearsky_field(spec.geometry, ssi.timestamp, ClearSkyParams{});
    for (std::size_t p = 0; p < ssi.values.size(); ++p) {
        if (clear.values[p] > 20.0f) {
            CHECK(ssi.values[p] ==
                  doctest::Approx(clear.values[p]).epsilon(1e-6));
        }
    }
}

TEST_CASE("advecting blobs embed a recoverable motion field") {
    testutil::TempDir tmp("synth-flow");
    SyntheticSpec spec;
    spec.n_days = 1;
    spec.n_stations = 2;
    spec.seed = 3;
    spec.flow_u = 1.2;
    spec.flow_v = -0.6;

    const auto data = generate_synthetic(spec, tmp.path() / "d");
    REQUIRE(data.timestamps.size() >= 4);

    // Four frames from mid-day, where the texture is fully developed.
    const auto csi = day_fields(data, "csi");
    const std::size_t mid = csi.size() / 2;
    FieldSequence seq = make_sequence(
        {csi[mid], csi[mid + 1], csi[mid + 2], csi[mid + 3]});
    const FlowField flow = estimate_flow(seq);

    std::vector<float> u = flow.u;
    std::vector<float> v = flow.v;
    std::nth_element(u.begin(), u.begin() + u.size() / 2, u.end());
    std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
    const double med_u = u[u.size() / 2];
    const double med_v = v[v.size() / 2];
    CHECK(std::abs(med_u - spec.flow_u) < 0.1 * std::abs(spec.flow_u) + 0.02);
    CHECK(std::abs(med_v - spec.flow_v) < 0.1 * std::abs(spec.flow_v) + 0.02);
}

TEST_CASE("static regime repeats the same field all day") {
    testutil::TempDir tmp("synth-static");
    SyntheticSpec spec = small_spec();
    spec.regimes = {CloudRegime::Static};

    const auto data = generate_synthetic(spec, tmp.path() / "d");
    const auto csi = day_fields(data, "csi");
    REQUIRE(csi.size() >= 2);
    for (std::size_t k = 1; k < csi.size(); ++k) {
        CHECK(csi[k].values == csi[0].values);
    }
}

TEST_CASE("convection darkens the sky as the day progresses") {
    testutil::TempDir tmp("synth-conv");
    SyntheticSpec spec = small_spec();
    spec.regimes = {CloudRegime::Convection};

    const auto data = generate_synthetic(spec, tmp.path() / "d");
    const auto csi = day_fields(data, "csi");
    REQUIRE(csi.size() >= 10);

    auto mean_of = [](const GridField& f) {
        double sum = 0.0;
        for (float v : f.values) sum += v;
        return sum / static_cast<double>(f.values.size());
    };
    CHECK(mean_of(csi.front()) > mean_of(csi.back()) + 0.05);

    // Amplitudes saturate, so the texture must stabilize eventually too.
    CHECK(mean_of(csi.back()) >= 0.05);
}

TEST_CASE("regime cycling follows the configured mix") {
    testutil::TempDir tmp("synth-cycle");
    SyntheticSpec spec = small_spec();
    spec.regimes = {CloudRegime::Clear, CloudRegime::Blobs};
    spec.n_days = 3;

    CHECK(regime_for_day(spec, 0) == CloudRegime::Clear);
    CHECK(regime_for_day(spec, 1) == CloudRegime::Blobs);
    CHECK(regime_for_day(spec, 2) == CloudRegime::Clear);

    const auto data = generate_synthetic(spec, tmp.path() / "d");
    std::map<UnixTime, std::vector<GridField>> by_day;
    for (const GridField& f : day_fields(data, "csi")) {
        by_day[day_start(f.timestamp)].push_back(f);
    }
    REQUIRE(by_day.size() == 3);

    auto day_it = by_day.begin();
    for (float v : day_it->second.front().values) CHECK(v == 1.0f);
    ++day_it;
    bool any_cloud = false;
    for (float v : day_it->second.front().values) {
        if (v < 0.99f) any_cloud = true;
    }
    CHECK(any_cloud);
}

TEST_CASE("power series follow the documented ground-truth curve") {
    testutil::TempDir tmp("synth-power");
    SyntheticSpec spec = small_spec();
    spec.regimes = {CloudRegime::Blobs};
    spec.power_noise = 0.0;

    const auto data = generate_synthetic(spec, tmp.path() / "d");
    REQUIRE(data.stations.size() == 3);

    // Re-derive the curve from the grids that were written to disk.
    const Station& st = data.stations[1];
    REQUIRE(st.series.size() == data.timestamps.size());
    for (std::size_t k = 0; k < data.timestamps.size(); k += 7) {
        const UnixTime t = data.timestamps[k];
        const GridField csi = read_grid(
            (data.grids_dir / ("csi_" + format_compact(t) + ".sgf")).string());
        const auto csi_here = interpolate_point(csi, st.lon, st.lat);
        REQUIRE(csi_here.has_value());
        const double sza = solar_position(st.lat, st.lon, t).zenith;
        const double expected =
            st.p95 *
            std::clamp(*csi_here * std::cos(sza * 0.017453292519943295), 0.0, 1.0);
        CHECK(st.series[k].first == t);
        CHECK(st.series[k].second == doctest::Approx(expected).epsilon(1e-9));
    }

    // The CSV on disk carries exactly the same numbers.
    const PowerSeries reloaded =
        load_power_series(data.series_dir / (st.id + ".csv"));
    REQUIRE(reloaded.size() == st.series.size());
    for (std::size_t k = 0; k < reloaded.size(); ++k) {
        CHECK(reloaded[k].first == st.series[k].first);
        CHECK(reloaded[k].second == st.series[k].second);
    }

    const auto fleet = load_station_registry(data.registry_path);
    REQUIRE(fleet.size() == 3);
    CHECK(fleet[1].id == st.id);
    CHECK(fleet[1].lon == st.lon);
    CHECK(fleet[1].lat == st.lat);
}

TEST_CASE("grid timestamps are quarter-hour marks inside daylight") {
    testutil::TempDir tmp("synth-time");
    SyntheticSpec spec = small_spec();

    const auto data = generate_synthetic(spec, tmp.path() / "d");
    REQUIRE_FALSE(data.timestamps.empty());

    const double lon = spec.geometry.lon_min +
                       0.5 * spec.geometry.cell_size * spec.geometry.n_cols;
    const double lat = spec.geometry.lat_min +
                       0.5 * spec.geometry.cell_size * spec.geometry.n_rows;
    const auto [sunrise, sunset] =
        daylight_window(lat, lon, spec.start_day + 43200);

    for (std::size_t k = 0; k < data.timestamps.size(); ++k) {
        const UnixTime t = data.timestamps[k];
        CHECK(t % 900 == 0);
        CHECK(t >= sunrise);
        CHECK(t <= sunset);
        if (k > 0) CHECK(t - data.timestamps[k - 1] == 900);
    }

    // June at 46.5N: the day holds far more than 50 quarter hours.
    CHECK(data.timestamps.size() > 50);
}

TEST_CASE("manifest records the generating parameters") {
    testutil::TempDir tmp("synth-manifest");
    SyntheticSpec spec = small_spec();
    spec.regimes = {CloudRegime::Convection, CloudRegime::Clear};
    spec.n_days = 2;
    spec.seed = 77;
    spec.power_noise = 0.01;

    const auto data = generate_synthetic(spec, tmp.path() / "d");
    std::ifstream in(data.manifest_path);
    REQUIRE(in.good());
    nlohmann::json manifest;
    in >> manifest;

    CHECK(manifest.at("seed").get<std::uint64_t>() == 77);
    CHECK(manifest.at("n_days").get<int>() == 2);
    CHECK(manifest.at("n_stations").get<int>() == 3);
    CHECK(manifest.at("power_noise").get<double>() == 0.01);
    CHECK(manifest.at("geometry").at("n_cols").get<int>() == 40);
    CHECK(manifest.at("regimes").size() == 2);
    CHECK(manifest.at("regimes")[0].get<std::string>() == "convection");
    CHECK(manifest.at("regime_schedule")[1].get<std::string>() == "clear");
    CHECK(manifest.at("n_grid_timestamps").get<std::size_t>() ==
          data.timestamps.size());
}

TEST_CASE("nonsense specs and unwritable roots are refused") {
    SyntheticSpec spec = small_spec();
    spec.n_days = 0;
    CHECK_THROWS_AS(generate_synthetic(spec, "/tmp/unused"), ConfigError);

    spec = small_spec();
    spec.regimes.clear();
    CHECK_THROWS_AS(generate_synthetic(spec, "/tmp/unused"), ConfigError);

    spec = small_spec();
    spec.p95_min = -2.0;
    CHECK_THROWS_AS(generate_synthetic(spec, "/tmp/unused"), ConfigError);

    spec = small_spec();
    spec.start_day += 777;  // not midnight
    CHECK_THROWS_AS(generate_synthetic(spec, "/tmp/unused"), ConfigError);

    CHECK_THROWS_AS(regime_from_name("drizzle"), ConfigError);
    CHECK(regime_from_name("static") == CloudRegime::Static);
    CHECK(regime_name(CloudRegime::Convection) == "convection");

    // A regular file in the way of a directory is an IO failure.
    testutil::TempDir tmp("synth-io");
    testutil::write_text(tmp.file("blocker"), "not a directory");
    CHECK_THROWS_AS(generate_synthetic(small_spec(), tmp.path() / "blocker"),
                    IoError);
}

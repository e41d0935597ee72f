#include "solarcast/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <system_error>

#include "json.hpp"
#include "solarcast/clearsky.hpp"
#include "solarcast/rng.hpp"

namespace solarcast {

namespace {

constexpr double kDegToRad = 0.017453292519943295;

struct Blob {
    double row = 0.0;
    double col = 0.0;
    double jitter = 0.0;  // convection growth phase offset, steps
};

std::vector<Blob> draw_blobs(const SyntheticSpec& spec, int day_index) {
    Rng rng{spec.seed, 0x626c6f62ULL, static_cast<std::uint64_t>(day_index)};
    std::vector<Blob> blobs(spec.n_blobs);
    for (Blob& b : blobs) {
        b.row = rng.uniform01() * spec.geometry.n_rows;
        b.col = rng.uniform01() * spec.geometry.n_cols;
        b.jitter = rng.uniform01() * 10.0;
    }
    return blobs;
}

double toroidal_delta(double a, double b, double period) {
    double d = std::fmod(a - b, period);
    if (d < -period / 2) d += period;
    if (d > period / 2) d -= period;
    return d;
}

// CSI texture for step k of the day. Blob centers drift with the configured
// flow; convection keeps them still and lets the amplitude ramp up instead.
GridField csi_texture(const SyntheticSpec& spec, CloudRegime regime,
                      const std::vector<Blob>& blobs, UnixTime t, int k) {
    GridField field = make_field(spec.geometry, t, GridKind::Csi, 1.0f);
    if (regime == CloudRegime::Clear) return field;

    const double rows = spec.geometry.n_rows;
    const double cols = spec.geometry.n_cols;
    const bool moving = regime == CloudRegime::Blobs;
    const double du = moving ? spec.flow_u * k : 0.0;
    const double dv = moving ? spec.flow_v * k : 0.0;
    const double two_sigma_sq = 2.0 * spec.blob_radius * spec.blob_radius;

    for (std::uint32_t i = 0; i < spec.geometry.n_rows; ++i) {
        for (std::uint32_t j = 0; j < spec.geometry.n_cols; ++j) {
            double deficit = 0.0;
            for (const Blob& b : blobs) {
                const double amp =
                    regime == CloudRegime::Convection
                        ? spec.blob_depth *
                              std::min(1.0, 0.1 + spec.convection_growth *
                                                      (k + b.jitter))
                        : spec.blob_depth;
                const double dr = toroidal_delta(i, b.row + dv, rows);
                const double dc = toroidal_delta(j, b.col + du, cols);
                deficit += amp * std::exp(-(dr * dr + dc * dc) / two_sigma_sq);
            }
            field.at(i, j) = static_cast<float>(
                std::clamp(1.05 - deficit, 0.05, 1.35));
        }
    }
    return field;
}

void ensure_directory(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) {
        throw IoError("cannot create directory " + dir.string());
    }
}

}  // namespace

std::string regime_name(CloudRegime regime) {
    switch (regime) {
        case CloudRegime::Clear: return "clear";
        case CloudRegime::Blobs: return "blobs";
        case CloudRegime::Convection: return "convection";
        case CloudRegime::Static: return "static";
    }
    return "unknown";
}

CloudRegime regime_from_name(const std::string& name) {
    if (name == "clear") return CloudRegime::Clear;
    if (name == "blobs") return CloudRegime::Blobs;
    if (name == "convection") return CloudRegime::Convection;
    if (name == "static") return CloudRegime::Static;
    throw ConfigError("unknown cloud regime '" + name + "'");
}

void SyntheticSpec::validate() const {
    geometry.validate();
    if (n_days < 1) throw ConfigError("n_days must be >= 1");
    if (regimes.empty()) throw ConfigError("regime mix must not be empty");
    if (n_stations < 1) throw ConfigError("n_stations must be >= 1");
    if (!(p95_min > 0.0) || p95_max < p95_min) {
        throw ConfigError("p95 range must satisfy 0 < p95_min <= p95_max");
    }
    if (power_noise < 0.0) throw ConfigError("power_noise must be >= 0");
    if (n_blobs < 1) throw ConfigError("n_blobs must be >= 1");
    if (!(blob_radius > 0.0)) throw ConfigError("blob_radius must be > 0");
    if (blob_depth < 0.0 || blob_depth > 1.0) {
        throw ConfigError("blob_depth must be in [0, 1]");
    }
    if (convection_growth < 0.0) {
        throw ConfigError("convection_growth must be >= 0");
    }
    if (day_start(start_day) != start_day) {
        throw ConfigError("start_day must be midnight UTC");
    }
}

CloudRegime regime_for_day(const SyntheticSpec& spec, int day_index) {
    return spec.regimes[static_cast<std::size_t>(day_index) %
                        spec.regimes.size()];
}

SyntheticDataset generate_synthetic(const SyntheticSpec& spec,
                                    const std::filesystem::path& out_root) {
    spec.validate();

    SyntheticDataset out;
    out.root = out_root;
    out.grids_dir = out_root / "grids";
    out.series_dir = out_root / "stations";
    out.registry_path = out.series_dir / "registry.csv";
    out.manifest_path = out_root / "manifest.json";
    ensure_directory(out.grids_dir);
    ensure_directory(out.series_dir);

    const double center_lon =
        spec.geometry.lon_min + 0.5 * spec.geometry.cell_size * spec.geometry.n_cols;
    const double center_lat =
        spec.geometry.lat_min + 0.5 * spec.geometry.cell_size * spec.geometry.n_rows;

    // Stations sit inside the central 70% of the grid so interpolation never
    // leaves the hull of pixel centers.
    out.stations.resize(spec.n_stations);
    for (int s = 0; s < spec.n_stations; ++s) {
        Rng rng{spec.seed, 0x73746174ULL, static_cast<std::uint64_t>(s)};
        Station& st = out.stations[s];
        char id[16];
        std::snprintf(id, sizeof(id), "S-%03d", s + 1);
        st.id = id;
        const double width = spec.geometry.cell_size * spec.geometry.n_cols;
        const double height = spec.geometry.cell_size * spec.geometry.n_rows;
        st.lon = spec.geometry.lon_min + (0.15 + 0.7 * rng.uniform01()) * width;
        st.lat = spec.geometry.lat_min + (0.15 + 0.7 * rng.uniform01()) * height;
        st.elevation = 300.0 + 1200.0 * rng.uniform01();
        st.p95 = spec.p95_min + (spec.p95_max - spec.p95_min) * rng.uniform01();
    }
    std::vector<Rng> noise_streams;
    noise_streams.reserve(out.stations.size());
    for (int s = 0; s < spec.n_stations; ++s) {
        noise_streams.emplace_back(
            Rng{spec.seed, 0x706f7772ULL, static_cast<std::uint64_t>(s)});
    }

    const ClearSkyParams cs_params;
    for (int day = 0; day < spec.n_days; ++day) {
        const UnixTime noon =
            spec.start_day + static_cast<UnixTime>(day) * 86400 + 43200;
        const auto [sunrise, sunset] =
            daylight_window(center_lat, center_lon, noon);
        const UnixTime first = ((sunrise + 899) / 900) * 900;
        const CloudRegime regime = regime_for_day(spec, day);
        const std::vector<Blob> blobs = draw_blobs(spec, day);

        int k = 0;
        for (UnixTime t = first; t <= sunset; t += 900, ++k) {
            const GridField csi = csi_texture(spec, regime, blobs, t, k);
            const GridField clear = clearsky_field(spec.geometry, t, cs_params);
            const GridField ssi = csi_to_ssi(csi, clear);

            const std::string stamp = format_compact(t);
            write_grid(csi, (out.grids_dir / ("csi_" + stamp + ".sgf")).string());
            write_grid(ssi, (out.grids_dir / ("ssi_" + stamp + ".sgf")).string());
            out.timestamps.push_back(t);

            for (int s = 0; s < spec.n_stations; ++s) {
                Station& st = out.stations[s];
                const auto csi_here = interpolate_point(csi, st.lon, st.lat);
                if (!csi_here) continue;  // unreachable: stations sit inside
                const double sza = solar_position(st.lat, st.lon, t).zenith;
                const double curve =
                    std::clamp(*csi_here * std::cos(sza * kDegToRad), 0.0, 1.0);
                double kw = st.p95 * curve;
                if (spec.power_noise > 0.0) {
                    kw += spec.power_noise * st.p95 * noise_streams[s].normal();
                }
                st.series.emplace_back(t, kw);
            }
        }
    }

    save_station_registry(out.stations, out.registry_path);
    for (const Station& st : out.stations) {
        save_power_series(st.series, out.series_dir / (st.id + ".csv"));
    }

    nlohmann::json manifest;
    manifest["format"] = "solarcast-synth-1";
    manifest["seed"] = spec.seed;
    manifest["start_day"] = spec.start_day;
    manifest["start_day_iso"] = format_iso(spec.start_day);
    manifest["n_days"] = spec.n_days;
    manifest["geometry"] = {{"lon_min", spec.geometry.lon_min},
                            {"lat_min", spec.geometry.lat_min},
                            {"cell_size", spec.geometry.cell_size},
                            {"n_cols", spec.geometry.n_cols},
                            {"n_rows", spec.geometry.n_rows}};
    nlohmann::json regimes = nlohmann::json::array();
    for (CloudRegime r : spec.regimes) regimes.push_back(regime_name(r));
    manifest["regimes"] = std::move(regimes);
    nlohmann::json schedule = nlohmann::json::array();
    for (int day = 0; day < spec.n_days; ++day) {
        schedule.push_back(regime_name(regime_for_day(spec, day)));
    }
    manifest["regime_schedule"] = std::move(schedule);
    manifest["n_stations"] = spec.n_stations;
    manifest["p95_min"] = spec.p95_min;
    manifest["p95_max"] = spec.p95_max;
    manifest["power_noise"] = spec.power_noise;
    manifest["flow_u"] = spec.flow_u;
    manifest["flow_v"] = spec.flow_v;
    manifest["n_blobs"] = spec.n_blobs;
    manifest["blob_depth"] = spec.blob_depth;
    manifest["blob_radius"] = spec.blob_radius;
    manifest["convection_growth"] = spec.convection_growth;
    manifest["n_grid_timestamps"] = out.timestamps.size();
    if (!out.timestamps.empty()) {
        manifest["first_timestamp"] = format_iso(out.timestamps.front());
        manifest["last_timestamp"] = format_iso(out.timestamps.back());
    }

    std::ofstream mf(out.manifest_path);
    if (!mf) throw IoError("cannot write manifest " + out.manifest_path.string());
    mf << manifest.dump(2) << '\n';
    if (!mf) throw IoError("short write to " + out.manifest_path.string());
    return out;
}

}  // namespace solarcast

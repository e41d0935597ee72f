#include "solarcast/app.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iostream>
#include <limits>
#include <mutex>
#include <optional>
#include <set>
#include <system_error>
#include <thread>
#include <unordered_map>

#include <json.hpp>

#include "solarcast/clearsky.hpp"
#include "solarcast/rng.hpp"

namespace solarcast {

namespace fs = std::filesystem;

namespace {

std::mutex g_log_mutex;

// All run-time diagnostics go to stderr through one lock so interleaved
// workers stay line-atomic. Nothing under output_dir depends on them.
void log_line(const std::string& msg) {
    std::lock_guard<std::mutex> lock(g_log_mutex);
    std::cerr << msg << '\n';
}

std::string fmt_double(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

std::string csv_quote(const std::string& s) {
    std::string out;
    out.reserve(s.size() + 2);
    out += '"';
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

std::string trim(const std::string& s) {
    const std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

double parse_double_value(const std::string& s, const std::string& key) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size())
        throw ConfigError("config key '" + key + "': bad number '" + s + "'");
    return v;
}

long long parse_int_value(const std::string& s, const std::string& key) {
    long long v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size())
        throw ConfigError("config key '" + key + "': bad integer '" + s + "'");
    return v;
}

std::uint64_t parse_u64_value(const std::string& s, const std::string& key) {
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size())
        throw ConfigError("config key '" + key + "': bad integer '" + s + "'");
    return v;
}

bool parse_bool_value(const std::string& s, const std::string& key) {
    if (s == "true") return true;
    if (s == "false") return false;
    throw ConfigError("config key '" + key + "': expected true or false, got '" +
                      s + "'");
}

int parse_csv_int(const std::string& s, const fs::path& path, int line_no) {
    int v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size())
        throw FormatError(path.string() + " line " + std::to_string(line_no) +
                          ": bad integer '" + s + "'");
    return v;
}

double parse_csv_double(const std::string& s, const fs::path& path,
                        int line_no) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size())
        throw FormatError(path.string() + " line " + std::to_string(line_no) +
                          ": bad number '" + s + "'");
    return v;
}

// Strict inverse of format_compact: "20190615T1200Z" and nothing else.
std::optional<UnixTime> parse_compact(const std::string& stamp) {
    if (stamp.size() != 14 || stamp[8] != 'T' || stamp[13] != 'Z')
        return std::nullopt;
    const auto digits = [&](int pos, int len) -> int {
        int v = 0;
        for (int i = pos; i < pos + len; ++i) {
            if (stamp[i] < '0' || stamp[i] > '9') return -1;
            v = v * 10 + (stamp[i] - '0');
        }
        return v;
    };
    CivilDateTime c;
    c.year = digits(0, 4);
    c.month = digits(4, 2);
    c.day = digits(6, 2);
    c.hour = digits(9, 2);
    c.minute = digits(11, 2);
    if (c.month < 1 || c.month > 12 || c.day < 1 || c.day > 31 || c.hour < 0 ||
        c.hour > 23 || c.minute < 0 || c.minute > 59)
        return std::nullopt;
    const UnixTime t = to_unix(c);
    if (format_compact(t) != stamp) return std::nullopt;
    return t;
}

// Grid files named <prefix>_<compact-stamp>.sgf, keyed by timestamp.
// Anything else in the directory is ignored.
std::map<UnixTime, fs::path> index_grids(const fs::path& dir,
                                         const std::string& prefix) {
    std::map<UnixTime, fs::path> out;
    if (dir.empty() || !fs::is_directory(dir)) return out;
    const std::string head = prefix + "_";
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string name = entry.path().filename().string();
        if (name.size() != head.size() + 18) continue;
        if (name.compare(0, head.size(), head) != 0) continue;
        if (name.compare(name.size() - 4, 4, ".sgf") != 0) continue;
        if (const auto t = parse_compact(name.substr(head.size(), 14)))
            out[*t] = entry.path();
    }
    return out;
}

void ensure_directory(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::vector<fs::path> forecast_set_dirs(const fs::path& parent) {
    std::vector<fs::path> out;
    if (!fs::is_directory(parent)) return out;
    for (const auto& entry : fs::directory_iterator(parent))
        if (entry.is_directory() && fs::exists(entry.path() / "manifest.json"))
            out.push_back(entry.path());
    std::sort(out.begin(), out.end());
    return out;
}

int resolved_workers(const RunConfig& config) {
    if (config.workers > 0) return config.workers;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}

// Runs fn(0..n-1) across up to `workers` threads. Tasks are expected to do
// their own error handling; anything that still escapes is rethrown on the
// calling thread after the pool drains.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
    if (n == 0) return;
    const std::size_t n_threads =
        std::min<std::size_t>(std::max(workers, 1), n);
    if (n_threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(n_threads);
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (std::size_t w = 0; w < n_threads; ++w)
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i; (i = next.fetch_add(1)) < n;) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
                next.store(n);
            }
        });
    for (auto& th : pool) th.join();
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
}

// (lat, lon) of the domain center, for daylight-window decisions.
std::pair<double, double> grid_center(const GridGeometry& g) {
    return {g.lat_min + 0.5 * g.cell_size * g.n_rows,
            g.lon_min + 0.5 * g.cell_size * g.n_cols};
}

std::string tod_stratum(double lat, double lon, UnixTime issue) {
    try {
        const auto [rise, set] = daylight_window(lat, lon, issue);
        if (set <= rise) return "";
        const double x =
            static_cast<double>(issue - rise) / static_cast<double>(set - rise);
        if (x < 1.0 / 3.0) return "tod:morning";
        if (x < 2.0 / 3.0) return "tod:midday";
        return "tod:afternoon";
    } catch (const PolarConditionError&) {
        return "";
    }
}

std::string elevation_stratum(double elevation_m) {
    if (elevation_m < 500.0) return "elev:lt500";
    if (elevation_m < 1000.0) return "elev:500to1000";
    return "elev:ge1000";
}

struct PowerManifest {
    std::string model;
    UnixTime issue = 0;
    std::int64_t step = 900;
    int n_leads = 0;
    int n_members = 0;
};

PowerManifest read_power_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("bad manifest " + path.string() + ": " + e.what());
    }
    PowerManifest m;
    try {
        m.model = j.at("model").get<std::string>();
        m.issue = j.at("issue_time").get<std::int64_t>();
        m.step = j.at("step_seconds").get<std::int64_t>();
        m.n_leads = j.at("n_leads").get<int>();
        m.n_members = j.at("n_members").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("bad manifest " + path.string() + ": " + e.what());
    }
    if (m.step <= 0 || m.n_leads < 1 || m.n_members < 1)
        throw FormatError("bad manifest " + path.string() +
                          ": non-positive dimensions");
    return m;
}

// predictions.csv rows keyed (lead, station); the vector holds one optional
// per member, nullopt where the written field was empty.
using PredictionRows =
    std::map<std::pair<int, std::string>, std::vector<std::optional<double>>>;

PredictionRows read_predictions(const fs::path& path, const PowerManifest& m) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    std::string line;
    if (!std::getline(in, line) ||
        trim(line) != "station,lead_min,member,power_kw")
        throw FormatError(path.string() + ": bad header");
    PredictionRows rows;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string text = trim(line);
        if (text.empty()) continue;
        std::array<std::string, 4> f;
        std::size_t start = 0;
        int n = 0;
        for (std::size_t pos = 0; pos <= text.size(); ++pos) {
            if (pos == text.size() || text[pos] == ',') {
                if (n >= 4)
                    throw FormatError(path.string() + " line " +
                                      std::to_string(line_no) +
                                      ": expected 4 fields");
                f[n++] = text.substr(start, pos - start);
                start = pos + 1;
            }
        }
        if (n != 4)
            throw FormatError(path.string() + " line " + std::to_string(line_no) +
                              ": expected 4 fields");
        const int lead_min = parse_csv_int(f[1], path, line_no);
        const int member = parse_csv_int(f[2], path, line_no);
        if (static_cast<std::int64_t>(lead_min) * 60 % m.step != 0)
            throw FormatError(path.string() + " line " + std::to_string(line_no) +
                              ": lead " + f[1] + " min is not a multiple of the step");
        const int lead =
            static_cast<int>(static_cast<std::int64_t>(lead_min) * 60 / m.step);
        if (lead < 1 || lead > m.n_leads || member < 0 || member >= m.n_members)
            throw FormatError(path.string() + " line " + std::to_string(line_no) +
                              ": lead/member outside the manifest dimensions");
        auto& slot = rows[{lead, f[0]}];
        if (slot.empty()) slot.resize(m.n_members);
        if (!f[3].empty()) slot[member] = parse_csv_double(f[3], path, line_no);
    }
    return rows;
}

}  // namespace

void RunConfig::validate() const {
    static const std::set<std::string> kModels = {"persistence", "solarsteps",
                                                  "solarsteps-pa", "external"};
    if (!kModels.count(model)) throw ConfigError("unknown model '" + model + "'");
    if (!(alpha > 0.0 && alpha < 1.0))
        throw ConfigError("alpha must lie in (0, 1)");
    if (workers < 0) throw ConfigError("workers must be >= 0");
    nowcast.validate();
    if (nowcast.perturbation.sigma_speed < 0.0 ||
        nowcast.perturbation.sigma_angle < 0.0)
        throw ConfigError("perturbation sigmas must be >= 0");
    const auto require_exists = [](const fs::path& p, const char* key) {
        if (!p.empty() && !fs::exists(p))
            throw ConfigError(std::string(key) + " does not exist: " + p.string());
    };
    require_exists(grids_dir, "grids_dir");
    require_exists(registry, "registry");
    require_exists(series_dir, "series_dir");
}

RunConfig RunConfig::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config " + path.string());
    RunConfig config;
    std::set<std::string> seen;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string text = trim(line);
        if (text.empty() || text[0] == '#') continue;
        const std::size_t eq = text.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) +
                              " is not 'key = value': " + text);
        const std::string key = trim(text.substr(0, eq));
        const std::string value = trim(text.substr(eq + 1));
        if (!seen.insert(key).second)
            throw ConfigError("duplicate config key '" + key + "' at line " +
                              std::to_string(line_no));
        if (key == "grids_dir") {
            config.grids_dir = value;
        } else if (key == "registry") {
            config.registry = value;
        } else if (key == "series_dir") {
            config.series_dir = value;
        } else if (key == "output_dir") {
            config.output_dir = value;
        } else if (key == "model") {
            config.model = value;
        } else if (key == "alpha") {
            config.alpha = parse_double_value(value, key);
        } else if (key == "seed") {
            config.seed = parse_u64_value(value, key);
        } else if (key == "workers") {
            config.workers = static_cast<int>(parse_int_value(value, key));
        } else if (key == "n_levels") {
            config.nowcast.n_levels = static_cast<int>(parse_int_value(value, key));
        } else if (key == "n_members") {
            config.nowcast.n_members =
                static_cast<int>(parse_int_value(value, key));
        } else if (key == "n_leads") {
            config.nowcast.n_leads = static_cast<int>(parse_int_value(value, key));
        } else if (key == "csi_clip") {
            config.nowcast.csi_clip =
                static_cast<float>(parse_double_value(value, key));
        } else if (key == "noise_enabled") {
            config.nowcast.noise_enabled = parse_bool_value(value, key);
        } else if (key == "sigma_speed") {
            config.nowcast.perturbation.sigma_speed =
                parse_double_value(value, key);
        } else if (key == "sigma_angle") {
            config.nowcast.perturbation.sigma_angle =
                parse_double_value(value, key);
        } else {
            throw ConfigError("unknown config key '" + key + "' at line " +
                              std::to_string(line_no));
        }
    }
    if (const char* env = std::getenv("SOLARCAST_OUTPUT_ROOT"); env && *env)
        config.output_dir = env;
    config.validate();
    return config;
}

void RunConfig::save(const fs::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write config " + path.string());
    out << "grids_dir = " << grids_dir.string() << "\n";
    out << "registry = " << registry.string() << "\n";
    out << "series_dir = " << series_dir.string() << "\n";
    out << "output_dir = " << output_dir.string() << "\n";
    out << "model = " << model << "\n";
    out << "alpha = " << fmt_double(alpha) << "\n";
    out << "seed = " << seed << "\n";
    out << "workers = " << workers << "\n";
    out << "n_levels = " << nowcast.n_levels << "\n";
    out << "n_members = " << nowcast.n_members << "\n";
    out << "n_leads = " << nowcast.n_leads << "\n";
    out << "csi_clip = " << fmt_double(nowcast.csi_clip) << "\n";
    out << "noise_enabled = " << (nowcast.noise_enabled ? "true" : "false")
        << "\n";
    out << "sigma_speed = " << fmt_double(nowcast.perturbation.sigma_speed)
        << "\n";
    out << "sigma_angle = " << fmt_double(nowcast.perturbation.sigma_angle)
        << "\n";
    if (!out) throw IoError("cannot write config " + path.string());
}

std::vector<UnixTime> issue_hours(double lat, double lon, UnixTime day) {
    std::pair<UnixTime, UnixTime> window;
    try {
        window = daylight_window(lat, lon, day_start(day) + 43200);
    } catch (const PolarConditionError&) {
        return {};  // polar night or midnight sun: no admissible hours
    }
    const UnixTime open = window.first + 3600;
    const UnixTime close = window.second - 10800;
    std::vector<UnixTime> hours;
    for (UnixTime t = (open + 3599) / 3600 * 3600; t <= close; t += 3600)
        hours.push_back(t);
    return hours;
}

std::string season_of(UnixTime t) {
    const int month = from_unix(t).month;
    if (month >= 3 && month <= 5) return "MAM";
    if (month >= 6 && month <= 8) return "JJA";
    if (month >= 9 && month <= 11) return "SON";
    return "DJF";
}

NowcastResult run_nowcast(const RunConfig& config,
                          const std::vector<UnixTime>& requested) {
    config.validate();
    if (config.model == "external")
        throw ConfigError("model 'external' is evaluate-only; it cannot be run");
    if (config.grids_dir.empty() || config.output_dir.empty())
        throw ConfigError("nowcast requires grids_dir and output_dir");

    NowcastResult result;
    const auto csi = index_grids(config.grids_dir, "csi");
    if (csi.empty()) {
        const std::string reason =
            "no CSI grids under " + config.grids_dir.string();
        result.skipped.push_back({0, reason});
        log_line("nowcast: " + reason);
        return result;
    }
    const GridField probe = read_grid(csi.begin()->second.string());
    const auto [lat_c, lon_c] = grid_center(probe.geometry);

    std::vector<UnixTime> candidates = requested;
    std::set<UnixTime> days;
    if (candidates.empty())
        for (const auto& [t, path] : csi) days.insert(day_start(t));
    else
        for (const UnixTime t : candidates) days.insert(day_start(t));

    std::map<UnixTime, std::set<UnixTime>> allowed;
    for (const UnixTime day : days) {
        const auto hours = issue_hours(lat_c, lon_c, day);
        allowed.emplace(day, std::set<UnixTime>(hours.begin(), hours.end()));
    }
    if (candidates.empty())
        for (const auto& [day, hours] : allowed)
            candidates.insert(candidates.end(), hours.begin(), hours.end());
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()),
                     candidates.end());
    if (candidates.empty()) {
        const std::string reason = "no admissible issue hours";
        result.skipped.push_back({0, reason});
        log_line("nowcast: " + reason);
        return result;
    }

    std::vector<std::optional<SkipRecord>> skips(candidates.size());
    std::vector<std::uint8_t> issued(candidates.size(), 0);
    parallel_for(candidates.size(), resolved_workers(config),
                 [&](std::size_t i) {
        const UnixTime t = candidates[i];
        const auto skip = [&](const std::string& reason) {
            skips[i] = SkipRecord{t, reason};
            log_line("nowcast: skipping " + format_iso(t) + ": " + reason);
        };
        if (!allowed.at(day_start(t)).count(t)) {
            skip("outside the issue window (full hours in "
                 "[sunrise+1h, sunset-3h])");
            return;
        }
        try {
            std::vector<GridField> inputs;
            inputs.reserve(4);
            for (int k = 3; k >= 0; --k) {
                const UnixTime ts = t - 900 * k;
                const auto it = csi.find(ts);
                if (it == csi.end()) {
                    skip("missing input grid " + format_iso(ts));
                    return;
                }
                inputs.push_back(read_grid(it->second.string()));
            }
            const FieldSequence seq = make_sequence(std::move(inputs));
            NowcastConfig nc = config.nowcast;
            nc.seed = Rng::splitmix(config.seed ^ static_cast<std::uint64_t>(t));
            ForecastSet set;
            if (config.model == "persistence")
                set = persistence_forecast(seq, nc.n_leads);
            else if (config.model == "solarsteps")
                set = solarsteps_forecast(seq, nc);
            else
                set = solarsteps_pa_forecast(seq, nc);
            save_forecast(set,
                          config.forecasts_dir() / config.model / format_compact(t));
            issued[i] = 1;
        } catch (const Error& e) {
            skip(e.what());
        }
    });
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (issued[i])
            result.issued.push_back(candidates[i]);
        else if (skips[i])
            result.skipped.push_back(*skips[i]);
    }
    log_line("nowcast: issued " + std::to_string(result.issued.size()) +
             " forecast set(s), skipped " + std::to_string(result.skipped.size()));
    return result;
}

TrainResult run_train_power(const RunConfig& config,
                            const TrainOptions& options) {
    config.validate();
    if (config.grids_dir.empty() || config.registry.empty() ||
        config.series_dir.empty() || config.output_dir.empty())
        throw ConfigError(
            "train-power requires grids_dir, registry, series_dir and "
            "output_dir");

    TrainResult result;
    const auto registry = load_station_registry(config.registry);
    std::vector<Station> fleet;
    fleet.reserve(registry.size());
    for (Station st : registry) {
        const fs::path series_path = config.series_dir / (st.id + ".csv");
        if (!fs::exists(series_path)) {
            result.rejected.push_back(
                {st.id, "missing series file " + series_path.filename().string()});
            continue;
        }
        st.series = load_power_series(series_path);
        fleet.push_back(std::move(st));
    }
    {
        auto [kept, rejected] = clean_fleet(fleet);
        fleet = std::move(kept);
        for (auto& r : rejected) result.rejected.push_back(std::move(r));
    }

    const auto ssi_index = index_grids(config.grids_dir, "ssi");
    if (ssi_index.empty())
        throw InsufficientDataError("no SSI grids under " +
                                    config.grids_dir.string());
    {
        const GridField probe = read_grid(ssi_index.begin()->second.string());
        const GridGeometry& g = probe.geometry;
        std::vector<Station> inside;
        inside.reserve(fleet.size());
        for (auto& st : fleet) {
            const double x = (st.lon - g.lon_min) / g.cell_size - 0.5;
            const double y = (st.lat - g.lat_min) / g.cell_size - 0.5;
            if (x >= 0.0 && x <= static_cast<double>(g.n_cols) - 1.0 &&
                y >= 0.0 && y <= static_cast<double>(g.n_rows) - 1.0)
                inside.push_back(std::move(st));
            else
                result.rejected.push_back(
                    {st.id, "outside the grid's pixel-center hull"});
        }
        fleet = std::move(inside);
    }

    // One pass over the grids, sampling every station per field.
    std::vector<PowerSeries> ssi_series(fleet.size());
    for (auto& s : ssi_series) s.reserve(ssi_index.size());
    for (const auto& [t, path] : ssi_index) {
        const GridField f = read_grid(path.string());
        for (std::size_t i = 0; i < fleet.size(); ++i) {
            const auto v = interpolate_point(f, fleet[i].lon, fleet[i].lat);
            ssi_series[i].emplace_back(
                t, v.value_or(std::numeric_limits<double>::quiet_NaN()));
        }
    }

    const SplitPlan plan = SplitPlan::starting(ssi_index.begin()->first);
    TrainOptions opts = options;
    opts.seed = config.seed;
    ensure_directory(config.models_dir());

    struct Outcome {
        bool trained = false;
        double nrmse = std::numeric_limits<double>::quiet_NaN();
        std::uint64_t n_train = 0;
        std::uint64_t n_val = 0;
        std::string reason;
    };
    std::vector<Outcome> outcomes(fleet.size());
    parallel_for(fleet.size(), resolved_workers(config), [&](std::size_t i) {
        Outcome& out = outcomes[i];
        try {
            const StationModel model =
                train_station_model(fleet[i], ssi_series[i], plan, opts);
            save_station_model(model, config.models_dir() / (fleet[i].id + ".json"));
            std::unordered_map<UnixTime, double> ssi_at;
            ssi_at.reserve(ssi_series[i].size());
            for (const auto& [t, v] : ssi_series[i]) ssi_at.emplace(t, v);
            KahanSum sq;
            for (const auto& [t, kw] : fleet[i].series) {
                if (!std::isfinite(kw)) continue;
                const auto it = ssi_at.find(t);
                if (it == ssi_at.end()) continue;
                if (!std::isfinite(it->second) || it->second < 0.0) continue;
                if (!(solar_position(fleet[i].lat, fleet[i].lon, t).elevation >
                      0.0))
                    continue;
                const SplitLabel label = plan.label(t);
                if (label == SplitLabel::Train) {
                    ++out.n_train;
                    continue;
                }
                if (label != SplitLabel::Val) continue;
                const auto pred = model.predict_kw(it->second, t);
                if (!pred) continue;
                sq.add((*pred - kw) * (*pred - kw));
                ++out.n_val;
            }
            out.trained = true;
            if (out.n_val > 0)
                out.nrmse =
                    std::sqrt(sq.value() / static_cast<double>(out.n_val)) /
                    model.p95;
        } catch (const Error& e) {
            out.reason = e.what();
            log_line("train-power: station " + fleet[i].id + " rejected: " +
                     e.what());
        }
    });
    for (std::size_t i = 0; i < fleet.size(); ++i) {
        if (outcomes[i].trained) {
            result.trained.push_back(fleet[i].id);
            result.val_nrmse[fleet[i].id] = outcomes[i].nrmse;
        } else {
            result.rejected.push_back({fleet[i].id, outcomes[i].reason});
        }
    }
    std::sort(result.rejected.begin(), result.rejected.end(),
              [](const RejectedStation& a, const RejectedStation& b) {
                  return a.id < b.id;
              });

    result.report_path = config.models_dir() / "training_report.csv";
    {
        std::ofstream rep(result.report_path);
        if (!rep) throw IoError("cannot write " + result.report_path.string());
        rep << "station,val_nrmse,n_train,n_val\n";
        for (std::size_t i = 0; i < fleet.size(); ++i) {
            if (!outcomes[i].trained) continue;
            rep << fleet[i].id << ',' << fmt_double(outcomes[i].nrmse) << ','
                << outcomes[i].n_train << ',' << outcomes[i].n_val << "\n";
        }
        if (!rep) throw IoError("cannot write " + result.report_path.string());
    }
    result.rejected_path = config.models_dir() / "rejected.csv";
    {
        std::ofstream rej(result.rejected_path);
        if (!rej) throw IoError("cannot write " + result.rejected_path.string());
        rej << "station,reason\n";
        for (const auto& r : result.rejected)
            rej << r.id << ',' << csv_quote(r.reason) << "\n";
        if (!rej) throw IoError("cannot write " + result.rejected_path.string());
    }
    log_line("train-power: trained " + std::to_string(result.trained.size()) +
             " station(s), rejected " + std::to_string(result.rejected.size()));
    return result;
}

PredictResult run_predict_power(const RunConfig& config) {
    config.validate();
    if (config.registry.empty() || config.output_dir.empty())
        throw ConfigError("predict-power requires registry and output_dir");

    PredictResult result;
    const fs::path fdir = config.forecasts_dir() / config.model;
    const std::vector<fs::path> sets = forecast_set_dirs(fdir);
    if (sets.empty()) {
        log_line("predict-power: no forecast sets under " + fdir.string());
        return result;
    }

    const auto registry = load_station_registry(config.registry);
    std::vector<std::pair<Station, StationModel>> stations;
    for (const Station& st : registry) {
        const fs::path mp = config.models_dir() / (st.id + ".json");
        if (!fs::exists(mp)) continue;
        stations.emplace_back(st, load_station_model(mp));
    }
    if (stations.empty())
        throw ConfigError("no trained station models under " +
                          config.models_dir().string());
    for (const auto& [st, model] : stations) result.stations.push_back(st.id);

    std::vector<std::optional<SkipRecord>> skips(sets.size());
    std::vector<std::uint8_t> done(sets.size(), 0);
    parallel_for(sets.size(), resolved_workers(config), [&](std::size_t i) {
        try {
            ForecastSet set = load_forecast(sets[i]);
            // Power features want SSI; CSI members are rescaled by the
            // valid-time clear-sky field, one field per lead.
            for (auto& lead_row : set.fields) {
                if (lead_row.empty() || lead_row.front().kind == GridKind::Ssi)
                    continue;
                if (lead_row.front().kind != GridKind::Csi)
                    throw FormatError("forecast fields must be CSI or SSI");
                const GridField clear =
                    clearsky_field(set.geometry, lead_row.front().timestamp, {});
                for (auto& member : lead_row) member = csi_to_ssi(member, clear);
            }
            std::vector<StationPrediction> preds;
            preds.reserve(stations.size());
            for (const auto& [st, model] : stations) {
                try {
                    preds.push_back(predict_power(model, set, st));
                } catch (const OutOfDomainError&) {
                    StationPrediction empty;
                    empty.station_id = st.id;
                    empty.kw.assign(
                        set.n_leads(),
                        std::vector<std::optional<double>>(set.n_members()));
                    preds.push_back(std::move(empty));
                }
            }

            const fs::path out_dir =
                config.power_dir() / config.model / sets[i].filename();
            ensure_directory(out_dir);
            const fs::path csv_path = out_dir / "predictions.csv";
            std::ofstream csv(csv_path);
            if (!csv) throw IoError("cannot write " + csv_path.string());
            csv << "station,lead_min,member,power_kw\n";
            for (std::size_t s = 0; s < stations.size(); ++s)
                for (int lead = 1; lead <= set.n_leads(); ++lead)
                    for (int e = 0; e < set.n_members(); ++e) {
                        csv << stations[s].first.id << ','
                            << lead * set.step / 60 << ',' << e << ',';
                        if (const auto& kw = preds[s].kw[lead - 1][e])
                            csv << fmt_double(*kw);
                        csv << "\n";
                    }
            if (!csv) throw IoError("cannot write " + csv_path.string());

            nlohmann::json manifest;
            manifest["model"] = set.model;
            manifest["issue_time"] = set.issue_time;
            manifest["issue_time_iso"] = format_iso(set.issue_time);
            manifest["step_seconds"] = set.step;
            manifest["n_leads"] = set.n_leads();
            manifest["n_members"] = set.n_members();
            manifest["n_stations"] = stations.size();
            std::ofstream mj(out_dir / "manifest.json");
            if (!mj)
                throw IoError("cannot write " +
                              (out_dir / "manifest.json").string());
            mj << manifest.dump(2) << "\n";
            done[i] = 1;
        } catch (const Error& e) {
            skips[i] = SkipRecord{0, sets[i].filename().string() + ": " + e.what()};
            log_line("predict-power: skipping " + sets[i].filename().string() +
                     ": " + e.what());
        }
    });
    for (std::size_t i = 0; i < sets.size(); ++i) {
        if (done[i])
            ++result.n_forecast_sets;
        else if (skips[i])
            result.skipped.push_back(*skips[i]);
    }
    log_line("predict-power: converted " +
             std::to_string(result.n_forecast_sets) + " forecast set(s) for " +
             std::to_string(stations.size()) + " station(s)");
    return result;
}

EvaluateResult run_evaluate(const RunConfig& config) {
    config.validate();
    if (config.output_dir.empty()) throw ConfigError("evaluate requires output_dir");

    EvaluateResult result;
    const int workers = resolved_workers(config);
    const auto ssi_index = index_grids(config.grids_dir, "ssi");
    const auto csi_index = index_grids(config.grids_dir, "csi");

    RegimeLabels regimes;
    bool have_regimes = false;
    if (!csi_index.empty()) {
        std::vector<GridField> fields;
        fields.reserve(csi_index.size());
        for (const auto& [t, path] : csi_index)
            fields.push_back(read_grid(path.string()));
        try {
            regimes = classify_regimes(fields);
            have_regimes = true;
        } catch (const InsufficientDataError& e) {
            log_line(std::string("evaluate: regime strata disabled: ") + e.what());
        }
    }

    std::optional<std::pair<double, double>> center;  // (lat, lon)
    if (!ssi_index.empty())
        center = grid_center(read_grid(ssi_index.begin()->second.string()).geometry);
    else if (!csi_index.empty())
        center = grid_center(read_grid(csi_index.begin()->second.string()).geometry);

    const auto issue_strata = [&](UnixTime issue) {
        std::vector<std::string> strata{"all"};
        if (center) {
            const std::string tod = tod_stratum(center->first, center->second, issue);
            if (!tod.empty()) strata.push_back(tod);
        }
        if (have_regimes) {
            const auto it = regimes.days.find(day_start(issue));
            if (it != regimes.days.end()) {
                if (it->second.cloudy) strata.push_back("regime:cloudy");
                if (it->second.sunny) strata.push_back("regime:sunny");
                if (it->second.lowvar) strata.push_back("regime:lowvar");
                if (it->second.highvar) strata.push_back("regime:highvar");
            }
        }
        return strata;
    };

    using RankKey = std::pair<std::string, int>;
    ScoreTable ssi_table;
    std::map<RankKey, std::vector<EnsembleSample>> ssi_ranks;
    std::size_t n_ssi = 0;

    const std::vector<fs::path> sets =
        forecast_set_dirs(config.forecasts_dir() / config.model);
    {
        struct Shard {
            ScoreTable table;
            std::map<RankKey, std::vector<EnsembleSample>> ranks;
            std::size_t n = 0;
        };
        std::vector<Shard> shards(sets.size());
        parallel_for(sets.size(), workers, [&](std::size_t i) {
            try {
                const ForecastSet set = load_forecast(sets[i]);
                Shard& shard = shards[i];
                const auto strata = issue_strata(set.issue_time);
                for (int lead = 1; lead <= set.n_leads(); ++lead) {
                    const UnixTime valid = set.at(lead, 0).timestamp;
                    const int lead_min =
                        static_cast<int>(lead * set.step / 60);
                    GridField obs;
                    if (config.model == "external") {
                        // Hourly-mean forecasts verify against the hourly mean
                        // of the native grids, block-aggregated to their cell.
                        std::vector<GridField> parts;
                        parts.reserve(4);
                        bool complete = true;
                        for (int k = 3; k >= 0; --k) {
                            const auto it = ssi_index.find(valid - 900 * k);
                            if (it == ssi_index.end()) {
                                complete = false;
                                break;
                            }
                            parts.push_back(read_grid(it->second.string()));
                        }
                        if (!complete) continue;
                        const GridField mean =
                            hourly_average(make_sequence(std::move(parts)), valid);
                        const long factor = std::lround(set.geometry.cell_size /
                                                        mean.geometry.cell_size);
                        if (factor < 1)
                            throw DimensionError(
                                "forecast grid is finer than the observations");
                        obs = factor == 1
                                  ? mean
                                  : downsample(mean, static_cast<unsigned>(factor));
                    } else {
                        const auto it = ssi_index.find(valid);
                        if (it == ssi_index.end()) continue;
                        obs = read_grid(it->second.string());
                    }
                    if (!(obs.geometry == set.geometry))
                        throw DimensionError(
                            "observation geometry disagrees with the forecast");

                    std::vector<GridField> members;
                    members.reserve(set.n_members());
                    GridField clear;
                    if (set.at(lead, 0).kind == GridKind::Csi)
                        clear = clearsky_field(set.geometry, valid, {});
                    for (int e = 0; e < set.n_members(); ++e) {
                        const GridField& f = set.at(lead, e);
                        if (f.kind == GridKind::Ssi)
                            members.push_back(f);
                        else if (f.kind == GridKind::Csi)
                            members.push_back(csi_to_ssi(f, clear));
                        else
                            throw FormatError("forecast fields must be CSI or SSI");
                    }

                    const std::size_t n_px = obs.values.size();
                    // Rank histograms subsample pixels deterministically to
                    // bound memory; the score table sees every pixel.
                    const std::size_t stride = std::max<std::size_t>(1, n_px / 512);
                    std::vector<double> sample_members(set.n_members());
                    std::size_t eligible = 0;
                    for (std::size_t px = 0; px < n_px; ++px) {
                        const float o = obs.values[px];
                        if (!std::isfinite(o)) continue;
                        bool all = true;
                        for (int e = 0; e < set.n_members(); ++e) {
                            const float v = members[e].values[px];
                            if (!std::isfinite(v)) {
                                all = false;
                                break;
                            }
                            sample_members[e] = v;
                        }
                        if (!all) continue;
                        const EnsembleSample sample =
                            make_sample(sample_members, o, 1.0);
                        for (const auto& st : strata)
                            shard.table.add(set.model, lead_min, st, sample,
                                            config.alpha);
                        if (eligible % stride == 0)
                            shard.ranks[{set.model, lead_min}].push_back(sample);
                        ++eligible;
                        ++shard.n;
                    }
                }
            } catch (const Error& e) {
                log_line("evaluate: skipping " + sets[i].filename().string() +
                         ": " + e.what());
            }
        });
        for (auto& shard : shards) {
            ssi_table.merge(shard.table);
            for (auto& [key, pool] : shard.ranks) {
                auto& dst = ssi_ranks[key];
                dst.insert(dst.end(), pool.begin(), pool.end());
            }
            n_ssi += shard.n;
        }
    }

    ScoreTable power_table;
    std::map<RankKey, std::vector<EnsembleSample>> power_ranks;
    std::size_t n_power = 0;

    const std::vector<fs::path> pdirs =
        forecast_set_dirs(config.power_dir() / config.model);
    if (!pdirs.empty()) {
        if (config.registry.empty() || config.series_dir.empty())
            throw ConfigError("power evaluation requires registry and series_dir");
        struct StationRef {
            double p95 = 0.0;
            std::string elev;
            std::unordered_map<UnixTime, double> measured;
        };
        std::map<std::string, StationRef> meta;
        for (const Station& st : load_station_registry(config.registry)) {
            const fs::path mp = config.models_dir() / (st.id + ".json");
            const fs::path sp = config.series_dir / (st.id + ".csv");
            if (!fs::exists(mp) || !fs::exists(sp)) continue;
            StationRef ref;
            ref.p95 = load_station_model(mp).p95;
            if (!(ref.p95 > 0.0)) continue;
            ref.elev = elevation_stratum(st.elevation);
            for (const auto& [t, kw] : load_power_series(sp))
                if (std::isfinite(kw)) ref.measured.emplace(t, kw);
            meta.emplace(st.id, std::move(ref));
        }

        struct Shard {
            ScoreTable table;
            std::map<RankKey, std::vector<EnsembleSample>> ranks;
            std::size_t n = 0;
        };
        std::vector<Shard> shards(pdirs.size());
        parallel_for(pdirs.size(), workers, [&](std::size_t i) {
            try {
                const PowerManifest m =
                    read_power_manifest(pdirs[i] / "manifest.json");
                const PredictionRows rows =
                    read_predictions(pdirs[i] / "predictions.csv", m);
                const auto strata = issue_strata(m.issue);
                Shard& shard = shards[i];
                std::vector<double> members(m.n_members);
                for (const auto& [key, vals] : rows) {
                    const auto& [lead, station] = key;
                    const auto sit = meta.find(station);
                    if (sit == meta.end()) continue;
                    bool all = vals.size() == static_cast<std::size_t>(m.n_members);
                    for (const auto& v : vals)
                        if (!v) {
                            all = false;
                            break;
                        }
                    if (!all) continue;
                    const UnixTime valid = m.issue + lead * m.step;
                    const auto ot = sit->second.measured.find(valid);
                    if (ot == sit->second.measured.end()) continue;
                    for (int e = 0; e < m.n_members; ++e) members[e] = *vals[e];
                    const EnsembleSample sample =
                        make_sample(members, ot->second, sit->second.p95);
                    const int lead_min = static_cast<int>(lead * m.step / 60);
                    for (const auto& st : strata)
                        shard.table.add(m.model, lead_min, st, sample, config.alpha);
                    shard.table.add(m.model, lead_min, sit->second.elev, sample,
                                    config.alpha);
                    shard.ranks[{m.model, lead_min}].push_back(sample);
                    ++shard.n;
                }
            } catch (const Error& e) {
                log_line("evaluate: skipping " + pdirs[i].filename().string() +
                         ": " + e.what());
            }
        });
        for (auto& shard : shards) {
            power_table.merge(shard.table);
            for (auto& [key, pool] : shard.ranks) {
                auto& dst = power_ranks[key];
                dst.insert(dst.end(), pool.begin(), pool.end());
            }
            n_power += shard.n;
        }
    }

    ensure_directory(config.scores_dir());
    result.ssi_csv = config.scores_dir() / "ssi_scores.csv";
    result.ssi_json = config.scores_dir() / "ssi_scores.json";
    ssi_table.write_csv(result.ssi_csv);
    ssi_table.write_json(result.ssi_json);
    result.power_csv = config.scores_dir() / "power_scores.csv";
    result.power_json = config.scores_dir() / "power_scores.json";
    power_table.write_csv(result.power_csv);
    power_table.write_json(result.power_json);

    nlohmann::json ranks = nlohmann::json::array();
    const auto emit_ranks = [&](const char* domain, const auto& pools) {
        for (const auto& [key, samples] : pools) {
            if (samples.empty()) continue;
            try {
                const RankHistogram h = rank_histogram(samples, config.seed);
                ranks.push_back({{"domain", domain},
                                 {"model", key.first},
                                 {"lead_min", key.second},
                                 {"n_samples", samples.size()},
                                 {"counts", h.counts},
                                 {"chi_square", h.chi_square},
                                 {"p_value", h.p_value}});
            } catch (const Error& e) {
                log_line("evaluate: rank histogram (" + key.first + ", " +
                         std::to_string(key.second) + " min) skipped: " + e.what());
            }
        }
    };
    emit_ranks("ssi", ssi_ranks);
    emit_ranks("power", power_ranks);
    result.ranks_json = config.scores_dir() / "rank_histograms.json";
    {
        std::ofstream out(result.ranks_json);
        if (!out) throw IoError("cannot write " + result.ranks_json.string());
        out << ranks.dump(2) << "\n";
    }

    result.n_ssi_samples = n_ssi;
    result.n_power_samples = n_power;
    if (n_ssi + n_power == 0)
        log_line("evaluate: no overlapping forecast/observation samples");
    else
        log_line("evaluate: scored " + std::to_string(n_ssi) +
                 " SSI sample(s) and " + std::to_string(n_power) +
                 " power sample(s)");
    return result;
}

AggregateResult run_aggregate(const RunConfig& config) {
    config.validate();
    if (config.registry.empty() || config.series_dir.empty() ||
        config.output_dir.empty())
        throw ConfigError("aggregate requires registry, series_dir and output_dir");

    AggregateResult result;
    const std::vector<fs::path> pdirs =
        forecast_set_dirs(config.power_dir() / config.model);
    if (pdirs.empty()) {
        log_line("aggregate: no power predictions under " +
                 (config.power_dir() / config.model).string());
        return result;
    }

    std::map<std::string, std::unordered_map<UnixTime, double>> measured;
    for (const Station& st : load_station_registry(config.registry)) {
        const fs::path sp = config.series_dir / (st.id + ".csv");
        if (!fs::exists(sp)) continue;
        auto& m = measured[st.id];
        for (const auto& [t, kw] : load_power_series(sp))
            if (std::isfinite(kw)) m.emplace(t, kw);
    }

    // National totals at the shortest lead: the ensemble-mean fleet sum over
    // stations that have every member and a finite measurement.
    std::vector<std::pair<UnixTime, double>> pred_series, meas_series;
    for (const auto& dir : pdirs) {
        try {
            const PowerManifest m = read_power_manifest(dir / "manifest.json");
            const PredictionRows rows = read_predictions(dir / "predictions.csv", m);
            const UnixTime valid = m.issue + m.step;
            KahanSum meas_total;
            std::vector<KahanSum> member_totals(m.n_members);
            int n_used = 0;
            for (const auto& [key, vals] : rows) {
                if (key.first != 1) continue;
                const auto sit = measured.find(key.second);
                if (sit == measured.end()) continue;
                const auto ot = sit->second.find(valid);
                if (ot == sit->second.end()) continue;
                bool all = vals.size() == static_cast<std::size_t>(m.n_members);
                for (const auto& v : vals)
                    if (!v) {
                        all = false;
                        break;
                    }
                if (!all) continue;
                for (int e = 0; e < m.n_members; ++e) member_totals[e].add(*vals[e]);
                meas_total.add(ot->second);
                ++n_used;
            }
            if (n_used == 0) {
                log_line("aggregate: skipping " + dir.filename().string() +
                         ": no station has both members and a measurement");
                continue;
            }
            KahanSum mean_total;
            for (const auto& mt : member_totals) mean_total.add(mt.value());
            pred_series.emplace_back(valid, mean_total.value() / m.n_members);
            meas_series.emplace_back(valid, meas_total.value());
        } catch (const Error& e) {
            log_line("aggregate: skipping " + dir.filename().string() + ": " +
                     e.what());
        }
    }
    if (pred_series.empty()) {
        log_line("aggregate: nothing to aggregate");
        return result;
    }

    result.overall = daily_relative_error(pred_series, meas_series);
    std::map<std::string, std::pair<std::vector<std::pair<UnixTime, double>>,
                                    std::vector<std::pair<UnixTime, double>>>>
        seasons;
    for (std::size_t i = 0; i < pred_series.size(); ++i) {
        auto& bucket = seasons[season_of(pred_series[i].first)];
        bucket.first.push_back(pred_series[i]);
        bucket.second.push_back(meas_series[i]);
    }
    for (const auto& [name, bucket] : seasons)
        result.by_season[name] =
            daily_relative_error(bucket.first, bucket.second);

    ensure_directory(config.reports_dir());
    result.daily_csv = config.reports_dir() / "daily_totals.csv";
    {
        std::map<UnixTime, std::pair<KahanSum, KahanSum>> day_sums;
        for (std::size_t i = 0; i < pred_series.size(); ++i) {
            auto& cell = day_sums[day_start(pred_series[i].first)];
            cell.first.add(pred_series[i].second);
            cell.second.add(meas_series[i].second);
        }
        std::ofstream out(result.daily_csv);
        if (!out) throw IoError("cannot write " + result.daily_csv.string());
        out << "date,predicted_sum_kw,measured_sum_kw,relative_error\n";
        for (const auto& [day, cell] : day_sums) {
            const double p = cell.first.value();
            const double me = cell.second.value();
            const double rel = me > 0.0
                                   ? std::abs(p - me) / me
                                   : std::numeric_limits<double>::quiet_NaN();
            out << format_iso(day).substr(0, 10) << ',' << fmt_double(p) << ','
                << fmt_double(me) << ',' << fmt_double(rel) << "\n";
        }
        if (!out) throw IoError("cannot write " + result.daily_csv.string());
    }

    const auto summary_row = [](const std::string& scope,
                                const DailyErrorSummary& s) {
        return scope + ',' + std::to_string(s.days.size()) + ',' +
               std::to_string(s.excluded.size()) + ',' +
               fmt_double(s.frac_below_1pct) + ',' +
               fmt_double(s.frac_below_10pct);
    };
    result.report_csv = config.reports_dir() / "national.csv";
    {
        std::ofstream out(result.report_csv);
        if (!out) throw IoError("cannot write " + result.report_csv.string());
        out << "scope,n_days,n_excluded,frac_below_1pct,frac_below_10pct\n";
        out << summary_row("all", result.overall) << "\n";
        for (const char* name : {"MAM", "JJA", "SON", "DJF"}) {
            const auto it = result.by_season.find(name);
            if (it != result.by_season.end())
                out << summary_row(name, it->second) << "\n";
        }
        if (!out) throw IoError("cannot write " + result.report_csv.string());
    }

    const auto summary_json = [](const DailyErrorSummary& s) {
        nlohmann::json j;
        j["n_days"] = s.days.size();
        j["frac_below_1pct"] = s.frac_below_1pct;
        j["frac_below_10pct"] = s.frac_below_10pct;
        auto days = nlohmann::json::array();
        for (const auto& d : s.days)
            days.push_back({{"date", format_iso(d.day).substr(0, 10)},
                            {"relative_error", d.relative_error}});
        j["days"] = days;
        auto excluded = nlohmann::json::array();
        for (const auto& [day, reason] : s.excluded)
            excluded.push_back({{"date", format_iso(day).substr(0, 10)},
                                {"reason", reason}});
        j["excluded"] = excluded;
        return j;
    };
    result.report_json = config.reports_dir() / "national.json";
    {
        nlohmann::json j;
        j["model"] = config.model;
        j["overall"] = summary_json(result.overall);
        nlohmann::json seasons_json;
        for (const auto& [name, summary] : result.by_season)
            seasons_json[name] = summary_json(summary);
        j["seasons"] = seasons_json;
        std::ofstream out(result.report_json);
        if (!out) throw IoError("cannot write " + result.report_json.string());
        out << j.dump(2) << "\n";
    }
    log_line("aggregate: " + std::to_string(result.overall.days.size()) +
             " day(s), " + std::to_string(result.overall.excluded.size()) +
             " excluded");
    return result;
}

}  // namespace solarcast

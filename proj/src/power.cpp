#include "solarcast/power.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>

#include "json.hpp"
#include "solarcast/clearsky.hpp"
#include "solarcast/grid.hpp"

namespace solarcast {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;
constexpr double kSpanFloor = 1e-12;

bool is_daylight(double lat, double lon, UnixTime t) {
    return solar_position(lat, lon, t).elevation > 0.0;
}

struct YearStats {
    double mean = 0.0;
    double stddev = 0.0;
    double skewness = 0.0;
};

YearStats year_stats(const std::vector<double>& values) {
    YearStats out;
    const double n = static_cast<double>(values.size());
    KahanSum sum;
    for (double v : values) sum.add(v);
    out.mean = sum.value() / n;
    KahanSum m2;
    KahanSum m3;
    for (double v : values) {
        const double d = v - out.mean;
        m2.add(d * d);
        m3.add(d * d * d);
    }
    const double var = m2.value() / n;
    out.stddev = std::sqrt(var);
    out.skewness = var > 1e-30 ? (m3.value() / n) / (out.stddev * var) : 0.0;
    return out;
}

double relative_difference(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

std::string format_percent(double fraction) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f%%", fraction * 100.0);
    return buf;
}

std::array<double, FeatureVector::n_features> scale_features(
    const FeatureVector& fv,
    const std::array<double, FeatureVector::n_features>& lo,
    const std::array<double, FeatureVector::n_features>& hi) {
    const std::array<double, FeatureVector::n_features> raw = fv.values();
    std::array<double, FeatureVector::n_features> out{};
    for (int k = 0; k < FeatureVector::n_features; ++k) {
        out[k] = (raw[k] - lo[k]) / std::max(hi[k] - lo[k], kSpanFloor);
    }
    return out;
}

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

double parse_double(const std::string& token, const std::string& context) {
    double out = 0.0;
    const char* begin = token.data();
    const char* end = begin + token.size();
    const auto res = std::from_chars(begin, end, out);
    if (res.ec != std::errc() || res.ptr != end) {
        throw FormatError("bad number '" + token + "' in " + context);
    }
    return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string token;
    std::stringstream ss(line);
    while (std::getline(ss, token, ',')) out.push_back(token);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

std::string strip_cr(std::string s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return s;
}

}  // namespace

double power_percentile95(const PowerSeries& series) {
    std::vector<double> finite;
    finite.reserve(series.size());
    for (const auto& [t, v] : series) {
        if (std::isfinite(v)) finite.push_back(v);
    }
    if (finite.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(finite.begin(), finite.end());
    const double pos = 0.95 * static_cast<double>(finite.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(lo);
    return lo + 1 < finite.size()
               ? finite[lo] + frac * (finite[lo + 1] - finite[lo])
               : finite[lo];
}

std::pair<std::vector<Station>, std::vector<RejectedStation>> clean_fleet(
    const std::vector<Station>& fleet) {
    std::vector<Station> kept;
    std::vector<RejectedStation> rejected;
    for (const Station& station : fleet) {
        const double p95 = power_percentile95(station.series);
        if (std::isnan(p95)) {
            rejected.push_back({station.id, "no finite power samples"});
            continue;
        }
        if (!(p95 > 0.0)) {
            rejected.push_back({station.id, "non-positive p95"});
            continue;
        }

        std::map<int, std::vector<double>> by_year;
        for (const auto& [t, v] : station.series) {
            if (!std::isfinite(v)) continue;
            if (!is_daylight(station.lat, station.lon, t)) continue;
            by_year[from_unix(t).year].push_back(v);
        }
        if (by_year.empty()) {
            rejected.push_back({station.id, "no daylight samples"});
            continue;
        }
        if (by_year.size() < 2) {
            rejected.push_back(
                {station.id, "single calendar year of data (" +
                                 std::to_string(by_year.begin()->first) + ")"});
            continue;
        }

        std::map<int, YearStats> stats;
        for (const auto& [year, values] : by_year) {
            stats[year] = year_stats(values);
        }

        std::string reason;
        for (auto a = stats.begin(); a != stats.end() && reason.empty(); ++a) {
            for (auto b = std::next(a); b != stats.end(); ++b) {
                const struct {
                    const char* name;
                    double lhs;
                    double rhs;
                } metrics[] = {
                    {"mean", a->second.mean, b->second.mean},
                    {"std", a->second.stddev, b->second.stddev},
                    {"skewness", a->second.skewness, b->second.skewness},
                };
                for (const auto& m : metrics) {
                    const double rel = relative_difference(m.lhs, m.rhs);
                    if (rel > 0.10) {
                        reason = std::string(m.name) + " differs " +
                                 format_percent(rel) + " between " +
                                 std::to_string(a->first) + " and " +
                                 std::to_string(b->first);
                        break;
                    }
                }
                if (!reason.empty()) break;
            }
        }
        if (!reason.empty()) {
            rejected.push_back({station.id, reason});
            continue;
        }

        Station admitted = station;
        admitted.p95 = p95;
        kept.push_back(std::move(admitted));
    }
    return {std::move(kept), std::move(rejected)};
}

std::array<double, FeatureVector::n_features> FeatureVector::values() const {
    return {ssi, sza, azi, sin_doy, cos_doy, sin_hod, cos_hod};
}

std::optional<FeatureVector> build_features(const Station& station,
                                            double ssi_value, UnixTime t) {
    if (!std::isfinite(ssi_value) || ssi_value < 0.0) return std::nullopt;
    const SolarPosition pos = solar_position(station.lat, station.lon, t);
    FeatureVector fv;
    fv.ssi = ssi_value;
    fv.sza = pos.zenith;
    fv.azi = pos.azimuth;
    const double doy_phase = kTwoPi * fractional_day_of_year(t) / 365.25;
    const double hod_phase = kTwoPi * fractional_hour_of_day(t) / 24.0;
    fv.sin_doy = std::sin(doy_phase);
    fv.cos_doy = std::cos(doy_phase);
    fv.sin_hod = std::sin(hod_phase);
    fv.cos_hod = std::cos(hod_phase);
    return fv;
}

SplitLabel SplitPlan::label(UnixTime t) const {
    const std::int64_t day = (day_start(t) - day_start(origin)) / 86400;
    std::int64_t pos = day % block_length;
    if (pos < 0) pos += block_length;
    const std::int64_t block = (day - pos) / block_length;
    if (pos < train_days) return SplitLabel::Train;
    const bool even_block = (block % 2) == 0;
    const bool first_eval_day = pos == train_days;
    if (even_block) return first_eval_day ? SplitLabel::Val : SplitLabel::Test;
    return first_eval_day ? SplitLabel::Test : SplitLabel::Val;
}

SplitPlan SplitPlan::starting(UnixTime first) {
    SplitPlan plan;
    plan.origin = day_start(first);
    return plan;
}

std::optional<double> StationModel::predict_kw(double ssi_value,
                                               UnixTime t) const {
    if (!is_daylight(lat, lon, t)) return 0.0;
    Station site;
    site.id = station_id;
    site.lon = lon;
    site.lat = lat;
    site.elevation = elevation;
    const auto fv = build_features(site, ssi_value, t);
    if (!fv) return std::nullopt;
    const auto scaled = scale_features(*fv, feature_min, feature_max);
    double p = booster.predict_row(scaled.data(), scaled.size());
    p = std::clamp(p, 0.0, 1.0);
    return p * p95;
}

StationModel train_station_model(const Station& station,
                                 const PowerSeries& ssi_series,
                                 const SplitPlan& plan,
                                 const TrainOptions& options) {
    const double p95 = power_percentile95(station.series);
    if (!(p95 > 0.0)) {
        throw TrainingError("station " + station.id +
                            " has no positive p95; cannot scale targets");
    }

    std::unordered_map<UnixTime, double> ssi_at;
    ssi_at.reserve(ssi_series.size());
    for (const auto& [t, v] : ssi_series) ssi_at[t] = v;

    std::vector<std::vector<double>> x_train;
    std::vector<double> y_train;
    std::vector<std::vector<double>> x_val;
    std::vector<double> y_val;
    std::vector<FeatureVector> raw_train;

    for (const auto& [t, kw] : station.series) {
        if (!std::isfinite(kw)) continue;
        const auto it = ssi_at.find(t);
        if (it == ssi_at.end()) continue;
        const auto fv = build_features(station, it->second, t);
        if (!fv) continue;
        if (fv->sza >= 90.0) continue;  // only daylight rows train
        const SplitLabel where = plan.label(t);
        if (where == SplitLabel::Test) continue;
        const auto raw = fv->values();
        if (where == SplitLabel::Train) {
            raw_train.push_back(*fv);
            x_train.emplace_back(raw.begin(), raw.end());
            y_train.push_back(kw / p95);
        } else {
            x_val.emplace_back(raw.begin(), raw.end());
            y_val.push_back(kw / p95);
        }
    }

    if (x_train.size() < 100) {
        throw TrainingError("station " + station.id + " has " +
                            std::to_string(x_train.size()) +
                            " daylight training samples, needs at least 100");
    }

    StationModel model;
    model.station_id = station.id;
    model.lon = station.lon;
    model.lat = station.lat;
    model.elevation = station.elevation;
    model.p95 = p95;
    model.feature_min.fill(std::numeric_limits<double>::infinity());
    model.feature_max.fill(-std::numeric_limits<double>::infinity());
    for (const FeatureVector& fv : raw_train) {
        const auto raw = fv.values();
        for (int k = 0; k < FeatureVector::n_features; ++k) {
            model.feature_min[k] = std::min(model.feature_min[k], raw[k]);
            model.feature_max[k] = std::max(model.feature_max[k], raw[k]);
        }
    }

    auto rescale = [&model](std::vector<std::vector<double>>& rows) {
        for (auto& row : rows) {
            for (int k = 0; k < FeatureVector::n_features; ++k) {
                row[k] = (row[k] - model.feature_min[k]) /
                         std::max(model.feature_max[k] - model.feature_min[k],
                                  kSpanFloor);
            }
        }
    };
    rescale(x_train);
    rescale(x_val);

    GbrtParams params = options.params;
    if (options.tune) {
        if (x_val.empty()) {
            throw TrainingError("station " + station.id +
                                " has no validation samples; tuning needs some");
        }
        params = random_search(x_train, y_train, x_val, y_val,
                               options.tune_trials, options.seed, options.params);
    }
    model.booster = fit_gbrt(x_train, y_train, x_val, y_val, params);
    return model;
}

StationPrediction predict_power(const StationModel& model,
                                const ForecastSet& forecast,
                                const Station& station) {
    StationPrediction out;
    out.station_id = model.station_id;
    out.kw.resize(forecast.n_leads());
    for (int lead = 1; lead <= forecast.n_leads(); ++lead) {
        auto& row = out.kw[lead - 1];
        row.resize(forecast.n_members());
        const UnixTime valid_t = forecast.issue_time + lead * forecast.step;
        for (int member = 0; member < forecast.n_members(); ++member) {
            const GridField& field = forecast.at(lead, member);
            if (field.kind != GridKind::Ssi) {
                throw FormatError("power prediction expects SSI fields, got " +
                                  kind_name(field.kind));
            }
            const auto ssi = interpolate_point(field, station.lon, station.lat);
            row[member] = ssi ? model.predict_kw(*ssi, valid_t) : std::nullopt;
        }
    }
    return out;
}

FleetTotal fleet_total(const std::vector<StationPrediction>& predictions,
                       int lead, int member) {
    FleetTotal total;
    KahanSum sum;
    for (const StationPrediction& p : predictions) {
        if (lead < 1 || lead > p.n_leads() || member < 0 ||
            member >= static_cast<int>(p.kw[lead - 1].size())) {
            continue;
        }
        const auto& v = p.kw[lead - 1][member];
        if (!v) continue;
        sum.add(*v);
        ++total.n_stations;
    }
    total.kw = sum.value();
    return total;
}

std::vector<Station> load_station_registry(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open registry " + path.string());
    std::string line;
    if (!std::getline(in, line) || strip_cr(line) != "id,lon,lat,elevation_m") {
        throw FormatError("registry header must be id,lon,lat,elevation_m");
    }
    std::vector<Station> fleet;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        line = strip_cr(line);
        if (line.empty()) continue;
        const auto tokens = split_csv_line(line);
        if (tokens.size() != 4 || tokens[0].empty()) {
            throw FormatError("registry line " + std::to_string(line_no) +
                              " needs id,lon,lat,elevation_m");
        }
        Station s;
        s.id = tokens[0];
        const std::string where = "registry line " + std::to_string(line_no);
        s.lon = parse_double(tokens[1], where);
        s.lat = parse_double(tokens[2], where);
        s.elevation = parse_double(tokens[3], where);
        fleet.push_back(std::move(s));
    }
    return fleet;
}

void save_station_registry(const std::vector<Station>& fleet,
                           const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write registry " + path.string());
    out << "id,lon,lat,elevation_m\n";
    for (const Station& s : fleet) {
        out << s.id << ',' << format_double(s.lon) << ',' << format_double(s.lat)
            << ',' << format_double(s.elevation) << '\n';
    }
    if (!out) throw IoError("short write to registry " + path.string());
}

PowerSeries load_power_series(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open series " + path.string());
    std::string line;
    if (!std::getline(in, line) || strip_cr(line) != "timestamp_utc,power_kw") {
        throw FormatError("series header must be timestamp_utc,power_kw");
    }
    PowerSeries series;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        line = strip_cr(line);
        if (line.empty()) continue;
        const auto tokens = split_csv_line(line);
        if (tokens.size() != 2) {
            throw FormatError("series line " + std::to_string(line_no) +
                              " needs timestamp_utc,power_kw");
        }
        const UnixTime t = parse_iso(tokens[0]);
        double v = std::numeric_limits<double>::quiet_NaN();
        if (!tokens[1].empty() && tokens[1] != "nan") {
            v = parse_double(tokens[1], "series line " + std::to_string(line_no));
        }
        series.emplace_back(t, v);
    }
    return series;
}

void save_power_series(const PowerSeries& series,
                       const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write series " + path.string());
    out << "timestamp_utc,power_kw\n";
    for (const auto& [t, v] : series) {
        out << format_iso(t) << ',' << format_double(v) << '\n';
    }
    if (!out) throw IoError("short write to series " + path.string());
}

void save_station_model(const StationModel& model,
                        const std::filesystem::path& path) {
    nlohmann::json j;
    j["station_id"] = model.station_id;
    j["lon"] = model.lon;
    j["lat"] = model.lat;
    j["elevation"] = model.elevation;
    j["p95"] = model.p95;
    j["feature_min"] = model.feature_min;
    j["feature_max"] = model.feature_max;
    j["booster"] = model.booster.to_json();
    std::ofstream out(path);
    if (!out) throw IoError("cannot write model " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw IoError("short write to model " + path.string());
}

StationModel load_station_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open model " + path.string());
    nlohmann::json j;
    try {
        in >> j;
        StationModel model;
        model.station_id = j.at("station_id").get<std::string>();
        model.lon = j.at("lon").get<double>();
        model.lat = j.at("lat").get<double>();
        model.elevation = j.at("elevation").get<double>();
        model.p95 = j.at("p95").get<double>();
        const auto lo = j.at("feature_min").get<std::vector<double>>();
        const auto hi = j.at("feature_max").get<std::vector<double>>();
        if (lo.size() != FeatureVector::n_features ||
            hi.size() != FeatureVector::n_features) {
            throw FormatError("model dump has wrong feature scaling size");
        }
        std::copy(lo.begin(), lo.end(), model.feature_min.begin());
        std::copy(hi.begin(), hi.end(), model.feature_max.begin());
        model.booster = GbrtModel::from_json(j.at("booster"));
        return model;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed model dump " + path.string() + ": " +
                          e.what());
    }
}

}  // namespace solarcast

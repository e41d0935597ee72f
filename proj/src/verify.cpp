#include "solarcast/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "solarcast/rng.hpp"

namespace solarcast {

namespace {

constexpr std::uint64_t kRankStream = 0x72616e6b;  // "rank"

// Regularized upper incomplete gamma Q(a, x): series for the lower tail,
// Lentz continued fraction otherwise.
double gamma_q(double a, double x) {
    if (x < 0.0 || a <= 0.0) throw OutOfDomainError("gamma_q domain");
    if (x == 0.0) return 1.0;
    if (x < a + 1.0) {
        double term = 1.0 / a;
        double sum = term;
        double ap = a;
        for (int i = 0; i < 500; ++i) {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if (std::abs(term) < std::abs(sum) * 1e-16) break;
        }
        const double p = sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
        return 1.0 - p;
    }
    const double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i <= 500; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < 1e-16) break;
    }
    return h * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

const std::vector<double>& sorted_view(const EnsembleSample& sample,
                                       std::vector<double>& scratch) {
    if (sample.members.empty())
        throw EmptyInputError("ensemble sample has no members");
    if (std::is_sorted(sample.members.begin(), sample.members.end()))
        return sample.members;
    scratch = sample.members;
    std::sort(scratch.begin(), scratch.end());
    return scratch;
}

double ensemble_mean(const EnsembleSample& sample) {
    KahanSum sum;
    for (double m : sample.members) sum.add(m);
    return sum.value() / static_cast<double>(sample.members.size());
}

void check_normalizer(const EnsembleSample& sample) {
    if (!(sample.normalizer > 0.0))
        throw DataQualityError("sample normalizer must be positive");
}

struct DayStats {
    KahanSum sum, sq;
    std::uint64_t n = 0;
};

std::string format_value(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

}  // namespace

EnsembleSample make_sample(std::vector<double> members, double observation,
                           double normalizer) {
    if (members.empty()) throw EmptyInputError("ensemble sample has no members");
    for (double m : members)
        if (!std::isfinite(m))
            throw DataQualityError("non-finite ensemble member");
    if (!std::isfinite(observation))
        throw DataQualityError("non-finite observation");
    if (!(normalizer > 0.0) || !std::isfinite(normalizer))
        throw DataQualityError("sample normalizer must be positive");
    std::sort(members.begin(), members.end());
    EnsembleSample s;
    s.members = std::move(members);
    s.observation = observation;
    s.normalizer = normalizer;
    return s;
}

DeterministicScores deterministic_scores(
    const std::vector<EnsembleSample>& samples) {
    if (samples.empty()) throw EmptyInputError("no samples to score");
    KahanSum abs_err, err, sq_err;
    for (const EnsembleSample& s : samples) {
        check_normalizer(s);
        if (s.members.empty())
            throw EmptyInputError("ensemble sample has no members");
        const double e = (ensemble_mean(s) - s.observation) / s.normalizer;
        abs_err.add(std::abs(e));
        err.add(e);
        sq_err.add(e * e);
    }
    const double inv_n = 1.0 / static_cast<double>(samples.size());
    DeterministicScores out;
    out.nmae = abs_err.value() * inv_n;
    out.nrmse = std::sqrt(sq_err.value() * inv_n);
    out.nmbe = err.value() * inv_n;
    return out;
}

double crps(const EnsembleSample& sample) {
    check_normalizer(sample);
    std::vector<double> scratch;
    const std::vector<double>& x = sorted_view(sample, scratch);
    const std::size_t e = x.size();

    KahanSum obs_term;
    for (double m : x) obs_term.add(std::abs(m - sample.observation));

    // Sum over ordered pairs |X_i - X_j| = 2 * sum_{i<j} (x_j - x_i); with
    // the members ascending the inner sum telescopes per element.
    KahanSum pair_term;
    for (std::size_t j = 0; j < e; ++j)
        pair_term.add(x[j] * (2.0 * static_cast<double>(j) -
                              static_cast<double>(e) + 1.0));

    const double ee = static_cast<double>(e);
    const double value =
        obs_term.value() / ee - pair_term.value() / (ee * ee);
    return value / sample.normalizer;
}

double empirical_quantile(const std::vector<double>& sorted, double p) {
    if (sorted.empty()) throw EmptyInputError("quantile of empty set");
    if (!(p >= 0.0 && p <= 1.0))
        throw OutOfDomainError("quantile level outside [0, 1]");
    const double pos = p * static_cast<double>(sorted.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    if (lo + 1 >= sorted.size()) return sorted.back();
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

IntervalScores interval_scores(const std::vector<EnsembleSample>& samples,
                               double alpha) {
    if (samples.empty()) throw EmptyInputError("no samples to score");
    if (!(alpha > 0.0 && alpha < 1.0))
        throw ConfigError("alpha must lie strictly inside (0, 1)");
    KahanSum hits, width, norm_width;
    for (const EnsembleSample& s : samples) {
        check_normalizer(s);
        if (s.members.size() < 2)
            throw UndefinedIntervalError(
                "prediction interval needs at least two members");
        std::vector<double> scratch;
        const std::vector<double>& x = sorted_view(s, scratch);
        const double lo = empirical_quantile(x, alpha / 2.0);
        const double hi = empirical_quantile(x, 1.0 - alpha / 2.0);
        hits.add(s.observation >= lo && s.observation <= hi ? 1.0 : 0.0);
        width.add(hi - lo);
        norm_width.add((hi - lo) / s.normalizer);
    }
    const double inv_n = 1.0 / static_cast<double>(samples.size());
    IntervalScores out;
    out.picp = hits.value() * inv_n;
    out.mpiw = width.value() * inv_n;
    out.pinaw = norm_width.value() * inv_n;
    return out;
}

RankHistogram rank_histogram(const std::vector<EnsembleSample>& samples,
                             std::uint64_t seed) {
    if (samples.empty()) throw EmptyInputError("no samples to rank");
    const std::size_t e = samples.front().members.size();
    if (e == 0) throw EmptyInputError("ensemble sample has no members");

    RankHistogram hist;
    hist.counts.assign(e + 1, 0);
    Rng rng{seed, kRankStream};
    for (const EnsembleSample& s : samples) {
        if (s.members.size() != e)
            throw MixedEnsembleError(
                "rank histogram over mixed ensemble sizes " +
                std::to_string(e) + " and " + std::to_string(s.members.size()));
        std::size_t below = 0, ties = 0;
        for (double m : s.members) {
            if (m < s.observation) ++below;
            else if (m == s.observation) ++ties;
        }
        std::size_t rank = below;
        if (ties > 0) {
            const double u = rng.uniform01();
            rank += static_cast<std::size_t>(u * static_cast<double>(ties + 1));
            rank = std::min(rank, below + ties);
        }
        ++hist.counts[rank];
    }

    const double expected =
        static_cast<double>(samples.size()) / static_cast<double>(e + 1);
    KahanSum chi;
    for (std::uint64_t c : hist.counts) {
        const double d = static_cast<double>(c) - expected;
        chi.add(d * d / expected);
    }
    hist.chi_square = chi.value();
    hist.p_value = chi_square_p_value(hist.chi_square, static_cast<int>(e));
    return hist;
}

double chi_square_p_value(double statistic, int dof) {
    if (dof < 1) throw OutOfDomainError("chi-square needs dof >= 1");
    if (statistic <= 0.0) return 1.0;
    return gamma_q(dof / 2.0, statistic / 2.0);
}

RegimeLabels classify_regimes(const std::vector<GridField>& csi_fields) {
    std::map<UnixTime, DayStats> per_day;
    for (const GridField& f : csi_fields) {
        DayStats& d = per_day[day_start(f.timestamp)];
        for (float v : f.values) {
            if (!std::isfinite(v)) continue;
            d.sum.add(v);
            d.sq.add(static_cast<double>(v) * v);
            ++d.n;
        }
    }
    for (auto it = per_day.begin(); it != per_day.end();) {
        it = it->second.n == 0 ? per_day.erase(it) : std::next(it);
    }
    if (per_day.size() < 8)
        throw InsufficientDataError(
            "regime classification needs at least 8 days, got " +
            std::to_string(per_day.size()));

    std::vector<UnixTime> days;
    std::vector<double> means, stds;
    for (const auto& [day, stats] : per_day) {
        const double n = static_cast<double>(stats.n);
        const double mean = stats.sum.value() / n;
        const double var = std::max(0.0, stats.sq.value() / n - mean * mean);
        days.push_back(day);
        means.push_back(mean);
        stds.push_back(std::sqrt(var));
    }

    std::vector<double> sorted_means = means, sorted_stds = stds;
    std::sort(sorted_means.begin(), sorted_means.end());
    std::sort(sorted_stds.begin(), sorted_stds.end());

    RegimeLabels labels;
    labels.mean_q25 = empirical_quantile(sorted_means, 0.25);
    labels.mean_q75 = empirical_quantile(sorted_means, 0.75);
    labels.std_q25 = empirical_quantile(sorted_stds, 0.25);
    labels.std_q75 = empirical_quantile(sorted_stds, 0.75);
    for (std::size_t i = 0; i < days.size(); ++i) {
        RegimeLabel label;
        label.cloudy = means[i] < labels.mean_q25;
        label.sunny = means[i] > labels.mean_q75;
        label.lowvar = stds[i] < labels.std_q25;
        label.highvar = stds[i] > labels.std_q75;
        labels.days[days[i]] = label;
    }
    return labels;
}

DailyErrorSummary daily_relative_error(
    const std::vector<std::pair<UnixTime, double>>& predicted,
    const std::vector<std::pair<UnixTime, double>>& measured) {
    std::map<UnixTime, KahanSum> pred_day, meas_day;
    for (const auto& [t, v] : predicted)
        if (std::isfinite(v)) pred_day[day_start(t)].add(v);
    for (const auto& [t, v] : measured)
        if (std::isfinite(v)) meas_day[day_start(t)].add(v);

    DailyErrorSummary out;
    std::uint64_t below1 = 0, below10 = 0;
    for (const auto& [day, meas] : meas_day) {
        const double m = meas.value();
        if (!(m > 0.0)) {
            out.excluded.emplace_back(day, "non-positive measured total");
            continue;
        }
        const auto pred = pred_day.find(day);
        const double p = pred == pred_day.end() ? 0.0 : pred->second.value();
        DailyError e;
        e.day = day;
        e.relative_error = std::abs(p - m) / m;
        if (e.relative_error < 0.01) ++below1;
        if (e.relative_error < 0.10) ++below10;
        out.days.push_back(e);
    }
    if (!out.days.empty()) {
        out.frac_below_1pct =
            static_cast<double>(below1) / static_cast<double>(out.days.size());
        out.frac_below_10pct =
            static_cast<double>(below10) / static_cast<double>(out.days.size());
    }
    return out;
}

void ScoreTable::add(const std::string& model, int lead_min,
                     const std::string& stratum, const EnsembleSample& sample,
                     double alpha) {
    check_normalizer(sample);
    if (sample.members.empty())
        throw EmptyInputError("ensemble sample has no members");
    Cell& cell = cells_[{model, lead_min, stratum}];
    const double e = (ensemble_mean(sample) - sample.observation) /
                     sample.normalizer;
    cell.abs_err.add(std::abs(e));
    cell.err.add(e);
    cell.sq_err.add(e * e);
    cell.crps_sum.add(crps(sample));
    ++cell.n;
    if (sample.members.size() >= 2) {
        std::vector<double> scratch;
        const std::vector<double>& x = sorted_view(sample, scratch);
        const double lo = empirical_quantile(x, alpha / 2.0);
        const double hi = empirical_quantile(x, 1.0 - alpha / 2.0);
        cell.hits.add(sample.observation >= lo && sample.observation <= hi
                          ? 1.0
                          : 0.0);
        cell.width.add(hi - lo);
        cell.norm_width.add((hi - lo) / sample.normalizer);
        ++cell.n_interval;
    }
}

void ScoreTable::merge(const ScoreTable& other) {
    for (const auto& [key, cell] : other.cells_) {
        Cell& mine = cells_[key];
        mine.abs_err.merge(cell.abs_err);
        mine.err.merge(cell.err);
        mine.sq_err.merge(cell.sq_err);
        mine.crps_sum.merge(cell.crps_sum);
        mine.hits.merge(cell.hits);
        mine.width.merge(cell.width);
        mine.norm_width.merge(cell.norm_width);
        mine.n += cell.n;
        mine.n_interval += cell.n_interval;
    }
}

std::vector<ScoreTable::Row> ScoreTable::rows() const {
    std::vector<Row> out;
    for (const auto& [key, cell] : cells_) {
        const auto& [model, lead_min, stratum] = key;
        if (cell.n == 0) continue;
        const double inv_n = 1.0 / static_cast<double>(cell.n);
        auto push = [&](const std::string& metric, double value,
                        std::uint64_t n) {
            out.push_back({model, lead_min, stratum, metric, value, n});
        };
        push("nmae", cell.abs_err.value() * inv_n, cell.n);
        push("nrmse", std::sqrt(cell.sq_err.value() * inv_n), cell.n);
        push("nmbe", cell.err.value() * inv_n, cell.n);
        push("ncrps", cell.crps_sum.value() * inv_n, cell.n);
        if (cell.n_interval > 0) {
            const double inv_i = 1.0 / static_cast<double>(cell.n_interval);
            push("picp", cell.hits.value() * inv_i, cell.n_interval);
            push("pinaw", cell.norm_width.value() * inv_i, cell.n_interval);
            push("mpiw", cell.width.value() * inv_i, cell.n_interval);
        }
    }
    return out;
}

void ScoreTable::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "model,lead_min,stratum,metric,value,n\n";
    for (const Row& r : rows())
        out << r.model << ',' << r.lead_min << ',' << r.stratum << ','
            << r.metric << ',' << format_value(r.value) << ',' << r.n << '\n';
    if (!out) throw IoError("write failed for " + path.string());
}

void ScoreTable::write_json(const std::filesystem::path& path) const {
    nlohmann::json doc = nlohmann::json::array();
    for (const Row& r : rows()) {
        doc.push_back({{"model", r.model},
                       {"lead_min", r.lead_min},
                       {"stratum", r.stratum},
                       {"metric", r.metric},
                       {"value", r.value},
                       {"n", r.n}});
    }
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << doc.dump(2) << "\n";
    if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace solarcast

#include "solarcast/cascade.hpp"

#include <fftw3.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>

#include <json.hpp>

#include "solarcast/kernels.hpp"
#include "solarcast/rng.hpp"

namespace solarcast {

namespace {

constexpr std::uint64_t kNoiseStream = 0x6e6f6973;  // "nois"
constexpr float kNaN = std::numeric_limits<float>::quiet_NaN();

// One cached FFTW workspace per grid shape. FFTW planning and the shared
// buffers are not thread-safe, so everything spectral runs under g_fft_mutex.
struct FftWorkspace {
    int rows = 0;
    int cols = 0;
    std::size_t n_real = 0;
    std::size_t n_spec = 0;
    float* real = nullptr;
    fftwf_complex* spec = nullptr;
    fftwf_plan forward = nullptr;
    fftwf_plan inverse = nullptr;

    FftWorkspace(int r, int c)
        : rows(r),
          cols(c),
          n_real(static_cast<std::size_t>(r) * c),
          n_spec(static_cast<std::size_t>(r) * (c / 2 + 1)) {
        real = fftwf_alloc_real(n_real);
        spec = fftwf_alloc_complex(n_spec);
        if (!real || !spec) throw Error("fft workspace allocation failed");
        // FFTW_ESTIMATE keeps planning deterministic (no runtime measurement).
        forward = fftwf_plan_dft_r2c_2d(rows, cols, real, spec, FFTW_ESTIMATE);
        inverse = fftwf_plan_dft_c2r_2d(rows, cols, spec, real, FFTW_ESTIMATE);
        if (!forward || !inverse) throw Error("fft planning failed");
    }
    ~FftWorkspace() {
        if (forward) fftwf_destroy_plan(forward);
        if (inverse) fftwf_destroy_plan(inverse);
        fftwf_free(real);
        fftwf_free(spec);
    }
    FftWorkspace(const FftWorkspace&) = delete;
    FftWorkspace& operator=(const FftWorkspace&) = delete;
};

std::mutex g_fft_mutex;

FftWorkspace& workspace_for(int rows, int cols) {
    static std::map<std::pair<int, int>, std::unique_ptr<FftWorkspace>> cache;
    auto& slot = cache[{rows, cols}];
    if (!slot) slot = std::make_unique<FftWorkspace>(rows, cols);
    return *slot;
}

// Scalar wavenumber of spectral bin (iy, ix) in cycles per domain.
double bin_wavenumber(int iy, int ix, int rows) {
    const int ky = iy <= rows / 2 ? iy : iy - rows;
    return std::hypot(static_cast<double>(ix), static_cast<double>(ky));
}

// Log-spaced Gaussian bandpass weights normalized to a partition of unity.
// Row-major [level][bin] over the r2c half-spectrum.
std::vector<std::vector<double>> bandpass_weights(
    int rows, int cols, int n_levels, std::vector<double>& centers) {
    const int half = cols / 2 + 1;
    const std::size_t n_spec = static_cast<std::size_t>(rows) * half;
    std::vector<std::vector<double>> weights(
        n_levels, std::vector<double>(n_spec, 0.0));

    const double k_max = std::hypot(cols / 2.0, rows / 2.0);
    centers.resize(n_levels);
    if (n_levels == 1) {
        centers[0] = 0.0;
        weights[0].assign(n_spec, 1.0);
        return weights;
    }
    const double spacing = std::log(k_max) / (n_levels - 1);
    const double sigma = spacing / 2.5;
    for (int l = 0; l < n_levels; ++l) centers[l] = std::exp(l * spacing);

    for (int iy = 0; iy < rows; ++iy) {
        for (int ix = 0; ix < half; ++ix) {
            const std::size_t bin = static_cast<std::size_t>(iy) * half + ix;
            const double k = bin_wavenumber(iy, ix, rows);
            if (k <= 0.0) {
                weights[0][bin] = 1.0;  // DC belongs to the largest scale
                continue;
            }
            const double x = std::log(k);
            double total = 0.0;
            for (int l = 0; l < n_levels; ++l) {
                const double d = (x - l * spacing) / sigma;
                const double w = std::exp(-0.5 * d * d);
                weights[l][bin] = w;
                total += w;
            }
            for (int l = 0; l < n_levels; ++l) weights[l][bin] /= total;
        }
    }
    return weights;
}

// Replaces non-finite samples with the finite mean (zero if none).
std::vector<float> filled_values(const GridField& field) {
    std::vector<float> out = field.values;
    const auto& k = kernels::ops();
    const kernels::Moments m = k.finite_moments(out.data(), out.size());
    const float fill = m.count > 0 ? static_cast<float>(m.mean) : 0.0f;
    k.fill_nonfinite(out.data(), fill, out.size());
    return out;
}

double pearson(const std::vector<float>& a, const std::vector<float>& b,
               const std::vector<std::uint8_t>& valid) {
    KahanSum sa, sb, saa, sbb, sab;
    std::size_t n = 0;
    for (std::size_t p = 0; p < a.size(); ++p) {
        if (!valid.empty() && !valid[p]) continue;
        const double x = a[p], y = b[p];
        sa.add(x);
        sb.add(y);
        saa.add(x * x);
        sbb.add(y * y);
        sab.add(x * y);
        ++n;
    }
    if (n < 2) return 0.0;
    const double inv = 1.0 / static_cast<double>(n);
    const double cov = sab.value() * inv - sa.value() * inv * sb.value() * inv;
    const double va = saa.value() * inv - sa.value() * inv * sa.value() * inv;
    const double vb = sbb.value() * inv - sb.value() * inv * sb.value() * inv;
    if (va <= 0.0 || vb <= 0.0) return 0.0;
    return cov / std::sqrt(va * vb);
}

GridField field_from_values(const GridGeometry& geometry, UnixTime t,
                            std::vector<float> values) {
    GridField f;
    f.geometry = geometry;
    f.timestamp = t;
    f.kind = GridKind::Csi;
    f.values = std::move(values);
    return f;
}

void check_input_window(const FieldSequence& input) {
    if (input.fields.size() < 4)
        throw InsufficientDataError(
            "nowcast needs four input fields, got " +
            std::to_string(input.fields.size()));
}

ForecastSet make_set(const std::string& model, const FieldSequence& input,
                     std::uint64_t seed, int n_leads, int n_members) {
    ForecastSet set;
    set.model = model;
    set.geometry = input.fields.back().geometry;
    set.issue_time = input.fields.back().timestamp;
    set.step = input.step;
    set.seed = seed;
    set.fields.resize(n_leads);
    for (auto& row : set.fields) row.resize(n_members);
    return set;
}

}  // namespace

void NowcastConfig::validate() const {
    if (n_levels < 1) throw ConfigError("n_levels must be >= 1");
    if (n_members < 1) throw ConfigError("n_members must be >= 1");
    if (n_leads < 1) throw ConfigError("n_leads must be >= 1");
    if (!(csi_clip > 0.0f)) throw ConfigError("csi_clip must be positive");
}

const GridField& ForecastSet::at(int lead, int member) const {
    if (lead < 1 || lead > n_leads())
        throw DimensionError("lead " + std::to_string(lead) + " outside 1.." +
                             std::to_string(n_leads()));
    if (member < 0 || member >= n_members())
        throw DimensionError("member " + std::to_string(member) +
                             " outside 0.." + std::to_string(n_members() - 1));
    return fields[lead - 1][member];
}

Cascade decompose(const GridField& field, int n_levels) {
    field.geometry.validate();
    if (n_levels < 1) throw ConfigError("n_levels must be >= 1");
    const int rows = static_cast<int>(field.geometry.n_rows);
    const int cols = static_cast<int>(field.geometry.n_cols);
    const double min_dim = std::min(rows, cols);
    if (min_dim < std::ldexp(1.0, n_levels))
        throw DimensionError("grid " + std::to_string(rows) + "x" +
                             std::to_string(cols) + " too small for " +
                             std::to_string(n_levels) + " cascade levels");

    const std::vector<float> input = filled_values(field);

    Cascade cascade;
    cascade.geometry = field.geometry;
    cascade.levels.resize(n_levels);
    cascade.level_means.resize(n_levels);
    cascade.level_stds.resize(n_levels);

    std::vector<std::vector<double>> weights =
        bandpass_weights(rows, cols, n_levels, cascade.center_wavenumbers);

    const auto& k = kernels::ops();
    std::lock_guard<std::mutex> lock(g_fft_mutex);
    FftWorkspace& ws = workspace_for(rows, cols);

    std::copy(input.begin(), input.end(), ws.real);
    fftwf_execute(ws.forward);
    std::vector<fftwf_complex> spectrum(ws.n_spec);
    std::memcpy(spectrum.data(), ws.spec, ws.n_spec * sizeof(fftwf_complex));

    const float inv_n = 1.0f / static_cast<float>(ws.n_real);
    for (int l = 0; l < n_levels; ++l) {
        for (std::size_t bin = 0; bin < ws.n_spec; ++bin) {
            const float w = static_cast<float>(weights[l][bin]);
            ws.spec[bin][0] = spectrum[bin][0] * w;
            ws.spec[bin][1] = spectrum[bin][1] * w;
        }
        fftwf_execute(ws.inverse);

        std::vector<float>& level = cascade.levels[l];
        level.resize(ws.n_real);
        for (std::size_t p = 0; p < ws.n_real; ++p) level[p] = ws.real[p] * inv_n;

        const kernels::Moments m = k.finite_moments(level.data(), level.size());
        const double std_dev = m.stddev();
        cascade.level_means[l] = m.mean;
        cascade.level_stds[l] = std_dev;
        if (std_dev < 1e-12) {
            std::fill(level.begin(), level.end(), 0.0f);
        } else {
            k.normalize(level.data(), level.data(), static_cast<float>(m.mean),
                        static_cast<float>(1.0 / std_dev), level.size());
        }
    }
    return cascade;
}

std::vector<float> recombine(const Cascade& cascade) {
    if (cascade.levels.empty()) throw EmptyInputError("cascade has no levels");
    const std::size_t n = cascade.geometry.size();
    std::vector<float> out(n);
    for (std::size_t p = 0; p < n; ++p) {
        double acc = 0.0;
        for (int l = 0; l < cascade.n_levels(); ++l)
            acc += cascade.level_means[l] +
                   cascade.level_stds[l] * cascade.levels[l][p];
        out[p] = static_cast<float>(acc);
    }
    return out;
}

void ar2_from_correlations(double r1, double r2, double& phi1, double& phi2,
                           double& innovation_variance) {
    r1 = std::clamp(r1, -1.0, 1.0);
    r2 = std::clamp(r2, -1.0, 1.0);
    const double denom = 1.0 - r1 * r1;
    if (std::abs(denom) < 1e-9) {
        phi1 = 0.999 * r1;
        phi2 = 0.0;
    } else {
        phi1 = r1 * (1.0 - r2) / denom;
        phi2 = (r2 - r1 * r1) / denom;
    }
    const double margin = 1e-3;
    phi2 = std::clamp(phi2, -1.0 + margin, 1.0 - margin);
    if (phi1 + phi2 > 1.0 - margin) phi1 = 1.0 - margin - phi2;
    if (phi2 - phi1 > 1.0 - margin) phi1 = phi2 - (1.0 - margin);
    innovation_variance = std::max(0.0, 1.0 - phi1 * r1 - phi2 * r2);
}

ArCoefficients fit_ar2(const std::vector<Cascade>& history,
                       const std::vector<std::uint8_t>& valid) {
    if (history.size() < 3)
        throw InsufficientDataError("AR(2) fit needs at least three cascades");
    const int n_levels = history.front().n_levels();
    for (const Cascade& c : history)
        if (c.n_levels() != n_levels || !(c.geometry == history[0].geometry))
            throw DimensionError("cascade history shapes differ");

    ArCoefficients coeff;
    coeff.phi1.resize(n_levels);
    coeff.phi2.resize(n_levels);
    coeff.innovation_variance.resize(n_levels);
    const std::size_t T = history.size();
    for (int l = 0; l < n_levels; ++l) {
        double r1 = 0.0, r2 = 0.0;
        for (std::size_t t = 0; t + 1 < T; ++t)
            r1 += pearson(history[t].levels[l], history[t + 1].levels[l], valid);
        r1 /= static_cast<double>(T - 1);
        for (std::size_t t = 0; t + 2 < T; ++t)
            r2 += pearson(history[t].levels[l], history[t + 2].levels[l], valid);
        r2 /= static_cast<double>(T - 2);
        ar2_from_correlations(r1, r2, coeff.phi1[l], coeff.phi2[l],
                              coeff.innovation_variance[l]);
    }
    return coeff;
}

std::vector<float> correlated_noise(const GridField& spectrum_template,
                                    std::uint64_t seed, unsigned member,
                                    unsigned lead) {
    spectrum_template.geometry.validate();
    const int rows = static_cast<int>(spectrum_template.geometry.n_rows);
    const int cols = static_cast<int>(spectrum_template.geometry.n_cols);
    const std::vector<float> tmpl = filled_values(spectrum_template);

    // Draw the white field before taking the lock; it is the only part that
    // depends on the stream key.
    Rng rng{seed, kNoiseStream, member, lead};
    std::vector<float> noise(tmpl.size());
    for (float& x : noise) x = static_cast<float>(rng.normal());

    const auto& k = kernels::ops();
    std::lock_guard<std::mutex> lock(g_fft_mutex);
    FftWorkspace& ws = workspace_for(rows, cols);

    std::copy(tmpl.begin(), tmpl.end(), ws.real);
    fftwf_execute(ws.forward);
    std::vector<float> amplitude(ws.n_spec);
    for (std::size_t bin = 0; bin < ws.n_spec; ++bin)
        amplitude[bin] = std::hypot(ws.spec[bin][0], ws.spec[bin][1]);
    amplitude[0] = 0.0f;  // zero DC: the draw must not shift the mean

    std::copy(noise.begin(), noise.end(), ws.real);
    fftwf_execute(ws.forward);
    for (std::size_t bin = 0; bin < ws.n_spec; ++bin) {
        ws.spec[bin][0] *= amplitude[bin];
        ws.spec[bin][1] *= amplitude[bin];
    }
    fftwf_execute(ws.inverse);

    std::vector<float> out(ws.n_real);
    const float inv_n = 1.0f / static_cast<float>(ws.n_real);
    for (std::size_t p = 0; p < ws.n_real; ++p) out[p] = ws.real[p] * inv_n;

    const kernels::Moments m = k.finite_moments(out.data(), out.size());
    const double std_dev = m.stddev();
    if (std_dev < 1e-20) {
        std::fill(out.begin(), out.end(), 0.0f);
    } else {
        k.normalize(out.data(), out.data(), static_cast<float>(m.mean),
                    static_cast<float>(1.0 / std_dev), out.size());
    }
    return out;
}

ForecastSet solarsteps_forecast(const FieldSequence& input,
                                const NowcastConfig& config) {
    config.validate();
    check_input_window(input);
    const auto& k = kernels::ops();

    const FlowField flow = estimate_flow(input);
    const std::size_t n_fields = input.fields.size();
    const GridField& last = input.fields.back();
    const std::size_t n = last.geometry.size();

    // Co-register the trailing four fields onto the frame of the last one.
    std::array<GridField, 4> aligned;
    for (int back = 3; back >= 0; --back) {
        const GridField& src = input.fields[n_fields - 1 - back];
        aligned[3 - back] = back == 0 ? last : advect(src, flow, back);
    }

    std::vector<std::uint8_t> valid(n, 1);
    for (const GridField& f : aligned)
        for (std::size_t p = 0; p < n; ++p)
            if (!std::isfinite(f.values[p])) valid[p] = 0;

    std::vector<Cascade> history;
    history.reserve(4);
    for (const GridField& f : aligned)
        history.push_back(decompose(f, config.n_levels));
    const ArCoefficients ar = fit_ar2(history, valid);
    const Cascade& anchor = history.back();

    std::vector<double> noise_scale(config.n_levels);
    for (int l = 0; l < config.n_levels; ++l)
        noise_scale[l] =
            config.noise_enabled ? std::sqrt(ar.innovation_variance[l]) : 0.0;

    const GridField tmpl =
        field_from_values(last.geometry, last.timestamp, filled_values(last));
    const std::vector<float> zero_noise(n, 0.0f);

    ForecastSet set = make_set("solarsteps", input, config.seed, config.n_leads,
                               config.n_members);
    for (int e = 0; e < config.n_members; ++e) {
        std::vector<std::vector<float>> x_prev(history[2].levels);
        std::vector<std::vector<float>> x(history[3].levels);
        std::vector<std::vector<float>> x_next(
            config.n_levels, std::vector<float>(n));

        for (int lead = 1; lead <= config.n_leads; ++lead) {
            Cascade noise_cascade;
            const bool draw = config.noise_enabled;
            if (draw) {
                std::vector<float> eps = correlated_noise(
                    tmpl, config.seed, static_cast<unsigned>(e),
                    static_cast<unsigned>(lead));
                noise_cascade = decompose(
                    field_from_values(last.geometry, 0, std::move(eps)),
                    config.n_levels);
            }
            for (int l = 0; l < config.n_levels; ++l) {
                const float* eps_l =
                    draw ? noise_cascade.levels[l].data() : zero_noise.data();
                k.ar2_step(x_next[l].data(), x[l].data(), x_prev[l].data(),
                           eps_l, static_cast<float>(ar.phi1[l]),
                           static_cast<float>(ar.phi2[l]),
                           static_cast<float>(noise_scale[l]), n);
            }
            std::swap(x_prev, x);
            std::swap(x, x_next);

            Cascade state;
            state.geometry = anchor.geometry;
            state.levels = x;
            state.center_wavenumbers = anchor.center_wavenumbers;
            state.level_means = anchor.level_means;
            state.level_stds = anchor.level_stds;
            std::vector<float> values = recombine(state);
            for (std::size_t p = 0; p < n; ++p)
                if (!std::isfinite(last.values[p])) values[p] = kNaN;

            GridField stepped = field_from_values(
                last.geometry, set.issue_time + lead * set.step,
                std::move(values));
            GridField out = advect(stepped, flow, lead);
            k.clip(out.values.data(), 0.0f, config.csi_clip, out.values.size());
            set.fields[lead - 1][e] = std::move(out);
        }
    }
    return set;
}

ForecastSet solarsteps_pa_forecast(const FieldSequence& input,
                                   const NowcastConfig& config) {
    config.validate();
    check_input_window(input);
    const auto& k = kernels::ops();

    const FlowField flow = estimate_flow(input);
    const GridField& last = input.fields.back();

    PerturbationParams params = config.perturbation;
    params.seed = config.seed;

    ForecastSet set = make_set("solarsteps-pa", input, config.seed,
                               config.n_leads, config.n_members);
    for (int e = 0; e < config.n_members; ++e) {
        const FlowField member_flow =
            perturb_flow(flow, params, static_cast<unsigned>(e));
        for (int lead = 1; lead <= config.n_leads; ++lead) {
            GridField out = advect(last, member_flow, lead);
            out.timestamp = set.issue_time + lead * set.step;
            k.clip(out.values.data(), 0.0f, config.csi_clip, out.values.size());
            set.fields[lead - 1][e] = std::move(out);
        }
    }
    return set;
}

ForecastSet persistence_forecast(const FieldSequence& input, int n_leads) {
    if (input.fields.empty())
        throw InsufficientDataError("persistence needs at least one field");
    if (n_leads < 1) throw ConfigError("n_leads must be >= 1");
    const GridField& last = input.fields.back();
    const std::int64_t step = input.step > 0 ? input.step : 900;

    ForecastSet set;
    set.model = "persistence";
    set.geometry = last.geometry;
    set.issue_time = last.timestamp;
    set.step = step;
    set.seed = 0;
    set.fields.resize(n_leads);
    for (int lead = 1; lead <= n_leads; ++lead) {
        GridField f = last;
        f.timestamp = set.issue_time + lead * step;
        set.fields[lead - 1].push_back(std::move(f));
    }
    return set;
}

void save_forecast(const ForecastSet& set, const std::filesystem::path& dir) {
    if (set.fields.empty()) throw EmptyInputError("forecast set is empty");
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

    nlohmann::json manifest;
    manifest["model"] = set.model;
    manifest["issue_time"] = set.issue_time;
    manifest["issue_time_iso"] = format_iso(set.issue_time);
    manifest["step_seconds"] = set.step;
    manifest["n_leads"] = set.n_leads();
    manifest["n_members"] = set.n_members();
    manifest["seed"] = set.seed;
    manifest["geometry"] = {
        {"lon_min", set.geometry.lon_min},   {"lat_min", set.geometry.lat_min},
        {"cell_size", set.geometry.cell_size}, {"n_rows", set.geometry.n_rows},
        {"n_cols", set.geometry.n_cols},
    };

    for (int lead = 1; lead <= set.n_leads(); ++lead)
        for (int e = 0; e < set.n_members(); ++e) {
            const std::string name = "lead" + std::to_string(lead) + "_member" +
                                     std::to_string(e) + ".sgf";
            write_grid(set.at(lead, e), (dir / name).string());
        }

    std::ofstream out(dir / "manifest.json");
    if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
    out << manifest.dump(2) << "\n";
}

ForecastSet load_forecast(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw IoError("cannot read " + (dir / "manifest.json").string());
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("bad manifest in " + dir.string() + ": " + e.what());
    }

    ForecastSet set;
    try {
        set.model = manifest.at("model").get<std::string>();
        set.issue_time = manifest.at("issue_time").get<std::int64_t>();
        set.step = manifest.at("step_seconds").get<std::int64_t>();
        set.seed = manifest.at("seed").get<std::uint64_t>();
        const auto& g = manifest.at("geometry");
        set.geometry.lon_min = g.at("lon_min").get<double>();
        set.geometry.lat_min = g.at("lat_min").get<double>();
        set.geometry.cell_size = g.at("cell_size").get<double>();
        set.geometry.n_rows = g.at("n_rows").get<std::uint32_t>();
        set.geometry.n_cols = g.at("n_cols").get<std::uint32_t>();
        set.fields.resize(manifest.at("n_leads").get<int>());
        const int n_members = manifest.at("n_members").get<int>();
        for (auto& row : set.fields) row.resize(n_members);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("bad manifest in " + dir.string() + ": " + e.what());
    }

    for (int lead = 1; lead <= set.n_leads(); ++lead)
        for (int e = 0; e < set.n_members(); ++e) {
            const std::string name = "lead" + std::to_string(lead) + "_member" +
                                     std::to_string(e) + ".sgf";
            GridField f = read_grid((dir / name).string());
            if (!(f.geometry == set.geometry))
                throw CorruptionError(name + " geometry disagrees with manifest");
            set.fields[lead - 1][e] = std::move(f);
        }
    return set;
}

}  // namespace solarcast

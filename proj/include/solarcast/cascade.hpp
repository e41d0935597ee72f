#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "solarcast/flow.hpp"
#include "solarcast/grid.hpp"

namespace solarcast {

// Spectral decomposition of one field into bandpass levels, largest scale
// first. Levels are stored normalized (zero mean, unit variance); the
// recorded (mean, std) pairs undo that in recombine().
struct Cascade {
    GridGeometry geometry;
    std::vector<std::vector<float>> levels;
    std::vector<double> center_wavenumbers;  // cycles per domain
    std::vector<double> level_means;
    std::vector<double> level_stds;

    int n_levels() const { return static_cast<int>(levels.size()); }
};

// Per-level AR(2) parameters in normalized level space.
struct ArCoefficients {
    std::vector<double> phi1;
    std::vector<double> phi2;
    std::vector<double> innovation_variance;
};

struct NowcastConfig {
    int n_levels = 6;
    int n_members = 10;
    int n_leads = 8;
    float csi_clip = 1.4f;
    std::uint64_t seed = 0;
    bool noise_enabled = true;       // force zero innovation when false
    PerturbationParams perturbation; // motion perturbation for the pa variant

    void validate() const;  // throws ConfigError
};

// Ensemble forecast indexed by [lead][member]; lead index 0 is one step
// after the issue time.
struct ForecastSet {
    std::string model;
    GridGeometry geometry;
    UnixTime issue_time = 0;
    std::int64_t step = 900;
    std::uint64_t seed = 0;
    std::vector<std::vector<GridField>> fields;

    int n_leads() const { return static_cast<int>(fields.size()); }
    int n_members() const {
        return fields.empty() ? 0 : static_cast<int>(fields.front().size());
    }
    // lead is 1-based to match lead time in steps; member is 0-based.
    const GridField& at(int lead, int member) const;
};

// Gaussian bandpass partition in the Fourier domain with log-spaced center
// wavenumbers. Non-finite input pixels are filled with the field mean before
// the transform. Throws DimensionError when min(rows, cols) < 2^n_levels.
Cascade decompose(const GridField& field, int n_levels);

// Inverse of decompose up to the normalization floor: sum of denormalized
// levels.
std::vector<float> recombine(const Cascade& cascade);

// Closed-form Yule-Walker solution for an AR(2) from lag-1/lag-2
// autocorrelations, projected into the stationarity triangle.
void ar2_from_correlations(double r1, double r2, double& phi1, double& phi2,
                           double& innovation_variance);

// Fits per-level AR(2) coefficients from a time-ordered history of cascades
// in a common (Lagrangian) frame. Correlations are computed over pixels where
// `valid` is nonzero; an empty mask means every pixel. Throws
// InsufficientDataError for fewer than three cascades.
ArCoefficients fit_ar2(const std::vector<Cascade>& history,
                       const std::vector<std::uint8_t>& valid = {});

// White Gaussian noise shaped by the template's amplitude spectrum, zero DC,
// renormalized to zero mean and unit variance. Deterministic in
// (seed, member, lead).
std::vector<float> correlated_noise(const GridField& spectrum_template,
                                    std::uint64_t seed, unsigned member,
                                    unsigned lead);

// The full SolarSTEPS chain: optical flow, Lagrangian co-registration,
// spectral cascade, per-level AR(2) evolution with correlated noise,
// recombination, advection, clipping.
ForecastSet solarsteps_forecast(const FieldSequence& input,
                                const NowcastConfig& config);

// Pure-advection variant: member e advects the last field along
// perturb_flow(flow, ., e); no cascade, no AR.
ForecastSet solarsteps_pa_forecast(const FieldSequence& input,
                                   const NowcastConfig& config);

// Single-member baseline: every lead repeats the last observed field.
ForecastSet persistence_forecast(const FieldSequence& input, int n_leads);

// Directory layout: lead{L}_member{E}.sgf plus manifest.json.
void save_forecast(const ForecastSet& set, const std::filesystem::path& dir);
ForecastSet load_forecast(const std::filesystem::path& dir);

}  // namespace solarcast

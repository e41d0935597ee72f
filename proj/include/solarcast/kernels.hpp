#pragma once

#include <cstddef>
#include <string>

namespace solarcast::kernels {

// Inner-loop kernels used by the field pipeline. Every operation has a scalar
// reference implementation and, on x86-64 with AVX2+FMA, a vectorized variant.
// The backend is resolved once at startup (SOLARCAST_KERNELS=scalar|avx2
// overrides detection); force_backend() pins it explicitly, which the
// equivalence tests use to run both paths on identical inputs.
enum class Backend { Scalar, Avx2 };

// Moments of the finite entries of an array; mean/m2 are 0 when count is 0.
struct Moments {
    double count = 0.0;
    double mean = 0.0;
    double m2 = 0.0;  // sum of squared deviations from the mean

    double variance() const { return count > 0 ? m2 / count : 0.0; }
    double stddev() const;
};

struct Ops {
    // out[i] = phi1*x[i] + phi2*x_prev[i] + noise_scale*noise[i]
    void (*ar2_step)(float* out, const float* x, const float* x_prev,
                     const float* noise, float phi1, float phi2, float noise_scale,
                     std::size_t n);

    // acc[i] += scale * x[i]
    void (*axpy)(float* acc, const float* x, float scale, std::size_t n);

    // out[i] = (x[i] - mean) * inv_std
    void (*normalize)(float* out, const float* x, float mean, float inv_std,
                      std::size_t n);

    // Clamp finite values to [lo, hi]; NaN passes through unchanged.
    void (*clip)(float* values, float lo, float hi, std::size_t n);

    // csi = ssi/cs where cs > threshold, else NaN; result clamped to
    // [0, clip_max]; NaN ssi propagates.
    void (*csi_from_ssi)(float* out, const float* ssi, const float* cs,
                         float threshold, float clip_max, std::size_t n);

    // ssi = csi*cs where cs > threshold, else 0; NaN csi propagates where
    // cs > threshold.
    void (*ssi_from_csi)(float* out, const float* csi, const float* cs,
                         float threshold, std::size_t n);

    // Replace non-finite entries with fill.
    void (*fill_nonfinite)(float* values, float fill, std::size_t n);

    // Compensated count/mean/m2 over finite entries.
    Moments (*finite_moments)(const float* values, std::size_t n);

    // Backward semi-Lagrangian step: out(i,j) samples src bilinearly at
    // (j - disp*u(i,j), i - disp*v(i,j)); row index grows northward, column
    // index eastward. Samples outside [0,cols-1]x[0,rows-1] and samples with
    // any NaN corner yield NaN.
    void (*semi_lagrangian)(float* out, const float* src, const float* u,
                            const float* v, std::size_t rows, std::size_t cols,
                            float disp);
};

// Table of the active backend.
const Ops& ops();
// Table of a specific backend; throws if unavailable on this machine.
const Ops& ops(Backend backend);

Backend active_backend();
bool backend_available(Backend backend);
void force_backend(Backend backend);
std::string backend_name(Backend backend);

}  // namespace solarcast::kernels

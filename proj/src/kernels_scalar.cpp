#include <cmath>
#include <limits>

#include "kernels_internal.hpp"

namespace solarcast::kernels {

namespace {

constexpr float kNaN = std::numeric_limits<float>::quiet_NaN();

void ar2_step_scalar(float* out, const float* x, const float* x_prev,
                     const float* noise, float phi1, float phi2,
                     float noise_scale, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        out[i] = phi1 * x[i] + phi2 * x_prev[i] + noise_scale * noise[i];
}

void axpy_scalar(float* acc, const float* x, float scale, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) acc[i] += scale * x[i];
}

void normalize_scalar(float* out, const float* x, float mean, float inv_std,
                      std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = (x[i] - mean) * inv_std;
}

void clip_scalar(float* values, float lo, float hi, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        const float v = values[i];
        if (v < lo)
            values[i] = lo;
        else if (v > hi)
            values[i] = hi;
        // NaN fails both comparisons and is left untouched.
    }
}

void csi_from_ssi_scalar(float* out, const float* ssi, const float* cs,
                         float threshold, float clip_max, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        if (!(cs[i] > threshold)) {
            out[i] = kNaN;
            continue;
        }
        float v = ssi[i] / cs[i];
        if (v < 0.0f)
            v = 0.0f;
        else if (v > clip_max)
            v = clip_max;
        out[i] = v;  // NaN ssi stays NaN through both branches
    }
}

void ssi_from_csi_scalar(float* out, const float* csi, const float* cs,
                         float threshold, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        out[i] = (cs[i] > threshold) ? csi[i] * cs[i] : 0.0f;
}

void fill_nonfinite_scalar(float* values, float fill, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        if (!std::isfinite(values[i])) values[i] = fill;
}

Moments finite_moments_scalar(const float* values, std::size_t n) {
    // Neumaier-compensated sums of x and x^2 in double; m2 is reconstructed
    // from the raw moments, which is accurate at the O(1) magnitudes the
    // cascade feeds through here.
    double sum = 0.0, sum_c = 0.0;
    double sq = 0.0, sq_c = 0.0;
    double count = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const float v = values[i];
        if (!std::isfinite(v)) continue;
        const double x = static_cast<double>(v);
        double t = sum + x;
        sum_c += (std::abs(sum) >= std::abs(x)) ? (sum - t) + x : (x - t) + sum;
        sum = t;
        const double x2 = x * x;
        t = sq + x2;
        sq_c += (std::abs(sq) >= std::abs(x2)) ? (sq - t) + x2 : (x2 - t) + sq;
        sq = t;
        count += 1.0;
    }
    Moments m;
    m.count = count;
    if (count > 0.0) {
        const double s = sum + sum_c;
        m.mean = s / count;
        const double m2 = (sq + sq_c) - s * s / count;
        m.m2 = m2 > 0.0 ? m2 : 0.0;
    }
    return m;
}

void semi_lagrangian_scalar(float* out, const float* src, const float* u,
                            const float* v, std::size_t rows, std::size_t cols,
                            float disp) {
    const double max_x = static_cast<double>(cols) - 1.0;
    const double max_y = static_cast<double>(rows) - 1.0;
    if (rows < 2 || cols < 2) {
        // Too small for a 2x2 bilinear stencil: nearest sample instead.
        for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < cols; ++j) {
                const std::size_t idx = i * cols + j;
                const double xs = static_cast<double>(j) -
                                  static_cast<double>(disp) * static_cast<double>(u[idx]);
                const double ys = static_cast<double>(i) -
                                  static_cast<double>(disp) * static_cast<double>(v[idx]);
                if (!(xs >= 0.0 && xs <= max_x && ys >= 0.0 && ys <= max_y)) {
                    out[idx] = kNaN;
                    continue;
                }
                const std::size_t xr = static_cast<std::size_t>(xs + 0.5);
                const std::size_t yr = static_cast<std::size_t>(ys + 0.5);
                out[idx] = src[yr * cols + xr];
            }
        }
        return;
    }
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            const std::size_t idx = i * cols + j;
            const double xs = static_cast<double>(j) -
                              static_cast<double>(disp) * static_cast<double>(u[idx]);
            const double ys = static_cast<double>(i) -
                              static_cast<double>(disp) * static_cast<double>(v[idx]);
            if (!(xs >= 0.0 && xs <= max_x && ys >= 0.0 && ys <= max_y)) {
                out[idx] = kNaN;  // outside the domain, or NaN flow
                continue;
            }
            std::size_t x0 = static_cast<std::size_t>(xs);
            std::size_t y0 = static_cast<std::size_t>(ys);
            if (x0 >= cols - 1) x0 = cols - 2;
            if (y0 >= rows - 1) y0 = rows - 2;
            const double tx = xs - static_cast<double>(x0);
            const double ty = ys - static_cast<double>(y0);
            const double s00 = src[y0 * cols + x0];
            const double s01 = src[y0 * cols + x0 + 1];
            const double s10 = src[(y0 + 1) * cols + x0];
            const double s11 = src[(y0 + 1) * cols + x0 + 1];
            const double top = (1.0 - tx) * s00 + tx * s01;
            const double bot = (1.0 - tx) * s10 + tx * s11;
            out[idx] = static_cast<float>((1.0 - ty) * top + ty * bot);
        }
    }
}

}  // namespace

const Ops& scalar_ops() {
    static const Ops table = {
        ar2_step_scalar,       axpy_scalar,          normalize_scalar,
        clip_scalar,           csi_from_ssi_scalar,  ssi_from_csi_scalar,
        fill_nonfinite_scalar, finite_moments_scalar, semi_lagrangian_scalar,
    };
    return table;
}

}  // namespace solarcast::kernels

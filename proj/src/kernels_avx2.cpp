#include "kernels_internal.hpp"

// Compiled with -mavx2 -mfma on x86-64 (see CMakeLists); on other targets this
// translation unit only provides the null registration below. The vector
// bodies deliberately mirror the scalar reference operation-for-operation —
// explicit mul/add rather than FMA — so both backends produce bitwise
// identical maps; only the reductions differ in associativity.

#if defined(__AVX2__)

#include <immintrin.h>

#include <cmath>
#include <cstdint>
#include <limits>

namespace solarcast::kernels {

namespace {

constexpr float kNaN = std::numeric_limits<float>::quiet_NaN();

void ar2_step_avx2(float* out, const float* x, const float* x_prev,
                   const float* noise, float phi1, float phi2, float noise_scale,
                   std::size_t n) {
    const __m256 p1 = _mm256_set1_ps(phi1);
    const __m256 p2 = _mm256_set1_ps(phi2);
    const __m256 ns = _mm256_set1_ps(noise_scale);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 a = _mm256_mul_ps(p1, _mm256_loadu_ps(x + i));
        const __m256 b = _mm256_mul_ps(p2, _mm256_loadu_ps(x_prev + i));
        const __m256 c = _mm256_mul_ps(ns, _mm256_loadu_ps(noise + i));
        _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_add_ps(a, b), c));
    }
    for (; i < n; ++i)
        out[i] = phi1 * x[i] + phi2 * x_prev[i] + noise_scale * noise[i];
}

void axpy_avx2(float* acc, const float* x, float scale, std::size_t n) {
    const __m256 s = _mm256_set1_ps(scale);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 a = _mm256_loadu_ps(acc + i);
        const __m256 v = _mm256_mul_ps(s, _mm256_loadu_ps(x + i));
        _mm256_storeu_ps(acc + i, _mm256_add_ps(a, v));
    }
    for (; i < n; ++i) acc[i] += scale * x[i];
}

void normalize_avx2(float* out, const float* x, float mean, float inv_std,
                    std::size_t n) {
    const __m256 m = _mm256_set1_ps(mean);
    const __m256 s = _mm256_set1_ps(inv_std);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 v = _mm256_sub_ps(_mm256_loadu_ps(x + i), m);
        _mm256_storeu_ps(out + i, _mm256_mul_ps(v, s));
    }
    for (; i < n; ++i) out[i] = (x[i] - mean) * inv_std;
}

void clip_avx2(float* values, float lo, float hi, std::size_t n) {
    const __m256 vlo = _mm256_set1_ps(lo);
    const __m256 vhi = _mm256_set1_ps(hi);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 v = _mm256_loadu_ps(values + i);
        // min/max return the second operand on NaN, so clamp then restore NaN.
        const __m256 clamped = _mm256_max_ps(_mm256_min_ps(v, vhi), vlo);
        const __m256 nan_mask = _mm256_cmp_ps(v, v, _CMP_UNORD_Q);
        _mm256_storeu_ps(values + i, _mm256_blendv_ps(clamped, v, nan_mask));
    }
    for (; i < n; ++i) {
        const float v = values[i];
        if (v < lo)
            values[i] = lo;
        else if (v > hi)
            values[i] = hi;
    }
}

void csi_from_ssi_avx2(float* out, const float* ssi, const float* cs,
                       float threshold, float clip_max, std::size_t n) {
    const __m256 thr = _mm256_set1_ps(threshold);
    const __m256 cmax = _mm256_set1_ps(clip_max);
    const __m256 zero = _mm256_setzero_ps();
    const __m256 nan = _mm256_set1_ps(kNaN);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 c = _mm256_loadu_ps(cs + i);
        const __m256 valid = _mm256_cmp_ps(c, thr, _CMP_GT_OQ);
        const __m256 v = _mm256_div_ps(_mm256_loadu_ps(ssi + i), c);
        const __m256 clamped = _mm256_max_ps(_mm256_min_ps(v, cmax), zero);
        const __m256 nan_mask = _mm256_cmp_ps(v, v, _CMP_UNORD_Q);
        const __m256 kept = _mm256_blendv_ps(clamped, v, nan_mask);
        _mm256_storeu_ps(out + i, _mm256_blendv_ps(nan, kept, valid));
    }
    for (; i < n; ++i) {
        if (!(cs[i] > threshold)) {
            out[i] = kNaN;
            continue;
        }
        float v = ssi[i] / cs[i];
        if (v < 0.0f)
            v = 0.0f;
        else if (v > clip_max)
            v = clip_max;
        out[i] = v;
    }
}

void ssi_from_csi_avx2(float* out, const float* csi, const float* cs,
                       float threshold, std::size_t n) {
    const __m256 thr = _mm256_set1_ps(threshold);
    const __m256 zero = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 c = _mm256_loadu_ps(cs + i);
        const __m256 valid = _mm256_cmp_ps(c, thr, _CMP_GT_OQ);
        const __m256 prod = _mm256_mul_ps(_mm256_loadu_ps(csi + i), c);
        _mm256_storeu_ps(out + i, _mm256_blendv_ps(zero, prod, valid));
    }
    for (; i < n; ++i) out[i] = (cs[i] > threshold) ? csi[i] * cs[i] : 0.0f;
}

void fill_nonfinite_avx2(float* values, float fill, std::size_t n) {
    const __m256 vfill = _mm256_set1_ps(fill);
    const __m256 abs_mask = _mm256_castsi256_ps(_mm256_set1_epi32(0x7fffffff));
    const __m256 inf = _mm256_set1_ps(std::numeric_limits<float>::infinity());
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 v = _mm256_loadu_ps(values + i);
        const __m256 finite =
            _mm256_cmp_ps(_mm256_and_ps(v, abs_mask), inf, _CMP_LT_OQ);
        _mm256_storeu_ps(values + i, _mm256_blendv_ps(vfill, v, finite));
    }
    for (; i < n; ++i)
        if (!std::isfinite(values[i])) values[i] = fill;
}

// One Neumaier accumulation step on four double lanes.
inline void neumaier_add(__m256d& sum, __m256d& comp, __m256d x) {
    const __m256d abs_mask = _mm256_castsi256_pd(
        _mm256_set1_epi64x(0x7fffffffffffffffLL));
    const __m256d t = _mm256_add_pd(sum, x);
    const __m256d big_sum = _mm256_cmp_pd(_mm256_and_pd(sum, abs_mask),
                                          _mm256_and_pd(x, abs_mask), _CMP_GE_OQ);
    const __m256d a = _mm256_add_pd(_mm256_sub_pd(sum, t), x);  // |sum| >= |x|
    const __m256d b = _mm256_add_pd(_mm256_sub_pd(x, t), sum);
    comp = _mm256_add_pd(comp, _mm256_blendv_pd(b, a, big_sum));
    sum = t;
}

Moments finite_moments_avx2(const float* values, std::size_t n) {
    __m256d sum = _mm256_setzero_pd(), sum_c = _mm256_setzero_pd();
    __m256d sq = _mm256_setzero_pd(), sq_c = _mm256_setzero_pd();
    __m256d count = _mm256_setzero_pd();
    const __m256 abs_mask = _mm256_castsi256_ps(_mm256_set1_epi32(0x7fffffff));
    const __m256 inf = _mm256_set1_ps(std::numeric_limits<float>::infinity());
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m128 vf = _mm_loadu_ps(values + i);
        const __m128 finite128 = _mm_cmplt_ps(
            _mm_and_ps(vf, _mm256_castps256_ps128(abs_mask)),
            _mm256_castps256_ps128(inf));
        const __m256d x = _mm256_cvtps_pd(_mm_blendv_ps(_mm_setzero_ps(), vf,
                                                        finite128));
        const __m256d finite = _mm256_cvtps_pd(
            _mm_and_ps(finite128, _mm_set1_ps(1.0f)));
        count = _mm256_add_pd(count, finite);
        neumaier_add(sum, sum_c, x);
        neumaier_add(sq, sq_c, _mm256_mul_pd(x, x));
    }
    alignas(32) double ls[4], lc[4], qs[4], qc[4], cn[4];
    _mm256_store_pd(ls, sum);
    _mm256_store_pd(lc, sum_c);
    _mm256_store_pd(qs, sq);
    _mm256_store_pd(qc, sq_c);
    _mm256_store_pd(cn, count);
    double s = 0.0, s_c = 0.0, q = 0.0, q_c = 0.0, total = 0.0;
    auto fold = [](double& acc, double& comp, double x) {
        const double t = acc + x;
        comp += (std::abs(acc) >= std::abs(x)) ? (acc - t) + x : (x - t) + acc;
        acc = t;
    };
    for (int lane = 0; lane < 4; ++lane) {
        fold(s, s_c, ls[lane]);
        s_c += lc[lane];
        fold(q, q_c, qs[lane]);
        q_c += qc[lane];
        total += cn[lane];
    }
    for (; i < n; ++i) {
        const float v = values[i];
        if (!std::isfinite(v)) continue;
        const double x = static_cast<double>(v);
        fold(s, s_c, x);
        fold(q, q_c, x * x);
        total += 1.0;
    }
    Moments m;
    m.count = total;
    if (total > 0.0) {
        const double sv = s + s_c;
        m.mean = sv / total;
        const double m2 = (q + q_c) - sv * sv / total;
        m.m2 = m2 > 0.0 ? m2 : 0.0;
    }
    return m;
}

void semi_lagrangian_avx2(float* out, const float* src, const float* u,
                          const float* v, std::size_t rows, std::size_t cols,
                          float disp) {
    if (rows < 2 || cols < 2) {
        scalar_ops().semi_lagrangian(out, src, u, v, rows, cols, disp);
        return;
    }
    const __m256d max_x = _mm256_set1_pd(static_cast<double>(cols) - 1.0);
    const __m256d max_y = _mm256_set1_pd(static_cast<double>(rows) - 1.0);
    const __m256d zero = _mm256_setzero_pd();
    const __m256d one = _mm256_set1_pd(1.0);
    const __m256d nan = _mm256_set1_pd(std::numeric_limits<double>::quiet_NaN());
    const __m256d vdisp = _mm256_set1_pd(static_cast<double>(disp));
    const __m128i max_x0 = _mm_set1_epi32(static_cast<int>(cols) - 2);
    const __m128i max_y0 = _mm_set1_epi32(static_cast<int>(rows) - 2);
    const __m128i izero = _mm_setzero_si128();
    const __m128i icols = _mm_set1_epi32(static_cast<int>(cols));
    for (std::size_t i = 0; i < rows; ++i) {
        const __m256d yi = _mm256_set1_pd(static_cast<double>(i));
        std::size_t j = 0;
        for (; j + 4 <= cols; j += 4) {
            const std::size_t idx = i * cols + j;
            const __m256d uj = _mm256_cvtps_pd(_mm_loadu_ps(u + idx));
            const __m256d vj = _mm256_cvtps_pd(_mm_loadu_ps(v + idx));
            const __m256d xj = _mm256_set_pd(
                static_cast<double>(j + 3), static_cast<double>(j + 2),
                static_cast<double>(j + 1), static_cast<double>(j));
            const __m256d xs = _mm256_sub_pd(xj, _mm256_mul_pd(vdisp, uj));
            const __m256d ys = _mm256_sub_pd(yi, _mm256_mul_pd(vdisp, vj));
            const __m256d ok = _mm256_and_pd(
                _mm256_and_pd(_mm256_cmp_pd(xs, zero, _CMP_GE_OQ),
                              _mm256_cmp_pd(xs, max_x, _CMP_LE_OQ)),
                _mm256_and_pd(_mm256_cmp_pd(ys, zero, _CMP_GE_OQ),
                              _mm256_cmp_pd(ys, max_y, _CMP_LE_OQ)));
            // Truncate, then clamp to a safe gather window; invalid lanes are
            // overwritten with NaN after the blend below.
            __m128i x0 = _mm256_cvttpd_epi32(xs);
            __m128i y0 = _mm256_cvttpd_epi32(ys);
            x0 = _mm_min_epi32(_mm_max_epi32(x0, izero), max_x0);
            y0 = _mm_min_epi32(_mm_max_epi32(y0, izero), max_y0);
            const __m256d tx = _mm256_sub_pd(xs, _mm256_cvtepi32_pd(x0));
            const __m256d ty = _mm256_sub_pd(ys, _mm256_cvtepi32_pd(y0));
            const __m128i base = _mm_add_epi32(_mm_mullo_epi32(y0, icols), x0);
            const __m256d s00 = _mm256_cvtps_pd(
                _mm_i32gather_ps(src, base, 4));
            const __m256d s01 = _mm256_cvtps_pd(
                _mm_i32gather_ps(src, _mm_add_epi32(base, _mm_set1_epi32(1)), 4));
            const __m128i base1 = _mm_add_epi32(base, icols);
            const __m256d s10 = _mm256_cvtps_pd(
                _mm_i32gather_ps(src, base1, 4));
            const __m256d s11 = _mm256_cvtps_pd(
                _mm_i32gather_ps(src, _mm_add_epi32(base1, _mm_set1_epi32(1)), 4));
            const __m256d wx = _mm256_sub_pd(one, tx);
            const __m256d top = _mm256_add_pd(_mm256_mul_pd(wx, s00),
                                              _mm256_mul_pd(tx, s01));
            const __m256d bot = _mm256_add_pd(_mm256_mul_pd(wx, s10),
                                              _mm256_mul_pd(tx, s11));
            const __m256d val = _mm256_add_pd(
                _mm256_mul_pd(_mm256_sub_pd(one, ty), top),
                _mm256_mul_pd(ty, bot));
            const __m256d blended = _mm256_blendv_pd(nan, val, ok);
            _mm_storeu_ps(out + idx, _mm256_cvtpd_ps(blended));
        }
        for (; j < cols; ++j) {
            const std::size_t idx = i * cols + j;
            const double xs = static_cast<double>(j) -
                              static_cast<double>(disp) * static_cast<double>(u[idx]);
            const double ys = static_cast<double>(i) -
                              static_cast<double>(disp) * static_cast<double>(v[idx]);
            if (!(xs >= 0.0 && xs <= static_cast<double>(cols) - 1.0 &&
                  ys >= 0.0 && ys <= static_cast<double>(rows) - 1.0)) {
                out[idx] = kNaN;
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

const Ops avx2_table = {
    ar2_step_avx2,       axpy_avx2,          normalize_avx2,
    clip_avx2,           csi_from_ssi_avx2,  ssi_from_csi_avx2,
    fill_nonfinite_avx2, finite_moments_avx2, semi_lagrangian_avx2,
};

}  // namespace

const Ops* avx2_ops_or_null() { return &avx2_table; }

}  // namespace solarcast::kernels

#else  // !__AVX2__

namespace solarcast::kernels {
const Ops* avx2_ops_or_null() { return nullptr; }
}  // namespace solarcast::kernels

#endif

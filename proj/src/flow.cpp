#include "solarcast/flow.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "solarcast/kernels.hpp"
#include "solarcast/rng.hpp"

namespace solarcast {

namespace {

constexpr float kNaN = std::numeric_limits<float>::quiet_NaN();
constexpr double kPi = 3.14159265358979323846;

struct Image {
    int rows = 0;
    int cols = 0;
    std::vector<float> data;

    Image() = default;
    Image(int r, int c, float fill = 0.0f)
        : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}
    float at(int i, int j) const {
        return data[static_cast<std::size_t>(i) * cols + j];
    }
    float& at(int i, int j) {
        return data[static_cast<std::size_t>(i) * cols + j];
    }
    std::size_t size() const { return data.size(); }
};

std::vector<float> gaussian_kernel(int radius) {
    const double sigma = std::max(1.0, radius / 2.0);
    std::vector<float> k(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int o = -radius; o <= radius; ++o) {
        const double w = std::exp(-0.5 * (o * o) / (sigma * sigma));
        k[static_cast<std::size_t>(o + radius)] = static_cast<float>(w);
        sum += w;
    }
    for (auto& w : k) w = static_cast<float>(w / sum);
    return k;
}

// Separable blur with border truncation + renormalization; inputs carry no
// NaN (invalid pixels are pre-masked to zero alongside a 0/1 weight image).
Image blur(const Image& src, const std::vector<float>& kernel) {
    const int radius = (static_cast<int>(kernel.size()) - 1) / 2;
    Image tmp(src.rows, src.cols);
    for (int i = 0; i < src.rows; ++i) {
        for (int j = 0; j < src.cols; ++j) {
            double acc = 0.0, wsum = 0.0;
            const int lo = std::max(-radius, -j);
            const int hi = std::min(radius, src.cols - 1 - j);
            for (int o = lo; o <= hi; ++o) {
                const double w = kernel[static_cast<std::size_t>(o + radius)];
                acc += w * src.at(i, j + o);
                wsum += w;
            }
            tmp.at(i, j) = static_cast<float>(acc / wsum);
        }
    }
    Image out(src.rows, src.cols);
    for (int i = 0; i < src.rows; ++i) {
        for (int j = 0; j < src.cols; ++j) {
            double acc = 0.0, wsum = 0.0;
            const int lo = std::max(-radius, -i);
            const int hi = std::min(radius, src.rows - 1 - i);
            for (int o = lo; o <= hi; ++o) {
                const double w = kernel[static_cast<std::size_t>(o + radius)];
                acc += w * tmp.at(i + o, j);
                wsum += w;
            }
            out.at(i, j) = static_cast<float>(acc / wsum);
        }
    }
    return out;
}

// 2x2 block mean ignoring NaN; odd trailing row/col folded into the last block.
Image half_size(const Image& src) {
    const int rows = std::max(1, src.rows / 2);
    const int cols = std::max(1, src.cols / 2);
    Image out(rows, cols, kNaN);
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) {
            const int i1 = std::min(2 * i + 1, src.rows - 1);
            const int j1 = std::min(2 * j + 1, src.cols - 1);
            double sum = 0.0;
            int count = 0;
            for (int a = 2 * i; a <= i1; ++a)
                for (int b = 2 * j; b <= j1; ++b) {
                    const float v = src.at(a, b);
                    if (std::isfinite(v)) {
                        sum += v;
                        ++count;
                    }
                }
            if (count > 0) out.at(i, j) = static_cast<float>(sum / count);
        }
    }
    return out;
}

// Bilinear resize for the (NaN-free) flow components between pyramid levels.
Image resize_bilinear(const Image& src, int rows, int cols) {
    Image out(rows, cols);
    const double sy = rows > 1 ? static_cast<double>(src.rows - 1) / (rows - 1) : 0.0;
    const double sx = cols > 1 ? static_cast<double>(src.cols - 1) / (cols - 1) : 0.0;
    for (int i = 0; i < rows; ++i) {
        const double y = i * sy;
        int y0 = static_cast<int>(y);
        if (y0 >= src.rows - 1) y0 = std::max(0, src.rows - 2);
        const double ty = src.rows > 1 ? y - y0 : 0.0;
        const int y1 = std::min(y0 + 1, src.rows - 1);
        for (int j = 0; j < cols; ++j) {
            const double x = j * sx;
            int x0 = static_cast<int>(x);
            if (x0 >= src.cols - 1) x0 = std::max(0, src.cols - 2);
            const double tx = src.cols > 1 ? x - x0 : 0.0;
            const int x1 = std::min(x0 + 1, src.cols - 1);
            const double top = (1.0 - tx) * src.at(y0, x0) + tx * src.at(y0, x1);
            const double bot = (1.0 - tx) * src.at(y1, x0) + tx * src.at(y1, x1);
            out.at(i, j) = static_cast<float>((1.0 - ty) * top + ty * bot);
        }
    }
    return out;
}

// g(x) = f(x + d(x)) with bilinear sampling; out-of-domain or NaN-corner
// samples become NaN and drop out of the window sums.
Image warp_forward(const Image& f, const Image& u, const Image& v) {
    Image out(f.rows, f.cols, kNaN);
    const double max_x = f.cols - 1.0;
    const double max_y = f.rows - 1.0;
    for (int i = 0; i < f.rows; ++i) {
        for (int j = 0; j < f.cols; ++j) {
            const double xs = j + static_cast<double>(u.at(i, j));
            const double ys = i + static_cast<double>(v.at(i, j));
            if (!(xs >= 0.0 && xs <= max_x && ys >= 0.0 && ys <= max_y))
                continue;
            int x0 = static_cast<int>(xs);
            int y0 = static_cast<int>(ys);
            if (x0 >= f.cols - 1) x0 = std::max(0, f.cols - 2);
            if (y0 >= f.rows - 1) y0 = std::max(0, f.rows - 2);
            const int x1 = std::min(x0 + 1, f.cols - 1);
            const int y1 = std::min(y0 + 1, f.rows - 1);
            const double tx = xs - x0;
            const double ty = ys - y0;
            const double s00 = f.at(y0, x0);
            const double s01 = f.at(y0, x1);
            const double s10 = f.at(y1, x0);
            const double s11 = f.at(y1, x1);
            const double top = (1.0 - tx) * s00 + tx * s01;
            const double bot = (1.0 - tx) * s10 + tx * s11;
            out.at(i, j) = static_cast<float>((1.0 - ty) * top + ty * bot);
        }
    }
    return out;
}

void central_gradients(const Image& f, Image& gx, Image& gy) {
    gx = Image(f.rows, f.cols, kNaN);
    gy = Image(f.rows, f.cols, kNaN);
    for (int i = 0; i < f.rows; ++i) {
        for (int j = 0; j < f.cols; ++j) {
            const int jl = std::max(0, j - 1), jr = std::min(f.cols - 1, j + 1);
            const int ib = std::max(0, i - 1), it = std::min(f.rows - 1, i + 1);
            const float fr = f.at(i, jr), fl = f.at(i, jl);
            const float ft = f.at(it, j), fb = f.at(ib, j);
            if (std::isfinite(fr) && std::isfinite(fl))
                gx.at(i, j) = (fr - fl) / static_cast<float>(jr - jl);
            if (std::isfinite(ft) && std::isfinite(fb))
                gy.at(i, j) = (ft - fb) / static_cast<float>(it - ib);
        }
    }
}

// One Lucas-Kanade pyramid level: refines (u, v) in place and records which
// pixels were well-conditioned on the final sweep.
void lk_refine_level(const Image& f0, const Image& f1, Image& u, Image& v,
                     std::vector<bool>& conditioned, const LkParams& params) {
    const auto kernel = gaussian_kernel(params.window_half_width);
    Image gx, gy;
    central_gradients(f0, gx, gy);

    conditioned.assign(f0.size(), false);
    for (int iter = 0; iter < params.warp_iterations; ++iter) {
        const Image g = warp_forward(f1, u, v);

        Image xx(f0.rows, f0.cols), xy(f0.rows, f0.cols), yy(f0.rows, f0.cols);
        Image xt(f0.rows, f0.cols), yt(f0.rows, f0.cols), mask(f0.rows, f0.cols);
        for (std::size_t p = 0; p < f0.size(); ++p) {
            const float a = gx.data[p], b = gy.data[p];
            const float dt = g.data[p] - f0.data[p];
            if (std::isfinite(a) && std::isfinite(b) && std::isfinite(dt)) {
                xx.data[p] = a * a;
                xy.data[p] = a * b;
                yy.data[p] = b * b;
                xt.data[p] = a * dt;
                yt.data[p] = b * dt;
                mask.data[p] = 1.0f;
            }
        }
        const Image bxx = blur(xx, kernel), bxy = blur(xy, kernel);
        const Image byy = blur(yy, kernel), bxt = blur(xt, kernel);
        const Image byt = blur(yt, kernel), bmask = blur(mask, kernel);

        for (std::size_t p = 0; p < f0.size(); ++p) {
            const double w = bmask.data[p];
            if (w < params.min_valid_fraction) {
                conditioned[p] = false;
                continue;
            }
            const double sxx = bxx.data[p] / w, sxy = bxy.data[p] / w;
            const double syy = byy.data[p] / w;
            const double tr = sxx + syy;
            const double disc =
                std::sqrt((sxx - syy) * (sxx - syy) + 4.0 * sxy * sxy);
            const double lambda_min = 0.5 * (tr - disc);
            if (lambda_min < params.min_eigenvalue) {
                conditioned[p] = false;
                continue;
            }
            const double sxt = bxt.data[p] / w, syt = byt.data[p] / w;
            const double det = sxx * syy - sxy * sxy;
            const double du = -(syy * sxt - sxy * syt) / det;
            const double dv = -(sxx * syt - sxy * sxt) / det;
            // Keep each refinement inside the window's catch radius.
            const double cap = params.window_half_width;
            u.data[p] += static_cast<float>(std::clamp(du, -cap, cap));
            v.data[p] += static_cast<float>(std::clamp(dv, -cap, cap));
            conditioned[p] = true;
        }
    }
}

// Inverse-distance fill of unconditioned pixels from the nearest ring of
// conditioned ones; zero motion when the whole field is unconditioned.
void idw_fill(Image& u, Image& v, const std::vector<bool>& conditioned) {
    const int rows = u.rows, cols = u.cols;
    bool any = false;
    for (bool c : conditioned)
        if (c) {
            any = true;
            break;
        }
    if (!any) {
        std::fill(u.data.begin(), u.data.end(), 0.0f);
        std::fill(v.data.begin(), v.data.end(), 0.0f);
        return;
    }
    const Image u_src = u, v_src = v;
    const int max_ring = std::max(rows, cols);
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) {
            const std::size_t p = static_cast<std::size_t>(i) * cols + j;
            if (conditioned[p]) continue;
            double wsum = 0.0, usum = 0.0, vsum = 0.0;
            bool found = false;
            for (int r = 1; r <= max_ring; ++r) {
                const int i0 = std::max(0, i - r), i1 = std::min(rows - 1, i + r);
                const int j0 = std::max(0, j - r), j1 = std::min(cols - 1, j + r);
                for (int a = i0; a <= i1; ++a) {
                    for (int b = j0; b <= j1; ++b) {
                        if (std::max(std::abs(a - i), std::abs(b - j)) != r)
                            continue;  // ring perimeter only
                        const std::size_t q =
                            static_cast<std::size_t>(a) * cols + b;
                        if (!conditioned[q]) continue;
                        const double d2 = static_cast<double>(a - i) * (a - i) +
                                          static_cast<double>(b - j) * (b - j);
                        const double w = 1.0 / d2;
                        wsum += w;
                        usum += w * u_src.data[q];
                        vsum += w * v_src.data[q];
                        found = true;
                    }
                }
                if (found) break;  // nearest non-empty ring only
            }
            u.data[p] = static_cast<float>(usum / wsum);
            v.data[p] = static_cast<float>(vsum / wsum);
        }
    }
}

}  // namespace

FlowField estimate_flow(const FieldSequence& seq, const LkParams& params) {
    if (seq.fields.size() < 2)
        throw InsufficientDataError("estimate_flow needs at least 2 fields");
    const GridGeometry& geom = seq.fields.front().geometry;
    const int rows = static_cast<int>(geom.n_rows);
    const int cols = static_cast<int>(geom.n_cols);
    const std::size_t n = geom.size();

    // Joint NaN gate and normalization moments across the whole sequence.
    double sum = 0.0, sq = 0.0;
    std::size_t finite_count = 0, total = 0;
    for (const GridField& f : seq.fields) {
        const kernels::Moments m =
            kernels::ops().finite_moments(f.values.data(), f.values.size());
        finite_count += static_cast<std::size_t>(m.count);
        total += f.values.size();
        sum += m.mean * m.count;
        sq += m.m2 + m.mean * m.mean * m.count;
    }
    if (total == 0 || static_cast<double>(total - finite_count) >
                          params.max_nan_fraction * static_cast<double>(total))
        throw DataQualityError("estimate_flow: more than half the input is NaN");

    FlowField flow;
    flow.geometry = geom;
    flow.u.assign(n, 0.0f);
    flow.v.assign(n, 0.0f);
    if (finite_count == 0) return flow;

    const double mean = sum / static_cast<double>(finite_count);
    const double var =
        std::max(0.0, sq / static_cast<double>(finite_count) - mean * mean);
    const double std_dev = std::sqrt(var);
    if (std_dev <= 1e-12) return flow;  // textureless: zero motion everywhere
    const float fmean = static_cast<float>(mean);
    const float finv = static_cast<float>(1.0 / std_dev);

    // Normalized copies; NaN stays NaN (normalize is a finite map, NaN in ->
    // NaN out).
    std::vector<Image> frames;
    frames.reserve(seq.fields.size());
    for (const GridField& f : seq.fields) {
        Image img(rows, cols);
        kernels::ops().normalize(img.data.data(), f.values.data(), fmean, finv,
                                 n);
        frames.push_back(std::move(img));
    }

    // Shared pyramid shape.
    int levels = 1;
    {
        int r = rows, c = cols;
        while (levels < params.pyramid_levels && r >= 32 && c >= 32) {
            r /= 2;
            c /= 2;
            ++levels;
        }
    }

    std::vector<double> acc_u(n, 0.0), acc_v(n, 0.0);
    std::vector<unsigned> votes(n, 0);
    std::vector<bool> conditioned;

    for (std::size_t pair = 0; pair + 1 < frames.size(); ++pair) {
        // Pyramids, coarse last.
        std::vector<Image> p0{frames[pair]}, p1{frames[pair + 1]};
        for (int l = 1; l < levels; ++l) {
            p0.push_back(half_size(p0.back()));
            p1.push_back(half_size(p1.back()));
        }

        Image u(p0.back().rows, p0.back().cols);
        Image v(p0.back().rows, p0.back().cols);
        for (int l = levels - 1; l >= 0; --l) {
            if (l != levels - 1) {
                // Upsample and rescale displacements to the finer grid.
                Image u_fine = resize_bilinear(u, p0[static_cast<std::size_t>(l)].rows,
                                               p0[static_cast<std::size_t>(l)].cols);
                Image v_fine = resize_bilinear(v, p0[static_cast<std::size_t>(l)].rows,
                                               p0[static_cast<std::size_t>(l)].cols);
                const float ry = static_cast<float>(p0[static_cast<std::size_t>(l)].rows) /
                                 static_cast<float>(u.rows);
                const float rx = static_cast<float>(p0[static_cast<std::size_t>(l)].cols) /
                                 static_cast<float>(u.cols);
                for (auto& x : u_fine.data) x *= rx;
                for (auto& x : v_fine.data) x *= ry;
                u = std::move(u_fine);
                v = std::move(v_fine);
            }
            lk_refine_level(p0[static_cast<std::size_t>(l)],
                            p1[static_cast<std::size_t>(l)], u, v, conditioned,
                            params);
        }

        for (std::size_t p = 0; p < n; ++p) {
            if (!conditioned[p]) continue;
            acc_u[p] += u.data[p];
            acc_v[p] += v.data[p];
            ++votes[p];
        }
    }

    Image u_img(rows, cols), v_img(rows, cols);
    std::vector<bool> any_vote(n, false);
    for (std::size_t p = 0; p < n; ++p) {
        if (votes[p] > 0) {
            u_img.data[p] = static_cast<float>(acc_u[p] / votes[p]);
            v_img.data[p] = static_cast<float>(acc_v[p] / votes[p]);
            any_vote[p] = true;
        }
    }
    idw_fill(u_img, v_img, any_vote);

    flow.u = std::move(u_img.data);
    flow.v = std::move(v_img.data);
    return flow;
}

GridField advect(const GridField& field, const FlowField& flow, int n_steps) {
    if (!(field.geometry == flow.geometry))
        throw DimensionError("advect: field and flow geometries differ");
    if (n_steps < 1) throw ConfigError("advect: n_steps must be >= 1");
    GridField out = make_field(field.geometry, field.timestamp, field.kind);
    kernels::ops().semi_lagrangian(out.values.data(), field.values.data(),
                                   flow.u.data(), flow.v.data(),
                                   field.geometry.n_rows, field.geometry.n_cols,
                                   static_cast<float>(n_steps));
    return out;
}

FlowField perturb_flow(const FlowField& flow, const PerturbationParams& params,
                       unsigned member) {
    if (member == 0) return flow;
    Rng rng{params.seed, 0x70657274ull /* stream tag */, member};
    const double speed = std::exp(params.sigma_speed * rng.normal());
    const double angle = params.sigma_angle * rng.normal() * kPi / 180.0;
    const double ca = std::cos(angle), sa = std::sin(angle);

    FlowField out;
    out.geometry = flow.geometry;
    out.u.resize(flow.u.size());
    out.v.resize(flow.v.size());
    for (std::size_t p = 0; p < flow.u.size(); ++p) {
        const double u = flow.u[p], v = flow.v[p];
        out.u[p] = static_cast<float>(speed * (u * ca - v * sa));
        out.v[p] = static_cast<float>(speed * (u * sa + v * ca));
    }
    return out;
}

std::pair<GridField, GridField> flow_to_grids(const FlowField& flow,
                                              UnixTime timestamp) {
    GridField u = make_field(flow.geometry, timestamp, GridKind::FlowU);
    GridField v = make_field(flow.geometry, timestamp, GridKind::FlowV);
    u.values = flow.u;
    v.values = flow.v;
    return {std::move(u), std::move(v)};
}

FlowField flow_from_grids(const GridField& u, const GridField& v) {
    if (!(u.geometry == v.geometry))
        throw DimensionError("flow components have different geometries");
    if (u.kind != GridKind::FlowU || v.kind != GridKind::FlowV)
        throw FormatError("flow component grids carry wrong kind bytes");
    FlowField flow;
    flow.geometry = u.geometry;
    flow.u = u.values;
    flow.v = v.values;
    return flow;
}

}  // namespace solarcast

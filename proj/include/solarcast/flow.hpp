#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "solarcast/grid.hpp"

namespace solarcast {

// Dense cloud-motion field in pixels per time step: u eastward (columns),
// v northward (rows; row index grows northward). NaN-free after fill-in.
struct FlowField {
    GridGeometry geometry;
    std::vector<float> u;
    std::vector<float> v;
};

struct PerturbationParams {
    double sigma_speed = 0.1;  // lognormal sigma of the global speed factor
    double sigma_angle = 5.0;  // degrees, normal sigma of the global rotation
    std::uint64_t seed = 0;
};

struct LkParams {
    int window_half_width = 8;   // Gaussian window reach in pixels
    int pyramid_levels = 3;
    int warp_iterations = 3;
    double min_eigenvalue = 1e-4;     // structure-tensor conditioning gate
    double min_valid_fraction = 0.3;  // weighted share of usable window pixels
    double max_nan_fraction = 0.5;    // input gate across the whole sequence
};

// Dense Lucas-Kanade over every consecutive pair, averaged. Inputs are
// jointly normalized to zero mean / unit variance first, which makes the
// estimate (and the conditioning gate) exactly invariant under affine
// intensity rescales. Ill-conditioned pixels are filled by inverse-distance
// interpolation from conditioned neighbors, or zero when none exist.
FlowField estimate_flow(const FieldSequence& seq, const LkParams& params = {});

// Backward semi-Lagrangian advection by n_steps of the flow; source samples
// outside the domain (and samples touching NaN) stay NaN. Timestamp is
// carried over unchanged; callers own valid-time bookkeeping.
GridField advect(const GridField& field, const FlowField& flow, int n_steps);

// Member-indexed global perturbation: one lognormal speed factor and one
// rotation per member, deterministic in (seed, member); member 0 unperturbed.
FlowField perturb_flow(const FlowField& flow, const PerturbationParams& params,
                       unsigned member);

// SGF1 export/import as a (u, v) file pair with kinds FlowU / FlowV.
std::pair<GridField, GridField> flow_to_grids(const FlowField& flow,
                                              UnixTime timestamp);
FlowField flow_from_grids(const GridField& u, const GridField& v);

}  // namespace solarcast

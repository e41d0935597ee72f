#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "solarcast/common.hpp"

namespace solarcast {

// Payload tag stored in the SGF1 header.
enum class GridKind : std::uint8_t {
    Ssi = 0,
    Csi = 1,
    Power = 2,
    FlowU = 3,
    FlowV = 4,
};

// Plate carrée raster geometry. Pixel (i, j) — i counting rows from the
// southern edge, j counting columns from the western edge — has its center at
// (lon_min + (j + 0.5) * cell_size, lat_min + (i + 0.5) * cell_size).
struct GridGeometry {
    double lon_min = 0.0;   // degrees east of the western grid edge
    double lat_min = 0.0;   // degrees north of the southern grid edge
    double cell_size = 0.0; // degrees per pixel
    std::uint32_t n_cols = 0;
    std::uint32_t n_rows = 0;

    std::size_t size() const {
        return static_cast<std::size_t>(n_cols) * n_rows;
    }
    double center_lon(std::size_t j) const {
        return lon_min + (static_cast<double>(j) + 0.5) * cell_size;
    }
    double center_lat(std::size_t i) const {
        return lat_min + (static_cast<double>(i) + 0.5) * cell_size;
    }
    bool operator==(const GridGeometry&) const = default;

    // Throws DimensionError unless cell_size > 0 and both dims >= 1.
    void validate() const;
};

struct GridField {
    GridGeometry geometry;
    UnixTime timestamp = 0;
    GridKind kind = GridKind::Ssi;
    std::vector<float> values;  // row-major, row 0 southernmost

    std::size_t index(std::size_t i, std::size_t j) const {
        return i * geometry.n_cols + j;
    }
    float at(std::size_t i, std::size_t j) const { return values[index(i, j)]; }
    float& at(std::size_t i, std::size_t j) { return values[index(i, j)]; }
};

// Allocates a field filled with `fill` (default quiet NaN).
GridField make_field(const GridGeometry& geometry, UnixTime timestamp,
                     GridKind kind);
GridField make_field(const GridGeometry& geometry, UnixTime timestamp,
                     GridKind kind, float fill);

// Time-ordered fields on one geometry with uniform spacing.
struct FieldSequence {
    std::vector<GridField> fields;
    std::int64_t step = 0;  // seconds between consecutive fields
};

// Validates ordering, uniform spacing, and matching geometry; throws
// DimensionError on geometry mismatch and FormatError on bad spacing.
FieldSequence make_sequence(std::vector<GridField> fields);

// SGF1 container: "SGF1" magic, then little-endian u32 n_rows, u32 n_cols,
// f64 lon_min, f64 lat_min, f64 cell_size, i64 unix timestamp, u8 kind,
// then n_rows*n_cols little-endian f32, row-major, row 0 southernmost.
// Round-trips bit-exactly, NaN payloads included.
GridField read_grid(const std::string& path);
void write_grid(const GridField& field, const std::string& path);

// Block-mean aggregation by an integer factor; NaNs inside a block are
// ignored, an all-NaN block stays NaN. Requires both dims divisible by factor.
GridField downsample(const GridField& field, unsigned factor);

enum class InterpMethod { Bilinear, Nearest };

// Samples the field at (lon, lat) within the convex hull of pixel centers.
// Bilinear by default; any NaN among the four surrounding centers yields
// nullopt (missing). Points outside the hull throw OutOfDomainError.
std::optional<double> interpolate_point(const GridField& field, double lon,
                                        double lat,
                                        InterpMethod method = InterpMethod::Bilinear);

// Pixelwise NaN-ignoring mean of the fields with timestamps in
// (hour_end - 3600, hour_end]; requires at least four of them.
GridField hourly_average(const FieldSequence& seq, UnixTime hour_end);

std::string kind_name(GridKind kind);

}  // namespace solarcast

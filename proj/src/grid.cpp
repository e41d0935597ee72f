#include "solarcast/grid.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace solarcast {

namespace {

constexpr char kMagic[4] = {'S', 'G', 'F', '1'};
constexpr float kNaN = std::numeric_limits<float>::quiet_NaN();

// Explicit little-endian packing so the container is identical on any host.
void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(out, bits);
}

class Cursor {
public:
    Cursor(const std::string& data, const std::string& path, std::size_t start)
        : data_(data), path_(path), pos_(start) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(
                     static_cast<unsigned char>(data_[pos_ + i]))
                 << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(
                     static_cast<unsigned char>(data_[pos_ + i]))
                 << (8 * i);
        pos_ += 8;
        return v;
    }
    double f64() {
        const std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(data_[pos_++]);
    }
    std::size_t remaining() const { return data_.size() - pos_; }
    const char* here() const { return data_.data() + pos_; }

private:
    void need(std::size_t n) const {
        if (pos_ + n > data_.size())
            throw CorruptionError(path_ + ": truncated SGF1 header");
    }
    const std::string& data_;
    const std::string& path_;
    std::size_t pos_ = 0;
};

}  // namespace

void GridGeometry::validate() const {
    if (!(cell_size > 0.0))
        throw DimensionError("grid cell_size must be positive");
    if (n_cols < 1 || n_rows < 1)
        throw DimensionError("grid must have at least one row and column");
}

GridField make_field(const GridGeometry& geometry, UnixTime timestamp,
                     GridKind kind) {
    return make_field(geometry, timestamp, kind, kNaN);
}

GridField make_field(const GridGeometry& geometry, UnixTime timestamp,
                     GridKind kind, float fill) {
    geometry.validate();
    GridField f;
    f.geometry = geometry;
    f.timestamp = timestamp;
    f.kind = kind;
    f.values.assign(geometry.size(), fill);
    return f;
}

FieldSequence make_sequence(std::vector<GridField> fields) {
    if (fields.empty()) throw InsufficientDataError("empty field sequence");
    const GridGeometry& geom = fields.front().geometry;
    for (const GridField& f : fields)
        if (!(f.geometry == geom))
            throw DimensionError("field sequence mixes geometries");
    FieldSequence seq;
    if (fields.size() >= 2) {
        const std::int64_t step = fields[1].timestamp - fields[0].timestamp;
        if (step <= 0)
            throw FormatError("field sequence timestamps must be strictly increasing");
        for (std::size_t k = 1; k < fields.size(); ++k)
            if (fields[k].timestamp - fields[k - 1].timestamp != step)
                throw FormatError("field sequence spacing is not uniform");
        seq.step = step;
    }
    seq.fields = std::move(fields);
    return seq;
}

GridField read_grid(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string data((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failure on " + path);

    if (data.size() < 4 || std::memcmp(data.data(), kMagic, 4) != 0)
        throw FormatError(path + ": not an SGF1 file (bad magic)");
    Cursor cur(data, path, 4);

    GridField f;
    f.geometry.n_rows = cur.u32();
    f.geometry.n_cols = cur.u32();
    f.geometry.lon_min = cur.f64();
    f.geometry.lat_min = cur.f64();
    f.geometry.cell_size = cur.f64();
    f.timestamp = static_cast<UnixTime>(cur.u64());
    const std::uint8_t kind = cur.u8();
    if (kind > 4) throw FormatError(path + ": unknown grid kind byte");
    f.kind = static_cast<GridKind>(kind);
    try {
        f.geometry.validate();
    } catch (const DimensionError& e) {
        throw FormatError(path + ": invalid geometry: " + e.what());
    }

    const std::size_t n = f.geometry.size();
    if (cur.remaining() != n * 4)
        throw CorruptionError(path + ": payload length mismatch (expected " +
                              std::to_string(n * 4) + " bytes, found " +
                              std::to_string(cur.remaining()) + ")");
    f.values.resize(n);
    // memcpy through uint32 keeps every NaN payload bit intact.
    const char* src = cur.here();
    for (std::size_t k = 0; k < n; ++k) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b)
            bits |= static_cast<std::uint32_t>(
                        static_cast<unsigned char>(src[4 * k + b]))
                    << (8 * b);
        std::memcpy(&f.values[k], &bits, 4);
    }
    return f;
}

void write_grid(const GridField& field, const std::string& path) {
    field.geometry.validate();
    if (field.values.size() != field.geometry.size())
        throw DimensionError("field value count does not match geometry");
    std::string out;
    out.reserve(45 + field.values.size() * 4);
    out.append(kMagic, 4);
    put_u32(out, field.geometry.n_rows);
    put_u32(out, field.geometry.n_cols);
    put_f64(out, field.geometry.lon_min);
    put_f64(out, field.geometry.lat_min);
    put_f64(out, field.geometry.cell_size);
    put_u64(out, static_cast<std::uint64_t>(field.timestamp));
    out.push_back(static_cast<char>(field.kind));
    for (const float v : field.values) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        put_u32(out, bits);
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot create " + path);
    os.write(out.data(), static_cast<std::streamsize>(out.size()));
    os.flush();
    if (!os) throw IoError("write failure on " + path);
}

GridField downsample(const GridField& field, unsigned factor) {
    if (factor < 2) throw DimensionError("downsample factor must be >= 2");
    const GridGeometry& g = field.geometry;
    if (g.n_rows % factor != 0 || g.n_cols % factor != 0)
        throw DimensionError("grid dimensions not divisible by downsample factor");

    GridGeometry out_geom = g;
    out_geom.n_rows = g.n_rows / factor;
    out_geom.n_cols = g.n_cols / factor;
    out_geom.cell_size = g.cell_size * factor;
    GridField out = make_field(out_geom, field.timestamp, field.kind);

    for (std::uint32_t oi = 0; oi < out_geom.n_rows; ++oi) {
        for (std::uint32_t oj = 0; oj < out_geom.n_cols; ++oj) {
            double sum = 0.0;
            unsigned count = 0;
            for (unsigned di = 0; di < factor; ++di) {
                const std::size_t row =
                    (static_cast<std::size_t>(oi) * factor + di) * g.n_cols +
                    static_cast<std::size_t>(oj) * factor;
                for (unsigned dj = 0; dj < factor; ++dj) {
                    const float v = field.values[row + dj];
                    if (std::isfinite(v)) {
                        sum += v;
                        ++count;
                    }
                }
            }
            out.at(oi, oj) = count > 0
                                 ? static_cast<float>(sum / count)
                                 : kNaN;
        }
    }
    return out;
}

std::optional<double> interpolate_point(const GridField& field, double lon,
                                        double lat, InterpMethod method) {
    const GridGeometry& g = field.geometry;
    g.validate();
    // Fractional pixel coordinates relative to cell centers.
    const double x = (lon - g.lon_min) / g.cell_size - 0.5;
    const double y = (lat - g.lat_min) / g.cell_size - 0.5;
    const double max_x = static_cast<double>(g.n_cols) - 1.0;
    const double max_y = static_cast<double>(g.n_rows) - 1.0;
    if (!(x >= 0.0 && x <= max_x && y >= 0.0 && y <= max_y))
        throw OutOfDomainError("point (" + std::to_string(lon) + ", " +
                               std::to_string(lat) +
                               ") outside the grid's pixel-center hull");

    if (method == InterpMethod::Nearest) {
        const std::size_t j = static_cast<std::size_t>(x + 0.5);
        const std::size_t i = static_cast<std::size_t>(y + 0.5);
        const float v = field.at(i, j);
        if (!std::isfinite(v)) return std::nullopt;
        return static_cast<double>(v);
    }

    std::size_t j0 = static_cast<std::size_t>(x);
    std::size_t i0 = static_cast<std::size_t>(y);
    if (g.n_cols >= 2 && j0 >= g.n_cols - 1) j0 = g.n_cols - 2;
    if (g.n_rows >= 2 && i0 >= g.n_rows - 1) i0 = g.n_rows - 2;
    const std::size_t j1 = g.n_cols >= 2 ? j0 + 1 : j0;
    const std::size_t i1 = g.n_rows >= 2 ? i0 + 1 : i0;
    const double tx = x - static_cast<double>(j0);
    const double ty = y - static_cast<double>(i0);

    const float c00 = field.at(i0, j0);
    const float c01 = field.at(i0, j1);
    const float c10 = field.at(i1, j0);
    const float c11 = field.at(i1, j1);
    if (!(std::isfinite(c00) && std::isfinite(c01) && std::isfinite(c10) &&
          std::isfinite(c11)))
        return std::nullopt;

    const double top = (1.0 - tx) * c00 + tx * c01;
    const double bot = (1.0 - tx) * c10 + tx * c11;
    return (1.0 - ty) * top + ty * bot;
}

GridField hourly_average(const FieldSequence& seq, UnixTime hour_end) {
    std::vector<const GridField*> window;
    for (const GridField& f : seq.fields)
        if (f.timestamp > hour_end - 3600 && f.timestamp <= hour_end)
            window.push_back(&f);
    if (window.size() < 4)
        throw InsufficientDataError(
            "hourly_average needs at least 4 fields in (hour_end - 1h, "
            "hour_end], found " +
            std::to_string(window.size()));

    GridField out = make_field(window.front()->geometry, hour_end,
                               window.front()->kind);
    const std::size_t n = out.values.size();
    for (std::size_t k = 0; k < n; ++k) {
        double sum = 0.0;
        unsigned count = 0;
        for (const GridField* f : window) {
            const float v = f->values[k];
            if (std::isfinite(v)) {
                sum += v;
                ++count;
            }
        }
        out.values[k] = count > 0 ? static_cast<float>(sum / count) : kNaN;
    }
    return out;
}

std::string kind_name(GridKind kind) {
    switch (kind) {
        case GridKind::Ssi: return "ssi";
        case GridKind::Csi: return "csi";
        case GridKind::Power: return "power";
        case GridKind::FlowU: return "flow-u";
        case GridKind::FlowV: return "flow-v";
    }
    return "unknown";
}

}  // namespace solarcast

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "comptrack/errors.hpp"
#include "comptrack/matrix.hpp"
#include "comptrack/scene.hpp"

namespace comptrack {

// Raw featurizer output: 12 channels per pillar before the learnable
// projection to C channels.
//   0: log(1 + count)   1: mean z   2: max z   3: min z
//   4..11: 8-bin height histogram (fractions) over [-range_z, range_z]
constexpr int kRawPillarChannels = 12;
constexpr int kHeightBins = 8;

struct GridGeometry {
    int height = 128;
    int width = 128;
    double range_xy = 4.8;  // cells span [-range_xy, range_xy] in x and y
    double range_z = 1.5;

    int cells() const { return height * width; }
    double cell_size_x() const { return 2.0 * range_xy / height; }
    double cell_size_y() const { return 2.0 * range_xy / width; }

    static GridGeometry for_class(ObjectClass cls, int h, int w) {
        GridGeometry g;
        g.height = h;
        g.width = w;
        g.range_xy = extended_range_xy(cls);
        g.range_z = extended_range_z(cls);
        return g;
    }
};

// Dense pillar grid before projection. Rows of `features` follow row-major
// cell order (row * width + col).
struct RawBevGrid {
    GridGeometry geom;
    DenseMatrix features;           // cells x kRawPillarChannels
    std::vector<std::uint8_t> occupancy;  // 1 iff >= 1 point fell in the cell
    std::vector<int> counts;
    int total_points = 0;

    int occupied_cells() const {
        int n = 0;
        for (auto o : occupancy) n += o;
        return n;
    }
};

// Deterministic pillarization: points map to cells by floor of scaled
// coordinates, boundary points go to the lower-index cell, and per-cell
// reductions run over coordinates sorted lexicographically so the grid is
// bitwise invariant to point order.
inline RawBevGrid pillarize(const PointCloud& pc, const GridGeometry& geom) {
    RawBevGrid grid;
    grid.geom = geom;
    grid.features = DenseMatrix(geom.cells(), kRawPillarChannels);
    grid.occupancy.assign(geom.cells(), 0);
    grid.counts.assign(geom.cells(), 0);

    // Boundary points land in the lower-index cell: ceil(v) - 1 instead of
    // floor(v), so a coordinate exactly on a cell edge belongs below it.
    auto lower_cell = [](double v, int n) {
        const int idx = static_cast<int>(std::ceil(v)) - 1;
        return std::clamp(idx, 0, n - 1);
    };
    std::vector<std::vector<Vec3>> buckets(geom.cells());
    for (const Vec3& p : pc.points) {
        if (std::abs(p.x) > geom.range_xy || std::abs(p.y) > geom.range_xy ||
            std::abs(p.z) > geom.range_z)
            continue;
        const int i = lower_cell((p.x + geom.range_xy) / geom.cell_size_x(), geom.height);
        const int j = lower_cell((p.y + geom.range_xy) / geom.cell_size_y(), geom.width);
        buckets[i * geom.width + j].push_back(p);
    }

    const double bin_width = 2.0 * geom.range_z / kHeightBins;
    for (int cell = 0; cell < geom.cells(); ++cell) {
        auto& pts = buckets[cell];
        if (pts.empty()) continue;
        std::sort(pts.begin(), pts.end(), [](const Vec3& a, const Vec3& b) {
            if (a.x != b.x) return a.x < b.x;
            if (a.y != b.y) return a.y < b.y;
            return a.z < b.z;
        });
        const int count = static_cast<int>(pts.size());
        grid.occupancy[cell] = 1;
        grid.counts[cell] = count;
        grid.total_points += count;

        double sum_z = 0.0;
        double max_z = pts[0].z, min_z = pts[0].z;
        std::array<int, kHeightBins> hist{};
        for (const Vec3& p : pts) {
            sum_z += p.z;
            max_z = std::max(max_z, p.z);
            min_z = std::min(min_z, p.z);
            const int bin = std::clamp(
                static_cast<int>(std::ceil((p.z + geom.range_z) / bin_width)) - 1, 0,
                kHeightBins - 1);
            ++hist[bin];
        }
        double* f = &grid.features.data[static_cast<size_t>(cell) * kRawPillarChannels];
        f[0] = std::log1p(static_cast<double>(count));
        f[1] = sum_z / count;
        f[2] = max_z;
        f[3] = min_z;
        for (int b = 0; b < kHeightBins; ++b)
            f[4 + b] = static_cast<double>(hist[b]) / count;
    }
    return grid;
}

inline double binary_entropy_bits(double p) {
    if (p <= 0.0 || p >= 1.0) return 0.0;
    return -p * std::log2(p) - (1.0 - p) * std::log2(1.0 - p);
}

// Total BEV information content in bits: H*W*[H_b(p) + p*H_fg].
inline double bev_entropy_bits(double p, double fg_entropy_per_cell, int height, int width) {
    if (fg_entropy_per_cell < 0.0) throw ConfigError("bev_entropy: H_fg must be >= 0");
    return static_cast<double>(height) * width *
           (binary_entropy_bits(p) + p * fg_entropy_per_cell);
}

inline double bev_entropy(const RawBevGrid& grid, double fg_entropy_per_cell) {
    const double p = static_cast<double>(grid.occupied_cells()) / grid.geom.cells();
    return bev_entropy_bits(p, fg_entropy_per_cell, grid.geom.height, grid.geom.width);
}

// Empirical per-cell feature entropy estimate (bits): sum over channels of
// the 16-bin histogram entropy of occupied-cell feature values. Used as the
// default H_fg diagnostic; it is reported, never asserted.
inline double estimate_fg_entropy(const DenseMatrix& features,
                                  const std::vector<std::uint8_t>& occupancy) {
    std::vector<int> occ_rows;
    for (size_t i = 0; i < occupancy.size(); ++i)
        if (occupancy[i]) occ_rows.push_back(static_cast<int>(i));
    if (occ_rows.size() < 2) return 0.0;
    const int bins = 16;
    double total = 0.0;
    for (int c = 0; c < features.cols; ++c) {
        double lo = features.at(occ_rows[0], c), hi = lo;
        for (int r : occ_rows) {
            lo = std::min(lo, features.at(r, c));
            hi = std::max(hi, features.at(r, c));
        }
        if (hi <= lo) continue;
        std::vector<int> hist(bins, 0);
        for (int r : occ_rows) {
            int b = static_cast<int>((features.at(r, c) - lo) / (hi - lo) * bins);
            ++hist[std::clamp(b, 0, bins - 1)];
        }
        for (int b = 0; b < bins; ++b) {
            if (hist[b] == 0) continue;
            const double q = static_cast<double>(hist[b]) / occ_rows.size();
            total -= q * std::log2(q);
        }
    }
    return total;
}

// Debug grid dump: text header "H W C\n", then little-endian float32 values
// in row-major (cell, channel) order.
inline void dump_grid(const std::string& path, const DenseMatrix& features, int height,
                      int width) {
    if (features.rows != height * width) throw ShapeError("dump_grid: feature rows != H*W");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write grid dump: " + path);
    os << height << " " << width << " " << features.cols << "\n";
    for (double v : features.data) {
        const float f = static_cast<float>(v);
        os.write(reinterpret_cast<const char*>(&f), sizeof(float));
    }
}

// 8-bit binary PGM of values in [0,1], scaled by 255 and rounded.
inline void write_pgm(const std::string& path, const std::vector<double>& values, int height,
                      int width) {
    if (static_cast<int>(values.size()) != height * width)
        throw ShapeError("write_pgm: value count != H*W");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write pgm: " + path);
    os << "P5\n" << width << " " << height << "\n255\n";
    for (double v : values) {
        const double clamped = std::clamp(v, 0.0, 1.0);
        const unsigned char byte = static_cast<unsigned char>(std::lround(clamped * 255.0));
        os.write(reinterpret_cast<const char*>(&byte), 1);
    }
}

}  // namespace comptrack

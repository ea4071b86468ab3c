#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "comptrack/errors.hpp"
#include "comptrack/geometry.hpp"

namespace comptrack {

enum class ObjectClass { kCar, kPedestrian };

inline const char* class_name(ObjectClass c) {
    return c == ObjectClass::kCar ? "car" : "pedestrian";
}

inline ObjectClass class_from_name(const std::string& s) {
    if (s == "car") return ObjectClass::kCar;
    if (s == "pedestrian") return ObjectClass::kPedestrian;
    throw ConfigError("unknown object class: " + s);
}

// Extended crop range per class: xy half-extent and z half-extent, meters.
inline double extended_range_xy(ObjectClass c) {
    return c == ObjectClass::kCar ? 4.8 : 1.92;
}
inline double extended_range_z(ObjectClass) { return 1.5; }

// Per-frame speed cap keeping the target inside the 2x search crop.
inline double default_v_max(ObjectClass c) { return c == ObjectClass::kCar ? 1.5 : 0.3; }

struct PointCloud {
    std::vector<Vec3> points;
    std::vector<double> intensity;  // empty or one value in [0,1] per point

    size_t size() const { return points.size(); }
    bool has_intensity() const { return !intensity.empty(); }

    void push(const Vec3& p, double inten) {
        points.push_back(p);
        intensity.push_back(inten);
    }
};

struct SequenceMeta {
    std::uint64_t seed = 0;
    ObjectClass object_class = ObjectClass::kCar;
    bool empty_object = false;  // zero points sampled on the object
};

struct Sequence {
    std::vector<PointCloud> frames;
    std::vector<Box3D> gt_boxes;
    SequenceMeta meta;

    size_t length() const { return frames.size(); }
};

struct SceneParams {
    int n_frames = 20;
    ObjectClass object_class = ObjectClass::kCar;
    double clutter_density = 1.0;   // background points per m^2 of scene area
    double surface_bias = 0.5;      // fraction of object points on face interiors
    double noise_sigma = 0.02;      // isotropic sensor noise, meters
    double point_density = 15.0;    // object surface points per m^2
    double v_max = -1.0;            // < 0: class default
};

namespace detail {

struct Face {
    // Local-frame rectangle: fixed coordinate `axis` at `offset`, spanning
    // half-extents (eu, ev) along the two free axes.
    int axis;  // 0=x, 1=y, 2=z
    double offset;
    double eu, ev;
    double area() const { return 4.0 * eu * ev; }

    Vec3 to_point(double u, double v) const {
        switch (axis) {
            case 0: return {offset, u, v};
            case 1: return {u, offset, v};
            default: return {u, v, offset};
        }
    }
};

inline bool in_edge_band(const Face& f, double u, double v) {
    // Band width: 5% of the face extent along each axis.
    return (f.eu - std::abs(u)) < 0.05 * 2.0 * f.eu || (f.ev - std::abs(v)) < 0.05 * 2.0 * f.ev;
}

// Interior points are uniform over the inset rectangle: maximal planar
// redundancy. Band points cluster around per-sequence detail blobs anchored
// in the band (seams, trim, corner structure), so edge/corner cells carry
// distinctive per-cell geometry while every point stays on the hull.
struct FaceDetail {
    std::vector<std::array<double, 2>> blobs;  // (u, v) centers inside the band
};

inline std::vector<FaceDetail> draw_face_details(const std::array<Face, 5>& faces,
                                                 std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::vector<FaceDetail> details(faces.size());
    for (size_t i = 0; i < faces.size(); ++i) {
        const Face& f = faces[i];
        const double perimeter = 4.0 * (f.eu + f.ev);
        const int n_blobs = std::max(3, static_cast<int>(std::llround(perimeter / 0.4)));
        for (int b = 0; b < n_blobs; ++b) {
            for (int attempt = 0; attempt < 256; ++attempt) {
                const double u = (2.0 * u01(rng) - 1.0) * f.eu;
                const double v = (2.0 * u01(rng) - 1.0) * f.ev;
                if (in_edge_band(f, u, v)) {
                    details[i].blobs.push_back({u, v});
                    break;
                }
            }
        }
    }
    return details;
}

inline Vec3 sample_face_point(const Face& f, const FaceDetail& detail, bool interior,
                              std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 0.05);
    if (!interior && !detail.blobs.empty()) {
        const auto& blob =
            detail.blobs[std::min(detail.blobs.size() - 1,
                                  static_cast<size_t>(u01(rng) * detail.blobs.size()))];
        const double u = std::clamp(blob[0] + gauss(rng), -f.eu, f.eu);
        const double v = std::clamp(blob[1] + gauss(rng), -f.ev, f.ev);
        return f.to_point(u, v);
    }
    for (int attempt = 0; attempt < 256; ++attempt) {
        const double u = (2.0 * u01(rng) - 1.0) * f.eu;
        const double v = (2.0 * u01(rng) - 1.0) * f.ev;
        if (!in_edge_band(f, u, v)) return f.to_point(u, v);
    }
    return f.to_point(0.0, 0.0);  // unreachable for sane geometry
}

}  // namespace detail

// Rigid object on a piecewise-constant-velocity trajectory (resampled every
// 5 frames), sampled as a box-surface point cloud with a controllable split
// between planar-face interiors and an edge/corner band, embedded in static
// uniform clutter. Deterministic per seed.
inline Sequence generate_sequence(std::uint64_t seed, const SceneParams& params) {
    if (params.n_frames < 2) throw ConfigError("generate_sequence: n_frames must be >= 2");
    if (params.surface_bias < 0.0 || params.surface_bias > 1.0)
        throw ConfigError("generate_sequence: surface_bias must be in [0,1]");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    Sequence seq;
    seq.meta.seed = seed;
    seq.meta.object_class = params.object_class;

    // Object body, sizes jittered per sequence.
    Box3D body;
    if (params.object_class == ObjectClass::kCar) {
        body.w = 1.8 + 0.3 * u01(rng);
        body.l = 4.2 + 0.6 * u01(rng);
        body.h = 1.5 + 0.25 * u01(rng);
    } else {
        body.w = 0.55 + 0.15 * u01(rng);
        body.l = 0.55 + 0.15 * u01(rng);
        body.h = 1.6 + 0.2 * u01(rng);
    }

    // Visible faces: four sides plus the top.
    const double hw = body.w / 2, hl = body.l / 2, hh = body.h / 2;
    const std::array<detail::Face, 5> faces = {{{0, hl, hw, hh},
                                                {0, -hl, hw, hh},
                                                {1, hw, hl, hh},
                                                {1, -hw, hl, hh},
                                                {2, hh, hl, hw}}};
    double total_area = 0.0;
    for (const auto& f : faces) total_area += f.area();
    const int n_obj = static_cast<int>(std::llround(params.point_density * total_area));
    seq.meta.empty_object = n_obj == 0;

    std::array<double, 5> cum{};
    double acc = 0.0;
    for (size_t i = 0; i < faces.size(); ++i) {
        acc += faces[i].area() / total_area;
        cum[i] = acc;
    }

    const std::vector<detail::FaceDetail> face_details = detail::draw_face_details(faces, rng);
    std::vector<Vec3> local_points(n_obj);
    std::vector<double> local_intensity(n_obj);
    for (int i = 0; i < n_obj; ++i) {
        const double pick = u01(rng);
        size_t f = 0;
        while (f + 1 < faces.size() && pick > cum[f]) ++f;
        const bool interior = u01(rng) < params.surface_bias;
        local_points[i] = detail::sample_face_point(faces[f], face_details[f], interior, rng);
        local_intensity[i] = u01(rng);
    }

    // Trajectory.
    const double v_max = params.v_max >= 0.0 ? params.v_max : default_v_max(params.object_class);
    double cx = 0.0, cy = 0.0, cz = hh + 0.1 * (u01(rng) - 0.5);
    double theta = wrap_angle((2.0 * u01(rng) - 1.0) * kPi);
    double vx = 0.0, vy = 0.0, vz = 0.0, yaw_rate = 0.0;
    std::vector<Box3D> boxes(params.n_frames);
    for (int t = 0; t < params.n_frames; ++t) {
        if (t % 5 == 0) {
            const double vzc = (2.0 * u01(rng) - 1.0) * std::min(0.02, 0.1 * v_max);
            const double smax = std::sqrt(std::max(0.0, v_max * v_max - vzc * vzc));
            const double speed = u01(rng) * smax;
            const double heading = (2.0 * u01(rng) - 1.0) * kPi;
            vx = speed * std::cos(heading);
            vy = speed * std::sin(heading);
            vz = vzc;
            yaw_rate = (2.0 * u01(rng) - 1.0) * 0.08 * (v_max > 0.0 ? 1.0 : 0.0);
        }
        if (t > 0) {
            cx += vx;
            cy += vy;
            cz += vz;
            theta = wrap_angle(theta + yaw_rate);
        }
        boxes[t] = Box3D{cx, cy, cz, body.w, body.h, body.l, theta};
    }
    seq.gt_boxes = boxes;

    // Static clutter over the trajectory's bounding area.
    double xlo = boxes[0].x, xhi = boxes[0].x, ylo = boxes[0].y, yhi = boxes[0].y;
    double zlo = boxes[0].z, zhi = boxes[0].z;
    for (const auto& b : boxes) {
        xlo = std::min(xlo, b.x);
        xhi = std::max(xhi, b.x);
        ylo = std::min(ylo, b.y);
        yhi = std::max(yhi, b.y);
        zlo = std::min(zlo, b.z);
        zhi = std::max(zhi, b.z);
    }
    const double margin = extended_range_xy(params.object_class) + 1.0;
    xlo -= margin;
    xhi += margin;
    ylo -= margin;
    yhi += margin;
    const double czlo = zlo - extended_range_z(params.object_class);
    const double czhi = zhi + extended_range_z(params.object_class);
    const double area = (xhi - xlo) * (yhi - ylo);
    const int n_clutter = static_cast<int>(std::llround(params.clutter_density * area));
    std::vector<Vec3> clutter(n_clutter);
    std::vector<double> clutter_intensity(n_clutter);
    for (int i = 0; i < n_clutter; ++i) {
        clutter[i] = {xlo + u01(rng) * (xhi - xlo), ylo + u01(rng) * (yhi - ylo),
                      czlo + u01(rng) * (czhi - czlo)};
        clutter_intensity[i] = u01(rng);
    }

    seq.frames.resize(params.n_frames);
    for (int t = 0; t < params.n_frames; ++t) {
        PointCloud& pc = seq.frames[t];
        pc.points.reserve(n_obj + n_clutter);
        pc.intensity.reserve(n_obj + n_clutter);
        const Box3D& b = boxes[t];
        for (int i = 0; i < n_obj; ++i) {
            Vec3 p = b.to_world(local_points[i]);
            p.x += params.noise_sigma * gauss(rng);
            p.y += params.noise_sigma * gauss(rng);
            p.z += params.noise_sigma * gauss(rng);
            pc.push(p, local_intensity[i]);
        }
        for (int i = 0; i < n_clutter; ++i) {
            Vec3 p = clutter[i];
            p.x += params.noise_sigma * gauss(rng);
            p.y += params.noise_sigma * gauss(rng);
            p.z += params.noise_sigma * gauss(rng);
            pc.push(p, clutter_intensity[i]);
        }
    }
    return seq;
}

// Points within the 2x-box-size region around prev_box, returned in the
// box-local (yaw-aligned) frame and clipped to the class extended range.
// Inclusive boundaries.
inline PointCloud crop_search_region(const PointCloud& frame, const Box3D& prev_box,
                                     ObjectClass cls) {
    prev_box.validate();
    const double rx = std::min(prev_box.l, extended_range_xy(cls));
    const double ry = std::min(prev_box.w, extended_range_xy(cls));
    const double rz = std::min(prev_box.h, extended_range_z(cls));
    PointCloud out;
    for (size_t i = 0; i < frame.points.size(); ++i) {
        const Vec3 q = prev_box.to_local(frame.points[i]);
        if (std::abs(q.x) <= rx && std::abs(q.y) <= ry && std::abs(q.z) <= rz)
            out.push(q, frame.has_intensity() ? frame.intensity[i] : 0.0);
    }
    return out;
}

// Augmentation core with explicit draws: optionally mirror the scene across
// the x-z plane (y -> -y, theta -> -theta), then rotate the object points
// and box yaw by delta about the box center. Background points are unchanged
// by the rotation. Object membership uses a 10 cm margin to absorb sensor
// noise on surface points.
inline std::pair<PointCloud, Box3D> augment_frame_with(const PointCloud& points,
                                                       const Box3D& box, bool flip,
                                                       double delta) {
    PointCloud out = points;
    Box3D b = box;
    if (flip) {
        for (Vec3& p : out.points) p.y = -p.y;
        b.y = -b.y;
        b.theta = wrap_angle(-b.theta);
    }
    if (delta != 0.0) {
        const double c = std::cos(delta), s = std::sin(delta);
        for (Vec3& p : out.points) {
            if (!b.contains(p, 0.10)) continue;
            const double dx = p.x - b.x, dy = p.y - b.y;
            p.x = b.x + c * dx - s * dy;
            p.y = b.y + s * dx + c * dy;
        }
    }
    b.theta = wrap_angle(b.theta + delta);
    return {std::move(out), b};
}

// Seeded training augmentation: flip with probability 1/2, rotation delta
// uniform in [-5deg, +5deg]. Calling both frames of a training pair with the
// same seed keeps their flip and rotation draws consistent.
inline std::pair<PointCloud, Box3D> augment_frame(const PointCloud& points, const Box3D& box,
                                                  std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const bool flip = u01(rng) < 0.5;
    const double delta = (2.0 * u01(rng) - 1.0) * (5.0 * kPi / 180.0);
    return augment_frame_with(points, box, flip, delta);
}

// ---------------------------------------------------------------------------
// On-disk formats
// ---------------------------------------------------------------------------

// KITTI-velodyne-compatible .bin: little-endian float32 (x, y, z, intensity)
// records.
inline void write_point_cloud_bin(const std::string& path, const PointCloud& pc) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write point cloud: " + path);
    for (size_t i = 0; i < pc.points.size(); ++i) {
        const float rec[4] = {static_cast<float>(pc.points[i].x),
                              static_cast<float>(pc.points[i].y),
                              static_cast<float>(pc.points[i].z),
                              static_cast<float>(pc.has_intensity() ? pc.intensity[i] : 0.0)};
        os.write(reinterpret_cast<const char*>(rec), sizeof(rec));
    }
    if (!os) throw DataError("write failed: " + path);
}

inline PointCloud read_point_cloud_bin(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot read point cloud: " + path);
    is.seekg(0, std::ios::end);
    const auto bytes = static_cast<size_t>(is.tellg());
    is.seekg(0);
    if (bytes % 16 != 0) throw DataError("malformed .bin (size not multiple of 16): " + path);
    PointCloud pc;
    const size_t n = bytes / 16;
    pc.points.reserve(n);
    pc.intensity.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        float rec[4];
        is.read(reinterpret_cast<char*>(rec), sizeof(rec));
        pc.push({rec[0], rec[1], rec[2]}, rec[3]);
    }
    return pc;
}

// Ground truth / prediction CSV: one line per frame,
// frame_idx,x,y,z,w,h,l,theta
inline void write_box_csv(const std::string& path, const std::vector<Box3D>& boxes,
                          int first_index = 0) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot write csv: " + path);
    char line[256];
    for (size_t i = 0; i < boxes.size(); ++i) {
        const Box3D& b = boxes[i];
        std::snprintf(line, sizeof(line), "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                      static_cast<int>(i) + first_index, b.x, b.y, b.z, b.w, b.h, b.l, b.theta);
        os << line;
    }
    if (!os) throw DataError("write failed: " + path);
}

inline std::vector<Box3D> read_box_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot read csv: " + path);
    std::vector<Box3D> boxes;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        std::vector<double> vals;
        while (std::getline(ss, field, ',')) vals.push_back(std::stod(field));
        if (vals.size() != 8) throw DataError("malformed csv line in " + path + ": " + line);
        boxes.push_back(Box3D{vals[1], vals[2], vals[3], vals[4], vals[5], vals[6], vals[7]});
    }
    return boxes;
}

// Sequence directory layout: 000000.bin per frame, gt.csv, meta.txt.
inline void save_sequence(const std::string& dir, const Sequence& seq) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    char name[32];
    for (size_t t = 0; t < seq.frames.size(); ++t) {
        std::snprintf(name, sizeof(name), "%06zu.bin", t);
        write_point_cloud_bin((fs::path(dir) / name).string(), seq.frames[t]);
    }
    write_box_csv((fs::path(dir) / "gt.csv").string(), seq.gt_boxes);
    std::ofstream meta((fs::path(dir) / "meta.txt").string());
    meta << "seed = " << seq.meta.seed << "\n"
         << "class = " << class_name(seq.meta.object_class) << "\n"
         << "empty_object = " << (seq.meta.empty_object ? 1 : 0) << "\n";
}

inline Sequence load_sequence(const std::string& dir) {
    namespace fs = std::filesystem;
    Sequence seq;
    seq.gt_boxes = read_box_csv((fs::path(dir) / "gt.csv").string());
    char name[32];
    for (size_t t = 0; t < seq.gt_boxes.size(); ++t) {
        std::snprintf(name, sizeof(name), "%06zu.bin", t);
        const auto p = fs::path(dir) / name;
        if (!fs::exists(p)) throw DataError("missing frame file: " + p.string());
        seq.frames.push_back(read_point_cloud_bin(p.string()));
    }
    const auto meta_path = fs::path(dir) / "meta.txt";
    if (fs::exists(meta_path)) {
        std::ifstream meta(meta_path.string());
        std::string line;
        while (std::getline(meta, line)) {
            const auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            auto trim = [](std::string s) {
                const auto a = s.find_first_not_of(" \t");
                const auto b = s.find_last_not_of(" \t\r");
                return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
            };
            const std::string key = trim(line.substr(0, eq));
            const std::string val = trim(line.substr(eq + 1));
            if (key == "seed") seq.meta.seed = std::stoull(val);
            if (key == "class") seq.meta.object_class = class_from_name(val);
            if (key == "empty_object") seq.meta.empty_object = val == "1";
        }
    }
    if (seq.frames.size() < 2) throw DataError("sequence too short in " + dir);
    return seq;
}

}  // namespace comptrack

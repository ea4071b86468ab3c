#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <set>

#include "comptrack/linalg.hpp"
#include "comptrack/pillar.hpp"
#include "comptrack/scene.hpp"

using namespace comptrack;

namespace {

SceneParams quiet_params() {
    SceneParams p;
    p.n_frames = 5;
    p.clutter_density = 0.0;
    p.noise_sigma = 0.0;
    return p;
}

// Distance from a local-frame point to the box surface; zero on the hull.
double hull_distance(const Box3D& b, const Vec3& world) {
    const Vec3 q = b.to_local(world);
    const double ax = std::abs(q.x) - b.l / 2;
    const double ay = std::abs(q.y) - b.w / 2;
    const double az = std::abs(q.z) - b.h / 2;
    if (ax > 0 || ay > 0 || az > 0) {
        const double ox = std::max(ax, 0.0), oy = std::max(ay, 0.0), oz = std::max(az, 0.0);
        return std::sqrt(ox * ox + oy * oy + oz * oz);
    }
    return std::abs(std::max({ax, ay, az}));
}

}  // namespace

TEST(GenerateSequence, ZeroClutterPutsEveryPointOnTheBoxSurface) {
    const Sequence seq = generate_sequence(7, quiet_params());
    for (size_t t = 0; t < seq.length(); ++t) {
        for (const Vec3& p : seq.frames[t].points)
            ASSERT_LT(hull_distance(seq.gt_boxes[t], p), 1e-9);
    }
}

TEST(GenerateSequence, StationaryTrajectoryKeepsBoxesIdentical) {
    SceneParams p = quiet_params();
    p.v_max = 0.0;
    const Sequence seq = generate_sequence(11, p);
    for (size_t t = 1; t < seq.length(); ++t) {
        EXPECT_EQ(seq.gt_boxes[t].key(), seq.gt_boxes[0].key());
    }
}

TEST(GenerateSequence, CentersRespectSpeedContract) {
    SceneParams p;
    p.n_frames = 40;
    const Sequence seq = generate_sequence(13, p);
    const double vmax = default_v_max(p.object_class);
    for (size_t t = 1; t < seq.length(); ++t) {
        EXPECT_LE(center_distance(seq.gt_boxes[t], seq.gt_boxes[t - 1]), vmax + 1e-12);
    }
}

TEST(GenerateSequence, DeterministicPerSeed) {
    SceneParams p;
    p.n_frames = 6;
    const Sequence a = generate_sequence(21, p);
    const Sequence b = generate_sequence(21, p);
    ASSERT_EQ(a.length(), b.length());
    for (size_t t = 0; t < a.length(); ++t) {
        ASSERT_EQ(a.frames[t].size(), b.frames[t].size());
        for (size_t i = 0; i < a.frames[t].size(); ++i) {
            EXPECT_EQ(a.frames[t].points[i].x, b.frames[t].points[i].x);
            EXPECT_EQ(a.frames[t].points[i].y, b.frames[t].points[i].y);
            EXPECT_EQ(a.frames[t].points[i].z, b.frames[t].points[i].z);
        }
        EXPECT_EQ(a.gt_boxes[t].key(), b.gt_boxes[t].key());
    }
}

TEST(GenerateSequence, RigidityExactWithoutNoise) {
    const Sequence seq = generate_sequence(31, quiet_params());
    const size_t n = seq.frames[0].size();
    ASSERT_GT(n, 10u);
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<size_t> pick(0, n - 1);
    for (int trial = 0; trial < 100; ++trial) {
        const size_t i = pick(rng), j = pick(rng);
        auto dist = [&](const PointCloud& f) {
            const double dx = f.points[i].x - f.points[j].x;
            const double dy = f.points[i].y - f.points[j].y;
            const double dz = f.points[i].z - f.points[j].z;
            return std::sqrt(dx * dx + dy * dy + dz * dz);
        };
        const double d0 = dist(seq.frames[0]);
        for (size_t t = 1; t < seq.length(); ++t) EXPECT_NEAR(dist(seq.frames[t]), d0, 1e-9);
    }
}

TEST(GenerateSequence, RigidityWithinNoiseBound) {
    SceneParams p = quiet_params();
    p.noise_sigma = 0.02;
    const Sequence seq = generate_sequence(33, p);
    const size_t n = seq.frames[0].size();
    std::mt19937_64 rng(6);
    std::uniform_int_distribution<size_t> pick(0, n - 1);
    for (int trial = 0; trial < 50; ++trial) {
        const size_t i = pick(rng), j = pick(rng);
        if (i == j) continue;
        auto dist = [&](const PointCloud& f) {
            const double dx = f.points[i].x - f.points[j].x;
            const double dy = f.points[i].y - f.points[j].y;
            const double dz = f.points[i].z - f.points[j].z;
            return std::sqrt(dx * dx + dy * dy + dz * dz);
        };
        const double d0 = dist(seq.frames[0]);
        for (size_t t = 1; t < seq.length(); ++t)
            EXPECT_NEAR(dist(seq.frames[t]), d0, 4.0 * 0.02 * 2.0);
    }
}

TEST(GenerateSequence, SurfaceBiasLowersEffectiveRank) {
    // The planar-face generator must produce lower-rank foreground pillar
    // features than the edge/corner generator on at least 90% of seeds.
    auto foreground_rank = [](std::uint64_t seed, double bias) {
        SceneParams p;
        p.n_frames = 2;
        p.clutter_density = 0.0;
        p.surface_bias = bias;
        p.point_density = 300.0;
        const Sequence seq = generate_sequence(seed, p);
        const PointCloud crop = crop_search_region(seq.frames[0], seq.gt_boxes[0],
                                                   p.object_class);
        const RawBevGrid grid =
            pillarize(crop, GridGeometry::for_class(p.object_class, 48, 48));
        std::vector<int> rows;
        for (int cell = 0; cell < grid.geom.cells(); ++cell)
            if (grid.occupancy[cell]) rows.push_back(cell);
        DenseMatrix fg(static_cast<int>(rows.size()), kRawPillarChannels);
        for (size_t r = 0; r < rows.size(); ++r)
            for (int c = 0; c < kRawPillarChannels; ++c)
                fg.at(static_cast<int>(r), c) = grid.features.at(rows[r], c);
        return effective_rank(svd_thin(fg), 0.99).k;
    };
    int lower = 0;
    const int trials = 50;
    for (int s = 0; s < trials; ++s)
        if (foreground_rank(1000 + s, 1.0) < foreground_rank(1000 + s, 0.0)) ++lower;
    EXPECT_GE(lower, 45) << "planar bias lowered rank on only " << lower << "/50 seeds";
}

TEST(CropSearchRegion, CenterPointMapsToOrigin) {
    Box3D box{3.0, -2.0, 0.5, 1.8, 1.5, 4.2, 0.8};
    PointCloud frame;
    frame.push({3.0, -2.0, 0.5}, 0.7);
    const PointCloud crop = crop_search_region(frame, box, ObjectClass::kCar);
    ASSERT_EQ(crop.size(), 1u);
    EXPECT_NEAR(crop.points[0].x, 0.0, 1e-12);
    EXPECT_NEAR(crop.points[0].y, 0.0, 1e-12);
    EXPECT_NEAR(crop.points[0].z, 0.0, 1e-12);
    EXPECT_DOUBLE_EQ(crop.intensity[0], 0.7);
}

TEST(CropSearchRegion, ThreeHalfExtentsAlongHeadingIsExcluded) {
    Box3D box{0, 0, 0, 1.8, 1.5, 4.0, 0.0};
    PointCloud frame;
    frame.push({3.0 * 2.0, 0.0, 0.0}, 0.0);  // 3x half-extent: outside the 2x crop
    frame.push({1.9 * 2.0, 0.0, 0.0}, 0.0);  // inside
    const PointCloud crop = crop_search_region(frame, box, ObjectClass::kCar);
    ASSERT_EQ(crop.size(), 1u);
    EXPECT_NEAR(crop.points[0].x, 3.8, 1e-12);
}

TEST(CropSearchRegion, MatchesBruteForceMembershipOracle) {
    std::mt19937_64 rng(55);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        SceneParams p;
        p.n_frames = 2;
        p.clutter_density = 2.0;
        const Sequence seq = generate_sequence(500 + trial, p);
        Box3D box = seq.gt_boxes[1];
        box.x += u(rng);
        box.y += u(rng);
        box.theta = wrap_angle(box.theta + 0.3 * u(rng));
        const PointCloud crop = crop_search_region(seq.frames[1], box, p.object_class);

        // Independent membership: rotate by hand, test every bound.
        std::multiset<std::tuple<double, double, double>> expected;
        const double rext = extended_range_xy(p.object_class);
        const double rz = extended_range_z(p.object_class);
        for (const Vec3& pt : seq.frames[1].points) {
            const double dx = pt.x - box.x, dy = pt.y - box.y;
            const double ct = std::cos(-box.theta), st = std::sin(-box.theta);
            const double lx = ct * dx - st * dy;
            const double ly = st * dx + ct * dy;
            const double lz = pt.z - box.z;
            if (std::abs(lx) <= std::min(box.l, rext) && std::abs(ly) <= std::min(box.w, rext) &&
                std::abs(lz) <= std::min(box.h, rz))
                expected.insert({lx, ly, lz});
        }
        std::multiset<std::tuple<double, double, double>> got;
        for (const Vec3& q : crop.points) got.insert({q.x, q.y, q.z});
        ASSERT_EQ(got.size(), expected.size()) << "trial " << trial;
        auto it = expected.begin();
        for (auto jt = got.begin(); jt != got.end(); ++jt, ++it) {
            EXPECT_NEAR(std::get<0>(*jt), std::get<0>(*it), 1e-9);
            EXPECT_NEAR(std::get<1>(*jt), std::get<1>(*it), 1e-9);
            EXPECT_NEAR(std::get<2>(*jt), std::get<2>(*it), 1e-9);
        }
    }
}

TEST(AugmentFrame, NoDrawsIsIdentity) {
    const Sequence seq = generate_sequence(61, quiet_params());
    const auto [pts, box] = augment_frame_with(seq.frames[0], seq.gt_boxes[0], false, 0.0);
    ASSERT_EQ(pts.size(), seq.frames[0].size());
    for (size_t i = 0; i < pts.size(); ++i) {
        EXPECT_EQ(pts.points[i].x, seq.frames[0].points[i].x);
        EXPECT_EQ(pts.points[i].y, seq.frames[0].points[i].y);
    }
    EXPECT_EQ(box.key(), seq.gt_boxes[0].key());
}

TEST(AugmentFrame, FlipTwiceIsIdentity) {
    const Sequence seq = generate_sequence(62, quiet_params());
    const auto [pts1, box1] = augment_frame_with(seq.frames[0], seq.gt_boxes[0], true, 0.0);
    const auto [pts2, box2] = augment_frame_with(pts1, box1, true, 0.0);
    for (size_t i = 0; i < pts2.size(); ++i) {
        EXPECT_DOUBLE_EQ(pts2.points[i].y, seq.frames[0].points[i].y);
    }
    EXPECT_NEAR(box2.y, seq.gt_boxes[0].y, 1e-15);
    EXPECT_NEAR(box2.theta, seq.gt_boxes[0].theta, 1e-15);
}

TEST(AugmentFrame, RotatedCornersMatchRotationOracle) {
    const Sequence seq = generate_sequence(63, quiet_params());
    const Box3D& orig = seq.gt_boxes[0];
    const double delta = 4.0 * kPi / 180.0;
    const auto [pts, rotated] = augment_frame_with(seq.frames[0], orig, false, delta);
    const auto before = orig.corners_bev();
    const auto after = rotated.corners_bev();
    const double c = std::cos(delta), s = std::sin(delta);
    for (int i = 0; i < 4; ++i) {
        const double dx = before[i][0] - orig.x, dy = before[i][1] - orig.y;
        EXPECT_NEAR(after[i][0], orig.x + c * dx - s * dy, 1e-9);
        EXPECT_NEAR(after[i][1], orig.y + s * dx + c * dy, 1e-9);
    }
}

TEST(AugmentFrame, SeededDrawsAreReproducible) {
    const Sequence seq = generate_sequence(64, quiet_params());
    const auto [p1, b1] = augment_frame(seq.frames[0], seq.gt_boxes[0], 99);
    const auto [p2, b2] = augment_frame(seq.frames[0], seq.gt_boxes[0], 99);
    ASSERT_EQ(p1.size(), p2.size());
    for (size_t i = 0; i < p1.size(); ++i) EXPECT_EQ(p1.points[i].y, p2.points[i].y);
    EXPECT_EQ(b1.key(), b2.key());
}

TEST(SceneIo, BinAndCsvRoundTrip) {
    namespace fs = std::filesystem;
    const Sequence seq = generate_sequence(71, quiet_params());
    const std::string dir = (fs::temp_directory_path() / "ctk_seq_roundtrip").string();
    fs::remove_all(dir);
    save_sequence(dir, seq);
    const Sequence loaded = load_sequence(dir);
    ASSERT_EQ(loaded.length(), seq.length());
    EXPECT_EQ(loaded.meta.seed, seq.meta.seed);
    EXPECT_EQ(loaded.meta.object_class, seq.meta.object_class);
    for (size_t t = 0; t < seq.length(); ++t) {
        ASSERT_EQ(loaded.frames[t].size(), seq.frames[t].size());
        for (size_t i = 0; i < seq.frames[t].size(); ++i) {
            // Storage is float32.
            EXPECT_EQ(loaded.frames[t].points[i].x,
                      static_cast<double>(static_cast<float>(seq.frames[t].points[i].x)));
        }
        EXPECT_NEAR(loaded.gt_boxes[t].x, seq.gt_boxes[t].x, 1e-7);
        EXPECT_NEAR(loaded.gt_boxes[t].theta, seq.gt_boxes[t].theta, 1e-7);
    }
    fs::remove_all(dir);
}

TEST(SceneIo, MalformedBinRejected) {
    namespace fs = std::filesystem;
    const std::string path = (fs::temp_directory_path() / "ctk_bad.bin").string();
    std::ofstream os(path, std::ios::binary);
    os.write("abcde", 5);
    os.close();
    EXPECT_THROW(read_point_cloud_bin(path), DataError);
    fs::remove(path);
}

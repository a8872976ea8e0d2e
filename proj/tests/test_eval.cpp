#include <gtest/gtest.h>

#include "oracles.hpp"
#include "oslam/eval.hpp"

namespace oslam {
namespace {

OrientedBox aabb(const Vec3& c, const Vec3& h) { return OrientedBox{c, Rotation(), h}; }

TrialResult trial(bool success, double iou, int iterations, double ori = 0.0) {
  TrialResult t;
  t.success = success;
  t.iou = iou;
  t.iterations = iterations;
  t.orientation_error_deg = ori;
  return t;
}

TEST(CircumscribedBox, Examples) {
  const OrientedBox unit = circumscribed_box(dual_from_rts(RtsState{}));
  EXPECT_EQ(unit.center, Vec3::Zero());
  EXPECT_LT((unit.half_extents - Vec3::Ones()).norm(), 1e-15);
  const OrientedBox b = circumscribed_box(dual_from_rts(RtsState{Rotation(), Vec3(1, 2, 3), Vec3(1, 3, 2)}));
  EXPECT_LT((b.half_extents - Vec3(3, 2, 1)).norm(), 1e-14);
  EXPECT_LT((b.center - Vec3(1, 2, 3)).norm(), 1e-14);
}

TEST(CircumscribedBox, MatchesTheDecomposition) {
  std::mt19937_64 rng(80);
  for (int i = 0; i < 50; ++i) {
    const DualQuadric q = dual_from_rts(oracle::random_rts(rng));
    const OrientedBox b = circumscribed_box(q);
    const RtsState r = rts_from_dual(q);
    EXPECT_EQ(b.rotation.matrix(), r.rotation.matrix());
    EXPECT_EQ(b.half_extents, r.scale);
    EXPECT_EQ(b.center, r.translation);
  }
}

TEST(IoU, IdenticalDisjointAndHalfOverlap) {
  const OrientedBox a = aabb(Vec3::Zero(), Vec3::Constant(0.5));
  EXPECT_NEAR(iou_boxes(a, a), 1.0, 0.01);
  EXPECT_EQ(iou_boxes(a, aabb(Vec3(3, 0, 0), Vec3::Constant(0.5))), 0.0);
  EXPECT_NEAR(iou_boxes(a, aabb(Vec3(0.5, 0, 0), Vec3::Constant(0.5))), 1.0 / 3.0, 0.01);
}

TEST(IoU, IsExactlySymmetric) {
  std::mt19937_64 rng(81);
  for (int i = 0; i < 50; ++i) {
    const RtsState x = oracle::random_rts(rng), y = oracle::random_rts(rng);
    const OrientedBox a{x.translation, x.rotation, x.scale}, b{y.translation, y.rotation, y.scale};
    EXPECT_EQ(iou_boxes(a, b), iou_boxes(b, a));
  }
}

TEST(IoU, NearlyInvariantUnderRigidMotion) {
  std::mt19937_64 rng(82);
  for (int i = 0; i < 30; ++i) {
    RtsState x = oracle::random_rts(rng), y = x;
    y.translation += 0.3 * oracle::random_unit(rng);
    y.rotation = so3_exp(0.4 * oracle::random_unit(rng)) * y.rotation;
    const OrientedBox a{x.translation, x.rotation, x.scale}, b{y.translation, y.rotation, y.scale};
    const Pose g(oracle::random_rotation(rng), Vec3(oracle::gauss(rng), oracle::gauss(rng), oracle::gauss(rng)));
    const OrientedBox ga{g * a.center, g.rotation() * a.rotation, a.half_extents};
    const OrientedBox gb{g * b.center, g.rotation() * b.rotation, b.half_extents};
    EXPECT_LT(std::abs(iou_boxes(a, b) - iou_boxes(ga, gb)), 0.02);
  }
}

TEST(IoU, MatchesAnalyticAxisAlignedOracle) {
  std::mt19937_64 rng(83);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    Vec3 ca, ha, cb, hb;
    for (int k = 0; k < 3; ++k) {
      ca(k) = oracle::uni(rng, -1, 1);
      cb(k) = ca(k) + oracle::uni(rng, -1, 1);
      ha(k) = oracle::uni(rng, 0.2, 1);
      hb(k) = oracle::uni(rng, 0.2, 1);
    }
    worst = std::max(worst, std::abs(iou_boxes(aabb(ca, ha), aabb(cb, hb)) - oracle::aabb_iou(ca, ha, cb, hb)));
  }
  EXPECT_LT(worst, 0.01);
}

TEST(IoU, ColumnCountingEqualsPerVoxelTest) {
  // The closed-form column intersection must count exactly the voxel centers
  // that a direct membership test finds.
  std::mt19937_64 rng(84);
  for (int i = 0; i < 5; ++i) {
    const RtsState x = oracle::random_rts(rng), y = oracle::random_rts(rng);
    const OrientedBox a{x.translation, x.rotation, x.scale}, b{y.translation, y.rotation, y.scale};
    const int n = 24;
    Vec3 lo = Vec3::Constant(1e300), hi = -lo;
    for (const OrientedBox* box : {&a, &b}) {
      for (int c = 0; c < 8; ++c) {
        const Vec3 s((c & 1) ? 1 : -1, (c & 2) ? 1 : -1, (c & 4) ? 1 : -1);
        const Vec3 p = box->center + box->rotation.matrix() * s.cwiseProduct(box->half_extents);
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
      }
    }
    auto inside = [](const OrientedBox& box, const Vec3& p) {
      const Vec3 local = box.rotation.matrix().transpose() * (p - box.center);
      return (local.cwiseAbs().array() <= box.half_extents.array()).all();
    };
    const Vec3 d = (hi - lo) / n;
    long in_a = 0, in_b = 0, both = 0;
    for (int ix = 0; ix < n; ++ix) {
      for (int iy = 0; iy < n; ++iy) {
        for (int iz = 0; iz < n; ++iz) {
          const Vec3 p = lo + Vec3(ix + 0.5, iy + 0.5, iz + 0.5).cwiseProduct(d);
          const bool ia = inside(a, p), ib = inside(b, p);
          in_a += ia;
          in_b += ib;
          both += ia && ib;
        }
      }
    }
    const double want = both > 0 ? static_cast<double>(both) / (in_a + in_b - both) : 0.0;
    EXPECT_NEAR(iou_boxes(a, b, n), want, 1e-12);
  }
}

TEST(OrientationError, Examples) {
  std::mt19937_64 rng(85);
  for (int i = 0; i < 50; ++i) {
    const Rotation truth = oracle::random_rotation(rng);
    EXPECT_NEAR(orientation_error_deg(truth, truth), 0.0, 1e-6);
    // 90 degrees about one of the object's own axes.
    const Vec3 axis = truth.matrix().col(i % 3);
    EXPECT_NEAR(orientation_error_deg(so3_exp(axis * std::numbers::pi / 2) * truth, truth), 0.0, 1e-6);
    const Vec3 u = oracle::random_unit(rng);
    const Rotation est = so3_exp(u * 10.0 * std::numbers::pi / 180.0) * truth;
    EXPECT_NEAR(orientation_error_deg(est, truth), 10.0, 1e-6);
  }
}

TEST(OrientationError, MatchesBruteForceOverSignedPermutations) {
  std::mt19937_64 rng(86);
  for (int i = 0; i < 200; ++i) {
    const Rotation a = oracle::random_rotation(rng), b = oracle::random_rotation(rng);
    const double got = orientation_error_deg(a, b);
    EXPECT_NEAR(got, oracle::orientation_error_deg(a.matrix(), b.matrix()), 1e-6);
    EXPECT_GE(got, 0.0);
    EXPECT_LE(got, 62.81);  // covering radius of the octahedral quotient
  }
}

TEST(OrientationError, IsAPseudometricOnTheQuotient) {
  std::mt19937_64 rng(87);
  for (int i = 0; i < 200; ++i) {
    const Rotation a = oracle::random_rotation(rng), b = oracle::random_rotation(rng), c = oracle::random_rotation(rng);
    EXPECT_NEAR(orientation_error_deg(a, b), orientation_error_deg(b, a), 1e-6);
    EXPECT_LE(orientation_error_deg(a, c), orientation_error_deg(a, b) + orientation_error_deg(b, c) + 1e-6);
    const Mat3& p = proper_axis_permutations()[i % 24];
    EXPECT_NEAR(orientation_error_deg(Rotation(a.matrix() * p, Rotation::Trusted{}), a), 0.0, 1e-6);
  }
}

TEST(Summarize, AllSuccess) {
  const std::vector<TrialResult> t(24, trial(true, 0.99, 5, 1.0));
  const CellSummary s = summarize(t);
  EXPECT_EQ(s.trials, 24);
  EXPECT_EQ(s.successes, 24);
  EXPECT_NEAR(s.mean_iou, 0.99, 1e-12);
  EXPECT_NEAR(*s.mean_success_iou, 0.99, 1e-12);
  EXPECT_EQ(*s.median_success_iterations, 5.0);
}

TEST(Summarize, MixedCellMatchesHandComputation) {
  const std::vector<TrialResult> t = {trial(true, 0.9, 4, 2.0), trial(false, 0.1, 100, 40.0),
                                      trial(true, 0.7, 7, 4.0), trial(true, 0.8, 10, 6.0)};
  const CellSummary s = summarize(t);
  EXPECT_EQ(s.successes, 3);
  EXPECT_NEAR(s.mean_iou, 2.5 / 4, 1e-15);
  EXPECT_NEAR(*s.mean_success_iou, 2.4 / 3, 1e-15);
  EXPECT_NEAR(*s.mean_success_iterations, 7.0, 1e-15);
  EXPECT_EQ(*s.median_success_iterations, 7.0);
  EXPECT_NEAR(*s.mean_orientation_error_deg, 13.0, 1e-15);
}

TEST(Summarize, EmptySuccessSetIsAbsent) {
  const std::vector<TrialResult> t = {trial(false, 0.2, 3), trial(false, 0.4, 3)};
  const CellSummary s = summarize(t);
  EXPECT_EQ(s.successes, 0);
  EXPECT_FALSE(s.mean_success_iou.has_value());
  EXPECT_FALSE(s.median_success_iterations.has_value());
  EXPECT_NEAR(s.mean_iou, 0.3, 1e-15);
  EXPECT_FALSE(summarize(std::vector<TrialResult>{}).mean_orientation_error_deg.has_value());
  EXPECT_FALSE(median_success_iterations(t).has_value());
}

TEST(Median, EvenAndOdd) {
  EXPECT_EQ(median({3, 1, 2}), 2.0);
  EXPECT_EQ(median({4, 1, 2, 3}), 2.5);
}

TEST(RenderReport, Layout) {
  CampaignResult c;
  for (const auto p : {Parameterization::kFull, Parameterization::kRts, Parameterization::kSpd}) {
    for (const auto m : {MeasurementModel::kInverse, MeasurementModel::kSemi}) {
      Cell cell{CellKey{NoiseLevel::kLow, 60, p, m}, {trial(true, 0.98, 4), trial(p != Parameterization::kFull, 0.5, 8)}};
      c.cells.push_back(cell);
    }
  }
  std::sort(c.cells.begin(), c.cells.end(), [](const Cell& a, const Cell& b) { return a.key < b.key; });
  const std::string r = render_report(c);
  EXPECT_NE(r.find("Success count F+S+O"), std::string::npos);
  EXPECT_NE(r.find("1+2+2"), std::string::npos);
  EXPECT_NE(r.find(".74/.74/.74"), std::string::npos);
  EXPECT_NE(r.find("inv-60"), std::string::npos);
  EXPECT_NE(r.find("semi-60"), std::string::npos);
  EXPECT_NE(r.find("6.0/6.0 (1.00)"), std::string::npos);
  EXPECT_NE(r.find("circumscribed boxes"), std::string::npos);
}

}  // namespace
}  // namespace oslam

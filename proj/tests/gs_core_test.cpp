#include "brushflow/gs_core.hpp"

#include <gtest/gtest.h>

#include <numbers>

#include "test_support.hpp"

namespace brushflow {
namespace {

using testing::Rng;

TEST(RotationMatrix, IdentityQuaternion) {
  EXPECT_TRUE(rotation_matrix<double>(Vec4(1, 0, 0, 0)).isApprox(Mat3::Identity(), 0.0));
}

TEST(RotationMatrix, QuarterTurnAboutZ) {
  const double h = std::cos(std::numbers::pi / 4);
  const Mat3 r = rotation_matrix<double>(Vec4(h, 0, 0, h));
  EXPECT_NEAR((r * Vec3::UnitX() - Vec3::UnitY()).norm(), 0.0, 1e-15);
}

TEST(RotationMatrix, ZeroQuaternionIsDegenerate) {
  EXPECT_THROW(rotation_matrix<double>(Vec4::Zero()), DegenerateInput);
}

TEST(RotationMatrix, RenormalisesInput) {
  const Vec4 q(0.3, -0.2, 0.9, 0.1);
  EXPECT_TRUE(rotation_matrix<double>(q * 7.0).isApprox(rotation_matrix<double>(q.normalized()), 1e-14));
}

TEST(RotationMatrix, RandomQuaternionsAreProperRotations) {
  Rng rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    const Mat3 r = rotation_matrix<double>(rng.unit_quaternion());
    EXPECT_LT((r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(r.determinant(), 1.0, 1e-12);
  }
}

TEST(RotationMatrix, GroupHomomorphism) {
  Rng rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    const Vec4 a = rng.unit_quaternion(), b = rng.unit_quaternion();
    const Mat3 lhs = rotation_matrix<double>(quaternion_multiply(a, b));
    const Mat3 rhs = rotation_matrix<double>(a) * rotation_matrix<double>(b);
    EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(RotationMatrix, MatrixRoundTrip) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const Vec4 q = rng.unit_quaternion();
    const Vec4 back = quaternion_from_matrix(rotation_matrix<double>(q));
    EXPECT_NEAR(std::abs(back.dot(q)), 1.0, 1e-12);
  }
}

TEST(ProjectPoint, OpticalAxis) {
  Camera cam;
  const auto p = project_point<double>(cam, Vec3(0, 0, 1));
  ASSERT_TRUE(p);
  EXPECT_EQ(p->pixel, Vec2(0, 0));
  EXPECT_EQ(p->depth, 1.0);
}

TEST(ProjectPoint, LinearInXOverZ) {
  Camera cam;
  cam.focal = Vec2(100, 100);
  cam.principal_point = Vec2(32, 32);
  const auto p = project_point<double>(cam, Vec3(0.1, 0, 1));
  ASSERT_TRUE(p);
  EXPECT_NEAR(p->pixel(0), 42.0, 1e-12);
  EXPECT_NEAR(p->pixel(1), 32.0, 1e-12);
}

TEST(ProjectPoint, BehindCameraIsCulled) {
  Camera cam;
  EXPECT_FALSE(project_point<double>(cam, Vec3(0, 0, -1)));
  EXPECT_FALSE(project_point<double>(cam, Vec3(0, 0, 0.5e-4)));
  EXPECT_TRUE(projection_jacobian<double>(cam, Vec3(0, 0, -1)).isZero(0.0));
}

TEST(ProjectPoint, MatchesHomogeneousPipeline) {
  Rng rng(5);
  for (int trial = 0; trial < 500; ++trial) {
    const Camera cam = testing::random_camera(rng, 64, 48, rng.uniform(2, 6));
    const Vec3 p = rng.uniform_vec3(-1, 1);
    // Independent route: 3x4 extrinsic, 3x3 intrinsic, homogeneous divide.
    Eigen::Matrix<double, 3, 4> extrinsic;
    extrinsic << cam.rotation, cam.translation;
    Mat3 k;
    k << cam.focal(0), 0, cam.principal_point(0), 0, cam.focal(1), cam.principal_point(1), 0, 0, 1;
    const Vec3 h = k * extrinsic * Vec4(p(0), p(1), p(2), 1.0);
    const auto projected = project_point<double>(cam, p);
    ASSERT_TRUE(projected);
    EXPECT_NEAR(projected->pixel(0), h(0) / h(2), 1e-9);
    EXPECT_NEAR(projected->pixel(1), h(1) / h(2), 1e-9);
    EXPECT_NEAR(projected->depth, h(2), 1e-12);
  }
}

TEST(ProjectionJacobian, OnAxisExamples) {
  Camera cam;
  Mat23 expected;
  expected << 1, 0, 0, 0, 1, 0;
  EXPECT_TRUE(projection_jacobian<double>(cam, Vec3(0, 0, 1)).isApprox(expected));
  expected << 0.5, 0, 0, 0, 0.5, 0;
  EXPECT_TRUE(projection_jacobian<double>(cam, Vec3(0, 0, 2)).isApprox(expected));
}

TEST(ProjectionJacobian, MatchesFiniteDifferences) {
  Rng rng(17);
  for (int trial = 0; trial < 1000; ++trial) {
    Camera cam = testing::random_camera(rng, 64, 64, 4.0);
    // Point at a chosen depth in [0.5, 10] along a random ray.
    const double depth = rng.uniform(0.5, 10.0);
    const Vec3 cam_point(rng.uniform(-0.5, 0.5) * depth, rng.uniform(-0.5, 0.5) * depth, depth);
    const Vec3 p = cam.rotation.transpose() * (cam_point - cam.translation);
    const Mat23 j = projection_jacobian<double>(cam, p);
    for (int axis = 0; axis < 3; ++axis) {
      const double h = 1e-5;
      Vec3 plus = p, minus = p;
      plus(axis) += h;
      minus(axis) -= h;
      const Vec2 fd = (project_point<double>(cam, plus)->pixel - project_point<double>(cam, minus)->pixel) / (2 * h);
      const double err = (fd - j.col(axis)).norm() / std::max(j.col(axis).norm(), 1e-8);
      EXPECT_LT(err, 1e-5) << "trial " << trial << " axis " << axis;
    }
  }
}

TEST(ProjectAxis, FrontoParallelAxis) {
  Camera cam;
  const auto g = GaussianPrimitive::make(Vec3(0, 0, 2), Vec4(1, 0, 0, 0), Vec3(0.3, 0.1, 0.1),
                                         Vec3::Constant(0.5), 0.5);
  const auto a = project_axis(cam, g);
  ASSERT_TRUE(a);
  EXPECT_NEAR(((*a) - Vec2(1, 0)).norm(), 0.0, 1e-12);
}

TEST(ProjectAxis, AxisAlongViewRayIsDegenerate) {
  Camera cam;
  // Rotate e1 onto +z: quarter turn about y maps x to -z.
  const double h = std::cos(std::numbers::pi / 4);
  const auto g = GaussianPrimitive::make(Vec3(0, 0, 2), Vec4(h, 0, -h, 0), Vec3(0.3, 0.1, 0.1),
                                         Vec3::Constant(0.5), 0.5);
  EXPECT_NEAR((basis_of(g).major() - Vec3::UnitZ()).norm(), 0.0, 1e-12);
  EXPECT_FALSE(project_axis(cam, g));
}

TEST(ProjectAxis, MatchesSecantAndIsUnitAndSignCovariant) {
  Rng rng(23);
  int checked = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const Camera cam = testing::random_camera(rng, 64, 64, 4.0);
    const Vec3 mean = rng.uniform_vec3(-0.5, 0.5);
    const Vec4 q = rng.unit_quaternion();
    const auto a = project_axis<double>(cam, mean, q);
    if (!a) continue;
    ++checked;
    EXPECT_NEAR(a->norm(), 1.0, 1e-9);
    const Vec3 axis = rotation_matrix<double>(q).col(0);
    const double eps = 1e-5;
    const Vec2 secant = project_point<double>(cam, Vec3(mean + eps * axis))->pixel -
                        project_point<double>(cam, Vec3(mean - eps * axis))->pixel;
    EXPECT_LT((secant.normalized() - *a).norm(), 1e-6);
    // Negating e1 (rotate by pi about e3) flips the projected axis.
    const Vec4 flipped = quaternion_multiply(q, Vec4(0, 0, 0, 1));
    const auto b = project_axis<double>(cam, mean, flipped);
    ASSERT_TRUE(b);
    EXPECT_NEAR((*a + *b).norm(), 0.0, 1e-9);
  }
  EXPECT_GT(checked, 450);
}

TEST(SortAxes, KeepsCovarianceAndOrdersScales) {
  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    auto g = GaussianPrimitive::make(Vec3::Zero(), rng.unit_quaternion(),
                                     Vec3(rng.uniform(0.1, 1), rng.uniform(0.1, 1), rng.uniform(0.1, 1)),
                                     Vec3::Constant(0.5), 0.5);
    auto covariance = [](const GaussianPrimitive& p) {
      const Mat3 r = rotation_matrix(p.rotation);
      return Mat3(r * p.scale().array().square().matrix().asDiagonal() * r.transpose());
    };
    const Mat3 before = covariance(g);
    sort_axes(g);
    EXPECT_GE(g.log_scale(0), g.log_scale(1));
    EXPECT_GE(g.log_scale(1), g.log_scale(2));
    EXPECT_LT((covariance(g) - before).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(g.rotation.norm(), 1.0, 1e-12);
  }
}

TEST(Camera, ValidateRejectsBadInputs) {
  Camera cam;
  EXPECT_NO_THROW(cam.validate());
  cam.focal = Vec2(0, 1);
  EXPECT_THROW(cam.validate(), std::invalid_argument);
  cam.focal = Vec2(1, 1);
  cam.rotation(0, 1) = 0.01;
  EXPECT_THROW(cam.validate(), std::invalid_argument);
}

TEST(GaussianPrimitive, ActivatedParameters) {
  const auto g = GaussianPrimitive::make(Vec3(1, 2, 3), Vec4(2, 0, 0, 0), Vec3(0.5, 0.25, 0.125),
                                         Vec3(0.1, 0.2, 0.3), 0.25);
  EXPECT_TRUE(g.scale().isApprox(Vec3(0.5, 0.25, 0.125), 1e-14));
  EXPECT_NEAR(g.opacity(), 0.25, 1e-14);
  EXPECT_EQ(g.rotation, Vec4(1, 0, 0, 0));
  EXPECT_THROW(GaussianPrimitive::make(Vec3::Zero(), Vec4(1, 0, 0, 0), Vec3(1, 0, 1), Vec3::Zero(), 0.5),
               std::invalid_argument);
}

}  // namespace
}  // namespace brushflow

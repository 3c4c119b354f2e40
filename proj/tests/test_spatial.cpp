#include <doctest.h>

#include <random>

#include "biped/spatial.hpp"

using namespace biped;

namespace {

SpatialTransform random_transform(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  SpatialTransform X;
  X.E = Eigen::Quaterniond(n(rng), n(rng), n(rng), n(rng)).normalized().toRotationMatrix();
  X.r = Vec3(n(rng), n(rng), n(rng));
  return X;
}

}  // namespace

TEST_CASE("transform ops agree with the dense 6x6 matrix") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 50; ++trial) {
    const auto X = random_transform(rng);
    const Mat6 M = X.matrix();
    Vec6 m = Vec6::NullaryExpr([&] { return n(rng); });
    CHECK((X.apply(m) - M * m).norm() < 1e-12);
    CHECK((X.apply_transpose(m) - M.transpose() * m).norm() < 1e-12);

    const Vec3 com(n(rng), n(rng), n(rng));
    const Mat3 Ic = Vec3(1.0, 2.0, 3.0).asDiagonal();
    const Mat6 I = spatial_inertia(2.5, com, Ic);
    CHECK((X.transform_inertia(I) - M.transpose() * I * M).norm() < 1e-10);

    const auto Y = random_transform(rng);
    CHECK(((X * Y).matrix() - X.matrix() * Y.matrix()).norm() < 1e-12);
  }
}

TEST_CASE("cross products match their matrix forms") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n;
  Vec6 v = Vec6::NullaryExpr([&] { return n(rng); });
  Vec6 m = Vec6::NullaryExpr([&] { return n(rng); });
  Mat6 crm = Mat6::Zero();
  crm.topLeftCorner<3, 3>() = skew(v.head<3>());
  crm.bottomLeftCorner<3, 3>() = skew(v.tail<3>());
  crm.bottomRightCorner<3, 3>() = skew(v.head<3>());
  CHECK((cross_motion(v, m) - crm * m).norm() < 1e-12);
  const Mat6 crf = -crm.transpose();
  CHECK((cross_force(v, m) - crf * m).norm() < 1e-12);
}

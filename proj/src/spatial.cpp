#include "biped/spatial.hpp"

namespace biped {

// X = diag(E, E) * [1 0; -rx 1]. Rotate the blocks of I = [A B; B^T M] first, then
// shift the reference point by r.
Mat6 SpatialTransform::transform_inertia(const Mat6& inertia) const {
  const Mat3 Et = E.transpose();
  const Mat3 A = Et * (inertia.topLeftCorner<3, 3>() * E);
  const Mat3 B = Et * (inertia.topRightCorner<3, 3>() * E);
  const Mat3 M = Et * (inertia.bottomRightCorner<3, 3>() * E);
  // rx * X is r.cross() on each column; row k of X * rx is -(r x row k)
  Mat3 rxM, Brx;
  for (int k = 0; k < 3; ++k) {
    rxM.col(k) = r.cross(M.col(k));
    Brx.row(k) = -r.cross(B.row(k).transpose()).transpose();
  }
  Mat3 rxMrx;
  for (int k = 0; k < 3; ++k) rxMrx.row(k) = -r.cross(rxM.row(k).transpose()).transpose();
  const Mat3 top_right = B + rxM;
  Mat6 out;
  out.topLeftCorner<3, 3>() = A - Brx - Brx.transpose() - rxMrx;
  out.topRightCorner<3, 3>() = top_right;
  out.bottomLeftCorner<3, 3>() = top_right.transpose();
  out.bottomRightCorner<3, 3>() = M;
  return out;
}

}  // namespace biped

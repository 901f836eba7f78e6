#pragma once

#include <Eigen/Core>

namespace pnmcts {

using Scalar = double;
using VecX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using MatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
using MaskX = Eigen::Array<bool, Eigen::Dynamic, 1>;

}  // namespace pnmcts

#pragma once

#include <Eigen/Dense>

namespace teamalign {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

}  // namespace teamalign

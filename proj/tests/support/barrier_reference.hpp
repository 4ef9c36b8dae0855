#pragma once

#include <Eigen/Dense>
#include <string>

#include "momentoc/conic.hpp"

namespace momentoc::testing {

struct BarrierResult {
  bool ok = false;
  Eigen::VectorXd z;
  double obj = 0.0;
  std::string message;
};

// Reference solver: a plain primal log-barrier path following method with
// equality-constrained Newton steps. Needs a strictly feasible start. Written
// against the same program structures but sharing no algorithmic code with
// the production solver, so agreement between the two is evidence.
BarrierResult barrier_solve(const ConicProgram& prog, Eigen::VectorXd z0, double tol);

}  // namespace momentoc::testing

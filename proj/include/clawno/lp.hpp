#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace clawno {

class LpInfeasible : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct LpResult {
    Eigen::VectorXd x;       ///< primal solution
    Eigen::VectorXd dual;    ///< multipliers of the equality rows
    double objective = 0.0;
    std::size_t iterations = 0;
};

/**
 * Solves  min c^T x  s.t.  A x = b,  x >= 0  with a two-phase revised simplex.
 *
 * The primal phases run on b + A s for a small fixed random s > 0, so their
 * vertices are nondegenerate; a dual simplex from the resulting dual-feasible
 * basis then restores the exact right-hand side. Pricing is Dantzig, falling
 * back to Bland's rule after a run of pivots without objective progress.
 * The pivot sequence is a deterministic function of the input. Redundant rows
 * are dropped after phase one.
 */
LpResult simplex(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, const Eigen::VectorXd& c);

/**
 * min ||w||_1  s.t.  A w = b, via the split w = w+ - w-.
 *
 * When `central` is set, ties on the optimal face are broken by the
 * minimum Euclidean norm, found by semismooth Newton on the dual of that
 * projection. Symmetric configurations then get symmetric solutions.
 */
Eigen::VectorXd min_l1(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, bool central = true);

}  // namespace clawno

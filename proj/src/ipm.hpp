#ifndef SBD_IPM_HPP
#define SBD_IPM_HPP

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <limits>

namespace sbd::ipm {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Equality standard form: min 1/2 x'diag(q)x + c'x + c0  s.t.  Ax = b,
/// lb <= x <= ub componentwise, either bound may be infinite.
struct StandardForm {
    Eigen::SparseMatrix<double> A;  // m x n, compressed
    Eigen::VectorXd b;
    Eigen::VectorXd c;
    Eigen::VectorXd qdiag;  // >= 0
    Eigen::VectorXd lb;
    Eigen::VectorXd ub;
    double c0 = 0.0;

    int n() const { return static_cast<int>(c.size()); }
    int m() const { return static_cast<int>(b.size()); }
    bool has_quadratic() const { return qdiag.size() > 0 && qdiag.maxCoeff() > 0.0; }
};

enum class IpmStatus { optimal, max_iterations, stalled, diverging, factorization_failed };

/// Multiplier convention: stationarity is c + Qx - A'y - zl + zu = 0 with
/// zl, zu >= 0, so the sensitivity of the optimum to b is +y.
struct IpmResult {
    IpmStatus status = IpmStatus::stalled;
    Eigen::VectorXd x;
    Eigen::VectorXd y;
    Eigen::VectorXd zl;
    Eigen::VectorXd zu;
    double pobj = 0.0;
    double dobj = 0.0;
    double rel_gap = 1.0;
    double rel_pinf = 1.0;
    double rel_dinf = 1.0;
    int iterations = 0;
};

struct IpmControls {
    double gap_tol = 1e-8;
    double feas_tol = 1e-8;
    int max_iterations = 200;
};

IpmResult solve(const StandardForm& sf, const IpmControls& ctl);

}  // namespace sbd::ipm

#endif

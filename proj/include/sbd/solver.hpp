#ifndef SBD_SOLVER_HPP
#define SBD_SOLVER_HPP

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace sbd {

enum class RowSense { less_equal, equal };

/// A convex program in the shape every model in this library reduces to:
/// bounded variables, linear rows, a linear objective, an optional diagonal
/// convex quadratic objective (sums of w*(x-c)^2), and at most one Euclidean
/// ball constraint sum (x_v - c_v)^2 <= radius^2.
struct ConvexProgram {
    struct Row {
        std::string name;
        RowSense sense = RowSense::less_equal;
        std::vector<std::pair<int, double>> coeffs;  // (variable index, coefficient)
        double rhs = 0.0;
    };
    /// Quadratic objective contribution weight * (x[var] - center)^2, weight >= 0.
    struct QuadTerm {
        int var = -1;
        double weight = 0.0;
        double center = 0.0;
    };
    /// sum over entries (x[var] - center)^2 <= radius^2.
    struct BallConstraint {
        std::vector<std::pair<int, double>> centers;  // (variable index, center)
        double radius = 0.0;
    };

    std::vector<std::string> var_names;
    std::vector<double> lower;  // -inf allowed
    std::vector<double> upper;  // +inf allowed
    std::vector<double> obj_linear;
    double obj_constant = 0.0;
    std::vector<QuadTerm> quad_obj;
    std::optional<BallConstraint> ball;
    std::vector<Row> rows;

    int add_var(std::string name, double lb, double ub, double cost);
    int add_row(std::string name, RowSense sense,
                std::vector<std::pair<int, double>> coeffs, double rhs);

    int num_vars() const { return static_cast<int>(lower.size()); }
    int num_rows() const { return static_cast<int>(rows.size()); }

    /// Objective value of a primal point (linear + quadratic + constant).
    double objective_value(const std::vector<double>& x) const;
    /// Signed slack rhs - a'x of a row; >= 0 means satisfied for <= rows.
    double row_slack(const Row& row, const std::vector<double>& x) const;
};

enum class SolveStatus { optimal_within_tol, infeasible, unbounded, numerical_failure };

/// Result of a solve. Dual convention: with Lagrangian obj + y'(Ax - b),
/// <= rows carry duals y >= 0 and equality rows carry free duals; the
/// sensitivity of the optimum to a rhs change is then -y per row.
struct SolveOutcome {
    SolveStatus status = SolveStatus::numerical_failure;
    std::vector<double> primal;
    std::vector<double> row_duals;  // populated only when optimal_within_tol
    double objective = 0.0;
    double achieved_tolerance = 1.0;

    bool ok() const { return status == SolveStatus::optimal_within_tol; }
};

struct SolverOptions {
    bool presolve = true;
    bool scale = true;
    int max_iterations = 200;
};

/// Interior-point style solve honoring a relative convergence tolerance.
/// Returns an interior (feasible, possibly suboptimal) primal/dual pair; no
/// crossover to a basic solution is performed, so degenerate rows receive
/// strictly complementary duals.
SolveOutcome solve(const ConvexProgram& program, double rel_tolerance,
                   const SolverOptions& options = {});

const char* to_string(SolveStatus status);

}  // namespace sbd

#endif

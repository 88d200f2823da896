#include "sbd/solver.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <stdexcept>

#include "ipm.hpp"

namespace sbd {

int ConvexProgram::add_var(std::string name, double lb, double ub, double cost) {
    var_names.push_back(std::move(name));
    lower.push_back(lb);
    upper.push_back(ub);
    obj_linear.push_back(cost);
    return static_cast<int>(lower.size()) - 1;
}

int ConvexProgram::add_row(std::string name, RowSense sense,
                           std::vector<std::pair<int, double>> coeffs, double rhs) {
    rows.push_back(Row{std::move(name), sense, std::move(coeffs), rhs});
    return static_cast<int>(rows.size()) - 1;
}

double ConvexProgram::objective_value(const std::vector<double>& x) const {
    double v = obj_constant;
    for (int j = 0; j < num_vars(); ++j) v += obj_linear[j] * x[j];
    for (const auto& q : quad_obj) {
        const double d = x[q.var] - q.center;
        v += q.weight * d * d;
    }
    return v;
}

double ConvexProgram::row_slack(const Row& row, const std::vector<double>& x) const {
    double lhs = 0.0;
    for (const auto& [j, a] : row.coeffs) lhs += a * x[j];
    return row.rhs - lhs;
}

const char* to_string(SolveStatus status) {
    switch (status) {
        case SolveStatus::optimal_within_tol: return "optimal_within_tol";
        case SolveStatus::infeasible: return "infeasible";
        case SolveStatus::unbounded: return "unbounded";
        case SolveStatus::numerical_failure: return "numerical_failure";
    }
    return "unknown";
}

namespace {

constexpr double kInf = ipm::kInf;
constexpr double kFeasEps = 1e-7;
constexpr double kFixSpan = 1e-11;

struct WorkRow {
    RowSense sense;
    std::vector<std::pair<int, double>> coeffs;
    double rhs = 0.0;
    bool alive = true;
};

// Recovery events, replayed in reverse to reconstruct duals of rows the
// presolve eliminated.
struct Event {
    enum Kind { eq_fix, bound_fix } kind;
    int var = -1;
    int row = -1;  // eq_fix only
};

struct Working {
    int n = 0;
    std::vector<double> lb, ub, c, qdiag;
    double c0 = 0.0;
    std::vector<WorkRow> rows;
    std::vector<char> var_fixed;
    std::vector<double> fixed_value;
    std::vector<int> lb_provider, ub_provider;  // collapsed ineq row per side, -1 = own bound
    std::vector<Event> events;
    bool infeasible = false;
};

Working make_working(const ConvexProgram& prog,
                     const std::vector<ConvexProgram::QuadTerm>& extra_quad) {
    Working w;
    w.n = prog.num_vars();
    w.lb = prog.lower;
    w.ub = prog.upper;
    w.c = prog.obj_linear;
    w.qdiag.assign(w.n, 0.0);
    w.c0 = prog.obj_constant;
    auto fold = [&](const ConvexProgram::QuadTerm& q) {
        if (q.weight < 0.0) throw std::invalid_argument("quadratic objective weight must be >= 0");
        w.qdiag[q.var] += 2.0 * q.weight;
        w.c[q.var] -= 2.0 * q.weight * q.center;
        w.c0 += q.weight * q.center * q.center;
    };
    for (const auto& q : prog.quad_obj) fold(q);
    for (const auto& q : extra_quad) fold(q);
    w.rows.reserve(prog.rows.size());
    for (const auto& r : prog.rows) w.rows.push_back(WorkRow{r.sense, r.coeffs, r.rhs, true});
    w.var_fixed.assign(w.n, 0);
    w.fixed_value.assign(w.n, 0.0);
    w.lb_provider.assign(w.n, -1);
    w.ub_provider.assign(w.n, -1);
    return w;
}

void presolve(Working& w) {
    std::vector<std::vector<int>> var_rows(w.n);
    for (int r = 0; r < static_cast<int>(w.rows.size()); ++r)
        for (const auto& [j, a] : w.rows[r].coeffs)
            if (a != 0.0) var_rows[j].push_back(r);

    std::deque<int> queue;
    for (int r = 0; r < static_cast<int>(w.rows.size()); ++r) queue.push_back(r);
    std::vector<char> queued(w.rows.size(), 1);

    auto enqueue = [&](int r) {
        if (!queued[r] && w.rows[r].alive) {
            queued[r] = 1;
            queue.push_back(r);
        }
    };

    auto substitute_var = [&](int v) {
        const double val = w.fixed_value[v];
        for (int r : var_rows[v]) {
            auto& row = w.rows[r];
            if (!row.alive) continue;
            for (auto it = row.coeffs.begin(); it != row.coeffs.end(); ++it) {
                if (it->first == v) {
                    row.rhs -= it->second * val;
                    row.coeffs.erase(it);
                    break;
                }
            }
            enqueue(r);
        }
        w.c0 += w.c[v] * val + 0.5 * w.qdiag[v] * val * val;
    };

    auto fix_var = [&](int v, double val, int fixer_row) {
        w.var_fixed[v] = 1;
        w.fixed_value[v] = val;
        w.events.push_back(Event{fixer_row >= 0 ? Event::eq_fix : Event::bound_fix, v, fixer_row});
        substitute_var(v);
    };

    const double rtol = 1e-9;
    while (!queue.empty() && !w.infeasible) {
        const int r = queue.front();
        queue.pop_front();
        queued[r] = 0;
        auto& row = w.rows[r];
        if (!row.alive) continue;

        if (row.coeffs.empty()) {
            const double resid = row.rhs;
            const double tol = rtol * (1.0 + std::abs(row.rhs)) + 1e-7;
            if (row.sense == RowSense::equal ? std::abs(resid) > tol : resid < -tol)
                w.infeasible = true;
            row.alive = false;
            continue;
        }
        if (row.coeffs.size() != 1) continue;

        const auto [v, a] = row.coeffs.front();
        if (std::abs(a) < 1e-13) continue;  // numerically empty, leave to the solver
        const double bound = row.rhs / a;

        if (row.sense == RowSense::equal) {
            if (w.var_fixed[v]) {
                if (std::abs(bound - w.fixed_value[v]) > 1e-6 * (1.0 + std::abs(bound)))
                    w.infeasible = true;
                row.alive = false;  // redundant duplicate fix, dual 0
                continue;
            }
            if (bound < w.lb[v] - 1e-7 || bound > w.ub[v] + 1e-7) {
                w.infeasible = true;
                continue;
            }
            row.alive = false;
            fix_var(v, bound, r);
            continue;
        }

        // Inequality singleton collapses onto a variable bound.
        row.alive = false;
        if (a > 0.0) {
            if (bound < w.ub[v]) {
                w.ub[v] = bound;
                w.ub_provider[v] = r;
            }
        } else {
            if (bound > w.lb[v]) {
                w.lb[v] = bound;
                w.lb_provider[v] = r;
            }
        }
        if (w.lb[v] > w.ub[v] + 1e-7) {
            w.infeasible = true;
            continue;
        }
        if (!w.var_fixed[v] && w.ub[v] - w.lb[v] <= kFixSpan) {
            fix_var(v, 0.5 * (w.lb[v] + w.ub[v]), -1);
        }
    }
    // Variables fixed from the start (lb == ub in the input).
    for (int v = 0; v < w.n && !w.infeasible; ++v) {
        if (!w.var_fixed[v] && w.ub[v] - w.lb[v] <= kFixSpan) {
            if (w.lb[v] > w.ub[v] + 1e-7) {
                w.infeasible = true;
                break;
            }
            fix_var(v, 0.5 * (w.lb[v] + w.ub[v]), -1);
        }
    }
}

struct Standardized {
    ipm::StandardForm sf;
    std::vector<int> var_to_sf;   // original var -> sf column, -1 if eliminated
    std::vector<int> row_to_sf;   // original row -> sf row, -1 if eliminated
    std::vector<double> row_scale, col_scale;
    double obj_scale = 1.0;
};

Standardized standardize(const Working& w, bool scale) {
    Standardized out;
    out.var_to_sf.assign(w.n, -1);
    out.row_to_sf.assign(w.rows.size(), -1);

    int n_sf = 0;
    for (int v = 0; v < w.n; ++v)
        if (!w.var_fixed[v]) out.var_to_sf[v] = n_sf++;
    int m_sf = 0;
    for (int r = 0; r < static_cast<int>(w.rows.size()); ++r)
        if (w.rows[r].alive) out.row_to_sf[r] = m_sf++;

    int n_slack = 0;
    for (const auto& row : w.rows)
        if (row.alive && row.sense == RowSense::less_equal) ++n_slack;

    auto& sf = out.sf;
    const int n_total = n_sf + n_slack;
    sf.c = Eigen::VectorXd::Zero(n_total);
    sf.qdiag = Eigen::VectorXd::Zero(n_total);
    sf.lb = Eigen::VectorXd::Constant(n_total, -kInf);
    sf.ub = Eigen::VectorXd::Constant(n_total, kInf);
    sf.b = Eigen::VectorXd::Zero(m_sf);
    for (int v = 0; v < w.n; ++v) {
        const int j = out.var_to_sf[v];
        if (j < 0) continue;
        sf.c[j] = w.c[v];
        sf.qdiag[j] = w.qdiag[v];
        sf.lb[j] = w.lb[v];
        sf.ub[j] = w.ub[v];
    }

    std::vector<Eigen::Triplet<double>> trip;
    int slack = n_sf;
    for (int r = 0; r < static_cast<int>(w.rows.size()); ++r) {
        const auto& row = w.rows[r];
        const int i = out.row_to_sf[r];
        if (i < 0) continue;
        for (const auto& [v, a] : row.coeffs)
            if (a != 0.0) trip.emplace_back(i, out.var_to_sf[v], a);
        sf.b[i] = row.rhs;
        if (row.sense == RowSense::less_equal) {
            trip.emplace_back(i, slack, 1.0);
            sf.lb[slack] = 0.0;
            ++slack;
        }
    }
    sf.A.resize(m_sf, n_total);
    sf.A.setFromTriplets(trip.begin(), trip.end());
    sf.A.makeCompressed();

    out.row_scale.assign(m_sf, 1.0);
    out.col_scale.assign(n_total, 1.0);
    if (scale && m_sf > 0) {
        Eigen::VectorXd rmax = Eigen::VectorXd::Zero(m_sf);
        for (int k = 0; k < sf.A.outerSize(); ++k)
            for (Eigen::SparseMatrix<double>::InnerIterator it(sf.A, k); it; ++it)
                rmax[it.row()] = std::max(rmax[it.row()], std::abs(it.value()));
        for (int i = 0; i < m_sf; ++i)
            out.row_scale[i] = rmax[i] > 1e-12 ? 1.0 / rmax[i] : 1.0;
        Eigen::VectorXd cmax = Eigen::VectorXd::Zero(n_total);
        for (int k = 0; k < sf.A.outerSize(); ++k)
            for (Eigen::SparseMatrix<double>::InnerIterator it(sf.A, k); it; ++it)
                cmax[it.col()] = std::max(cmax[it.col()],
                                          std::abs(it.value()) * out.row_scale[it.row()]);
        for (int j = 0; j < n_total; ++j)
            out.col_scale[j] = cmax[j] > 1e-12 ? 1.0 / cmax[j] : 1.0;
        for (int k = 0; k < sf.A.outerSize(); ++k)
            for (Eigen::SparseMatrix<double>::InnerIterator it(sf.A, k); it; ++it)
                it.valueRef() *= out.row_scale[it.row()] * out.col_scale[it.col()];
        for (int i = 0; i < m_sf; ++i) sf.b[i] *= out.row_scale[i];
        for (int j = 0; j < n_total; ++j) {
            const double cs = out.col_scale[j];
            sf.c[j] *= cs;
            sf.qdiag[j] *= cs * cs;
            if (std::isfinite(sf.lb[j])) sf.lb[j] /= cs;
            if (std::isfinite(sf.ub[j])) sf.ub[j] /= cs;
        }
        double cn = sf.c.lpNorm<Eigen::Infinity>();
        double qn = sf.qdiag.size() > 0 ? sf.qdiag.lpNorm<Eigen::Infinity>() : 0.0;
        out.obj_scale = 1.0 / std::max(1.0, std::max(cn, qn));
        sf.c *= out.obj_scale;
        sf.qdiag *= out.obj_scale;
    }
    return out;
}

// Classifies a failed solve by running a pure feasibility phase on the same
// constraint set with elastic artificials.
bool rows_feasible(const Standardized& std_form) {
    const auto& sf = std_form.sf;
    const int n = sf.n();
    const int m = sf.m();
    if (m == 0) return true;
    ipm::StandardForm ph;
    ph.c = Eigen::VectorXd::Zero(n + 2 * m);
    ph.qdiag = Eigen::VectorXd::Zero(n + 2 * m);
    ph.lb = Eigen::VectorXd::Constant(n + 2 * m, 0.0);
    ph.ub = Eigen::VectorXd::Constant(n + 2 * m, kInf);
    ph.lb.head(n) = sf.lb;
    ph.ub.head(n) = sf.ub;
    for (int k = 0; k < m; ++k) ph.c[n + k] = ph.c[n + m + k] = 1.0;
    ph.b = sf.b;
    std::vector<Eigen::Triplet<double>> trip;
    for (int k = 0; k < sf.A.outerSize(); ++k)
        for (Eigen::SparseMatrix<double>::InnerIterator it(sf.A, k); it; ++it)
            trip.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
    for (int i = 0; i < m; ++i) {
        trip.emplace_back(i, n + i, 1.0);
        trip.emplace_back(i, n + m + i, -1.0);
    }
    ph.A.resize(m, n + 2 * m);
    ph.A.setFromTriplets(trip.begin(), trip.end());
    ph.A.makeCompressed();

    ipm::IpmControls ctl;
    ctl.gap_tol = 1e-9;
    ctl.feas_tol = 1e-9;
    auto r = ipm::solve(ph, ctl);
    if (r.status != ipm::IpmStatus::optimal) return false;  // give it the benefit of the doubt
    return r.pobj <= 1e-6 * (1.0 + sf.b.lpNorm<Eigen::Infinity>());
}

class DualRecovery {
  public:
    DualRecovery(const ConvexProgram& prog, const Working& w, const Standardized& s,
                 const ipm::IpmResult& ipm_res, const std::vector<double>& x_full)
        : prog_(prog), w_(w), s_(s), x_(x_full) {
        const int n_rows = prog.num_rows();
        duals_.assign(n_rows, 0.0);
        var_rows_.resize(prog.num_vars());
        for (int r = 0; r < n_rows; ++r)
            for (const auto& [j, a] : prog.rows[r].coeffs)
                if (a != 0.0) var_rows_[j].push_back(r);

        // Alive rows: unscale the interior-point multipliers, flip to the
        // public sign convention (L = obj + y'(Ax - b)).
        for (int r = 0; r < n_rows; ++r) {
            const int i = s.row_to_sf[r];
            if (i < 0) continue;
            double y_int = s.row_scale[i] * ipm_res.y[i] / s.obj_scale;
            double y_pub = -y_int;
            if (prog.rows[r].sense == RowSense::less_equal) y_pub = std::max(y_pub, 0.0);
            duals_[r] = y_pub;
        }
        // Bound multipliers of surviving variables, unscaled.
        zl_.assign(prog.num_vars(), 0.0);
        zu_.assign(prog.num_vars(), 0.0);
        for (int v = 0; v < prog.num_vars(); ++v) {
            const int j = s.var_to_sf[v];
            if (j < 0) continue;
            const double denom = s.obj_scale * s.col_scale[j];
            zl_[v] = ipm_res.zl[j] / denom;
            zu_[v] = ipm_res.zu[j] / denom;
        }
        // Collapsed rows providing bounds of surviving variables.
        for (int v = 0; v < prog.num_vars(); ++v) {
            if (w.var_fixed[v]) continue;
            attribute_providers(v, zl_[v], zu_[v]);
        }
        // Eliminated variables, most recent first (their fixing rows can only
        // reference rows eliminated later or still alive).
        for (auto it = w.events.rbegin(); it != w.events.rend(); ++it) {
            const int v = it->var;
            if (it->kind == Event::eq_fix) {
                const double a_rv = coeff_of(it->row, v);
                if (std::abs(a_rv) > 1e-13)
                    duals_[it->row] = -stationarity_sum(v, it->row) / a_rv;
            } else {
                const double rho = stationarity_sum(v, -1);
                // rho = zl - zu for the eliminated variable.
                if (rho >= 0.0)
                    attribute_providers(v, rho, 0.0);
                else
                    attribute_providers(v, 0.0, -rho);
            }
        }
    }

    std::vector<double> take() { return std::move(duals_); }

  private:
    double coeff_of(int row, int var) const {
        for (const auto& [j, a] : prog_.rows[row].coeffs)
            if (j == var) return a;
        return 0.0;
    }

    // c_v + q_v x_v + sum over original rows containing v (minus the excluded
    // row and the variable's bound providers) of a_rv * y_r.
    double stationarity_sum(int v, int exclude_row) const {
        double s = w_.c[v] + w_.qdiag[v] * x_[v];
        for (int r : var_rows_[v]) {
            if (r == exclude_row) continue;
            if (r == w_.lb_provider[v] || r == w_.ub_provider[v]) continue;
            s += coeff_of(r, v) * duals_[r];
        }
        return s;
    }

    void attribute_providers(int v, double zl, double zu) {
        const int rl = w_.lb_provider[v];
        const int ru = w_.ub_provider[v];
        if (rl >= 0) {
            const double a = coeff_of(rl, v);  // a < 0 for a lower-bound provider
            if (a < -1e-13) duals_[rl] = std::max(zl / (-a), 0.0);
        }
        if (ru >= 0) {
            const double a = coeff_of(ru, v);  // a > 0
            if (a > 1e-13) duals_[ru] = std::max(zu / a, 0.0);
        }
    }

    const ConvexProgram& prog_;
    const Working& w_;
    const Standardized& s_;
    const std::vector<double>& x_;
    std::vector<double> duals_;
    std::vector<std::vector<int>> var_rows_;
    std::vector<double> zl_, zu_;
};

SolveOutcome solve_core(const ConvexProgram& prog, double rel_tolerance,
                        const SolverOptions& options,
                        const std::vector<ConvexProgram::QuadTerm>& extra_quad) {
    SolveOutcome out;
    Working w = make_working(prog, extra_quad);
    if (options.presolve) presolve(w);
    if (w.infeasible) {
        out.status = SolveStatus::infeasible;
        return out;
    }
    // Even without presolve, input-fixed variables must leave the cone solver.
    if (!options.presolve) {
        for (int v = 0; v < w.n; ++v) {
            if (w.ub[v] - w.lb[v] <= kFixSpan) {
                if (w.lb[v] > w.ub[v] + 1e-7) {
                    out.status = SolveStatus::infeasible;
                    return out;
                }
                if (!w.var_fixed[v]) {
                    w.var_fixed[v] = 1;
                    w.fixed_value[v] = 0.5 * (w.lb[v] + w.ub[v]);
                    w.events.push_back(Event{Event::bound_fix, v, -1});
                    for (auto& row : w.rows) {
                        for (auto it = row.coeffs.begin(); it != row.coeffs.end(); ++it) {
                            if (it->first == v) {
                                row.rhs -= it->second * w.fixed_value[v];
                                row.coeffs.erase(it);
                                break;
                            }
                        }
                    }
                }
            }
        }
    }

    Standardized s = standardize(w, options.scale);

    ipm::IpmControls ctl;
    ctl.gap_tol = rel_tolerance;
    ctl.feas_tol = std::max(1e-9, std::min(kFeasEps, rel_tolerance));
    ctl.max_iterations = options.max_iterations;
    ipm::IpmResult r = ipm::solve(s.sf, ctl);

    if (r.status == ipm::IpmStatus::optimal) {
        out.status = SolveStatus::optimal_within_tol;
        out.primal.assign(prog.num_vars(), 0.0);
        for (int v = 0; v < prog.num_vars(); ++v) {
            const int j = s.var_to_sf[v];
            out.primal[v] = j >= 0 ? r.x[j] * s.col_scale[j] : w.fixed_value[v];
        }
        out.objective = prog.objective_value(out.primal);
        out.achieved_tolerance = std::max({r.rel_gap, r.rel_pinf, r.rel_dinf});
        DualRecovery rec(prog, w, s, r, out.primal);
        out.row_duals = rec.take();
        return out;
    }

    if (!rows_feasible(s)) {
        out.status = SolveStatus::infeasible;
    } else if (r.status == ipm::IpmStatus::diverging) {
        out.status = SolveStatus::unbounded;
    } else {
        out.status = SolveStatus::numerical_failure;
    }
    return out;
}

double ball_value(const ConvexProgram::BallConstraint& ball, const std::vector<double>& x) {
    double q = 0.0;
    for (const auto& [v, c] : ball.centers) {
        const double d = x[v] - c;
        q += d * d;
    }
    return q;
}

// The ball row is handled as the Lagrangian dual search over its penalty
// weight: q(x(mu)) - r^2 is nonincreasing in mu, so a geometric bisection
// finds the complementary weight. mu = 0 covers the inactive case exactly.
SolveOutcome solve_ball(const ConvexProgram& prog, double rel_tolerance,
                        const SolverOptions& options) {
    const auto& ball = *prog.ball;
    const double r2 = ball.radius * ball.radius;
    const double ftol = 1e-7 * std::max(1.0, r2);

    auto penalized = [&](double mu) {
        std::vector<ConvexProgram::QuadTerm> extra;
        extra.reserve(ball.centers.size());
        for (const auto& [v, c] : ball.centers)
            extra.push_back(ConvexProgram::QuadTerm{v, mu, c});
        return solve_core(prog, rel_tolerance, options, extra);
    };

    SolveOutcome base = solve_core(prog, rel_tolerance, options, {});
    if (!base.ok()) return base;
    if (ball_value(ball, base.primal) <= r2 + ftol) return base;

    double mu_lo = 0.0;
    double mu_hi = std::max(1.0, std::abs(base.objective)) /
                   std::max(ball_value(ball, base.primal) - r2, 1e-9);
    SolveOutcome best;
    double q_hi = kInf;
    for (int grow = 0; grow < 40; ++grow) {
        SolveOutcome cand = penalized(mu_hi);
        if (!cand.ok()) return cand;
        q_hi = ball_value(ball, cand.primal);
        if (q_hi <= r2 + ftol) {
            best = std::move(cand);
            break;
        }
        mu_lo = mu_hi;
        mu_hi *= 16.0;
        if (mu_hi > 1e16) {
            SolveOutcome fail;
            fail.status = SolveStatus::numerical_failure;
            return fail;
        }
    }
    if (!best.ok()) {
        SolveOutcome fail;
        fail.status = SolveStatus::numerical_failure;
        return fail;
    }

    for (int iter = 0; iter < 80; ++iter) {
        if (q_hi >= r2 * (1.0 - 1e-5) - ftol) break;                      // boundary reached
        if (mu_lo > 0.0 && mu_hi / mu_lo < 1.0 + 1e-7) break;             // bracket exhausted
        const double mid = mu_lo > 0.0 ? std::sqrt(mu_lo * mu_hi) : mu_hi / 16.0;
        SolveOutcome cand = penalized(mid);
        if (!cand.ok()) return cand;
        const double q_mid = ball_value(ball, cand.primal);
        if (q_mid > r2 + ftol) {
            mu_lo = mid;
        } else {
            mu_hi = mid;
            q_hi = q_mid;
            best = std::move(cand);
        }
    }
    best.objective = prog.objective_value(best.primal);
    return best;
}

}  // namespace

SolveOutcome solve(const ConvexProgram& program, double rel_tolerance,
                   const SolverOptions& options) {
    if (!(rel_tolerance >= 1e-10 && rel_tolerance <= 1e-1))
        throw std::invalid_argument("rel_tolerance outside [1e-10, 1e-1]");
    if (program.ball) {
        if (program.ball->radius < 0.0)
            throw std::invalid_argument("ball radius must be >= 0");
        return solve_ball(program, rel_tolerance, options);
    }
    return solve_core(program, rel_tolerance, options, {});
}

}  // namespace sbd

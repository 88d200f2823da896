#include "ipm.hpp"

#include <Eigen/SparseCholesky>
#include <algorithm>
#include <cmath>
#include <vector>

namespace sbd::ipm {
namespace {

struct Bounds {
    std::vector<char> has_lb, has_ub;
    int n_bounded = 0;  // number of finite bound components (lb and ub counted separately)
};

Bounds scan_bounds(const StandardForm& sf) {
    Bounds bd;
    const int n = sf.n();
    bd.has_lb.assign(n, 0);
    bd.has_ub.assign(n, 0);
    for (int j = 0; j < n; ++j) {
        if (std::isfinite(sf.lb[j])) {
            bd.has_lb[j] = 1;
            ++bd.n_bounded;
        }
        if (std::isfinite(sf.ub[j])) {
            bd.has_ub[j] = 1;
            ++bd.n_bounded;
        }
    }
    return bd;
}

// Mehrotra-style starting point: interior w.r.t. finite bounds with a margin
// scaled to the bound magnitude.
void starting_point(const StandardForm& sf, const Bounds& bd, Eigen::VectorXd& x,
                    Eigen::VectorXd& y, Eigen::VectorXd& zl, Eigen::VectorXd& zu) {
    const int n = sf.n();
    x.resize(n);
    for (int j = 0; j < n; ++j) {
        const double l = sf.lb[j], u = sf.ub[j];
        if (bd.has_lb[j] && bd.has_ub[j]) {
            x[j] = 0.5 * (l + u);
        } else if (bd.has_lb[j]) {
            x[j] = l + 1.0 + 0.1 * std::abs(l);
        } else if (bd.has_ub[j]) {
            x[j] = u - 1.0 - 0.1 * std::abs(u);
        } else {
            x[j] = 0.0;
        }
    }
    y = Eigen::VectorXd::Zero(sf.m());
    zl = Eigen::VectorXd::Zero(n);
    zu = Eigen::VectorXd::Zero(n);
    for (int j = 0; j < n; ++j) {
        if (bd.has_lb[j]) zl[j] = 1.0;
        if (bd.has_ub[j]) zu[j] = 1.0;
    }
}

double max_step(const Eigen::VectorXd& v, const Eigen::VectorXd& dv,
                const std::vector<char>& mask) {
    double alpha = 1.0;
    for (int j = 0; j < v.size(); ++j) {
        if (!mask.empty() && !mask[j]) continue;
        if (dv[j] < 0.0) alpha = std::min(alpha, -v[j] / dv[j]);
    }
    return alpha;
}

}  // namespace

IpmResult solve(const StandardForm& sf, const IpmControls& ctl) {
    const int n = sf.n();
    const int m = sf.m();
    IpmResult res;

    if (n == 0) {
        // Degenerate program: only the constant objective remains.
        res.status = (m == 0 || sf.b.lpNorm<Eigen::Infinity>() < 1e-9) ? IpmStatus::optimal
                                                                       : IpmStatus::stalled;
        res.x.resize(0);
        res.y = Eigen::VectorXd::Zero(m);
        res.zl.resize(0);
        res.zu.resize(0);
        res.pobj = res.dobj = sf.c0;
        res.rel_gap = res.rel_pinf = res.rel_dinf = 0.0;
        return res;
    }

    const Bounds bd = scan_bounds(sf);
    Eigen::VectorXd x, y, zl, zu;
    starting_point(sf, bd, x, y, zl, zu);

    const bool quadratic = sf.has_quadratic();
    Eigen::VectorXd qdiag = sf.qdiag.size() == n ? sf.qdiag : Eigen::VectorXd::Zero(n);

    double delta_p = 1e-9;
    double delta_d = 1e-9;

    // KKT matrix [[Q + D + dp, A'], [A, -dd]]; only the lower triangle is
    // referenced by the factorization, so A' need not be stored.
    using Sparse = Eigen::SparseMatrix<double>;
    Sparse kkt(n + m, n + m);
    {
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(sf.A.nonZeros() + n + m);
        for (int j = 0; j < n; ++j) trip.emplace_back(j, j, 1.0);
        for (int k = 0; k < sf.A.outerSize(); ++k) {
            for (Sparse::InnerIterator it(sf.A, k); it; ++it) {
                trip.emplace_back(n + static_cast<int>(it.row()), static_cast<int>(it.col()),
                                  it.value());
            }
        }
        for (int i = 0; i < m; ++i) trip.emplace_back(n + i, n + i, -delta_d);
        kkt.setFromTriplets(trip.begin(), trip.end());
        kkt.makeCompressed();
    }

    Eigen::SimplicialLDLT<Sparse, Eigen::Lower> ldlt;
    ldlt.analyzePattern(kkt);

    const double bnorm = m > 0 ? sf.b.lpNorm<Eigen::Infinity>() : 0.0;
    const double cnorm = sf.c.lpNorm<Eigen::Infinity>();

    auto gl_of = [&](const Eigen::VectorXd& xv, int j) { return xv[j] - sf.lb[j]; };
    auto gu_of = [&](const Eigen::VectorXd& xv, int j) { return sf.ub[j] - xv[j]; };

    Eigen::VectorXd rp(m), rd(n), dvec(n);
    Eigen::VectorXd rhs(n + m), sol(n + m), resid(n + m);
    Eigen::VectorXd dx(n), dy(m), dzl(n), dzu(n);
    Eigen::VectorXd dx_a(n), dzl_a(n), dzu_a(n);
    Eigen::VectorXd tl(n), tu(n);

    double best_composite = kInf;
    int stall_count = 0;

    // Applies the exact (unregularized) KKT operator for iterative refinement.
    auto apply_kkt = [&](const Eigen::VectorXd& v, Eigen::VectorXd& out) {
        out.head(n) = qdiag.cwiseProduct(v.head(n)) + dvec.cwiseProduct(v.head(n));
        if (m > 0) {
            out.head(n) += sf.A.transpose() * v.tail(m);
            out.tail(m) = sf.A * v.head(n);
        }
    };

    auto solve_kkt = [&](Eigen::VectorXd& inout) -> bool {
        sol = ldlt.solve(inout);
        // One refinement pass against the unregularized operator.
        apply_kkt(sol, resid);
        resid = inout - resid;
        sol += ldlt.solve(resid);
        inout = sol;
        return sol.allFinite();
    };

    for (int iter = 0; iter < ctl.max_iterations; ++iter) {
        res.iterations = iter;

        // Residuals and duality measures.
        rp = m > 0 ? (sf.b - sf.A * x).eval() : Eigen::VectorXd::Zero(0);
        rd = sf.c + qdiag.cwiseProduct(x) - zl + zu;
        if (m > 0) rd -= sf.A.transpose() * y;

        double comp = 0.0;
        for (int j = 0; j < n; ++j) {
            if (bd.has_lb[j]) comp += gl_of(x, j) * zl[j];
            if (bd.has_ub[j]) comp += gu_of(x, j) * zu[j];
        }
        const double mu = bd.n_bounded > 0 ? comp / bd.n_bounded : 0.0;

        const double quad_part = 0.5 * x.dot(qdiag.cwiseProduct(x));
        const double pobj = sf.c0 + sf.c.dot(x) + quad_part;
        double dobj = sf.c0 - quad_part;
        if (m > 0) dobj += sf.b.dot(y);
        for (int j = 0; j < n; ++j) {
            if (bd.has_lb[j]) dobj += sf.lb[j] * zl[j];
            if (bd.has_ub[j]) dobj -= sf.ub[j] * zu[j];
        }

        res.rel_pinf = m > 0 ? rp.lpNorm<Eigen::Infinity>() / (1.0 + bnorm) : 0.0;
        res.rel_dinf = rd.lpNorm<Eigen::Infinity>() / (1.0 + cnorm);
        res.rel_gap = std::abs(pobj - dobj) / (1.0 + std::abs(pobj));
        res.pobj = pobj;
        res.dobj = dobj;

        if (res.rel_gap <= ctl.gap_tol && res.rel_pinf <= ctl.feas_tol &&
            res.rel_dinf <= ctl.feas_tol) {
            res.status = IpmStatus::optimal;
            break;
        }
        if (!x.allFinite() || x.lpNorm<Eigen::Infinity>() > 1e14 || pobj < -1e14) {
            res.status = IpmStatus::diverging;
            break;
        }
        const double composite = std::max({res.rel_pinf, res.rel_dinf, res.rel_gap});
        if (composite < 0.9 * best_composite) {
            best_composite = composite;
            stall_count = 0;
        } else if (++stall_count > 30) {
            res.status = IpmStatus::stalled;
            break;
        }

        // Barrier diagonal D = Zl/Gl + Zu/Gu.
        for (int j = 0; j < n; ++j) {
            double d = 0.0;
            if (bd.has_lb[j]) d += zl[j] / std::max(gl_of(x, j), 1e-14);
            if (bd.has_ub[j]) d += zu[j] / std::max(gu_of(x, j), 1e-14);
            dvec[j] = d;
        }

        bool factorized = false;
        for (int attempt = 0; attempt < 4 && !factorized; ++attempt) {
            for (int j = 0; j < n; ++j) kkt.coeffRef(j, j) = qdiag[j] + dvec[j] + delta_p;
            for (int i = 0; i < m; ++i) kkt.coeffRef(n + i, n + i) = -delta_d;
            ldlt.factorize(kkt);
            if (ldlt.info() == Eigen::Success) {
                factorized = true;
            } else {
                delta_p *= 100.0;
                delta_d *= 100.0;
            }
        }
        if (!factorized) {
            res.status = IpmStatus::factorization_failed;
            break;
        }

        // Affine predictor: targets t_l = -Gl Zl, t_u = -Gu Zu.
        for (int j = 0; j < n; ++j) {
            tl[j] = bd.has_lb[j] ? -gl_of(x, j) * zl[j] : 0.0;
            tu[j] = bd.has_ub[j] ? -gu_of(x, j) * zu[j] : 0.0;
        }
        auto assemble_rhs = [&]() {
            for (int j = 0; j < n; ++j) {
                double v = -rd[j];
                if (bd.has_lb[j]) v += tl[j] / std::max(gl_of(x, j), 1e-14);
                if (bd.has_ub[j]) v -= tu[j] / std::max(gu_of(x, j), 1e-14);
                rhs[j] = v;
            }
            rhs.tail(m) = rp;
        };
        auto extract_direction = [&](Eigen::VectorXd& ox, Eigen::VectorXd& oy,
                                     Eigen::VectorXd& ozl, Eigen::VectorXd& ozu) {
            ox = rhs.head(n);
            oy = -rhs.tail(m);
            for (int j = 0; j < n; ++j) {
                ozl[j] = bd.has_lb[j]
                             ? (tl[j] - zl[j] * ox[j]) / std::max(gl_of(x, j), 1e-14)
                             : 0.0;
                ozu[j] = bd.has_ub[j]
                             ? (tu[j] + zu[j] * ox[j]) / std::max(gu_of(x, j), 1e-14)
                             : 0.0;
            }
        };

        assemble_rhs();
        if (!solve_kkt(rhs)) {
            res.status = IpmStatus::factorization_failed;
            break;
        }
        extract_direction(dx_a, dy, dzl_a, dzu_a);

        // Affine step lengths and centering parameter.
        double ap = 1.0, ad = 1.0;
        for (int j = 0; j < n; ++j) {
            if (bd.has_lb[j]) {
                if (dx_a[j] < 0.0) ap = std::min(ap, -gl_of(x, j) / dx_a[j]);
                if (dzl_a[j] < 0.0) ad = std::min(ad, -zl[j] / dzl_a[j]);
            }
            if (bd.has_ub[j]) {
                if (dx_a[j] > 0.0) ap = std::min(ap, gu_of(x, j) / dx_a[j]);
                if (dzu_a[j] < 0.0) ad = std::min(ad, -zu[j] / dzu_a[j]);
            }
        }
        double comp_aff = 0.0;
        for (int j = 0; j < n; ++j) {
            if (bd.has_lb[j])
                comp_aff += (gl_of(x, j) + ap * dx_a[j]) * (zl[j] + ad * dzl_a[j]);
            if (bd.has_ub[j])
                comp_aff += (gu_of(x, j) - ap * dx_a[j]) * (zu[j] + ad * dzu_a[j]);
        }
        const double mu_aff = bd.n_bounded > 0 ? comp_aff / bd.n_bounded : 0.0;
        double sigma = mu > 1e-300 ? std::pow(mu_aff / mu, 3) : 0.0;
        sigma = std::clamp(sigma, 1e-8, 0.99);

        // Corrector with Mehrotra second-order terms.
        for (int j = 0; j < n; ++j) {
            if (bd.has_lb[j]) tl[j] = sigma * mu - gl_of(x, j) * zl[j] - dx_a[j] * dzl_a[j];
            if (bd.has_ub[j]) tu[j] = sigma * mu - gu_of(x, j) * zu[j] + dx_a[j] * dzu_a[j];
        }
        assemble_rhs();
        if (!solve_kkt(rhs)) {
            res.status = IpmStatus::factorization_failed;
            break;
        }
        extract_direction(dx, dy, dzl, dzu);

        ap = 1.0;
        ad = 1.0;
        for (int j = 0; j < n; ++j) {
            if (bd.has_lb[j]) {
                if (dx[j] < 0.0) ap = std::min(ap, -gl_of(x, j) / dx[j]);
                if (dzl[j] < 0.0) ad = std::min(ad, -zl[j] / dzl[j]);
            }
            if (bd.has_ub[j]) {
                if (dx[j] > 0.0) ap = std::min(ap, gu_of(x, j) / dx[j]);
                if (dzu[j] < 0.0) ad = std::min(ad, -zu[j] / dzu[j]);
            }
        }
        constexpr double tau = 0.9995;
        ap = std::min(1.0, tau * ap);
        ad = std::min(1.0, tau * ad);
        if (quadratic) ap = ad = std::min(ap, ad);  // Q couples primal and dual steps

        x += ap * dx;
        y += ad * dy;
        zl += ad * dzl;
        zu += ad * dzu;
        for (int j = 0; j < n; ++j) {
            if (bd.has_lb[j]) zl[j] = std::max(zl[j], 0.0);
            if (bd.has_ub[j]) zu[j] = std::max(zu[j], 0.0);
        }

        if (iter + 1 == ctl.max_iterations) res.status = IpmStatus::max_iterations;
    }

    res.x = x;
    res.y = y;
    res.zl = zl;
    res.zu = zu;
    return res;
}

}  // namespace sbd::ipm

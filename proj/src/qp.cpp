#include "evflex/qp.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <vector>

#include <fmt/format.h>
#include <fmt/ostream.h>

namespace evflex {

namespace {

constexpr double kRhoMin = 1e-6;
constexpr double kRhoMax = 1e6;
constexpr double kEqualityRhoScale = 1e3;
constexpr double kScaleMin = 1e-4;
constexpr double kScaleMax = 1e4;
constexpr double kPolishDelta = 1e-6;
constexpr int kRefineIters = 3;

using Triplet = Eigen::Triplet<double>;
using Ldlt = Eigen::SimplicialLDLT<SparseMatrix, Eigen::Upper, Eigen::AMDOrdering<int>>;

double inf_norm(const Vector& v) { return v.size() ? v.lpNorm<Eigen::Infinity>() : 0.0; }

Vector col_inf_norms(const SparseMatrix& M) {
    Vector out = Vector::Zero(M.cols());
    for (Eigen::Index j = 0; j < M.outerSize(); ++j)
        for (SparseMatrix::InnerIterator it(M, j); it; ++it) out[j] = std::max(out[j], std::abs(it.value()));
    return out;
}

Vector row_inf_norms(const SparseMatrix& M) {
    Vector out = Vector::Zero(M.rows());
    for (Eigen::Index j = 0; j < M.outerSize(); ++j)
        for (SparseMatrix::InnerIterator it(M, j); it; ++it)
            out[it.row()] = std::max(out[it.row()], std::abs(it.value()));
    return out;
}

double equilibrate(double norm) {
    if (norm < kScaleMin) return 1.0;
    return std::clamp(1.0 / std::sqrt(norm), kScaleMin, kScaleMax);
}

// Ruiz equilibration of the KKT matrix plus cost scaling.
struct ScaledProblem {
    SparseMatrix P;
    Vector q;
    SparseMatrix A;
    SparseMatrix At;
    Vector l;
    Vector u;
    Vector D;
    Vector E;
    Vector Dinv;
    Vector Einv;
    double c = 1.0;
    double cinv = 1.0;
};

ScaledProblem scale_problem(const QpProblem& p, int iters) {
    ScaledProblem s;
    s.P = p.P;
    s.q = p.q;
    s.A = p.A;
    Eigen::Index n = p.variables();
    Eigen::Index m = p.constraints();
    s.D = Vector::Ones(n);
    s.E = Vector::Ones(m);
    for (int it = 0; it < iters; ++it) {
        Vector pc = col_inf_norms(s.P);
        Vector ac = col_inf_norms(s.A);
        Vector ar = row_inf_norms(s.A);
        Vector dx(n);
        Vector dy(m);
        for (Eigen::Index j = 0; j < n; ++j) dx[j] = equilibrate(std::max(pc[j], ac[j]));
        for (Eigen::Index i = 0; i < m; ++i) dy[i] = equilibrate(ar[i]);
        s.P = dx.asDiagonal() * s.P * dx.asDiagonal();
        s.A = dy.asDiagonal() * s.A * dx.asDiagonal();
        s.q = dx.cwiseProduct(s.q);
        s.D = s.D.cwiseProduct(dx);
        s.E = s.E.cwiseProduct(dy);

        Vector pcn = col_inf_norms(s.P);
        double mean_p = n ? pcn.mean() : 0.0;
        double cost = std::max(mean_p, inf_norm(s.q));
        double gamma = cost < kScaleMin ? 1.0 : std::clamp(1.0 / cost, kScaleMin, kScaleMax);
        s.P *= gamma;
        s.q *= gamma;
        s.c *= gamma;
    }
    s.P.makeCompressed();
    s.A.makeCompressed();
    s.At = s.A.transpose();
    s.l = s.E.cwiseProduct(p.l);
    s.u = s.E.cwiseProduct(p.u);
    s.Dinv = s.D.cwiseInverse();
    s.Einv = s.E.cwiseInverse();
    s.cinv = 1.0 / s.c;
    return s;
}

Vector project(const Vector& v, const Vector& l, const Vector& u) { return v.cwiseMax(l).cwiseMin(u); }

// Quasi-definite KKT matrix [P + sigma I, A'; A, -diag(1/rho)] (upper triangle).
class KktSystem {
public:
    KktSystem(const ScaledProblem& s, double sigma, const Vector& rho) : n_(s.P.rows()), m_(s.A.rows()) {
        std::vector<Triplet> trip;
        trip.reserve(static_cast<std::size_t>(s.P.nonZeros() + s.A.nonZeros() + n_ + m_));
        for (Eigen::Index j = 0; j < s.P.outerSize(); ++j)
            for (SparseMatrix::InnerIterator it(s.P, j); it; ++it)
                if (it.row() <= it.col()) trip.emplace_back(it.row(), it.col(), it.value());
        for (Eigen::Index j = 0; j < n_; ++j) trip.emplace_back(j, j, sigma);
        for (Eigen::Index j = 0; j < s.A.outerSize(); ++j)
            for (SparseMatrix::InnerIterator it(s.A, j); it; ++it) trip.emplace_back(j, n_ + it.row(), it.value());
        for (Eigen::Index i = 0; i < m_; ++i) trip.emplace_back(n_ + i, n_ + i, -1.0 / rho[i]);
        K_.resize(n_ + m_, n_ + m_);
        K_.setFromTriplets(trip.begin(), trip.end());
        K_.makeCompressed();
        diag_.resize(static_cast<std::size_t>(m_));
        for (Eigen::Index i = 0; i < m_; ++i) diag_[static_cast<std::size_t>(i)] = &K_.coeffRef(n_ + i, n_ + i);
        ldlt_.analyzePattern(K_);
        factorize();
    }

    void update_rho(const Vector& rho) {
        for (Eigen::Index i = 0; i < m_; ++i) *diag_[static_cast<std::size_t>(i)] = -1.0 / rho[i];
        factorize();
    }

    Vector solve(const Vector& rhs) const { return ldlt_.solve(rhs); }

private:
    void factorize() {
        ldlt_.factorize(K_);
        if (ldlt_.info() != Eigen::Success) throw QpError("KKT factorization failed");
        const Vector& d = ldlt_.vectorD();
        Eigen::Index positive = 0;
        for (Eigen::Index i = 0; i < d.size(); ++i)
            if (d[i] > 0.0) ++positive;
        if (positive != n_) throw QpError("objective matrix is not positive semidefinite");
    }

    Eigen::Index n_;
    Eigen::Index m_;
    SparseMatrix K_;
    std::vector<double*> diag_;
    Ldlt ldlt_;
};

struct Residuals {
    double primal = kInf;
    double dual = kInf;
    double eps_primal = 0.0;
    double eps_dual = 0.0;
    bool converged() const { return primal <= eps_primal && dual <= eps_dual; }
};

Residuals residuals(const ScaledProblem& s, const QpSettings& st, const Vector& x, const Vector& z,
                    const Vector& y) {
    Vector Ax = s.A * x;
    Vector Px = s.P * x;
    Vector Aty = s.At * y;
    Residuals r;
    r.primal = inf_norm(s.Einv.cwiseProduct(Ax - z));
    r.dual = s.cinv * inf_norm(s.Dinv.cwiseProduct(Px + s.q + Aty));
    double prim_scale = std::max(inf_norm(s.Einv.cwiseProduct(Ax)), inf_norm(s.Einv.cwiseProduct(z)));
    double dual_scale = s.cinv * std::max({inf_norm(s.Dinv.cwiseProduct(Px)), inf_norm(s.Dinv.cwiseProduct(Aty)),
                                           inf_norm(s.Dinv.cwiseProduct(s.q))});
    r.eps_primal = st.eps_abs + st.eps_rel * prim_scale;
    r.eps_dual = st.eps_dual + st.eps_rel * dual_scale;
    return r;
}

bool primal_infeasible(const ScaledProblem& s, const QpSettings& st, const Vector& dy) {
    Vector dyu = s.E.cwiseProduct(dy);
    double norm = inf_norm(dyu);
    if (norm <= st.eps_infeasible) return false;
    double support = 0.0;
    for (Eigen::Index i = 0; i < dy.size(); ++i) {
        if (dy[i] > 0.0) {
            if (std::isinf(s.u[i])) return false;
            support += s.u[i] * dy[i];
        } else if (dy[i] < 0.0) {
            if (std::isinf(s.l[i])) return false;
            support += s.l[i] * dy[i];
        }
    }
    if (support >= -st.eps_infeasible * norm) return false;
    return inf_norm(s.Dinv.cwiseProduct(s.At * dy)) <= st.eps_infeasible * norm;
}

bool dual_infeasible(const ScaledProblem& s, const QpSettings& st, const Vector& dx) {
    double norm = inf_norm(s.D.cwiseProduct(dx));
    if (norm <= st.eps_infeasible) return false;
    double tol = st.eps_infeasible * norm;
    if (s.cinv * s.q.dot(dx) >= -tol) return false;
    if (s.cinv * inf_norm(s.Dinv.cwiseProduct(s.P * dx)) > tol) return false;
    Vector Adx = s.Einv.cwiseProduct(s.A * dx);
    for (Eigen::Index i = 0; i < Adx.size(); ++i) {
        if (std::isfinite(s.u[i]) && Adx[i] > tol) return false;
        if (std::isfinite(s.l[i]) && Adx[i] < -tol) return false;
    }
    return true;
}

Vector rho_vector(const ScaledProblem& s, double rho) {
    Vector out(s.l.size());
    for (Eigen::Index i = 0; i < out.size(); ++i) {
        bool lower_free = std::isinf(s.l[i]);
        bool upper_free = std::isinf(s.u[i]);
        if (lower_free && upper_free)
            out[i] = kRhoMin;
        else if (s.u[i] - s.l[i] < 1e-4 * std::max(1.0, std::abs(s.l[i])))
            out[i] = std::min(kEqualityRhoScale * rho, kRhoMax);
        else
            out[i] = rho;
    }
    return out;
}

struct PolishResult {
    bool accepted = false;
    Vector x;
    Vector z;
    Vector y;
    Residuals res;
};

// Solves the equality-constrained problem on the guessed active set, with a
// small proximal term around the current iterate so directions the objective
// does not see stay put. Keeps the result only if it meets the tolerances
// with correctly signed multipliers.
PolishResult polish(const ScaledProblem& s, const QpSettings& st, const Vector& x, const Vector& z,
                    const Vector& y) {
    Eigen::Index n = s.P.rows();
    Eigen::Index m = s.A.rows();
    std::vector<int> kind(static_cast<std::size_t>(m), 0);  // -1 lower, +1 upper, 2 equality
    std::vector<Eigen::Index> rows;
    for (Eigen::Index i = 0; i < m; ++i) {
        bool eq = s.u[i] - s.l[i] < 1e-10 * std::max(1.0, std::abs(s.l[i]));
        if (eq) {
            kind[static_cast<std::size_t>(i)] = 2;
        } else if (std::isfinite(s.l[i]) && z[i] - s.l[i] < -y[i]) {
            kind[static_cast<std::size_t>(i)] = -1;
        } else if (std::isfinite(s.u[i]) && s.u[i] - z[i] < y[i]) {
            kind[static_cast<std::size_t>(i)] = 1;
        }
        if (kind[static_cast<std::size_t>(i)] != 0) rows.push_back(i);
    }
    auto mr = static_cast<Eigen::Index>(rows.size());
    std::vector<Eigen::Index> slot(static_cast<std::size_t>(m), -1);
    for (Eigen::Index r = 0; r < mr; ++r) slot[static_cast<std::size_t>(rows[static_cast<std::size_t>(r)])] = r;

    std::vector<Triplet> red_trip;
    std::vector<Triplet> trip;
    for (Eigen::Index j = 0; j < s.P.outerSize(); ++j)
        for (SparseMatrix::InnerIterator it(s.P, j); it; ++it)
            if (it.row() <= it.col()) trip.emplace_back(it.row(), it.col(), it.value());
    for (Eigen::Index j = 0; j < n; ++j) trip.emplace_back(j, j, kPolishDelta);
    for (Eigen::Index j = 0; j < s.A.outerSize(); ++j)
        for (SparseMatrix::InnerIterator it(s.A, j); it; ++it) {
            Eigen::Index r = slot[static_cast<std::size_t>(it.row())];
            if (r < 0) continue;
            trip.emplace_back(j, n + r, it.value());
            red_trip.emplace_back(r, j, it.value());
        }
    for (Eigen::Index r = 0; r < mr; ++r) trip.emplace_back(n + r, n + r, -kPolishDelta);
    SparseMatrix K(n + mr, n + mr);
    K.setFromTriplets(trip.begin(), trip.end());
    SparseMatrix Ared(mr, n);
    Ared.setFromTriplets(red_trip.begin(), red_trip.end());
    SparseMatrix AredT = Ared.transpose();

    PolishResult out;
    Ldlt ldlt(K);
    if (ldlt.info() != Eigen::Success) return out;

    Vector rhs(n + mr);
    rhs.head(n) = kPolishDelta * x - s.q;
    for (Eigen::Index r = 0; r < mr; ++r) {
        Eigen::Index i = rows[static_cast<std::size_t>(r)];
        rhs[n + r] = kind[static_cast<std::size_t>(i)] == 1 ? s.u[i] : s.l[i];
    }
    Vector sol = ldlt.solve(rhs);
    for (int k = 0; k < kRefineIters; ++k) {
        Vector resid(n + mr);
        resid.head(n) = rhs.head(n) - (s.P * sol.head(n) + kPolishDelta * sol.head(n) + AredT * sol.tail(mr));
        resid.tail(mr) = rhs.tail(mr) - Ared * sol.head(n);
        sol += ldlt.solve(resid);
    }
    if (!sol.allFinite()) return out;

    out.x = sol.head(n);
    out.y = Vector::Zero(m);
    for (Eigen::Index r = 0; r < mr; ++r) out.y[rows[static_cast<std::size_t>(r)]] = sol[n + r];
    out.z = project(s.A * out.x, s.l, s.u);
    out.res = residuals(s, st, out.x, out.z, out.y);
    bool signs_ok = true;
    for (Eigen::Index r = 0; r < mr; ++r) {
        Eigen::Index i = rows[static_cast<std::size_t>(r)];
        double yu = s.E[i] * out.y[i] * s.cinv;
        int k = kind[static_cast<std::size_t>(i)];
        if ((k == -1 && yu > st.eps_dual) || (k == 1 && yu < -st.eps_dual)) signs_ok = false;
    }
    if (out.res.converged() && signs_ok) {
        out.accepted = true;
        return out;
    }
    // Degenerate active sets leave the reduced multipliers non-unique and the
    // regularized solve may pick wrongly signed ones. Keep the polished point
    // if the iterate's own multipliers certify it.
    Residuals with_iterate = residuals(s, st, out.x, out.z, y);
    if (!with_iterate.converged()) return out;
    Vector Ax = s.A * out.x;
    double y_scale = std::max(1.0, s.cinv * inf_norm(s.E.cwiseProduct(y)));
    for (Eigen::Index i = 0; i < m; ++i) {
        double yu = s.E[i] * y[i] * s.cinv;
        double gap = 0.0;
        if (yu > 0.0) gap = std::isinf(s.u[i]) ? kInf : std::abs(s.u[i] - Ax[i]) * s.Einv[i];
        if (yu < 0.0) gap = std::isinf(s.l[i]) ? kInf : std::abs(Ax[i] - s.l[i]) * s.Einv[i];
        if (std::abs(yu) * gap > st.eps_abs * y_scale) return out;
    }
    out.y = y;
    out.res = with_iterate;
    out.accepted = true;
    return out;
}


// Primal-dual interior-point method (Mehrotra predictor-corrector) on the
// scaled problem. Each inequality row r gets a slack s_r in [l_r, u_r] with
// multipliers z_l, z_u >= 0 and y_r = z_l - z_u; equality rows keep a free
// multiplier. Newton steps solve the quasi-definite system
// [P + delta I, A'; A, -W] with W = 1/(z_l/(s-l) + z_u/(u-s)) on inequality
// rows and delta on equality rows.
class InteriorPoint {
public:
    InteriorPoint(const QpProblem& problem, const QpSettings& st)
        : problem_(problem), st_(st), s_(scale_problem(problem, st.scaling_iters)) {
        n_ = s_.P.rows();
        Eigen::Index m_all = s_.A.rows();
        for (Eigen::Index r = 0; r < m_all; ++r) {
            bool lo = std::isfinite(s_.l[r]);
            bool hi = std::isfinite(s_.u[r]);
            if (!lo && !hi) continue;
            Row row;
            row.index = r;
            row.l = s_.l[r];
            row.u = s_.u[r];
            row.has_l = lo;
            row.has_u = hi;
            row.equality = lo && hi && s_.u[r] - s_.l[r] <= kEqualityGap * (1.0 + std::abs(s_.l[r]));
            rows_.push_back(row);
        }
        m_ = static_cast<Eigen::Index>(rows_.size());
        std::vector<Triplet> sel;
        for (Eigen::Index i = 0; i < m_; ++i) sel.emplace_back(i, rows_[static_cast<std::size_t>(i)].index, 1.0);
        SparseMatrix S(m_, m_all);
        S.setFromTriplets(sel.begin(), sel.end());
        A_ = S * s_.A;
        A_.makeCompressed();
        At_ = A_.transpose();
        build_kkt();
    }

    QpSolution run() {
        Vector x = Vector::Zero(n_);
        Vector y = Vector::Zero(m_);
        Vector sl = Vector::Zero(m_);  // slack value s
        Vector zl = Vector::Zero(m_);
        Vector zu = Vector::Zero(m_);
        Vector Ax = A_ * x;
        for (Eigen::Index i = 0; i < m_; ++i) {
            const Row& r = rows_[static_cast<std::size_t>(i)];
            if (r.equality) {
                sl[i] = r.l;
                continue;
            }
            double margin = 1.0;
            if (r.has_l && r.has_u) margin = std::min(1.0, 0.25 * (r.u - r.l));
            double v = Ax[i];
            if (r.has_l) v = std::max(v, r.l + margin);
            if (r.has_u) v = std::min(v, r.u - margin);
            sl[i] = v;
            if (r.has_l) zl[i] = 1.0;
            if (r.has_u) zu[i] = 1.0;
            y[i] = zl[i] - zu[i];
        }
        int ncomp = 0;
        for (const Row& r : rows_)
            if (!r.equality) ncomp += static_cast<int>(r.has_l) + static_cast<int>(r.has_u);

        QpSolution sol;
        for (int k = 0; k <= st_.interior_max_iter; ++k) {
            Vector rd = s_.P * x + s_.q - At_ * y;
            Ax = A_ * x;
            Vector rp = Ax - sl;
            double mu = 0.0;
            for (Eigen::Index i = 0; i < m_; ++i) {
                const Row& r = rows_[static_cast<std::size_t>(i)];
                if (r.equality) continue;
                if (r.has_l) mu += (sl[i] - r.l) * zl[i];
                if (r.has_u) mu += (r.u - sl[i]) * zu[i];
            }
            mu = ncomp ? mu / ncomp : 0.0;
            sol = unscaled(x, y, k);
            if (sol.primal_residual <= st_.eps_abs && sol.dual_residual <= st_.eps_dual &&
                mu * s_.cinv <= st_.eps_abs) {
                sol.status = QpStatus::solved;
                if (st_.polish) try_polish(x, y, sol);
                return sol;
            }
            if (k == st_.interior_max_iter) break;

            Vector sigma_row(m_);
            for (Eigen::Index i = 0; i < m_; ++i) {
                const Row& r = rows_[static_cast<std::size_t>(i)];
                if (r.equality) {
                    sigma_row[i] = 0.0;
                    continue;
                }
                double v = 0.0;
                if (r.has_l) v += zl[i] / (sl[i] - r.l);
                if (r.has_u) v += zu[i] / (r.u - sl[i]);
                sigma_row[i] = v;
            }
            factorize(sigma_row);

            // Predictor with pure complementarity targets, then corrector.
            Vector rcl(m_), rcu(m_);
            for (Eigen::Index i = 0; i < m_; ++i) {
                const Row& r = rows_[static_cast<std::size_t>(i)];
                rcl[i] = (!r.equality && r.has_l) ? (sl[i] - r.l) * zl[i] : 0.0;
                rcu[i] = (!r.equality && r.has_u) ? (r.u - sl[i]) * zu[i] : 0.0;
            }
            Step aff = newton(rd, rp, rcl, rcu, sigma_row, sl, zl, zu);
            double a_aff = step_length(aff, sl, zl, zu, 1.0);
            double mu_aff = 0.0;
            for (Eigen::Index i = 0; i < m_; ++i) {
                const Row& r = rows_[static_cast<std::size_t>(i)];
                if (r.equality) continue;
                double s_new = sl[i] + a_aff * aff.ds[i];
                if (r.has_l) mu_aff += (s_new - r.l) * (zl[i] + a_aff * aff.dzl[i]);
                if (r.has_u) mu_aff += (r.u - s_new) * (zu[i] + a_aff * aff.dzu[i]);
            }
            mu_aff = ncomp ? mu_aff / ncomp : 0.0;
            double centering = mu > 0.0 ? std::min(1.0, std::pow(std::max(mu_aff, 0.0) / mu, 3.0)) : 0.0;
            for (Eigen::Index i = 0; i < m_; ++i) {
                const Row& r = rows_[static_cast<std::size_t>(i)];
                if (r.equality) continue;
                if (r.has_l) rcl[i] += aff.ds[i] * aff.dzl[i] - centering * mu;
                if (r.has_u) rcu[i] += -aff.ds[i] * aff.dzu[i] - centering * mu;
            }
            Step st = newton(rd, rp, rcl, rcu, sigma_row, sl, zl, zu);
            double a = step_length(st, sl, zl, zu, kBoundaryFraction);
            x += a * st.dx;
            sl += a * st.ds;
            zl += a * st.dzl;
            zu += a * st.dzu;
            for (Eigen::Index i = 0; i < m_; ++i) {
                const Row& r = rows_[static_cast<std::size_t>(i)];
                if (r.equality)
                    y[i] += a * st.dy[i];
                else
                    y[i] = zl[i] - zu[i];
            }
        }
        sol.status = QpStatus::max_iterations;
        return sol;
    }

private:
    static constexpr double kEqualityGap = 1e-10;
    static constexpr double kRegularization = 1e-9;
    static constexpr double kBoundaryFraction = 0.99;
    static constexpr int kRefine = 3;

    struct Row {
        Eigen::Index index = 0;
        double l = 0.0;
        double u = 0.0;
        bool has_l = false;
        bool has_u = false;
        bool equality = false;
    };

    struct Step {
        Vector dx, dy, ds, dzl, dzu;
    };

    void build_kkt() {
        std::vector<Triplet> trip;
        for (Eigen::Index j = 0; j < s_.P.outerSize(); ++j)
            for (SparseMatrix::InnerIterator it(s_.P, j); it; ++it)
                if (it.row() <= it.col()) trip.emplace_back(it.row(), it.col(), it.value());
        for (Eigen::Index j = 0; j < n_; ++j) trip.emplace_back(j, j, kRegularization);
        for (Eigen::Index j = 0; j < A_.outerSize(); ++j)
            for (SparseMatrix::InnerIterator it(A_, j); it; ++it) trip.emplace_back(j, n_ + it.row(), it.value());
        for (Eigen::Index i = 0; i < m_; ++i) trip.emplace_back(n_ + i, n_ + i, -1.0);
        K_.resize(n_ + m_, n_ + m_);
        K_.setFromTriplets(trip.begin(), trip.end());
        K_.makeCompressed();
        diag_.resize(static_cast<std::size_t>(m_));
        for (Eigen::Index i = 0; i < m_; ++i) diag_[static_cast<std::size_t>(i)] = &K_.coeffRef(n_ + i, n_ + i);
        ldlt_.analyzePattern(K_);
        w_ = Vector::Zero(m_);
    }

    void factorize(const Vector& sigma_row) {
        for (Eigen::Index i = 0; i < m_; ++i) {
            const Row& r = rows_[static_cast<std::size_t>(i)];
            double w = r.equality ? 0.0 : 1.0 / std::max(sigma_row[i], 1e-14);
            w_[i] = w;
            *diag_[static_cast<std::size_t>(i)] = -std::max(w, kRegularization);
        }
        ldlt_.factorize(K_);
        if (ldlt_.info() != Eigen::Success) throw QpError("interior-point KKT factorization failed");
    }

    // Solves the unregularised system by refining against the factorised one.
    Vector kkt_solve(const Vector& rhs) const {
        Vector sol = ldlt_.solve(rhs);
        for (int it = 0; it < kRefine; ++it) {
            Vector top = s_.P * sol.head(n_) + At_ * sol.tail(m_);
            Vector bottom = A_ * sol.head(n_) - w_.cwiseProduct(sol.tail(m_));
            Vector res(n_ + m_);
            res << rhs.head(n_) - top, rhs.tail(m_) - bottom;
            if (inf_norm(res) <= 1e-14 * (1.0 + inf_norm(rhs))) break;
            sol += ldlt_.solve(res);
        }
        return sol;
    }

    Step newton(const Vector& rd, const Vector& rp, const Vector& rcl, const Vector& rcu, const Vector& sigma_row,
                const Vector& sl, const Vector& zl, const Vector& zu) const {
        Vector g = Vector::Zero(m_);
        Vector rhs(n_ + m_);
        rhs.head(n_) = -rd;
        for (Eigen::Index i = 0; i < m_; ++i) {
            const Row& r = rows_[static_cast<std::size_t>(i)];
            if (r.equality) {
                rhs[n_ + i] = -rp[i];
                continue;
            }
            if (r.has_l) g[i] -= rcl[i] / (sl[i] - r.l);
            if (r.has_u) g[i] += rcu[i] / (r.u - sl[i]);
            rhs[n_ + i] = -rp[i] + g[i] / sigma_row[i];
        }
        Vector sol = kkt_solve(rhs);
        Step st;
        st.dx = sol.head(n_);
        st.dy = -sol.tail(m_);
        st.ds = Vector::Zero(m_);
        st.dzl = Vector::Zero(m_);
        st.dzu = Vector::Zero(m_);
        // Both expressions for the slack step agree in exact arithmetic. The
        // multiplier form divides by sigma, which vanishes on inactive rows, so
        // those rows take the primal form instead.
        Vector Adx = A_ * st.dx;
        for (Eigen::Index i = 0; i < m_; ++i) {
            const Row& r = rows_[static_cast<std::size_t>(i)];
            if (r.equality) continue;
            double ds = sigma_row[i] >= 1.0 ? (g[i] - st.dy[i]) / sigma_row[i] : Adx[i] + rp[i];
            st.ds[i] = ds;
            if (r.has_l) st.dzl[i] = (-rcl[i] - zl[i] * ds) / (sl[i] - r.l);
            if (r.has_u) st.dzu[i] = (-rcu[i] + zu[i] * ds) / (r.u - sl[i]);
        }
        return st;
    }

    double step_length(const Step& st, const Vector& sl, const Vector& zl, const Vector& zu, double fraction) const {
        double a = 1.0 / fraction;
        auto limit = [&](double v, double dv) {
            if (dv < 0.0) a = std::min(a, -v / dv);
        };
        for (Eigen::Index i = 0; i < m_; ++i) {
            const Row& r = rows_[static_cast<std::size_t>(i)];
            if (r.equality) continue;
            if (r.has_l) {
                limit(sl[i] - r.l, st.ds[i]);
                limit(zl[i], st.dzl[i]);
            }
            if (r.has_u) {
                limit(r.u - sl[i], -st.ds[i]);
                limit(zu[i], st.dzu[i]);
            }
        }
        return std::min(1.0, fraction * a);
    }

    // Refines the interior iterate on its guessed active set.
    void try_polish(const Vector& x, const Vector& y, QpSolution& sol) const {
        Vector y_all = Vector::Zero(s_.A.rows());
        for (Eigen::Index i = 0; i < m_; ++i) y_all[rows_[static_cast<std::size_t>(i)].index] = -y[i];
        Vector z = project(s_.A * x, s_.l, s_.u);
        PolishResult p = polish(s_, st_, x, z, y_all);
        if (!p.accepted) return;
        sol.x = s_.D.cwiseProduct(p.x);
        sol.y = s_.cinv * s_.E.cwiseProduct(p.y);
        sol.primal_residual = p.res.primal;
        sol.dual_residual = p.res.dual;
        sol.objective = problem_.objective(sol.x);
        sol.polished = true;
    }

    QpSolution unscaled(const Vector& x, const Vector& y, int iters) const {
        QpSolution sol;
        sol.x = s_.D.cwiseProduct(x);
        Vector y_all = Vector::Zero(s_.A.rows());
        for (Eigen::Index i = 0; i < m_; ++i) y_all[rows_[static_cast<std::size_t>(i)].index] = -y[i];
        sol.y = s_.cinv * s_.E.cwiseProduct(y_all);
        Vector Ax = problem_.A * sol.x;
        sol.primal_residual = inf_norm(Ax - project(Ax, problem_.l, problem_.u));
        sol.dual_residual = inf_norm(problem_.P * sol.x + problem_.q + problem_.A.transpose() * sol.y);
        sol.objective = problem_.objective(sol.x);
        sol.iterations = iters;
        return sol;
    }

    const QpProblem& problem_;
    const QpSettings& st_;
    ScaledProblem s_;
    Eigen::Index n_ = 0;
    Eigen::Index m_ = 0;
    std::vector<Row> rows_;
    SparseMatrix A_;
    SparseMatrix At_;
    SparseMatrix K_;
    std::vector<double*> diag_;
    Vector w_;
    Ldlt ldlt_;
};

}  // namespace

QpProblem QpProblem::from_dense(const Eigen::MatrixXd& P, const Vector& q, const Eigen::MatrixXd& A,
                                const Vector& l, const Vector& u) {
    QpProblem p;
    p.P = P.sparseView();
    p.q = q;
    p.A = A.sparseView();
    p.l = l;
    p.u = u;
    return p;
}

double QpProblem::objective(const Vector& x) const { return 0.5 * x.dot(P * x) + q.dot(x); }

void QpProblem::validate() const {
    Eigen::Index n = q.size();
    if (P.rows() != n || P.cols() != n) throw QpError(fmt::format("P is {}x{}, expected {}x{}", P.rows(), P.cols(), n, n));
    if (A.cols() != n) throw QpError(fmt::format("A has {} columns, expected {}", A.cols(), n));
    if (l.size() != A.rows() || u.size() != A.rows()) throw QpError("bound vectors do not match A's rows");
    if (!q.allFinite()) throw QpError("q contains NaN or Inf");
    for (Eigen::Index j = 0; j < P.outerSize(); ++j)
        for (SparseMatrix::InnerIterator it(P, j); it; ++it)
            if (!std::isfinite(it.value())) throw QpError("P contains NaN or Inf");
    for (Eigen::Index j = 0; j < A.outerSize(); ++j)
        for (SparseMatrix::InnerIterator it(A, j); it; ++it)
            if (!std::isfinite(it.value())) throw QpError("A contains NaN or Inf");
    for (Eigen::Index i = 0; i < l.size(); ++i) {
        if (std::isnan(l[i]) || std::isnan(u[i])) throw QpError("bounds contain NaN");
        if (l[i] == kInf || u[i] == -kInf) throw QpError(fmt::format("row {} has an unsatisfiable infinite bound", i));
        if (l[i] > u[i]) throw QpError(fmt::format("row {}: lower bound {} exceeds upper bound {}", i, l[i], u[i]));
    }
    SparseMatrix asym = SparseMatrix(P.transpose()) - P;
    for (Eigen::Index j = 0; j < asym.outerSize(); ++j)
        for (SparseMatrix::InnerIterator it(asym, j); it; ++it)
            if (std::abs(it.value()) > 1e-12) throw QpError("P is not symmetric");
}

std::string to_string(QpStatus status) {
    switch (status) {
        case QpStatus::solved: return "solved";
        case QpStatus::max_iterations: return "max_iterations";
        case QpStatus::primal_infeasible: return "infeasible";
        case QpStatus::dual_infeasible: return "unbounded";
    }
    return "unknown";
}

QpSolution solve(const QpProblem& problem, const QpSettings& st, const WarmStart* warm) {
    problem.validate();
    if (st.method == QpMethod::interior_point) return InteriorPoint(problem, st).run();
    Eigen::Index n = problem.variables();
    Eigen::Index m = problem.constraints();
    ScaledProblem s = scale_problem(problem, st.scaling_iters);

    double rho = std::clamp(st.rho, kRhoMin, kRhoMax);
    Vector rho_vec = rho_vector(s, rho);
    KktSystem kkt(s, st.sigma, rho_vec);

    Vector x = Vector::Zero(n);
    Vector y = Vector::Zero(m);
    if (warm) {
        if (warm->x.size() == n) x = s.Dinv.cwiseProduct(warm->x);
        if (warm->y.size() == m) y = s.c * s.Einv.cwiseProduct(warm->y);
    }
    Vector z = project(s.A * x, s.l, s.u);

    QpSolution sol;
    auto finish = [&](const Vector& xs, const Vector& ys, const Residuals& r, QpStatus status, int iters,
                      bool polished) {
        sol.x = s.D.cwiseProduct(xs);
        sol.y = s.cinv * s.E.cwiseProduct(ys);
        sol.primal_residual = r.primal;
        sol.dual_residual = r.dual;
        sol.iterations = iters;
        sol.status = status;
        sol.polished = polished;
        sol.objective = problem.objective(sol.x);
        return sol;
    };

    Vector rhs(n + m);
    Vector x_prev;
    Vector z_prev;
    Vector y_prev;
    Residuals res;
    int last_polish = 0;
    for (int k = 1; k <= st.max_iter; ++k) {
        x_prev = x;
        z_prev = z;
        y_prev = y;
        rhs.head(n) = st.sigma * x - s.q;
        rhs.tail(m) = z - y.cwiseQuotient(rho_vec);
        Vector step = kkt.solve(rhs);
        Vector z_tilde = z + (step.tail(m) - y).cwiseQuotient(rho_vec);
        x = st.alpha * step.head(n) + (1.0 - st.alpha) * x_prev;
        Vector z_relax = st.alpha * z_tilde + (1.0 - st.alpha) * z_prev;
        z = project(z_relax + y.cwiseQuotient(rho_vec), s.l, s.u);
        y = y + rho_vec.cwiseProduct(z_relax - z);

        if (k % st.check_every != 0 && k != st.max_iter) continue;
        res = residuals(s, st, x, z, y);
        if (res.converged()) {
            if (st.polish) {
                PolishResult p = polish(s, st, x, z, y);
                if (p.accepted) return finish(p.x, p.y, p.res, QpStatus::solved, k, true);
            }
            return finish(x, y, res, QpStatus::solved, k, false);
        }
        if (primal_infeasible(s, st, y - y_prev)) return finish(x, y, res, QpStatus::primal_infeasible, k, false);
        if (dual_infeasible(s, st, x - x_prev)) return finish(x, y, res, QpStatus::dual_infeasible, k, false);

        if (st.polish && st.polish_every > 0 && k - last_polish >= st.polish_every) {
            last_polish = k;
            PolishResult p = polish(s, st, x, z, y);
            if (p.accepted) return finish(p.x, p.y, p.res, QpStatus::solved, k, true);
        }

        if (st.adaptive_rho) {
            Vector Ax = s.A * x;
            double prim_norm = std::max(inf_norm(Ax), inf_norm(z)) + 1e-10;
            double dual_norm = std::max({inf_norm(s.P * x), inf_norm(s.At * y), inf_norm(s.q)}) + 1e-10;
            double prim_s = inf_norm(Ax - z) / prim_norm;
            double dual_s = inf_norm(s.P * x + s.q + s.At * y) / dual_norm;
            double estimate = std::clamp(rho * std::sqrt(prim_s / (dual_s + 1e-10)), kRhoMin, kRhoMax);
            if (estimate > 5.0 * rho || estimate < 0.2 * rho) {
                rho = estimate;
                rho_vec = rho_vector(s, rho);
                kkt.update_rho(rho_vec);
            }
        }
    }
    if (st.polish) {
        PolishResult p = polish(s, st, x, z, y);
        if (p.accepted) return finish(p.x, p.y, p.res, QpStatus::solved, st.max_iter, true);
    }
    return finish(x, y, res, QpStatus::max_iterations, st.max_iter, false);
}

KktResiduals kkt_residuals(const QpProblem& problem, const Vector& x, const Vector& y) {
    if (x.size() != problem.variables() || y.size() != problem.constraints())
        throw QpError("candidate dimensions do not match the problem");
    Vector Ax = problem.A * x;
    KktResiduals r;
    r.primal = inf_norm(Ax - project(Ax, problem.l, problem.u));
    r.dual = inf_norm(problem.P * x + problem.q + problem.A.transpose() * y);
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        double c = 0.0;
        if (y[i] > 0.0) c = std::isinf(problem.u[i]) ? kInf : y[i] * std::abs(problem.u[i] - Ax[i]);
        if (y[i] < 0.0) c = std::isinf(problem.l[i]) ? kInf : -y[i] * std::abs(Ax[i] - problem.l[i]);
        r.complementarity = std::max(r.complementarity, c);
    }
    return r;
}

void write_problem(std::ostream& out, const QpProblem& problem) {
    fmt::print(out, "n {}\nm {}\n", problem.variables(), problem.constraints());
    auto dump_matrix = [&](const char* name, const SparseMatrix& M) {
        fmt::print(out, "{} {}\n", name, M.nonZeros());
        for (Eigen::Index j = 0; j < M.outerSize(); ++j)
            for (SparseMatrix::InnerIterator it(M, j); it; ++it)
                fmt::print(out, "{} {} {:.17g}\n", it.row(), it.col(), it.value());
    };
    auto dump_vector = [&](const char* name, const Vector& v) {
        fmt::print(out, "{}", name);
        for (Eigen::Index i = 0; i < v.size(); ++i) fmt::print(out, " {:.17g}", v[i]);
        out << '\n';
    };
    dump_matrix("P", problem.P);
    dump_vector("q", problem.q);
    dump_matrix("A", problem.A);
    dump_vector("l", problem.l);
    dump_vector("u", problem.u);
}

}  // namespace evflex

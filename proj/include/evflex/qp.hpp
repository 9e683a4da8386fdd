#pragma once

#include <iosfwd>
#include <limits>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace evflex {

using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double>;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

class QpError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// minimize 0.5 x'Px + q'x  subject to  l <= Ax <= u.
/// P is stored in full (both triangles) and must be symmetric PSD.
struct QpProblem {
    SparseMatrix P;
    Vector q;
    SparseMatrix A;
    Vector l;
    Vector u;

    static QpProblem from_dense(const Eigen::MatrixXd& P, const Vector& q, const Eigen::MatrixXd& A,
                                const Vector& l, const Vector& u);

    Eigen::Index variables() const { return q.size(); }
    Eigen::Index constraints() const { return l.size(); }
    double objective(const Vector& x) const;
    /// Throws QpError on inconsistent dimensions, non-finite data, l > u or asymmetric P.
    void validate() const;
};

/// ADMM suits small problems and warm starts; the interior-point method
/// suits large, nearly linear problems where ADMM converges slowly.
enum class QpMethod { admm, interior_point };

enum class QpStatus { solved, max_iterations, primal_infeasible, dual_infeasible };

std::string to_string(QpStatus status);

struct QpSettings {
    QpMethod method = QpMethod::admm;
    double eps_abs = 1e-6;         // primal and dual residual tolerance
    double eps_dual = 1e-6;
    double eps_rel = 0.0;
    double eps_infeasible = 1e-8;
    int max_iter = 20000;
    double rho = 0.1;
    double sigma = 1e-6;
    double alpha = 1.6;
    int scaling_iters = 10;
    bool adaptive_rho = true;
    bool polish = true;
    int check_every = 10;
    int polish_every = 100;        // also try polishing periodically before convergence
    int interior_max_iter = 200;
};

struct QpSolution {
    Vector x;
    Vector y;
    double objective = 0.0;
    double primal_residual = kInf;
    double dual_residual = kInf;
    int iterations = 0;
    QpStatus status = QpStatus::max_iterations;
    bool polished = false;
};

struct WarmStart {
    Vector x;
    Vector y;
};

QpSolution solve(const QpProblem& problem, const QpSettings& settings = {}, const WarmStart* warm = nullptr);

struct KktResiduals {
    double primal = 0.0;           // |Ax - proj(Ax)|_inf
    double dual = 0.0;             // |Px + q + A'y|_inf
    double complementarity = 0.0;  // max_i y+_i |u_i - a_i x| + y-_i |a_i x - l_i|
};

/// Independent KKT check. Dual signs follow the solver: y_i > 0 pushes
/// against the upper bound, y_i < 0 against the lower bound.
KktResiduals kkt_residuals(const QpProblem& problem, const Vector& x, const Vector& y);

/// Text dump: dimensions, then P, A as triplets and q, l, u as vectors.
void write_problem(std::ostream& out, const QpProblem& problem);

}  // namespace evflex

#pragma once

#include "ltpid/atoms.hpp"
#include "ltpid/core.hpp"
#include "ltpid/regression.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>
#include <Eigen/SVD>

#include <limits>
#include <memory>

namespace ltpid {

struct SolverConfig {
    int max_iters      = 5000;  // proximal gradient
    double tol         = 1e-8;  // relative objective decrease
    int power_iters    = 50;
    double power_tol   = 1e-6;
    bool restart       = true;
    double admm_rho    = 1.0;
    int admm_max_iters = 2000;
    double admm_tol    = 1e-6;  // primal and dual residual, absolute
    bool admm_adaptive = true;  // residual balancing of rho, starting from admm_rho

    void validate() const {
        if (max_iters < 1 || admm_max_iters < 1) throw std::invalid_argument("SolverConfig: max_iters must be >= 1");
        if (!(tol > 0.0) || !(admm_tol > 0.0)) throw std::invalid_argument("SolverConfig: tol must be > 0");
        if (!(admm_rho > 0.0)) throw std::invalid_argument("SolverConfig: admm_rho must be > 0");
        if (power_iters < 1 || !(power_tol > 0.0)) throw std::invalid_argument("SolverConfig: invalid power iteration");
    }
};

inline nlohmann::json to_json(const SolverConfig& c) {
    return nlohmann::json{{"max_iters", c.max_iters},     {"tol", c.tol},
                          {"power_iters", c.power_iters}, {"power_tol", c.power_tol},
                          {"restart", c.restart},         {"admm_rho", c.admm_rho},
                          {"admm_max_iters", c.admm_max_iters}, {"admm_tol", c.admm_tol},
                          {"admm_adaptive", c.admm_adaptive}};
}

inline SolverConfig solver_config_from_json(const nlohmann::json& j) {
    SolverConfig c;
    c.max_iters      = j.value("max_iters", c.max_iters);
    c.tol            = j.value("tol", c.tol);
    c.power_iters    = j.value("power_iters", c.power_iters);
    c.power_tol      = j.value("power_tol", c.power_tol);
    c.restart        = j.value("restart", c.restart);
    c.admm_rho       = j.value("admm_rho", c.admm_rho);
    c.admm_max_iters = j.value("admm_max_iters", c.admm_max_iters);
    c.admm_tol       = j.value("admm_tol", c.admm_tol);
    c.admm_adaptive  = j.value("admm_adaptive", c.admm_adaptive);
    c.validate();
    return c;
}

/// Thrown when an iteration produces a non-finite objective.
class SolverError : public Error {
  public:
    SolverError(const std::string& what, std::vector<double> trace) : Error(what), trace_(std::move(trace)) {}
    const std::vector<double>& trace() const { return trace_; }

  private:
    std::vector<double> trace_;
};

// ---------------------------------------------------------------------------
// Unregularized least squares

struct LsResult {
    ImpulseResponseMatrix g;
    std::vector<int> rank;  // per tag
    bool rank_deficient = false;
};

/// Per-tag minimizer of ||z - Phi g||^2; minimal-norm when Phi is rank deficient.
inline LsResult solve_ls(const TagRegressions& regs) {
    LsResult res;
    res.g = ImpulseResponseMatrix::zeros(regs.N(), regs.P());
    for (const auto& b : regs.blocks) {
        Eigen::CompleteOrthogonalDecomposition<Matrix> cod(b.Phi);
        res.rank.push_back(static_cast<int>(cod.rank()));
        if (cod.rank() < b.Phi.cols()) res.rank_deficient = true;
        res.g.values.col(b.tau - 1) = cod.solve(b.z);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Proximal operators

inline Vector prox_l1(const Vector& v, double threshold) {
    if (threshold < 0.0) throw std::invalid_argument("prox_l1: negative threshold");
    return (v.array().abs() - threshold).max(0.0) * v.array().sign();
}

/// Modulus shrinkage of the complex coefficient alpha + j beta.
inline void prox_l1_pair(double& alpha, double& beta, double threshold) {
    const double r = std::hypot(alpha, beta);
    const double s = r > threshold ? 1.0 - threshold / r : 0.0;
    alpha *= s;
    beta *= s;
}

/// Block soft-threshold: max(1 - threshold * weight / ||v||, 0) v.
inline Vector prox_group(const Vector& v, double threshold, double weight = 1.0) {
    if (threshold < 0.0) throw std::invalid_argument("prox_group: negative threshold");
    const double r = v.norm();
    const double t = threshold * weight;
    return r > t ? Vector((1.0 - t / r) * v) : Vector(Vector::Zero(v.size()));
}

/// Singular-value soft-thresholding U max(S - threshold, 0) V^T.
inline Matrix prox_nuclear(const Matrix& M, double threshold, double* nuclear_norm_out = nullptr) {
    if (threshold < 0.0) throw std::invalid_argument("prox_nuclear: negative threshold");
    Eigen::JacobiSVD<Matrix> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (svd.info() != Eigen::Success) throw Error("prox_nuclear: SVD failed");
    const Vector s = (svd.singularValues().array() - threshold).max(0.0);
    if (nuclear_norm_out) *nuclear_norm_out = s.sum();
    return svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
}

// ---------------------------------------------------------------------------
// Atom-coefficient problems: V_LS(D c) + gamma J(c)

enum class Regularizer { L1, GroupRows };

/// Gram form of the atom regression: per tag Q = Phi^T Phi, b = Phi^T z.
/// Gradient Lipschitz constant of V_LS with respect to (alpha, beta).
class AtomProblem {
  public:
    AtomProblem(const TagRegressions& regs, std::shared_ptr<const AtomDictionary> dict,
                const SolverConfig& cfg = {})
        : dict_(std::move(dict)) {
        if (!dict_) throw std::invalid_argument("AtomProblem: null dictionary");
        if (regs.N() != dict_->N()) throw std::invalid_argument("AtomProblem: truncation length mismatch");
        for (const auto& blk : regs.blocks) {
            Q_.push_back(blk.Phi.transpose() * blk.Phi);
            b_.push_back(blk.Phi.transpose() * blk.z);
            zz_ += blk.z.squaredNorm();
        }
        lipschitz_ = estimate_lipschitz(cfg);
    }

    const AtomDictionary& dictionary() const { return *dict_; }
    std::shared_ptr<const AtomDictionary> dictionary_ptr() const { return dict_; }
    int P() const { return static_cast<int>(Q_.size()); }
    int N() const { return dict_->N(); }
    std::size_t n_poles() const { return dict_->size(); }
    double lipschitz() const { return lipschitz_; }
    bool zero_data() const { return zz_ == 0.0; }

    /// D_alpha c.alpha + D_beta c.beta; row-sparse coefficients take the
    /// column-gather path.
    Matrix forward(const CoefficientMatrix& c) const {
        const Eigen::Index np = c.rows();
        std::vector<Eigen::Index> active;
        active.reserve(std::size_t(np));
        for (Eigen::Index k = 0; k < np; ++k)
            if (!c.alpha.row(k).isZero(0.0) || !c.beta.row(k).isZero(0.0)) active.push_back(k);
        if (active.size() * 4 > std::size_t(np)) return dict_->d_alpha() * c.alpha + dict_->d_beta() * c.beta;
        Matrix g = Matrix::Zero(N(), c.cols());
        for (const Eigen::Index k : active) {
            g.noalias() += dict_->d_alpha().col(k) * c.alpha.row(k);
            if (dict_->has_beta(std::size_t(k))) g.noalias() += dict_->d_beta().col(k) * c.beta.row(k);
        }
        return g;
    }

    /// V_LS from g = forward(c).
    double loss(const Matrix& g) const {
        double v = zz_;
        for (int t = 0; t < P(); ++t) {
            const auto gt = g.col(t);
            v += gt.dot(Q_[std::size_t(t)] * gt) - 2.0 * b_[std::size_t(t)].dot(gt);
        }
        return v;
    }

    /// Second-order term of V_LS along a step dg in g: sum_tau dg^T Q_tau dg.
    double curvature(const Matrix& dg) const {
        double v = 0.0;
        for (int t = 0; t < P(); ++t) v += dg.col(t).dot(Q_[std::size_t(t)] * dg.col(t));
        return v;
    }

    /// (d/dalpha, d/dbeta) of V_LS at g = forward(c).
    CoefficientMatrix gradient(const Matrix& g) const {
        Matrix dg(g.rows(), g.cols());
        for (int t = 0; t < P(); ++t) dg.col(t) = 2.0 * (Q_[std::size_t(t)] * g.col(t) - b_[std::size_t(t)]);
        return {dict_->d_alpha().transpose() * dg, dict_->d_beta().transpose() * dg};
    }

  private:
    // Largest eigenvalue of 2 D^T Q_tau D over tags, through the N x N
    // product Q_tau (D D^T), which has the same nonzero spectrum.
    double estimate_lipschitz(const SolverConfig& cfg) const {
        const Matrix K = dict_->d_alpha() * dict_->d_alpha().transpose() + dict_->d_beta() * dict_->d_beta().transpose();
        double best    = 0.0;
        for (const auto& Q : Q_) {
            Vector v = Vector::Ones(N()) / std::sqrt(double(N()));
            double lam = 0.0;
            for (int it = 0; it < cfg.power_iters; ++it) {
                Vector w          = Q * (K * v);
                const double next = w.norm();
                if (next == 0.0) break;
                v = w / next;
                const bool done = std::abs(next - lam) <= cfg.power_tol * next;
                lam             = next;
                if (done) break;
            }
            best = std::max(best, lam);
        }
        // power iteration approaches from below; backtracking covers the rest
        return std::max(2.0 * best * (1.0 + 1e-3), std::numeric_limits<double>::min());
    }

    std::shared_ptr<const AtomDictionary> dict_;
    std::vector<Matrix> Q_;
    std::vector<Vector> b_;
    double zz_        = 0.0;
    double lipschitz_ = 0.0;
};

struct AtomPenalty {
    Regularizer kind = Regularizer::GroupRows;
    double gamma     = 0.0;
    Vector tag_weights;  // beta_tau for L1; ignored for GroupRows

    double value(const CoefficientMatrix& c, const Vector& pole_weights) const {
        if (gamma == 0.0) return 0.0;
        if (kind == Regularizer::GroupRows) {
            const Vector norms = (c.alpha.rowwise().squaredNorm() + c.beta.rowwise().squaredNorm()).cwiseSqrt();
            return gamma * pole_weights.dot(norms);
        }
        const Matrix mod = c.modulus();
        return gamma * (pole_weights.transpose() * mod * tag_weights)(0);
    }

    /// Proximal map of step * gamma * J, in place.
    void apply_prox(CoefficientMatrix& c, const Vector& pole_weights, double step) const {
        const double t = step * gamma;
        if (t == 0.0) return;
        if (kind == Regularizer::GroupRows) {
            for (Eigen::Index k = 0; k < c.rows(); ++k) {
                const double r  = std::sqrt(c.alpha.row(k).squaredNorm() + c.beta.row(k).squaredNorm());
                const double th = t * pole_weights(k);
                const double s  = r > th ? 1.0 - th / r : 0.0;
                c.alpha.row(k) *= s;
                c.beta.row(k) *= s;
            }
        } else {
            for (Eigen::Index tau = 0; tau < c.cols(); ++tau)
                for (Eigen::Index k = 0; k < c.rows(); ++k)
                    prox_l1_pair(c.alpha(k, tau), c.beta(k, tau), t * pole_weights(k) * tag_weights(tau));
        }
    }
};

struct SolveResult {
    CoefficientMatrix coeffs;
    std::vector<double> objective_trace;
    bool converged = false;
    int iterations = 0;
    double objective = 0.0;
    double lipschitz = 0.0;
};

/// Smallest gamma for which c = 0 is optimal.
inline double kill_zone_bound(const AtomProblem& prob, Regularizer kind, const Vector& tag_weights = {}) {
    const CoefficientMatrix g0 = prob.gradient(Matrix::Zero(prob.N(), prob.P()));
    const Vector& w            = prob.dictionary().weights();
    if (kind == Regularizer::GroupRows) {
        const Vector norms = (g0.alpha.rowwise().squaredNorm() + g0.beta.rowwise().squaredNorm()).cwiseSqrt();
        return norms.cwiseQuotient(w).maxCoeff();
    }
    const Vector tw = tag_weights.size() ? tag_weights : Vector::Ones(prob.P());
    const Matrix mod = g0.modulus();
    double best  = 0.0;
    for (Eigen::Index tau = 0; tau < mod.cols(); ++tau)
        for (Eigen::Index k = 0; k < mod.rows(); ++k)
            if (tw(tau) > 0.0) best = std::max(best, mod(k, tau) / (w(k) * tw(tau)));
    return best;
}

/// Accelerated proximal gradient (monotone FISTA) for
///   minimize V_LS(D c) + gamma J(c),
/// realness of g holding by the (alpha, beta) parameterization. Momentum
/// restarts whenever a candidate would raise the objective; the step
/// 1/L doubles L on a failed sufficient-decrease test.
inline SolveResult solve_prox_grad(const AtomProblem& prob, Regularizer kind, double gamma, const SolverConfig& cfg = {},
                                   const Vector& tag_weights = {}, const CoefficientMatrix* warm_start = nullptr) {
    if (gamma < 0.0 || !std::isfinite(gamma)) throw std::invalid_argument("solve_prox_grad: gamma must be >= 0");
    cfg.validate();
    const std::size_t np = prob.n_poles();
    const int P          = prob.P();
    const Vector& pw     = prob.dictionary().weights();

    AtomPenalty pen{kind, gamma, tag_weights.size() ? tag_weights : Vector(Vector::Ones(P))};
    if (pen.tag_weights.size() != P) throw std::invalid_argument("solve_prox_grad: tag weight length != P");

    SolveResult res;
    res.lipschitz = prob.lipschitz();
    res.coeffs    = CoefficientMatrix::zeros(np, P);
    if (prob.zero_data()) {
        res.converged = true;
        res.objective = 0.0;
        res.objective_trace.push_back(0.0);
        return res;
    }
    if (warm_start) {
        if (warm_start->rows() != Eigen::Index(np) || warm_start->cols() != P)
            throw std::invalid_argument("solve_prox_grad: warm start has wrong shape");
        res.coeffs = *warm_start;
    }

    double L            = prob.lipschitz();
    CoefficientMatrix x = res.coeffs;
    Matrix gx           = prob.forward(x);
    double Fx           = prob.loss(gx) + pen.value(x, pw);
    CoefficientMatrix y = x;
    Matrix gy           = gx;
    double t            = 1.0;
    res.objective_trace.push_back(Fx);

    const double L_cap = 1e12 * L;
    for (int it = 1; it <= cfg.max_iters; ++it) {
        res.iterations = it;
        // gy is carried by linear combination; recompute it periodically
        if (it % 100 == 0) gy = prob.forward(y);
        CoefficientMatrix grad = prob.gradient(gy);
        bool refreshed         = it % 100 == 0;

        CoefficientMatrix z;
        Matrix gz;
        double fz = 0.0;
        for (;;) {
            z.alpha = y.alpha - grad.alpha / L;
            z.beta  = y.beta - grad.beta / L;
            pen.apply_prox(z, pw, 1.0 / L);
            gz              = prob.forward(z);
            fz              = prob.loss(gz);
            const double dA = (z.alpha - y.alpha).squaredNorm(), dB = (z.beta - y.beta).squaredNorm();
            if (!std::isfinite(fz)) throw SolverError("solve_prox_grad: non-finite objective", res.objective_trace);
            // V_LS is quadratic: V(z) = V(y) + <grad, z - y> + curvature exactly
            if (prob.curvature(gz - gy) <= 0.5 * L * (dA + dB) * (1.0 + 1e-12)) break;
            if (!refreshed) {
                gy        = prob.forward(y);
                grad      = prob.gradient(gy);
                refreshed = true;
                continue;
            }
            L *= 2.0;
            if (L > L_cap) throw SolverError("solve_prox_grad: step size search failed", res.objective_trace);
        }
        const double Fz = fz + pen.value(z, pw);
        if (!std::isfinite(Fz)) throw SolverError("solve_prox_grad: non-finite objective", res.objective_trace);

        const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        if (Fz <= Fx) {
            const double decrease = Fx - Fz;
            // y = z + ((t - 1) / t_next) (z - x)
            const double m = (t - 1.0) / t_next;
            y.alpha        = z.alpha + m * (z.alpha - x.alpha);
            y.beta         = z.beta + m * (z.beta - x.beta);
            gy             = gz + m * (gz - gx);
            x              = std::move(z);
            gx             = std::move(gz);
            Fx             = Fz;
            t              = t_next;
            res.objective_trace.push_back(Fx);
            if (decrease <= cfg.tol * std::max(std::abs(Fx), std::numeric_limits<double>::min())) {
                res.converged = true;
                break;
            }
        } else {
            // monotone step: keep x; restart momentum from x
            res.objective_trace.push_back(Fx);
            if (cfg.restart) {
                t  = 1.0;
                y  = x;
                gy = gx;
            } else {
                const double m = t / t_next;
                y.alpha        = x.alpha + m * (z.alpha - x.alpha);
                y.beta         = x.beta + m * (z.beta - x.beta);
                gy             = gx + m * (gz - gx);
                t              = t_next;
            }
        }
    }
    res.coeffs    = std::move(x);
    res.objective = Fx;
    res.lipschitz = L;
    return res;
}

/// Largest violation of the group-lasso optimality conditions at c,
/// relative to gamma * weight: active rows must satisfy
///   grad_k = -gamma w_k c_k / ||c_k||,
/// inactive rows ||grad_k|| <= gamma w_k.
struct GroupKktReport {
    double max_active_violation   = 0.0;  // ||grad_k + gamma w_k c_k/||c_k|| || / (gamma w_k)
    double max_inactive_ratio     = 0.0;  // ||grad_k|| / (gamma w_k)
    std::size_t active_groups     = 0;
};

inline GroupKktReport group_kkt(const AtomProblem& prob, const CoefficientMatrix& c, double gamma) {
    const CoefficientMatrix grad = prob.gradient(prob.forward(c));
    const Vector& w              = prob.dictionary().weights();
    GroupKktReport rep;
    for (Eigen::Index k = 0; k < c.rows(); ++k) {
        const double nc = std::sqrt(c.alpha.row(k).squaredNorm() + c.beta.row(k).squaredNorm());
        const double s  = gamma * w(k);
        if (nc > 0.0) {
            ++rep.active_groups;
            const double ea = (grad.alpha.row(k) + s * c.alpha.row(k) / nc).squaredNorm();
            const double eb = (grad.beta.row(k) + s * c.beta.row(k) / nc).squaredNorm();
            rep.max_active_violation = std::max(rep.max_active_violation, std::sqrt(ea + eb) / s);
        } else {
            const double ng = std::sqrt(grad.alpha.row(k).squaredNorm() + grad.beta.row(k).squaredNorm());
            rep.max_inactive_ratio = std::max(rep.max_inactive_ratio, ng / s);
        }
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Hankel nuclear norm: V_LS(g) + gamma sum_tau beta_tau ||H(g^tau)||_*

inline Matrix hankel(const Vector& g, int m) { return hankel_matrix(g, m); }

/// Adjoint of hankel(): scatter-adds along anti-diagonals.
inline Vector hankel_adjoint(const Matrix& M, int N) {
    if (M.rows() + M.cols() - 1 != N) throw std::invalid_argument("hankel_adjoint: shape does not match N");
    Vector g = Vector::Zero(N);
    for (Eigen::Index c = 0; c < M.cols(); ++c)
        for (Eigen::Index r = 0; r < M.rows(); ++r) g(r + c) += M(r, c);
    return g;
}

inline double nuclear_norm(const Matrix& M) {
    Eigen::JacobiSVD<Matrix> svd(M);
    return svd.singularValues().sum();
}

struct HankelSolveResult {
    ImpulseResponseMatrix g;
    std::vector<Matrix> split;  // M_tau, low-rank estimate of H(g^tau)
    std::vector<Matrix> dual;   // scaled dual U_tau
    std::vector<double> rho;    // final penalty per tag, U_tau scaled by it
    std::vector<double> objective_trace;
    bool converged = false;
    int iterations = 0;  // max over tags
    double primal_residual = 0.0;
    double dual_residual   = 0.0;
    double objective       = 0.0;
};

/// Scaled-form ADMM on the splitting M_tau = H(g^tau), each tag solved
/// independently; g-update through a Cholesky factor of 2 Q + rho H^T H
/// (H^T H is diagonal), M-update by prox_nuclear. With admm_adaptive, rho is
/// doubled or halved while one residual exceeds the other tenfold, at most
/// 40 times per tag.
inline HankelSolveResult solve_hankel_admm(const TagRegressions& regs, const Vector& beta_weights, double gamma, int m,
                                           const SolverConfig& cfg = {}, const HankelSolveResult* warm_start = nullptr) {
    if (gamma < 0.0 || !std::isfinite(gamma)) throw std::invalid_argument("solve_hankel_admm: gamma must be >= 0");
    cfg.validate();
    const int N = regs.N(), P = regs.P();
    if (m < 1 || m > N - m + 1) throw std::invalid_argument("solve_hankel_admm: invalid Hankel window m");
    const Vector beta = beta_weights.size() ? beta_weights : Vector(Vector::Ones(P));
    if (beta.size() != P) throw std::invalid_argument("solve_hankel_admm: beta length != P");
    if (warm_start && (warm_start->g.period() != P || warm_start->g.length() != N))
        throw std::invalid_argument("solve_hankel_admm: warm start has wrong shape");

    Vector counts(N);
    for (int i = 0; i < N; ++i) counts(i) = std::min({i + 1, m, N - m + 1, N - i});

    HankelSolveResult res;
    res.g = ImpulseResponseMatrix::zeros(N, P);
    std::vector<std::vector<double>> traces(static_cast<std::size_t>(P));
    double total = 0.0;
    res.converged = true;

    for (const auto& blk : regs.blocks) {
        const int t        = blk.tau - 1;
        const Matrix Q     = blk.Phi.transpose() * blk.Phi;
        const Vector b     = blk.Phi.transpose() * blk.z;
        const double zz    = blk.z.squaredNorm();
        double rho = warm_start && warm_start->rho.size() == std::size_t(P) ? warm_start->rho[std::size_t(t)] : cfg.admm_rho;
        Eigen::LLT<Matrix> chol;
        auto factor = [&] {
            Matrix lhs = 2.0 * Q;
            lhs.diagonal() += rho * counts;
            chol.compute(lhs);
            if (chol.info() != Eigen::Success) throw Error("solve_hankel_admm: normal matrix not positive definite");
        };
        factor();
        int rho_changes = 0;

        auto objective = [&](const Vector& g) {
            return zz + g.dot(Q * g) - 2.0 * b.dot(g) + (gamma * beta(t) > 0.0 ? gamma * beta(t) * nuclear_norm(hankel(g, m)) : 0.0);
        };

        Vector g = warm_start ? Vector(warm_start->g.values.col(t)) : Vector(Vector::Zero(N));
        Matrix M = warm_start ? warm_start->split[std::size_t(t)] : hankel(g, m);
        Matrix U = warm_start ? warm_start->dual[std::size_t(t)] : Matrix(Matrix::Zero(m, N - m + 1));

        auto& trace     = traces[std::size_t(t)];
        Vector best_g   = g;
        Matrix best_M   = M;
        Matrix best_U   = U;
        double best_obj = std::numeric_limits<double>::infinity();
        double r_norm = 0.0, s_norm = 0.0;
        bool conv     = zz == 0.0;
        int it        = 0;
        if (conv) {
            g.setZero();
            M.setZero();
            U.setZero();
            best_g = g, best_M = M, best_U = U, best_obj = 0.0;
            trace.push_back(0.0);
        }
        for (it = 1; !conv && it <= cfg.admm_max_iters; ++it) {
            g               = chol.solve(2.0 * b + rho * hankel_adjoint(M - U, N));
            const Matrix Hg = hankel(g, m);
            const Matrix M_old = M;
            M               = prox_nuclear(Hg + U, gamma * beta(t) / rho);
            U += Hg - M;
            r_norm = (Hg - M).norm();
            s_norm = rho * hankel_adjoint(M - M_old, N).norm();
            const double obj = objective(g);
            if (!std::isfinite(obj)) throw SolverError("solve_hankel_admm: non-finite objective", trace);
            trace.push_back(obj);
            if (obj < best_obj) best_obj = obj, best_g = g, best_M = M, best_U = U;
            if (r_norm < cfg.admm_tol && s_norm < cfg.admm_tol) {
                conv = true;
                break;
            }
            if (cfg.admm_adaptive && rho_changes < 40 && (r_norm > 10.0 * s_norm || s_norm > 10.0 * r_norm)) {
                const double f = r_norm > s_norm ? 2.0 : 0.5;
                rho *= f;
                U /= f;
                factor();
                ++rho_changes;
            }
        }
        // converged: report the final iterate; otherwise the best seen
        if (!conv) {
            g = best_g, M = best_M, U = best_U;
            res.converged = false;
        }
        res.iterations      = std::max(res.iterations, std::min(it, cfg.admm_max_iters));
        res.primal_residual = std::max(res.primal_residual, r_norm);
        res.dual_residual   = std::max(res.dual_residual, s_norm);
        res.g.values.col(t) = g;
        res.split.push_back(M);
        res.dual.push_back(U);
        res.rho.push_back(rho);
        total += conv ? trace.back() : best_obj;
    }
    // combined trace: per-iteration sum over tags (a finished tag holds its last value)
    std::size_t len = 0;
    for (const auto& tr : traces) len = std::max(len, tr.size());
    for (std::size_t k = 0; k < len; ++k) {
        double v = 0.0;
        for (const auto& tr : traces) v += tr.empty() ? 0.0 : tr[std::min(k, tr.size() - 1)];
        res.objective_trace.push_back(v);
    }
    res.objective = total;
    return res;
}

/// Singular values of H(g^tau) above rel_cutoff * sigma_max.
inline int numerical_rank(const Matrix& M, double rel_cutoff) {
    Eigen::JacobiSVD<Matrix> svd(M);
    const Vector& s = svd.singularValues();
    if (s.size() == 0 || s(0) == 0.0) return 0;
    return static_cast<int>((s.array() > rel_cutoff * s(0)).count());
}

}  // namespace ltpid

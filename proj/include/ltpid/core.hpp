#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <complex>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace ltpid {

using Matrix  = Eigen::MatrixXd;
using Vector  = Eigen::VectorXd;
using Complex = std::complex<double>;

class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Number of leading impulse-response coefficients scored by fit_metric().
inline constexpr int kFitHorizon = 100;

/// Map a 1-based time index (any integer, including t <= 0) onto the
/// 0-based slot of its tag time: slot = (t - 1) mod P.
inline int tag_slot(long t, int period) {
    long r = (t - 1) % period;
    if (r < 0) r += period;
    return static_cast<int>(r);
}

/// SISO periodic state-space model
///   x(t+1) = A(t) x(t) + B(t) u(t),  y(t) = C(t) x(t),
/// with A(t) = A(t + P). All accessors take 1-based time and wrap.
class PeriodicStateSpace {
  public:
    PeriodicStateSpace(std::vector<Matrix> A, std::vector<Matrix> B, std::vector<Matrix> C)
        : A_(std::move(A)), B_(std::move(B)), C_(std::move(C)) {
        if (A_.empty()) throw std::invalid_argument("PeriodicStateSpace: period must be >= 1");
        if (B_.size() != A_.size() || C_.size() != A_.size())
            throw std::invalid_argument("PeriodicStateSpace: A, B, C must have P entries each");
        nx_ = static_cast<int>(A_.front().rows());
        if (nx_ < 1) throw std::invalid_argument("PeriodicStateSpace: state dimension must be >= 1");
        for (std::size_t k = 0; k < A_.size(); ++k) {
            if (A_[k].rows() != nx_ || A_[k].cols() != nx_ || B_[k].rows() != nx_ ||
                B_[k].cols() != 1 || C_[k].rows() != 1 || C_[k].cols() != nx_)
                throw std::invalid_argument("PeriodicStateSpace: inconsistent SISO dimensions at tag " +
                                            std::to_string(k + 1));
            if (!A_[k].allFinite() || !B_[k].allFinite() || !C_[k].allFinite())
                throw std::invalid_argument("PeriodicStateSpace: non-finite entry at tag " +
                                            std::to_string(k + 1));
        }
    }

    int period() const { return static_cast<int>(A_.size()); }
    int state_dim() const { return nx_; }

    const Matrix& A(long t) const { return A_[tag_slot(t, period())]; }
    const Matrix& B(long t) const { return B_[tag_slot(t, period())]; }
    const Matrix& C(long t) const { return C_[tag_slot(t, period())]; }

  private:
    std::vector<Matrix> A_, B_, C_;
    int nx_ = 0;
};

/// Truncated switched impulse response g: entry (i, tau) = g_i^tau,
/// stored 0-based in `values` (row i-1, column tau-1).
struct ImpulseResponseMatrix {
    Matrix values;

    ImpulseResponseMatrix() = default;
    explicit ImpulseResponseMatrix(Matrix v) : values(std::move(v)) {}
    static ImpulseResponseMatrix zeros(int N, int P) { return ImpulseResponseMatrix(Matrix::Zero(N, P)); }

    int length() const { return static_cast<int>(values.rows()); }
    int period() const { return static_cast<int>(values.cols()); }
    double at(int i, int tau) const { return values(i - 1, tau - 1); }
};

struct FitReport {
    double W = 0.0;
    Vector per_tag_rmse;
    std::string estimator_name;
    std::optional<double> gamma_selected;
};

struct StabilityReport {
    bool stable = false;
    double spectral_radius = 0.0;
};

/// Noise-free response from initial state x0; y(1) = C(1) x0.
inline Vector simulate(const PeriodicStateSpace& sys, const Vector& u, const Vector& x0) {
    if (x0.size() != sys.state_dim())
        throw std::invalid_argument("simulate: x0 has dimension " + std::to_string(x0.size()) +
                                    ", expected " + std::to_string(sys.state_dim()));
    if (u.size() < 1) throw std::invalid_argument("simulate: empty input sequence");
    if (!u.allFinite()) throw std::invalid_argument("simulate: non-finite input");
    Vector y(u.size());
    Vector x = x0;
    for (Eigen::Index k = 0; k < u.size(); ++k) {
        const long t = static_cast<long>(k) + 1;
        y(k) = (sys.C(t) * x)(0);
        x = sys.A(t) * x + sys.B(t) * u(k);
    }
    return y;
}

inline Vector simulate(const PeriodicStateSpace& sys, const Vector& u) {
    return simulate(sys, u, Vector::Zero(sys.state_dim()));
}

/// Psi_tau = A(tau-1) A(tau-2) ... A(tau-P).
inline Matrix monodromy(const PeriodicStateSpace& sys, int tau) {
    const int P = sys.period();
    if (tau < 1 || tau > P) throw std::invalid_argument("monodromy: tag time out of range");
    Matrix M = Matrix::Identity(sys.state_dim(), sys.state_dim());
    for (int j = 1; j <= P; ++j) M = M * sys.A(tau - j);
    return M;
}

inline double spectral_radius(const Matrix& M) {
    Eigen::EigenSolver<Matrix> es(M, false);
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

inline StabilityReport is_stable(const PeriodicStateSpace& sys) {
    const double rho = spectral_radius(monodromy(sys, 1));
    return {rho < 1.0, rho};
}

/// g_i^tau = C(tau) A(tau-1) ... A(tau-i+1) B(tau-i), i = 1..N.
inline ImpulseResponseMatrix true_impulse_response(const PeriodicStateSpace& sys, int N) {
    if (N < 1) throw std::invalid_argument("true_impulse_response: N must be >= 1");
    const int P = sys.period();
    Matrix g(N, P);
    for (int tau = 1; tau <= P; ++tau) {
        Eigen::RowVectorXd row = sys.C(tau);
        for (int i = 1; i <= N; ++i) {
            g(i - 1, tau - 1) = (row * sys.B(tau - i))(0);
            row = row * sys.A(tau - i);
        }
    }
    return ImpulseResponseMatrix(std::move(g));
}

/// Normalized fit score over the first kFitHorizon coefficients of every tag:
///   W = 100 (1 - sqrt(sum (g - ghat)^2 / sum (g - gbar)^2)),
/// gbar being the grand mean of the scored true coefficients.
inline FitReport fit_metric(const ImpulseResponseMatrix& truth, const ImpulseResponseMatrix& estimate,
                            std::string estimator_name = {}, std::optional<double> gamma = std::nullopt) {
    if (truth.period() != estimate.period())
        throw std::invalid_argument("fit_metric: period mismatch");
    if (truth.length() < kFitHorizon || estimate.length() < kFitHorizon)
        throw std::invalid_argument("fit_metric: both responses need at least " +
                                    std::to_string(kFitHorizon) + " coefficients");
    const Matrix g    = truth.values.topRows(kFitHorizon);
    const Matrix ghat = estimate.values.topRows(kFitHorizon);
    const double gbar = g.mean();
    const double den  = (g.array() - gbar).square().sum();
    if (!(den > 0.0)) throw Error("fit_metric: true response is constant, score undefined");
    const Matrix diff = g - ghat;
    const double num  = diff.squaredNorm();

    FitReport rep;
    rep.W              = 100.0 * (1.0 - std::sqrt(num / den));
    rep.per_tag_rmse   = (diff.colwise().squaredNorm() / double(kFitHorizon)).cwiseSqrt().transpose();
    rep.estimator_name = std::move(estimator_name);
    rep.gamma_selected = gamma;
    return rep;
}

// JSON layout: {"P": int, "nx": int, "A": [[row-major nx*nx] x P], "B": [[nx] x P], "C": [[nx] x P]}

inline nlohmann::json to_json(const PeriodicStateSpace& sys) {
    using nlohmann::json;
    const int P = sys.period(), nx = sys.state_dim();
    json A = json::array(), B = json::array(), C = json::array();
    for (int tau = 1; tau <= P; ++tau) {
        json a = json::array(), b = json::array(), c = json::array();
        for (int r = 0; r < nx; ++r)
            for (int col = 0; col < nx; ++col) a.push_back(sys.A(tau)(r, col));
        for (int r = 0; r < nx; ++r) b.push_back(sys.B(tau)(r, 0));
        for (int col = 0; col < nx; ++col) c.push_back(sys.C(tau)(0, col));
        A.push_back(std::move(a));
        B.push_back(std::move(b));
        C.push_back(std::move(c));
    }
    return json{{"P", P}, {"nx", nx}, {"A", A}, {"B", B}, {"C", C}};
}

inline PeriodicStateSpace periodic_state_space_from_json(const nlohmann::json& j) {
    const int P  = j.at("P").get<int>();
    const int nx = j.at("nx").get<int>();
    if (P < 1 || nx < 1) throw std::invalid_argument("state-space JSON: P and nx must be positive");
    const auto& jA = j.at("A");
    const auto& jB = j.at("B");
    const auto& jC = j.at("C");
    if (jA.size() != std::size_t(P) || jB.size() != std::size_t(P) || jC.size() != std::size_t(P))
        throw std::invalid_argument("state-space JSON: A, B, C need one entry per tag time");
    std::vector<Matrix> A, B, C;
    for (int k = 0; k < P; ++k) {
        const auto a = jA[k].get<std::vector<double>>();
        const auto b = jB[k].get<std::vector<double>>();
        const auto c = jC[k].get<std::vector<double>>();
        if (a.size() != std::size_t(nx * nx) || b.size() != std::size_t(nx) || c.size() != std::size_t(nx))
            throw std::invalid_argument("state-space JSON: wrong entry count at tag " + std::to_string(k + 1));
        Matrix Ak(nx, nx), Bk(nx, 1), Ck(1, nx);
        for (int r = 0; r < nx; ++r)
            for (int col = 0; col < nx; ++col) Ak(r, col) = a[std::size_t(r * nx + col)];
        for (int r = 0; r < nx; ++r) Bk(r, 0) = b[std::size_t(r)];
        for (int col = 0; col < nx; ++col) Ck(0, col) = c[std::size_t(col)];
        A.push_back(std::move(Ak));
        B.push_back(std::move(Bk));
        C.push_back(std::move(Ck));
    }
    return PeriodicStateSpace(std::move(A), std::move(B), std::move(C));
}

}  // namespace ltpid

#pragma once

#include "ltpid/core.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <memory>
#include <numbers>

namespace ltpid {

enum class PoleKind { Real, ComplexUpper };

/// Pole grid construction parameters: poles are r * exp(j phi) over the
/// Cartesian product of `radii` and `angles`.
struct GridSpec {
    std::vector<double> radii;
    std::vector<double> angles;
    int N = 100;

    void validate() const {
        if (radii.empty() || angles.empty()) throw std::invalid_argument("GridSpec: empty radii or angles");
        if (N < 1) throw std::invalid_argument("GridSpec: N must be >= 1");
        for (std::size_t k = 0; k < radii.size(); ++k) {
            if (!(radii[k] > 0.0 && radii[k] < 1.0))
                throw std::invalid_argument("GridSpec: radii must lie in (0, 1)");
            if (k > 0 && !(radii[k] > radii[k - 1]))
                throw std::invalid_argument("GridSpec: radii must be strictly ascending");
        }
        for (std::size_t k = 0; k < angles.size(); ++k) {
            if (angles[k] < 0.0 || angles[k] > std::numbers::pi + 1e-12)
                throw std::invalid_argument("GridSpec: angles must lie in [0, pi]");
            if (k > 0 && !(angles[k] > angles[k - 1]))
                throw std::invalid_argument("GridSpec: angles must be strictly ascending");
        }
    }

    /// r = 0.02:0.02:0.98, 0.99, 0.999 and phi = 0:pi/50:pi.
    static GridSpec paper(int N = 100) {
        GridSpec s;
        for (int k = 1; k <= 49; ++k) s.radii.push_back(0.02 * k);
        s.radii.push_back(0.99);
        s.radii.push_back(0.999);
        for (int k = 0; k <= 50; ++k) s.angles.push_back(k * std::numbers::pi / 50.0);
        s.angles.back() = std::numbers::pi;
        s.N = N;
        return s;
    }
};

inline constexpr const char* kPaperGridPreset = "paper-2601";

inline nlohmann::json to_json(const GridSpec& s) {
    return nlohmann::json{{"radii", s.radii}, {"angles", s.angles}, {"N", s.N}};
}

/// Accepts either the preset name "paper-2601" or {"radii", "angles", "N"}.
inline GridSpec grid_spec_from_json(const nlohmann::json& j) {
    if (j.is_string()) {
        if (j.get<std::string>() != kPaperGridPreset)
            throw std::invalid_argument("unknown grid preset '" + j.get<std::string>() + "'");
        return GridSpec::paper();
    }
    if (j.contains("preset")) {
        GridSpec s = grid_spec_from_json(j.at("preset"));
        if (j.contains("N")) s.N = j.at("N").get<int>();
        return s;
    }
    GridSpec s;
    s.radii  = j.at("radii").get<std::vector<double>>();
    s.angles = j.at("angles").get<std::vector<double>>();
    s.N      = j.value("N", 100);
    s.validate();
    return s;
}

/// Stored poles are restricted to Im(w) >= 0; every ComplexUpper pole
/// stands for itself and its (implicit) conjugate.
class PoleGrid {
  public:
    PoleGrid(std::vector<Complex> poles) : poles_(std::move(poles)) {
        kinds_.reserve(poles_.size());
        for (auto& w : poles_) {
            if (!(std::abs(w) < 1.0)) throw std::invalid_argument("PoleGrid: pole outside the open unit disk");
            if (std::abs(w.imag()) <= 1e-12 * std::max(1.0, std::abs(w))) {
                w = Complex(w.real(), 0.0);
                kinds_.push_back(PoleKind::Real);
            } else if (w.imag() > 0.0) {
                kinds_.push_back(PoleKind::ComplexUpper);
            } else {
                throw std::invalid_argument("PoleGrid: stored poles must have Im(w) >= 0");
            }
        }
        std::vector<std::size_t> order(poles_.size());
        for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return poles_[a].real() != poles_[b].real() ? poles_[a].real() < poles_[b].real()
                                                        : poles_[a].imag() < poles_[b].imag();
        });
        for (std::size_t k = 1; k < order.size(); ++k)
            if (std::abs(poles_[order[k]] - poles_[order[k - 1]]) <= 1e-12)
                throw std::invalid_argument("PoleGrid: duplicate pole");
    }

    static PoleGrid from_spec(const GridSpec& spec) {
        spec.validate();
        std::vector<Complex> poles;
        poles.reserve(spec.radii.size() * spec.angles.size());
        for (double r : spec.radii)
            for (double phi : spec.angles) {
                if (phi == 0.0)
                    poles.emplace_back(r, 0.0);
                else if (std::abs(phi - std::numbers::pi) <= 1e-12)
                    poles.emplace_back(-r, 0.0);
                else
                    poles.push_back(std::polar(r, phi));
            }
        return PoleGrid(std::move(poles));
    }

    std::size_t size() const { return poles_.size(); }
    const std::vector<Complex>& poles() const { return poles_; }
    const std::vector<PoleKind>& kinds() const { return kinds_; }
    Complex pole(std::size_t k) const { return poles_[k]; }
    PoleKind kind(std::size_t k) const { return kinds_[k]; }

    std::size_t n_effective() const { return poles_.size(); }
    /// Pole count including implicit conjugates.
    std::size_t n_nominal() const {
        return static_cast<std::size_t>(std::count(kinds_.begin(), kinds_.end(), PoleKind::Real)) +
               2 * static_cast<std::size_t>(std::count(kinds_.begin(), kinds_.end(), PoleKind::ComplexUpper));
    }

  private:
    std::vector<Complex> poles_;
    std::vector<PoleKind> kinds_;
};

inline PoleGrid build_paper_grid() { return PoleGrid::from_spec(GridSpec::paper()); }

/// Impulse response of (1 - |w|^2) / (q - w): entry i = (1 - |w|^2) w^(i-1).
inline Eigen::VectorXcd atom_response(Complex w, int N) {
    if (!(std::abs(w) < 1.0)) throw std::invalid_argument("atom_response: |w| must be < 1");
    if (N < 1) throw std::invalid_argument("atom_response: N must be >= 1");
    Eigen::VectorXcd a(N);
    Complex p = 1.0 - std::norm(w);
    for (int i = 0; i < N; ++i) {
        a(i) = p;
        p *= w;
    }
    return a;
}

/// m x (N - m + 1) Hankel matrix with entry (r, c) = h(r + c).
template <class Vec>
auto hankel_matrix(const Vec& h, int m) {
    using Scalar = typename Vec::Scalar;
    const int N  = static_cast<int>(h.size());
    if (m < 1 || m > N) throw std::invalid_argument("hankel_matrix: need 1 <= m <= N");
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> H(m, N - m + 1);
    for (int c = 0; c < N - m + 1; ++c)
        for (int r = 0; r < m; ++r) H(r, c) = h(r + c);
    return H;
}

/// Nuclear norm of the Hankel matrix of atom_response(w, N); the
/// normalization tends to 1 as m and N - m grow.
inline double hankel_nuclear_norm_of_atom(Complex w, int N, int m) {
    if (m < 1 || m > N - m + 1) throw std::invalid_argument("hankel_nuclear_norm_of_atom: invalid window");
    const Eigen::MatrixXcd H = hankel_matrix(atom_response(w, N), m);
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(H);
    return svd.singularValues().sum();
}

/// Re and Im parts of the gridded atom impulse responses, N x n_effective.
struct AtomResponseMatrix {
    int N = 0;
    Matrix real_part;
    Matrix imag_part;
    std::vector<PoleKind> kinds;

    static AtomResponseMatrix build(const PoleGrid& grid, int N) {
        AtomResponseMatrix a;
        a.N = N;
        a.real_part.resize(N, Eigen::Index(grid.size()));
        a.imag_part.resize(N, Eigen::Index(grid.size()));
        for (std::size_t k = 0; k < grid.size(); ++k) {
            const Eigen::VectorXcd r = atom_response(grid.pole(k), N);
            a.real_part.col(Eigen::Index(k)) = r.real();
            a.imag_part.col(Eigen::Index(k)) =
                grid.kind(k) == PoleKind::Real ? Vector::Zero(N) : Vector(r.imag());
        }
        a.kinds = grid.kinds();
        return a;
    }
    std::size_t size() const { return kinds.size(); }
};

/// Atom coefficients c = alpha + j beta, n_effective x P. Rows of Real
/// poles keep beta == 0.
struct CoefficientMatrix {
    Matrix alpha;
    Matrix beta;

    static CoefficientMatrix zeros(std::size_t n_poles, int P) {
        return {Matrix::Zero(Eigen::Index(n_poles), P), Matrix::Zero(Eigen::Index(n_poles), P)};
    }
    Eigen::Index rows() const { return alpha.rows(); }
    Eigen::Index cols() const { return alpha.cols(); }
    /// |c_{k,tau}|
    Matrix modulus() const { return (alpha.array().square() + beta.array().square()).sqrt().matrix(); }
};

/// Penalty weight per stored pole: 1 for Real, 2 for ComplexUpper (the
/// pole and its conjugate partner, whose coefficient has equal modulus).
inline Vector conjugate_weights(const std::vector<PoleKind>& kinds) {
    Vector w(Eigen::Index(kinds.size()));
    for (std::size_t k = 0; k < kinds.size(); ++k) w(Eigen::Index(k)) = kinds[k] == PoleKind::Real ? 1.0 : 2.0;
    return w;
}

/// g^tau(i) = sum_Real alpha Re a + sum_Complex 2 (alpha Re a - beta Im a).
inline ImpulseResponseMatrix reconstruct(const CoefficientMatrix& c, const AtomResponseMatrix& atoms) {
    if (c.rows() != Eigen::Index(atoms.size()) || c.beta.rows() != c.alpha.rows() || c.beta.cols() != c.alpha.cols())
        throw std::invalid_argument("reconstruct: coefficient/atom dimension mismatch");
    const Vector w = conjugate_weights(atoms.kinds);
    Matrix g       = atoms.real_part * (w.asDiagonal() * c.alpha) - atoms.imag_part * (w.asDiagonal() * c.beta);
    return ImpulseResponseMatrix(std::move(g));
}

/// Grid, atom responses and the real dictionary blocks mapping
/// (alpha, beta) to g: g^tau = D_alpha alpha^tau + D_beta beta^tau.
class AtomDictionary {
  public:
    AtomDictionary(PoleGrid grid, int N)
        : grid_(std::move(grid)), atoms_(AtomResponseMatrix::build(grid_, N)), weights_(conjugate_weights(grid_.kinds())) {
        d_alpha_ = atoms_.real_part * weights_.asDiagonal();
        d_beta_  = -(atoms_.imag_part * weights_.asDiagonal());
    }

    static std::shared_ptr<const AtomDictionary> make(const GridSpec& spec) {
        return std::make_shared<const AtomDictionary>(PoleGrid::from_spec(spec), spec.N);
    }

    const PoleGrid& grid() const { return grid_; }
    const AtomResponseMatrix& atoms() const { return atoms_; }
    const Vector& weights() const { return weights_; }
    const Matrix& d_alpha() const { return d_alpha_; }
    const Matrix& d_beta() const { return d_beta_; }
    int N() const { return atoms_.N; }
    std::size_t size() const { return grid_.size(); }
    /// true where beta is a free variable
    bool has_beta(std::size_t k) const { return grid_.kind(k) == PoleKind::ComplexUpper; }

  private:
    PoleGrid grid_;
    AtomResponseMatrix atoms_;
    Vector weights_;
    Matrix d_alpha_, d_beta_;
};

}  // namespace ltpid

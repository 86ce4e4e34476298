#pragma once

#include "ltpid/core.hpp"
#include "ltpid/estimators.hpp"
#include "ltpid/regression.hpp"

#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <mutex>
#include <numbers>
#include <random>
#include <thread>

namespace ltpid {

// ---------------------------------------------------------------------------
// Seeding

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Independent stream for (seed, a, b, c).
inline std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
    std::uint64_t h = splitmix64(seed);
    h               = splitmix64(h ^ a);
    h               = splitmix64(h ^ (b + 0x632be59bd9b4e019ULL));
    h               = splitmix64(h ^ (c + 0x8cb92ba72f3d8dd7ULL));
    return std::mt19937_64(h);
}

inline Vector gaussian_vector(std::mt19937_64& rng, Eigen::Index n, double stddev = 1.0) {
    std::normal_distribution<double> nd(0.0, 1.0);
    Vector v(n);
    for (Eigen::Index k = 0; k < n; ++k) v(k) = stddev * nd(rng);
    return v;
}

/// Worker count: LTPID_THREADS if set and positive, else hardware concurrency.
inline unsigned worker_threads() {
    unsigned n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("LTPID_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v > 0) n = std::min<unsigned>(n, unsigned(v));
    }
    return n;
}

/// Runs job(k) for k in [0, count) on up to `threads` workers; the first
/// exception is rethrown after all workers stop.
template <class Job>
void parallel_for(std::size_t count, unsigned threads, Job&& job) {
    threads = std::max(1u, std::min<unsigned>(threads, unsigned(std::max<std::size_t>(count, 1))));
    if (threads == 1) {
        for (std::size_t k = 0; k < count; ++k) job(k);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr err;
    std::mutex err_mu;
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < threads; ++w)
        pool.emplace_back([&] {
            for (std::size_t k; (k = next.fetch_add(1)) < count;) {
                try {
                    job(k);
                } catch (...) {
                    std::lock_guard lk(err_mu);
                    if (!err) err = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
}

// ---------------------------------------------------------------------------
// Variable-length pendulum
//   psi'' = -(g/L) sin psi + (2 w l sin wt / L) psi' + F cos psi / (m L),
//   L(t) = L0 + l cos wt.

struct PendulumSpec {
    double L0           = 10.0;
    double l            = 5.0;
    double mass         = 5.0;
    double g            = 9.8;
    double omega        = 4.0 * std::numbers::pi;
    int P               = 4;
    int substeps        = 50;
    double noise_sigma2 = std::pow(0.1 * std::numbers::pi / 180.0, 2);
    int nP              = 500;

    double Ts() const { return 2.0 * std::numbers::pi / (P * omega); }
    double length_at(double t) const { return L0 + l * std::cos(omega * t); }

    void validate() const {
        if (!(l >= 0.0 && l < L0)) throw std::invalid_argument("PendulumSpec: need 0 <= l < L0");
        if (!(mass > 0.0 && g > 0.0 && omega > 0.0)) throw std::invalid_argument("PendulumSpec: non-positive parameter");
        if (P < 1 || substeps < 1 || nP < P || nP % P != 0)
            throw std::invalid_argument("PendulumSpec: nP must be a positive multiple of P");
        if (noise_sigma2 < 0.0) throw std::invalid_argument("PendulumSpec: negative noise variance");
    }
};

inline nlohmann::json to_json(const PendulumSpec& s) {
    return nlohmann::json{{"L0", s.L0}, {"l", s.l},         {"mass", s.mass},         {"g", s.g},
                          {"omega", s.omega}, {"P", s.P},   {"substeps", s.substeps}, {"noise_sigma2", s.noise_sigma2},
                          {"nP", s.nP},       {"Ts", s.Ts()}};
}

inline PendulumSpec pendulum_spec_from_json(const nlohmann::json& j) {
    PendulumSpec s;
    s.L0           = j.value("L0", s.L0);
    s.l            = j.value("l", s.l);
    s.mass         = j.value("mass", s.mass);
    s.g            = j.value("g", s.g);
    s.omega        = j.value("omega", s.omega);
    s.P            = j.value("P", s.P);
    s.substeps     = j.value("substeps", s.substeps);
    s.noise_sigma2 = j.value("noise_sigma2", s.noise_sigma2);
    s.nP           = j.value("nP", s.nP);
    s.validate();
    return s;
}

namespace detail {

using State2 = Eigen::Vector2d;

inline Eigen::Matrix2d pendulum_Ac(const PendulumSpec& s, double t) {
    const double L = s.length_at(t);
    Eigen::Matrix2d A;
    A << 0.0, 1.0, -s.g / L, 2.0 * s.omega * s.l * std::sin(s.omega * t) / L;
    return A;
}

inline Eigen::Vector2d pendulum_Bc(const PendulumSpec& s, double t) {
    return Eigen::Vector2d(0.0, 1.0 / (s.mass * s.length_at(t)));
}

inline State2 pendulum_rhs(const PendulumSpec& s, double t, const State2& x, double F, bool nonlinear) {
    const double L = s.length_at(t);
    const double sn = nonlinear ? std::sin(x(0)) : x(0);
    const double cs = nonlinear ? std::cos(x(0)) : 1.0;
    return State2(x(1), -s.g / L * sn + 2.0 * s.omega * s.l * std::sin(s.omega * t) / L * x(1) + F * cs / (s.mass * L));
}

}  // namespace detail

/// Sampled LTP model: A(tau), B(tau) integrate the state transition and
/// zero-order-held input effect over [(tau-1) Ts, tau Ts] by RK4 with
/// `substeps` steps; C = [1 0].
inline PeriodicStateSpace pendulum_truth(const PendulumSpec& spec) {
    spec.validate();
    const double Ts = spec.Ts(), h = Ts / spec.substeps;
    std::vector<Matrix> A, B, C;
    for (int tau = 1; tau <= spec.P; ++tau) {
        // X = [Phi | Gamma], X' = Ac X + [0 | Bc]
        Eigen::Matrix<double, 2, 3> X = Eigen::Matrix<double, 2, 3>::Zero();
        X.leftCols<2>().setIdentity();
        auto f = [&](double t, const Eigen::Matrix<double, 2, 3>& Y) {
            Eigen::Matrix<double, 2, 3> d = detail::pendulum_Ac(spec, t) * Y;
            d.col(2) += detail::pendulum_Bc(spec, t);
            return d;
        };
        double t = (tau - 1) * Ts;
        for (int k = 0; k < spec.substeps; ++k, t = (tau - 1) * Ts + k * h) {
            const auto k1 = f(t, X);
            const auto k2 = f(t + 0.5 * h, X + 0.5 * h * k1);
            const auto k3 = f(t + 0.5 * h, X + 0.5 * h * k2);
            const auto k4 = f(t + h, X + h * k3);
            X += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        A.push_back(X.leftCols<2>());
        B.push_back(X.col(2));
        Matrix c(1, 2);
        c << 1.0, 0.0;
        C.push_back(c);
    }
    return PeriodicStateSpace(std::move(A), std::move(B), std::move(C));
}

/// Sampled output psi((t-1) Ts), t = 1..len(u), of the continuous pendulum
/// driven by zero-order-held F = u, from rest.
inline Vector pendulum_simulate(const PendulumSpec& spec, const Vector& u, bool nonlinear) {
    spec.validate();
    const double Ts = spec.Ts(), h = Ts / spec.substeps;
    detail::State2 x = detail::State2::Zero();
    Vector y(u.size());
    for (Eigen::Index k = 0; k < u.size(); ++k) {
        y(k)           = x(0);
        const double F = u(k);
        for (int s = 0; s < spec.substeps; ++s) {
            const double t = k * Ts + s * h;
            const auto k1  = detail::pendulum_rhs(spec, t, x, F, nonlinear);
            const auto k2  = detail::pendulum_rhs(spec, t + 0.5 * h, x + 0.5 * h * k1, F, nonlinear);
            const auto k3  = detail::pendulum_rhs(spec, t + 0.5 * h, x + 0.5 * h * k2, F, nonlinear);
            const auto k4  = detail::pendulum_rhs(spec, t + h, x + h * k3, F, nonlinear);
            x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
    }
    return y;
}

/// Spectral radii within this distance of 1 count as marginal: integrator
/// truncation alone moves unit-modulus multipliers by about this much.
inline constexpr double kMarginalStabilityTol = 1e-9;

struct PendulumCase {
    IdentDataset data;         // training + independent validation record
    PeriodicStateSpace truth;  // sampled LTP model
    StabilityReport stability;
    std::vector<std::string> warnings;
};

/// Unit Gaussian input, noisy sampled output of the linearized pendulum.
inline PendulumCase pendulum_dataset(const PendulumSpec& spec, std::uint64_t seed) {
    spec.validate();
    PeriodicStateSpace truth = pendulum_truth(spec);
    const StabilityReport st = is_stable(truth);
    std::vector<std::string> warnings;
    if (!(st.spectral_radius < 1.0 - kMarginalStabilityTol)) {
        std::ostringstream msg;
        msg << std::setprecision(12) << "sampled pendulum model is not asymptotically stable (spectral radius "
            << st.spectral_radius << ")";
        warnings.push_back(msg.str());
    }
    const double sd = std::sqrt(spec.noise_sigma2);
    auto record     = [&](std::uint64_t stream) {
        auto rng   = derived_rng(seed, 0x70656e64ULL, stream);
        Record r;
        r.u = gaussian_vector(rng, spec.nP);
        r.z = pendulum_simulate(spec, r.u, false) + gaussian_vector(rng, spec.nP, sd);
        return r;
    };
    return {IdentDataset(spec.P, record(0), record(1)), std::move(truth), st, std::move(warnings)};
}

/// 100-point log grid on [0.1, 10] used by the case-study sweeps.
inline std::vector<double> case_study_grid() { return logspace(-1.0, 1.0, 100); }

/// Per-tag estimated orders along one swept parameter.
struct OrderSweep {
    std::string method;
    std::string parameter;  // "gamma" or "beta1"
    std::vector<double> values;
    std::vector<std::vector<int>> orders;
};

/// Orders along the gamma grid of `spec` (one warm-started path).
inline OrderSweep gamma_sweep(const IdentDataset& data, EstimatorSpec spec, std::vector<double> gammas,
                              std::shared_ptr<const AtomDictionary> dict = nullptr) {
    spec.gamma_grid = std::move(gammas);
    const CrossValReport rep = identify(data, spec, {std::move(dict), {}});
    return {to_string(spec.method), "gamma", rep.gamma_grid, rep.orders_per_gamma};
}

/// Orders at fixed gamma while beta_1 sweeps and beta_2..P stay 1.
inline OrderSweep beta_sweep(const IdentDataset& data, EstimatorSpec spec, const std::vector<double>& beta1,
                             double gamma = 1.0, std::shared_ptr<const AtomDictionary> dict = nullptr) {
    OrderSweep sw{to_string(spec.method), "beta1", beta1, {}};
    spec.gamma_grid = {gamma};
    if ((spec.method == Method::Atom || spec.method == Method::GAtom) && !dict) dict = AtomDictionary::make(spec.grid);
    for (double b : beta1) {
        spec.beta    = Vector::Ones(data.P);
        spec.beta(0) = b;
        sw.orders.push_back(identify(data, spec, {dict, {}}).orders);
    }
    return sw;
}

/// "<parameter>,order_tau1,...,order_tauP" rows.
inline void write_order_sweep_csv(std::ostream& os, const OrderSweep& sw) {
    const std::size_t P = sw.orders.empty() ? 0 : sw.orders.front().size();
    os << sw.parameter;
    for (std::size_t t = 1; t <= P; ++t) os << ",order_tau" << t;
    os << '\n' << std::setprecision(17);
    for (std::size_t k = 0; k < sw.values.size(); ++k) {
        os << sw.values[k];
        for (int o : sw.orders[k]) os << ',' << o;
        os << '\n';
    }
}

// ---------------------------------------------------------------------------
// Random LTP bank and Monte Carlo study

struct MonteCarloSpec {
    int n_systems = 20;
    int P         = 2;
    int order_min = 2;
    int order_max = 10;
    std::vector<double> noise_sigma2{0.1, 0.01};
    int nP             = 500;
    std::uint64_t seed = 1;
    std::vector<EstimatorSpec> methods;
    // per-tag pole draws: radius ~ U(radius_min, radius_max), angle ~ U(0, angle_max)
    double radius_min         = 0.0;
    double radius_max         = 0.9;
    double angle_max          = std::numbers::pi;
    double monodromy_radius   = 0.97;
    int max_draws             = 1000;

    static std::vector<EstimatorSpec> default_methods() {
        std::vector<EstimatorSpec> m(4);
        m[0].method = Method::LS;
        m[1].method = Method::Hank;
        m[2].method = Method::Atom;
        m[3].method = Method::GAtom;
        return m;
    }

    void validate() const {
        if (n_systems < 1) throw std::invalid_argument("MonteCarloSpec: n_systems must be >= 1");
        if (P < 1 || order_min < 1 || order_max < order_min)
            throw std::invalid_argument("MonteCarloSpec: invalid period or order range");
        if (nP < P || nP % P != 0) throw std::invalid_argument("MonteCarloSpec: nP must be a multiple of P");
        if (noise_sigma2.empty()) throw std::invalid_argument("MonteCarloSpec: no noise levels");
        for (double s : noise_sigma2)
            if (s < 0.0) throw std::invalid_argument("MonteCarloSpec: negative noise variance");
        if (!(radius_min >= 0.0 && radius_max > radius_min && radius_max < 1.0))
            throw std::invalid_argument("MonteCarloSpec: need 0 <= radius_min < radius_max < 1");
        if (!(angle_max > 0.0 && angle_max <= std::numbers::pi))
            throw std::invalid_argument("MonteCarloSpec: angle_max must lie in (0, pi]");
        if (!(monodromy_radius > 0.0 && monodromy_radius < 1.0))
            throw std::invalid_argument("MonteCarloSpec: monodromy_radius must lie in (0, 1)");
        for (const auto& m : methods) m.validate();
    }
};

inline MonteCarloSpec monte_carlo_spec_from_json(const nlohmann::json& j) {
    MonteCarloSpec s;
    s.n_systems      = j.value("n_systems", s.n_systems);
    s.P              = j.value("P", s.P);
    if (j.contains("order_range")) {
        const auto r = j.at("order_range").get<std::vector<int>>();
        if (r.size() != 2) throw std::invalid_argument("order_range must be [min, max]");
        s.order_min = r[0];
        s.order_max = r[1];
    }
    s.noise_sigma2     = j.value("noise_sigma2", s.noise_sigma2);
    s.nP               = j.value("nP", s.nP);
    s.seed             = j.value("seed", s.seed);
    s.radius_min       = j.value("radius_min", s.radius_min);
    s.radius_max       = j.value("radius_max", s.radius_max);
    s.angle_max        = j.value("angle_max", s.angle_max);
    s.monodromy_radius = j.value("monodromy_radius", s.monodromy_radius);
    s.max_draws        = j.value("max_draws", s.max_draws);
    if (j.contains("methods"))
        for (const auto& m : j.at("methods")) s.methods.push_back(estimator_spec_from_json(m));
    else
        s.methods = MonteCarloSpec::default_methods();
    s.validate();
    return s;
}

inline nlohmann::json to_json(const MonteCarloSpec& s) {
    nlohmann::json methods = nlohmann::json::array();
    for (const auto& m : s.methods) methods.push_back(to_json(m));
    return nlohmann::json{{"n_systems", s.n_systems},
                          {"P", s.P},
                          {"order_range", {s.order_min, s.order_max}},
                          {"noise_sigma2", s.noise_sigma2},
                          {"nP", s.nP},
                          {"seed", s.seed},
                          {"radius_min", s.radius_min},
                          {"radius_max", s.radius_max},
                          {"angle_max", s.angle_max},
                          {"monodromy_radius", s.monodromy_radius},
                          {"methods", methods}};
}

/// One tag's realization: poles from the configured radius/angle box
/// (complex pairs with conjugate closure, or real poles of random sign when
/// angle_max = pi), a random orthogonal basis, Gaussian B and C, C rescaled
/// for unit DC gain C (I - A)^{-1} B = 1.
inline void draw_tag_realization(std::mt19937_64& rng, int nx, const MonteCarloSpec& spec, Matrix& A, Matrix& B,
                                 Matrix& C) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (;;) {
        Matrix J = Matrix::Zero(nx, nx);
        for (int k = 0; k < nx;) {
            const double r = spec.radius_min + (spec.radius_max - spec.radius_min) * unit(rng);
            if (nx - k >= 2 && unit(rng) < 0.5) {
                const double phi = spec.angle_max * unit(rng);
                const double a = r * std::cos(phi), b = r * std::sin(phi);
                J(k, k) = a, J(k, k + 1) = b, J(k + 1, k) = -b, J(k + 1, k + 1) = a;
                k += 2;
            } else {
                const bool negative = spec.angle_max >= std::numbers::pi && unit(rng) < 0.5;
                J(k, k)             = negative ? -r : r;
                k += 1;
            }
        }
        const Matrix G = [&] {
            Matrix g(nx, nx);
            std::normal_distribution<double> nd;
            for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = nd(rng);
            return g;
        }();
        const Eigen::HouseholderQR<Matrix> qr(G);
        const Matrix Q = qr.householderQ();
        A              = Q * J * Q.transpose();
        B              = gaussian_vector(rng, nx);
        C              = gaussian_vector(rng, nx).transpose();
        const double dc = (C * (Matrix::Identity(nx, nx) - A).partialPivLu().solve(B))(0);
        if (std::abs(dc) < 1e-8 || !std::isfinite(dc)) continue;
        C /= dc;
        return;
    }
}

struct BankSystem {
    PeriodicStateSpace sys;
    int order = 0;
    int draws = 0;  // attempts until the monodromy test passed
};

inline std::vector<BankSystem> random_ltp_bank(const MonteCarloSpec& spec) {
    spec.validate();
    std::vector<BankSystem> bank;
    for (int s = 0; s < spec.n_systems; ++s) {
        auto rng = derived_rng(spec.seed, 0x62616e6bULL, std::uint64_t(s));
        std::uniform_int_distribution<int> order_dist(spec.order_min, spec.order_max);
        const int nx = order_dist(rng);
        bool ok      = false;
        for (int draw = 1; draw <= spec.max_draws; ++draw) {
            std::vector<Matrix> A(std::size_t(spec.P)), B(std::size_t(spec.P)), C(std::size_t(spec.P));
            for (int t = 0; t < spec.P; ++t) draw_tag_realization(rng, nx, spec, A[std::size_t(t)], B[std::size_t(t)], C[std::size_t(t)]);
            PeriodicStateSpace sys(std::move(A), std::move(B), std::move(C));
            if (is_stable(sys).spectral_radius < spec.monodromy_radius) {
                bank.push_back({std::move(sys), nx, draw});
                ok = true;
                break;
            }
        }
        if (!ok) throw Error("random_ltp_bank: rejection budget exceeded for system " + std::to_string(s));
    }
    return bank;
}

/// Training and validation records of one (system, noise level) cell:
/// unit Gaussian input, zero initial state, additive Gaussian output noise.
inline IdentDataset monte_carlo_records(const MonteCarloSpec& spec, const PeriodicStateSpace& sys, std::size_t system_id,
                                        std::size_t noise_index) {
    auto rng        = derived_rng(spec.seed, 0x63656c6cULL, system_id, noise_index);
    const double sd = std::sqrt(spec.noise_sigma2[noise_index]);
    auto make       = [&] {
        Record r;
        r.u = gaussian_vector(rng, spec.nP);
        r.z = simulate(sys, r.u) + gaussian_vector(rng, spec.nP, sd);
        return r;
    };
    Record train = make();
    Record val   = make();
    return IdentDataset(spec.P, std::move(train), std::move(val));
}

struct McCell {
    int system_id = 0;
    std::string method;
    double sigma2 = 0.0;
    double W      = std::numeric_limits<double>::quiet_NaN();  // NaN when identify failed
    std::optional<double> gamma_star;
    std::vector<int> orders;
};

struct McSummary {
    std::string method;
    double sigma2 = 0.0;
    double mean = 0.0, median = 0.0, std = 0.0;
    int count  = 0;
    int failed = 0;
};

struct McStats {
    std::vector<McCell> raw;
    std::vector<McSummary> summary;
};

inline double median_of(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Mean, median and sample standard deviation (n - 1) over completed cells.
inline McSummary summarize(const std::string& method, double sigma2, const std::vector<double>& W, int failed) {
    McSummary s;
    s.method = method;
    s.sigma2 = sigma2;
    s.count  = int(W.size());
    s.failed = failed;
    if (W.empty()) {
        s.mean = s.median = s.std = std::numeric_limits<double>::quiet_NaN();
        return s;
    }
    double sum = 0.0;
    for (double w : W) sum += w;
    s.mean    = sum / double(W.size());
    double ss = 0.0;
    for (double w : W) ss += (w - s.mean) * (w - s.mean);
    s.std    = W.size() > 1 ? std::sqrt(ss / double(W.size() - 1)) : 0.0;
    s.median = median_of(W);
    return s;
}

inline std::vector<McSummary> summarize_cells(const std::vector<McCell>& raw) {
    std::vector<std::pair<std::string, double>> keys;
    for (const auto& c : raw) {
        const std::pair<std::string, double> key{c.method, c.sigma2};
        if (std::find(keys.begin(), keys.end(), key) == keys.end()) keys.push_back(key);
    }
    std::vector<McSummary> out;
    for (const auto& [m, s2] : keys) {
        std::vector<double> W;
        int failed = 0;
        for (const auto& c : raw)
            if (c.method == m && c.sigma2 == s2) {
                if (std::isnan(c.W)) ++failed;
                else W.push_back(c.W);
            }
        out.push_back(summarize(m, s2, W, failed));
    }
    return out;
}

struct MonteCarloOptions {
    unsigned threads = worker_threads();
    std::function<void(const McCell&)> on_cell;  // progress callback, called under a lock
};

/// Every (system, noise level, method) cell is an independent job; its data
/// come from a stream derived from (seed, system, noise level) only.
inline McStats run_monte_carlo(const MonteCarloSpec& spec_in, const MonteCarloOptions& opt = {}) {
    MonteCarloSpec spec = spec_in;
    if (spec.methods.empty()) spec.methods = MonteCarloSpec::default_methods();
    spec.validate();
    const std::vector<BankSystem> bank = random_ltp_bank(spec);

    // one dictionary per distinct grid, shared read-only
    std::vector<std::shared_ptr<const AtomDictionary>> dicts(spec.methods.size());
    for (std::size_t k = 0; k < spec.methods.size(); ++k) {
        const auto& m = spec.methods[k];
        if (m.method != Method::Atom && m.method != Method::GAtom) continue;
        for (std::size_t j = 0; j < k; ++j)
            if (dicts[j] && spec.methods[j].grid.radii == m.grid.radii && spec.methods[j].grid.angles == m.grid.angles &&
                spec.methods[j].grid.N == m.grid.N)
                dicts[k] = dicts[j];
        if (!dicts[k]) dicts[k] = AtomDictionary::make(m.grid);
    }

    const std::size_t S = bank.size(), L = spec.noise_sigma2.size(), M = spec.methods.size();
    std::vector<ImpulseResponseMatrix> truths;
    for (const auto& b : bank) truths.push_back(true_impulse_response(b.sys, std::max(kFitHorizon, 100)));

    McStats stats;
    stats.raw.resize(S * L * M);
    std::mutex mu;
    parallel_for(S * L * M, opt.threads, [&](std::size_t job) {
        const std::size_t s = job / (L * M), l = (job / M) % L, k = job % M;
        McCell cell;
        cell.system_id = int(s);
        cell.method    = to_string(spec.methods[k].method);
        cell.sigma2    = spec.noise_sigma2[l];
        try {
            const IdentDataset data = monte_carlo_records(spec, bank[s].sys, s, l);
            IdentifyOptions io;
            io.dictionary             = dicts[k];
            const CrossValReport rep  = identify(data, spec.methods[k], io);
            const FitReport fit       = fit_metric(truths[s], rep.g, cell.method, rep.gamma_star);
            cell.W                    = fit.W;
            cell.gamma_star           = rep.gamma_star;
            cell.orders               = rep.orders;
        } catch (const std::exception&) {
            cell.W = std::numeric_limits<double>::quiet_NaN();
        }
        stats.raw[job] = cell;
        if (opt.on_cell) {
            std::lock_guard lk(mu);
            opt.on_cell(cell);
        }
    });
    // raw order: noise level, method, system
    std::vector<McCell> ordered;
    ordered.reserve(stats.raw.size());
    for (std::size_t l = 0; l < L; ++l)
        for (std::size_t k = 0; k < M; ++k)
            for (std::size_t s = 0; s < S; ++s) ordered.push_back(stats.raw[s * L * M + l * M + k]);
    stats.raw     = std::move(ordered);
    stats.summary = summarize_cells(stats.raw);
    return stats;
}

/// "system_id,method,sigma2,W" rows; W empty for failed cells.
inline void write_mc_raw_csv(std::ostream& os, const McStats& st) {
    os << "system_id,method,sigma2,W\n" << std::setprecision(17);
    for (const auto& c : st.raw) {
        os << c.system_id << ',' << c.method << ',' << c.sigma2 << ',';
        if (!std::isnan(c.W)) os << c.W;
        os << '\n';
    }
}

inline nlohmann::json to_json(const McStats& st) {
    using nlohmann::json;
    json cells = json::array();
    for (const auto& s : st.summary)
        cells.push_back({{"method", s.method},
                         {"sigma2", s.sigma2},
                         {"mean", s.mean},
                         {"median", s.median},
                         {"std", s.std},
                         {"count", s.count},
                         {"failed", s.failed}});
    json raw = json::object();
    for (const auto& c : st.raw) {
        const std::string key = c.method + "@" + [&] {
            std::ostringstream o;
            o << std::setprecision(17) << c.sigma2;
            return o.str();
        }();
        raw[key].push_back(std::isnan(c.W) ? json(nullptr) : json(c.W));
    }
    return json{{"summary", cells}, {"W", raw}};
}

}  // namespace ltpid

// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
// Usage: acceptance [criterion numbers...]   (default: all)

#include "ltpid/experiments.hpp"

#include <chrono>
#include <iostream>
#include <set>

using namespace ltpid;

namespace {

struct Outcome {
    int id = 0;
    std::string title;
    bool pass = false;
    std::string detail;
};

std::vector<Outcome> outcomes;

std::string fmt(double v, int prec = 6) {
    std::ostringstream o;
    o << std::setprecision(prec) << v;
    return o.str();
}

template <class Fn>
void criterion(int id, const std::string& title, Fn&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o{id, title, false, ""};
    try {
        o.pass = fn(o.detail);
    } catch (const std::exception& e) {
        o.pass   = false;
        o.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    o.detail += " [" + fmt(secs, 4) + " s]";
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << id << ". " << title << ": " << o.detail << std::endl;
    outcomes.push_back(std::move(o));
}

/// 81 poles: r = 0.1..0.9, phi = 0..pi in steps of pi/8.
GridSpec moderate_grid() {
    GridSpec s;
    for (int k = 1; k <= 9; ++k) s.radii.push_back(0.1 * k);
    for (int k = 0; k <= 8; ++k) s.angles.push_back(k * std::numbers::pi / 8);
    s.angles.back() = std::numbers::pi;
    return s;
}

SolverConfig tight() {
    SolverConfig c;
    c.max_iters = 200000;
    c.tol       = 1e-15;
    return c;
}

/// Noisy P=2 records of the k-th bank system drawn with `seed`.
IdentDataset bank_instance(std::uint64_t seed, std::size_t k, double sigma2, int n_systems) {
    MonteCarloSpec s;
    s.seed         = seed;
    s.n_systems    = n_systems;
    s.noise_sigma2 = {sigma2};
    const auto bank = random_ltp_bank(s);
    return monte_carlo_records(s, bank.at(k).sys, k, 0);
}

PeriodicStateSpace random_stable(std::mt19937_64& rng, int nx, int P) {
    std::normal_distribution<double> nd;
    std::vector<Matrix> A, B, C;
    for (int t = 0; t < P; ++t) {
        Matrix a(nx, nx), b(nx, 1), c(1, nx);
        for (auto* M : {&a, &b, &c})
            for (Eigen::Index i = 0; i < M->size(); ++i) M->data()[i] = nd(rng);
        const double s = Eigen::JacobiSVD<Matrix>(a).singularValues()(0);
        a *= 0.9 / s;
        A.push_back(a);
        B.push_back(b);
        C.push_back(c);
    }
    return PeriodicStateSpace(A, B, C);
}

bool uniform(const std::vector<int>& o) { return std::adjacent_find(o.begin(), o.end(), std::not_equal_to<>()) == o.end(); }

std::string orders_str(const std::vector<int>& o) {
    std::string s;
    for (std::size_t k = 0; k < o.size(); ++k) s += (k ? " " : "") + std::to_string(o[k]);
    return s;
}

double median_for(const McStats& st, const std::string& method, double sigma2) {
    for (const auto& s : st.summary)
        if (s.method == method && s.sigma2 == sigma2) return s.median;
    throw Error("no summary cell for " + method);
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> only;
    for (int k = 1; k < argc; ++k) only.insert(std::stoi(argv[k]));
    auto want = [&](int id) { return only.empty() || only.count(id) > 0; };
    std::cout << std::unitbuf;

    if (want(1))
        criterion(1, "atom Hankel nuclear norm 1 +- 1e-3 for grid poles |w| <= 0.98 (m=20, N=100)", [](std::string& d) {
            const PoleGrid grid = build_paper_grid();
            std::size_t checked = 0, bad = 0;
            double worst = 0.0, worst_r = 0.0, smallest_bad_r = 1.0;
            for (const Complex w : grid.poles()) {
                if (std::abs(w) > 0.98 + 1e-12) continue;
                ++checked;
                const double e = std::abs(hankel_nuclear_norm_of_atom(w, 100, 20) - 1.0);
                if (e > 1e-3) {
                    ++bad;
                    smallest_bad_r = std::min(smallest_bad_r, std::abs(w));
                }
                if (e > worst) {
                    worst   = e;
                    worst_r = std::abs(w);
                }
            }
            d = std::to_string(bad) + " of " + std::to_string(checked) + " poles outside tolerance, worst |nn-1| = " +
                fmt(worst) + " at |w| = " + fmt(worst_r);
            if (bad) d += ", violations start at |w| = " + fmt(smallest_bad_r);
            return bad == 0;
        });

    if (want(2))
        criterion(2, "true_impulse_response matches simulated impulses to 1e-12 (50 systems)", [](std::string& d) {
            std::mt19937_64 rng(20240501);
            const int N  = 30;
            double worst = 0.0;
            for (int s = 0; s < 50; ++s) {
                const int nx = 1 + s % 5, P = 1 + (s / 5) % 4;
                const auto sys = random_stable(rng, nx, P);
                if (!is_stable(sys).stable) throw Error("generated system not stable");
                const auto g = true_impulse_response(sys, N);
                for (int tau = 1; tau <= P; ++tau)
                    for (int i = 1; i <= N; ++i) {
                        long t = tau;
                        while (t - i < 1) t += P;
                        Vector u   = Vector::Zero(t);
                        u(t - i - 1) = 1.0;
                        const double y = simulate(sys, u)(t - 1);
                        worst = std::max(worst, std::abs(y - g.at(i, tau)) / std::max(1.0, std::abs(y)));
                    }
            }
            d = "max error " + fmt(worst);
            return worst <= 1e-12;
        });

    if (want(3))
        criterion(3, "noise-free LS recovery W >= 99 (nP=500, P=2, pole radii <= 0.9)", [](std::string& d) {
            MonteCarloSpec s;
            s.seed         = 3;
            s.n_systems    = 5;
            s.noise_sigma2 = {0.0};
            EstimatorSpec ls;
            ls.method     = Method::LS;
            s.methods     = {ls};
            const auto st = run_monte_carlo(s);
            double lo     = 100.0;
            for (const auto& c : st.raw) lo = std::min(lo, c.W);
            d = "min W over 5 systems = " + fmt(lo, 8);
            return lo >= 99.0;
        });

    if (want(4))
        criterion(4, "group-lasso KKT at 1e-4 (10 instances x 3 gamma)", [](std::string& d) {
            const auto dict = AtomDictionary::make(moderate_grid());
            double act = 0.0, inact = 0.0;
            std::size_t empty = 0;
            for (std::size_t k = 0; k < 10; ++k) {
                const IdentDataset data = bank_instance(4, k, 0.1, 10);
                const AtomProblem prob(build_tag_regressions(data, 100), dict);
                const double gmax = kill_zone_bound(prob, Regularizer::GroupRows);
                for (double frac : {0.02, 0.1, 0.5}) {
                    const auto r   = solve_prox_grad(prob, Regularizer::GroupRows, frac * gmax, tight());
                    const auto kkt = group_kkt(prob, r.coeffs, frac * gmax);
                    act            = std::max(act, kkt.max_active_violation);
                    inact          = std::max(inact, kkt.max_inactive_ratio);
                    empty += kkt.active_groups == 0 ? 1 : 0;
                }
            }
            d = "max active violation " + fmt(act) + ", max inactive ratio " + fmt(inact, 10) + ", empty solutions " +
                std::to_string(empty);
            return act <= 1e-4 && inact <= 1.0 + 1e-4 && empty == 0;
        });

    if (want(5))
        criterion(5, "gamma=0 equals dictionary LS (1e-6 rel. objective); gamma above kill zone gives 0", [](std::string& d) {
            const auto dict = AtomDictionary::make(moderate_grid());
            double worst = 0.0, cnorm = 0.0;
            bool zero_ok = true;
            for (std::size_t k = 0; k < 10; ++k) {
                const IdentDataset data = bank_instance(5, k, 0.1, 10);
                const auto regs         = build_tag_regressions(data, 100);
                const AtomProblem prob(regs, dict);
                const AtomRegression ar = atom_regressors(regs, *dict);
                double ref              = 0.0;
                for (std::size_t t = 0; t < ar.z.size(); ++t) {
                    Matrix X(ar.z[t].size(), ar.phi_alpha[t].cols() + ar.phi_beta[t].cols());
                    X << ar.phi_alpha[t], ar.phi_beta[t];
                    const Vector c = X.completeOrthogonalDecomposition().solve(ar.z[t]);
                    cnorm          = std::max(cnorm, c.norm());
                    ref += (ar.z[t] - X * c).squaredNorm();
                }
                for (auto kind : {Regularizer::GroupRows, Regularizer::L1}) {
                    const auto r   = solve_prox_grad(prob, kind, 0.0, tight());
                    worst          = std::max(worst, std::abs(r.objective - ref) / ref);
                    const double g = 1.01 * kill_zone_bound(prob, kind);
                    const auto z   = solve_prox_grad(prob, kind, g);
                    zero_ok        = zero_ok && z.coeffs.alpha.isZero(0.0) && z.coeffs.beta.isZero(0.0);
                }
            }
            d = "81-pole grid, N=100, 10 instances: max relative objective gap " + fmt(worst) +
                " (minimal-norm LS coefficients up to " + fmt(cnorm, 3) + "), kill zone exact zero: " +
                (zero_ok ? "yes" : "no");
            return worst <= 1e-6 && zero_ok;
        });

    if (want(9))
        criterion(9, "Hankel ADMM: adjoint 1e-12, residuals < 1e-6 (10 instances), rank non-increasing in gamma",
                  [](std::string& d) {
                      std::mt19937_64 rng(9);
                      std::normal_distribution<double> nd;
                      double adj = 0.0;
                      for (int r = 0; r < 20; ++r) {
                          const int N = 100, m = 1 + r * 2;
                          Vector g(N);
                          Matrix M(m, N - m + 1);
                          for (auto& v : g) v = nd(rng);
                          for (Eigen::Index i = 0; i < M.size(); ++i) M.data()[i] = nd(rng);
                          const double lhs = (hankel(g, m).array() * M.array()).sum();
                          const double rhs = g.dot(hankel_adjoint(M, N));
                          adj              = std::max(adj, std::abs(lhs - rhs) / std::max(1.0, std::abs(lhs)));
                      }
                      SolverConfig cfg;
                      cfg.admm_max_iters = 20000;
                      double pr = 0.0, du = 0.0;
                      int nonconv = 0;
                      for (std::size_t k = 0; k < 10; ++k) {
                          const IdentDataset data = bank_instance(9, k, 0.1, 10);
                          const auto res = solve_hankel_admm(build_tag_regressions(data, 100), {}, 1.0, 20, cfg);
                          nonconv += res.converged ? 0 : 1;
                          pr = std::max(pr, res.primal_residual);
                          du = std::max(du, res.dual_residual);
                      }
                      const IdentDataset data = bank_instance(9, 0, 0.1, 10);
                      const auto regs         = build_tag_regressions(data, 100);
                      std::vector<int> prev;
                      bool mono = true;
                      std::string ranks;
                      for (double g : logspace(-2.0, 2.0, 12)) {
                          const auto res = solve_hankel_admm(regs, {}, g, 20, cfg);
                          std::vector<int> rk;
                          for (const auto& M : res.split) rk.push_back(numerical_rank(M, 1e-6));
                          if (!prev.empty())
                              for (std::size_t t = 0; t < rk.size(); ++t) mono = mono && rk[t] <= prev[t];
                          ranks += (ranks.empty() ? "" : ", ") + orders_str(rk);
                          prev = rk;
                      }
                      d = "adjoint error " + fmt(adj) + ", max primal " + fmt(pr) + ", max dual " + fmt(du) +
                          ", not converged " + std::to_string(nonconv) + ", ranks along gamma: " + ranks;
                      return adj <= 1e-12 && pr < 1e-6 && du < 1e-6 && nonconv == 0 && mono;
                  });

    std::optional<PendulumCase> pend;
    std::shared_ptr<const AtomDictionary> full_dict;
    auto pendulum = [&]() -> const PendulumCase& {
        if (!pend) pend = pendulum_dataset(PendulumSpec{}, 1);
        return *pend;
    };
    auto dict = [&] {
        if (!full_dict) full_dict = AtomDictionary::make(GridSpec::paper());
        return full_dict;
    };

    if (want(10))
        criterion(10, "pendulum: rho < 1, GAtom W >= 80 with a uniform order vector", [&](std::string& d) {
            const auto& pc = pendulum();
            const double rho = pc.stability.spectral_radius;
            const bool stable = rho < 1.0 - kMarginalStabilityTol;
            EstimatorSpec spec;
            spec.method = Method::GAtom;
            const auto rep = identify(pc.data, spec, {dict(), {}});
            const auto fit = fit_metric(true_impulse_response(pc.truth, kFitHorizon), rep.g, "GAtom", rep.gamma_star);
            d = "rho = " + fmt(rho, 17) + " (required < 1 - 1e-9), W = " + fmt(fit.W) + ", gamma* = " +
                fmt(*rep.gamma_star) + ", orders " + orders_str(rep.orders);
            return stable && fit.W >= 80.0 && uniform(rep.orders);
        });

    std::optional<McStats> mc;
    auto desk_mc = [&]() -> const McStats& {
        if (!mc) {
            std::cout << "running desk-scale Monte Carlo (20 systems, 2 noise levels, 4 methods)" << std::endl;
            mc = run_monte_carlo(MonteCarloSpec{});
        }
        return *mc;
    };

    if (want(6))
        criterion(6, "GAtom uniform orders on the 100-point case-study gamma sweep and all Monte Carlo fits",
                  [&](std::string& d) {
                      EstimatorSpec spec;
                      spec.method = Method::GAtom;
                      const auto sw = gamma_sweep(pendulum().data, spec, case_study_grid(), dict());
                      int bad = 0;
                      std::set<int> levels;
                      for (const auto& o : sw.orders) {
                          bad += uniform(o) && o.size() == 4 ? 0 : 1;
                          if (!o.empty()) levels.insert(o.front());
                      }
                      int mc_bad = 0, mc_n = 0;
                      for (const auto& c : desk_mc().raw)
                          if (c.method == "GAtom" && !c.orders.empty()) {
                              ++mc_n;
                              mc_bad += uniform(c.orders) ? 0 : 1;
                          }
                      d = "pendulum sweep: " + std::to_string(bad) + " of " + std::to_string(sw.orders.size()) +
                          " non-uniform, " + std::to_string(levels.size()) + " distinct order levels; Monte Carlo: " +
                          std::to_string(mc_bad) + " of " + std::to_string(mc_n) + " non-uniform";
                      return bad == 0 && mc_bad == 0 && sw.orders.size() == 100;
                  });

    if (want(7))
        criterion(7, "sigma2 = 0.1: median W GAtom > Atom > LS, LS < 0, GAtom >= 40", [&](std::string& d) {
            const auto& st = desk_mc();
            const double g = median_for(st, "GAtom", 0.1), a = median_for(st, "Atom", 0.1),
                         l = median_for(st, "LS", 0.1), h = median_for(st, "Hank", 0.1);
            d = "medians GAtom " + fmt(g) + ", Atom " + fmt(a) + ", LS " + fmt(l) + " (Hank " + fmt(h) + ")";
            return g > a && a > l && l < 0.0 && g >= 40.0;
        });

    if (want(8))
        criterion(8, "sigma2 = 0.01: median W >= 60 for Hank, Atom, GAtom", [&](std::string& d) {
            const auto& st = desk_mc();
            const double h = median_for(st, "Hank", 0.01), a = median_for(st, "Atom", 0.01),
                         g = median_for(st, "GAtom", 0.01), l = median_for(st, "LS", 0.01);
            d = "medians Hank " + fmt(h) + ", Atom " + fmt(a) + ", GAtom " + fmt(g) + " (LS " + fmt(l) + ")";
            return h >= 60.0 && a >= 60.0 && g >= 60.0;
        });

    if (want(11))
        criterion(11, "identical seed and config reproduce mc_raw.csv byte for byte", [&](std::string& d) {
            MonteCarloSpec s;
            s.n_systems    = 3;
            s.noise_sigma2 = {0.1};
            s.seed         = 11;
            auto csv = [&](unsigned threads) {
                MonteCarloOptions o;
                o.threads = threads;
                std::ostringstream os;
                write_mc_raw_csv(os, run_monte_carlo(s, o));
                return os.str();
            };
            const std::string a = csv(1), b = csv(2);
            d = "3 systems x 4 methods, runs with 1 and 2 workers, " + std::to_string(a.size()) + " bytes, " +
                (a == b ? "identical" : "different");
            return a == b && std::count(a.begin(), a.end(), '\n') == 13;
        });

    std::sort(outcomes.begin(), outcomes.end(), [](const Outcome& x, const Outcome& y) { return x.id < y.id; });
    std::cout << "\nsummary\n";
    int failed = 0;
    for (const auto& o : outcomes) {
        std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << o.id << ": " << o.title << '\n';
        failed += o.pass ? 0 : 1;
    }
    std::cout << (outcomes.size() - std::size_t(failed)) << " passed, " << failed << " failed\n";
    return failed ? 1 : 0;
}

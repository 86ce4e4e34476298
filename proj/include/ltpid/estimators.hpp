#pragma once

#include "ltpid/atoms.hpp"
#include "ltpid/core.hpp"
#include "ltpid/regression.hpp"
#include "ltpid/solvers.hpp"

#include <algorithm>
#include <functional>
#include <iostream>

namespace ltpid {

enum class Method { LS, Hank, Atom, GAtom };

inline std::string to_string(Method m) {
    switch (m) {
        case Method::LS: return "LS";
        case Method::Hank: return "Hank";
        case Method::Atom: return "Atom";
        case Method::GAtom: return "GAtom";
    }
    return "?";
}

inline Method method_from_string(const std::string& s) {
    if (s == "LS") return Method::LS;
    if (s == "Hank") return Method::Hank;
    if (s == "Atom") return Method::Atom;
    if (s == "GAtom") return Method::GAtom;
    throw std::invalid_argument("unknown method '" + s + "' (expected LS, Hank, Atom or GAtom)");
}

/// count points from 10^lo to 10^hi, endpoints included
inline std::vector<double> logspace(double lo, double hi, int count) {
    if (count < 1) throw std::invalid_argument("logspace: count must be >= 1");
    std::vector<double> v;
    v.reserve(std::size_t(count));
    for (int k = 0; k < count; ++k)
        v.push_back(std::pow(10.0, count == 1 ? lo : lo + (hi - lo) * double(k) / double(count - 1)));
    return v;
}

struct EstimatorSpec {
    Method method = Method::GAtom;
    int N         = 100;
    int m         = 20;
    Vector beta;  // per-tag weights for Hank and Atom; empty means all 1
    std::vector<double> gamma_grid = logspace(-1.0, 1.0, 10);
    GridSpec grid                  = GridSpec::paper();
    SolverConfig solver;
    /// relative cutoff for estimated_orders(); unset picks the method default
    std::optional<double> order_threshold;

    void validate() const {
        if (N < 1 || m < 1 || N < m) throw std::invalid_argument("EstimatorSpec: need N >= m >= 1");
        if (method == Method::Hank && m > N - m + 1) throw std::invalid_argument("EstimatorSpec: Hankel window too wide");
        if (gamma_grid.empty()) throw std::invalid_argument("EstimatorSpec: empty gamma grid");
        for (double g : gamma_grid)
            if (!(g >= 0.0) || !std::isfinite(g)) throw std::invalid_argument("EstimatorSpec: gamma must be >= 0");
        if ((method == Method::Atom || method == Method::GAtom) && grid.N != N) throw std::invalid_argument("EstimatorSpec: atom grid N differs from FIR order N");
        solver.validate();
    }
};

inline double default_order_threshold(Method m) { return m == Method::Hank || m == Method::LS ? 1e-3 : 1e-4; }

inline nlohmann::json to_json(const EstimatorSpec& s) {
    nlohmann::json j{{"method", to_string(s.method)}, {"N", s.N},       {"m", s.m},
                     {"gamma_grid", s.gamma_grid},     {"grid", to_json(s.grid)}, {"solver", to_json(s.solver)}};
    if (s.beta.size()) j["beta"] = std::vector<double>(s.beta.data(), s.beta.data() + s.beta.size());
    if (s.order_threshold) j["order_threshold"] = *s.order_threshold;
    return j;
}

/// gamma_grid may be a list or {"logspace": [lo_exp, hi_exp, count]}.
inline EstimatorSpec estimator_spec_from_json(const nlohmann::json& j) {
    EstimatorSpec s;
    if (j.is_string()) {
        s.method = method_from_string(j.get<std::string>());
        return s;
    }
    s.method = method_from_string(j.at("method").get<std::string>());
    s.N      = j.value("N", s.N);
    s.m      = j.value("m", s.m);
    if (j.contains("beta")) {
        const auto b = j.at("beta").get<std::vector<double>>();
        s.beta       = Eigen::Map<const Vector>(b.data(), Eigen::Index(b.size()));
    }
    if (j.contains("gamma_grid")) {
        const auto& g = j.at("gamma_grid");
        if (g.is_object()) {
            const auto ls = g.at("logspace").get<std::vector<double>>();
            if (ls.size() != 3) throw std::invalid_argument("gamma_grid.logspace must be [lo, hi, count]");
            s.gamma_grid = logspace(ls[0], ls[1], int(ls[2]));
        } else {
            s.gamma_grid = g.get<std::vector<double>>();
        }
    }
    s.grid = j.contains("grid") ? grid_spec_from_json(j.at("grid")) : GridSpec::paper(s.N);
    if (!j.contains("grid") || (j.at("grid").is_string())) s.grid.N = s.N;
    if (j.contains("solver")) s.solver = solver_config_from_json(j.at("solver"));
    if (j.contains("order_threshold")) s.order_threshold = j.at("order_threshold").get<double>();
    s.validate();
    return s;
}

struct CrossValReport {
    Method method = Method::LS;
    std::vector<double> gamma_grid;
    std::vector<double> validation_errors;  // NaN where the solve failed
    std::optional<double> gamma_star;
    ImpulseResponseMatrix g;
    std::optional<CoefficientMatrix> coeffs;  // Atom, GAtom
    std::vector<int> orders;                  // per tag, at gamma_star
    std::vector<std::vector<int>> orders_per_gamma;
    std::vector<std::string> warnings;
    bool converged = true;
    std::shared_ptr<const AtomDictionary> dictionary;
    int hankel_rows = 20;
    double order_threshold = 1e-4;
};

/// Per-tag order of an atom solution: Atom counts entries with modulus above
/// rel * max modulus (conjugate pairs count 2); GAtom counts active rows
/// (norm above rel * max row norm), shared by every tag.
inline std::vector<int> atom_orders(const CoefficientMatrix& c, const std::vector<PoleKind>& kinds, Method method,
                                    double rel) {
    const int P = int(c.cols());
    std::vector<int> orders(std::size_t(P), 0);
    if (method == Method::GAtom) {
        const Vector norms = (c.alpha.rowwise().squaredNorm() + c.beta.rowwise().squaredNorm()).cwiseSqrt();
        const double top   = norms.size() ? norms.maxCoeff() : 0.0;
        if (top == 0.0) return orders;
        int count = 0;
        for (Eigen::Index k = 0; k < norms.size(); ++k)
            if (norms(k) > rel * top) count += kinds[std::size_t(k)] == PoleKind::Real ? 1 : 2;
        std::fill(orders.begin(), orders.end(), count);
        return orders;
    }
    const Matrix mod = c.modulus();
    const double top = mod.size() ? mod.maxCoeff() : 0.0;
    if (top == 0.0) return orders;
    for (int tau = 0; tau < P; ++tau)
        for (Eigen::Index k = 0; k < mod.rows(); ++k)
            if (mod(k, tau) > rel * top) orders[std::size_t(tau)] += kinds[std::size_t(k)] == PoleKind::Real ? 1 : 2;
    return orders;
}

inline std::vector<int> hankel_orders(const ImpulseResponseMatrix& g, int m, double rel) {
    std::vector<int> orders;
    for (int tau = 0; tau < g.period(); ++tau) orders.push_back(numerical_rank(hankel(g.values.col(tau), m), rel));
    return orders;
}

inline std::vector<int> estimated_orders(const CrossValReport& rep, std::optional<double> threshold = std::nullopt) {
    const double rel = threshold.value_or(rep.order_threshold);
    if (rel < 0.0) throw std::invalid_argument("estimated_orders: negative threshold");
    if ((rep.method == Method::Atom || rep.method == Method::GAtom) && rep.coeffs && rep.dictionary)
        return atom_orders(*rep.coeffs, rep.dictionary->grid().kinds(), rep.method, rel);
    return hankel_orders(rep.g, rep.hankel_rows, rel);
}

struct IdentifyOptions {
    /// reuse a dictionary built for the same GridSpec
    std::shared_ptr<const AtomDictionary> dictionary;
    /// warnings sink; defaults to collecting into the report only
    std::function<void(const std::string&)> on_warning;
};

/// Cross-validated identification: for each gamma on the grid solve the
/// method's problem on the training record, score V_LS on the validation
/// record, keep the minimizer (ties go to the larger gamma). Solves run from
/// the largest gamma down, each warm-started from the previous solution.
inline CrossValReport identify(const IdentDataset& data, const EstimatorSpec& spec, const IdentifyOptions& opt = {}) {
    spec.validate();
    data.validate();
    CrossValReport rep;
    rep.method          = spec.method;
    rep.hankel_rows     = spec.m;
    rep.order_threshold = spec.order_threshold.value_or(default_order_threshold(spec.method));
    auto warn = [&](const std::string& w) {
        rep.warnings.push_back(w);
        if (opt.on_warning) opt.on_warning(w);
    };

    const TagRegressions train = build_tag_regressions(data.train, data.P, spec.N);
    if (train.underdetermined) warn("FIR order N exceeds rows per tag; problem is underdetermined");

    if (spec.method == Method::LS) {
        LsResult ls = solve_ls(train);
        if (ls.rank_deficient) warn("LS regressor is rank deficient; minimal-norm solution returned");
        rep.g      = std::move(ls.g);
        rep.orders = hankel_orders(rep.g, std::min(spec.m, (spec.N + 1) / 2), rep.order_threshold);
        rep.hankel_rows = std::min(spec.m, (spec.N + 1) / 2);
        return rep;
    }

    const bool need_val = spec.gamma_grid.size() > 1;
    if (need_val && !data.validation) throw std::invalid_argument("identify: validation record required for a gamma grid");
    const TagRegressions val = data.validation ? build_tag_regressions(*data.validation, data.P, spec.N) : train;

    const Vector beta = spec.beta.size() ? spec.beta : Vector(Vector::Ones(data.P));
    if (beta.size() != data.P) throw std::invalid_argument("identify: beta length differs from period");

    rep.gamma_grid = spec.gamma_grid;
    const std::size_t G = spec.gamma_grid.size();
    rep.validation_errors.assign(G, std::numeric_limits<double>::quiet_NaN());
    rep.orders_per_gamma.assign(G, {});

    std::vector<std::size_t> order(G);
    for (std::size_t k = 0; k < G; ++k) order[k] = k;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return spec.gamma_grid[a] > spec.gamma_grid[b]; });

    std::vector<ImpulseResponseMatrix> fits(G);
    std::vector<std::optional<CoefficientMatrix>> coeffs(G);
    std::vector<bool> conv(G, true);

    if (spec.method == Method::Hank) {
        std::optional<HankelSolveResult> prev;
        for (std::size_t k : order) {
            try {
                HankelSolveResult r = solve_hankel_admm(train, beta, spec.gamma_grid[k], spec.m, spec.solver,
                                                        prev ? &*prev : nullptr);
                if (!r.converged) conv[k] = false;
                rep.validation_errors[k] = ls_objective(r.g, val);
                rep.orders_per_gamma[k]  = hankel_orders(r.g, spec.m, rep.order_threshold);
                fits[k]                  = r.g;
                prev                     = std::move(r);
            } catch (const Error& e) {
                warn("gamma=" + std::to_string(spec.gamma_grid[k]) + " excluded: " + e.what());
            }
        }
    } else {
        auto dict = opt.dictionary ? opt.dictionary : AtomDictionary::make(spec.grid);
        if (dict->N() != spec.N) throw std::invalid_argument("identify: dictionary truncation differs from N");
        rep.dictionary = dict;
        const AtomProblem prob(train, dict, spec.solver);
        const Regularizer kind = spec.method == Method::GAtom ? Regularizer::GroupRows : Regularizer::L1;
        std::optional<CoefficientMatrix> prev;
        for (std::size_t k : order) {
            try {
                SolveResult r = solve_prox_grad(prob, kind, spec.gamma_grid[k], spec.solver, beta, prev ? &*prev : nullptr);
                if (!r.converged) conv[k] = false;
                fits[k]                  = reconstruct(r.coeffs, dict->atoms());
                rep.validation_errors[k] = ls_objective(fits[k], val);
                rep.orders_per_gamma[k]  = atom_orders(r.coeffs, dict->grid().kinds(), spec.method, rep.order_threshold);
                coeffs[k]                = r.coeffs;
                prev                     = std::move(r.coeffs);
            } catch (const Error& e) {
                warn("gamma=" + std::to_string(spec.gamma_grid[k]) + " excluded: " + e.what());
            }
        }
    }

    std::optional<std::size_t> best;
    for (std::size_t k = 0; k < G; ++k) {
        const double e = rep.validation_errors[k];
        if (std::isnan(e)) continue;
        if (!best) {
            best = k;
            continue;
        }
        const double eb = rep.validation_errors[*best];
        if (e < eb || (e == eb && spec.gamma_grid[k] > spec.gamma_grid[*best])) best = k;
    }
    if (!best) throw Error("identify: every solve on the gamma grid failed");
    for (std::size_t k = 0; k < G; ++k)
        if (!conv[k] && !std::isnan(rep.validation_errors[k]))
            warn("gamma=" + std::to_string(spec.gamma_grid[k]) + " reached the iteration limit");

    rep.converged  = conv[*best];
    rep.gamma_star = spec.gamma_grid[*best];
    rep.g          = std::move(fits[*best]);
    rep.coeffs     = std::move(coeffs[*best]);
    rep.orders     = rep.orders_per_gamma[*best];
    return rep;
}

inline nlohmann::json to_json(const CrossValReport& r) {
    using nlohmann::json;
    json j;
    j["method"]     = to_string(r.method);
    j["gamma_grid"] = r.gamma_grid;
    json eps        = json::array();
    for (double e : r.validation_errors) eps.push_back(std::isnan(e) ? json(nullptr) : json(e));
    j["validation_errors"] = eps;
    j["gamma_star"]        = r.gamma_star ? json(*r.gamma_star) : json(nullptr);
    j["orders"]            = r.orders;
    j["orders_per_gamma"]  = r.orders_per_gamma;
    j["order_threshold"]   = r.order_threshold;
    j["converged"]         = r.converged;
    j["warnings"]          = r.warnings;
    if (r.coeffs && r.dictionary) {
        json atoms = json::array();
        const auto& grid = r.dictionary->grid();
        for (Eigen::Index k = 0; k < r.coeffs->rows(); ++k) {
            if (r.coeffs->alpha.row(k).squaredNorm() + r.coeffs->beta.row(k).squaredNorm() == 0.0) continue;
            const Complex w = grid.pole(std::size_t(k));
            atoms.push_back({{"index", k},
                             {"pole", {w.real(), w.imag()}},
                             {"kind", grid.kind(std::size_t(k)) == PoleKind::Real ? "real" : "complex"},
                             {"alpha", std::vector<double>(r.coeffs->alpha.row(k).begin(), r.coeffs->alpha.row(k).end())},
                             {"beta", std::vector<double>(r.coeffs->beta.row(k).begin(), r.coeffs->beta.row(k).end())}});
        }
        j["coefficients"] = atoms;
    }
    return j;
}

/// "gamma,epsilon" rows.
inline void write_eps_curve_csv(std::ostream& os, const CrossValReport& r) {
    os << "gamma,epsilon\n" << std::setprecision(17);
    for (std::size_t k = 0; k < r.gamma_grid.size(); ++k) {
        os << r.gamma_grid[k] << ',';
        if (!std::isnan(r.validation_errors[k])) os << r.validation_errors[k];
        os << '\n';
    }
}

inline nlohmann::json to_json(const FitReport& f) {
    return nlohmann::json{{"W", f.W},
                          {"per_tag_rmse", std::vector<double>(f.per_tag_rmse.data(), f.per_tag_rmse.data() + f.per_tag_rmse.size())},
                          {"estimator", f.estimator_name},
                          {"gamma_selected", f.gamma_selected ? nlohmann::json(*f.gamma_selected) : nlohmann::json(nullptr)}};
}

}  // namespace ltpid

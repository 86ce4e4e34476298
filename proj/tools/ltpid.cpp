#include "ltpid/experiments.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ltpid;

namespace {

struct Common {
    std::string config;
    std::string out = ".";
    std::uint64_t seed = 0;
    bool seed_given     = false;
    bool allow_unstable = false;
    bool full_scale     = false;
    int verbosity       = 0;
};

constexpr int kExitMcFailures = 3;

void warn(const std::string& msg) { std::cerr << "warning: " << msg << '\n'; }

json load_json(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw Error("cannot read config '" + p.string() + "'");
    try {
        return json::parse(is);
    } catch (const json::parse_error& e) {
        throw Error("config '" + p.string() + "': " + e.what());
    }
}

json load_config(const Common& c, bool required) {
    if (c.config.empty()) {
        if (required) throw Error("--config is required for this subcommand");
        return json::object();
    }
    return load_json(c.config);
}

/// Paths in a config are relative to the config file.
fs::path resolve(const Common& c, const std::string& p) {
    const fs::path path(p);
    if (path.is_absolute() || c.config.empty()) return path;
    return fs::path(c.config).parent_path() / path;
}

fs::path out_dir(const Common& c) {
    const fs::path d(c.out);
    fs::create_directories(d);
    return d;
}

std::ofstream open_out(const fs::path& p) {
    std::ofstream os(p, std::ios::binary);
    if (!os) throw Error("cannot write '" + p.string() + "'");
    return os;
}

void write_json(const fs::path& p, const json& j) { open_out(p) << j.dump(2) << '\n'; }

template <class Fn>
void write_csv(const fs::path& p, Fn&& fn) {
    auto os = open_out(p);
    fn(os);
}

std::uint64_t seed_of(const Common& c, const json& cfg, std::uint64_t fallback) {
    return c.seed_given ? c.seed : cfg.value("seed", fallback);
}

std::vector<EstimatorSpec> methods_of(const json& cfg, const std::vector<std::string>& fallback) {
    std::vector<EstimatorSpec> out;
    if (cfg.contains("methods"))
        for (const auto& m : cfg.at("methods")) out.push_back(estimator_spec_from_json(m));
    else
        for (const auto& m : fallback) out.push_back(estimator_spec_from_json(json(m)));
    if (out.empty()) throw Error("config lists no methods");
    return out;
}

/// Output stems per method; repeated methods get a numeric suffix.
std::vector<std::string> method_stems(const std::vector<EstimatorSpec>& methods) {
    std::vector<std::string> stems;
    std::map<std::string, int> seen;
    for (const auto& m : methods) {
        const std::string base = to_string(m.method);
        const int k            = seen[base]++;
        stems.push_back(k == 0 ? base : base + "_" + std::to_string(k + 1));
    }
    return stems;
}

PeriodicStateSpace system_of(const Common& c, const json& j) {
    if (j.is_string()) return periodic_state_space_from_json(load_json(resolve(c, j.get<std::string>())));
    return periodic_state_space_from_json(j);
}

// ---------------------------------------------------------------------------

int cmd_simulate(const Common& c) {
    const json cfg        = load_config(c, true);
    const auto sys        = system_of(c, cfg.at("system"));
    const int P           = sys.period();
    const int nP          = cfg.value("nP", 500);
    const double sigma2   = cfg.value("noise_sigma2", 0.1);
    const double input_sd = cfg.value("input_stddev", 1.0);
    const int N           = cfg.value("N", kFitHorizon);
    const std::uint64_t seed = seed_of(c, cfg, 1);
    if (nP < P || nP % P != 0) throw Error("nP must be a positive multiple of the period P=" + std::to_string(P));
    if (sigma2 < 0.0 || input_sd <= 0.0 || N < 1) throw Error("noise_sigma2 >= 0, input_stddev > 0 and N >= 1 required");

    const StabilityReport st = is_stable(sys);
    if (!st.stable) {
        std::ostringstream msg;
        msg << std::setprecision(12) << "system is not stable (monodromy spectral radius " << st.spectral_radius << ")";
        warn(msg.str());
        if (!c.allow_unstable) throw Error(msg.str() + "; pass --allow-unstable to proceed");
    }

    auto record = [&](std::uint64_t stream) {
        auto rng = derived_rng(seed, 0x73696d75, stream);
        Record r;
        r.u = gaussian_vector(rng, nP, input_sd);
        r.z = simulate(sys, r.u) + gaussian_vector(rng, nP, std::sqrt(sigma2));
        return r;
    };
    const fs::path d = out_dir(c);
    write_record_csv((d / "train.csv").string(), record(0));
    write_record_csv((d / "validation.csv").string(), record(1));
    write_impulse_response_csv((d / "truth_ir.csv").string(), true_impulse_response(sys, N));
    if (c.verbosity > 0) std::cerr << "wrote train.csv, validation.csv, truth_ir.csv to " << d << '\n';
    return 0;
}

int cmd_identify(const Common& c) {
    const json cfg = load_config(c, true);
    if (!cfg.contains("period")) throw Error("identify config needs 'period'");
    const int P = cfg.at("period").get<int>();
    if (P < 1) throw Error("period must be >= 1");

    std::optional<ImpulseResponseMatrix> truth;
    if (cfg.contains("truth_system")) {
        const auto sys = system_of(c, cfg.at("truth_system"));
        if (sys.period() != P) throw Error("truth system period differs from the configured period");
        truth = true_impulse_response(sys, kFitHorizon);
    } else if (cfg.contains("truth")) {
        truth = read_impulse_response_csv(resolve(c, cfg.at("truth").get<std::string>()).string());
        if (truth->period() != P) throw Error("truth impulse response period differs from the configured period");
    }

    Record train = read_record_csv(resolve(c, cfg.at("train").get<std::string>()).string(), P);
    std::optional<Record> val;
    if (cfg.contains("validation")) val = read_record_csv(resolve(c, cfg.at("validation").get<std::string>()).string(), P);
    const IdentDataset data(P, std::move(train), std::move(val));

    const auto methods = methods_of(cfg, {"LS", "Hank", "Atom", "GAtom"});
    const auto stems   = method_stems(methods);
    const fs::path d   = out_dir(c);
    json summary       = json::array();
    for (std::size_t k = 0; k < methods.size(); ++k) {
        if (c.verbosity > 0) std::cerr << "identify " << stems[k] << '\n';
        IdentifyOptions io;
        io.on_warning            = [&](const std::string& w) { warn(stems[k] + ": " + w); };
        const CrossValReport rep = identify(data, methods[k], io);
        json rj                  = to_json(rep);
        rj["spec"]               = to_json(methods[k]);
        write_json(d / ("report_" + stems[k] + ".json"), rj);
        write_impulse_response_csv((d / ("ir_" + stems[k] + ".csv")).string(), rep.g);
        write_csv(d / ("eps_curve_" + stems[k] + ".csv"), [&](std::ostream& os) { write_eps_curve_csv(os, rep); });
        json row{{"name", stems[k]},
                 {"method", to_string(rep.method)},
                 {"gamma_star", rep.gamma_star ? json(*rep.gamma_star) : json(nullptr)},
                 {"orders", rep.orders}};
        if (truth) {
            const FitReport fit = fit_metric(*truth, rep.g, stems[k], rep.gamma_star);
            write_json(d / ("fit_" + stems[k] + ".json"), to_json(fit));
            row["W"] = fit.W;
        }
        summary.push_back(row);
    }
    write_json(d / "summary.json", summary);
    std::cout << summary.dump(2) << '\n';
    return 0;
}

int cmd_pendulum(const Common& c) {
    const json cfg          = load_config(c, false);
    const PendulumSpec spec = pendulum_spec_from_json(cfg.value("pendulum", json::object()));
    const std::uint64_t seed = seed_of(c, cfg, 1);
    const PendulumCase pc    = pendulum_dataset(spec, seed);
    for (const auto& w : pc.warnings) warn(w);
    if (!pc.stability.stable && !c.allow_unstable)
        throw Error("discretized pendulum is not stable; pass --allow-unstable to proceed");

    const fs::path d = out_dir(c);
    const auto truth = true_impulse_response(pc.truth, kFitHorizon);
    write_json(d / "pendulum_truth.json", json{{"system", to_json(pc.truth)},
                                               {"spectral_radius", pc.stability.spectral_radius},
                                               {"stable", pc.stability.stable},
                                               {"spec", to_json(spec)},
                                               {"seed", seed}});
    write_record_csv((d / "pendulum_data.csv").string(), pc.data.train);
    write_record_csv((d / "pendulum_validation.csv").string(), *pc.data.validation);
    write_impulse_response_csv((d / "pendulum_truth_ir.csv").string(), truth);

    const auto methods = methods_of(cfg, {"GAtom"});
    const auto stems   = method_stems(methods);
    json fits          = json::array();
    for (std::size_t k = 0; k < methods.size(); ++k) {
        IdentifyOptions io;
        io.on_warning            = [&](const std::string& w) { warn(stems[k] + ": " + w); };
        const CrossValReport rep = identify(pc.data, methods[k], io);
        const FitReport fit      = fit_metric(truth, rep.g, stems[k], rep.gamma_star);
        write_json(d / ("report_" + stems[k] + ".json"), to_json(rep));
        write_impulse_response_csv((d / ("ir_" + stems[k] + ".csv")).string(), rep.g);
        write_csv(d / ("eps_curve_" + stems[k] + ".csv"), [&](std::ostream& os) { write_eps_curve_csv(os, rep); });
        json f      = to_json(fit);
        f["orders"] = rep.orders;
        fits.push_back(f);
    }
    write_json(d / "pendulum_fit.json", fits);

    const json sw          = cfg.value("sweeps", json::object());
    const int points       = sw.value("points", 100);
    const double lo        = sw.value("log10_min", -1.0), hi = sw.value("log10_max", 1.0);
    const double beta_gam  = sw.value("beta_gamma", 1.0);
    const auto values      = logspace(lo, hi, points);
    const auto beta_list   = sw.value("beta1", std::vector<std::string>{"Hank", "Atom"});
    const auto gamma_list  = sw.value("gamma", std::vector<std::string>{"GAtom"});
    const json sweep_base  = sw.value("estimator", json::object());
    auto base_spec = [&](const std::string& m) {
        json j      = sweep_base;
        j["method"] = m;
        return estimator_spec_from_json(j);
    };
    std::shared_ptr<const AtomDictionary> dict;
    auto dict_for = [&](const EstimatorSpec& s) -> std::shared_ptr<const AtomDictionary> {
        if (s.method != Method::Atom && s.method != Method::GAtom) return nullptr;
        if (!dict) dict = AtomDictionary::make(s.grid);
        return dict;
    };
    for (const auto& m : beta_list) {
        if (c.verbosity > 0) std::cerr << "beta sweep " << m << '\n';
        const auto s = base_spec(m);
        const auto r = beta_sweep(pc.data, s, values, beta_gam, dict_for(s));
        write_csv(d / ("sweep_beta1_" + m + ".csv"), [&](std::ostream& os) { write_order_sweep_csv(os, r); });
    }
    for (const auto& m : gamma_list) {
        if (c.verbosity > 0) std::cerr << "gamma sweep " << m << '\n';
        const auto s = base_spec(m);
        const auto r = gamma_sweep(pc.data, s, values, dict_for(s));
        write_csv(d / ("sweep_gamma_" + m + ".csv"), [&](std::ostream& os) { write_order_sweep_csv(os, r); });
    }
    std::cout << fits.dump(2) << '\n';
    return 0;
}

int cmd_montecarlo(const Common& c) {
    const json cfg      = load_config(c, false);
    MonteCarloSpec spec = monte_carlo_spec_from_json(cfg);
    if (spec.methods.empty()) spec.methods = MonteCarloSpec::default_methods();
    if (c.seed_given) spec.seed = c.seed;
    if (c.full_scale) spec.n_systems = 100;
    spec.validate();

    MonteCarloOptions opt;
    std::size_t done        = 0;
    const std::size_t total = std::size_t(spec.n_systems) * spec.noise_sigma2.size() * spec.methods.size();
    if (c.verbosity > 0)
        opt.on_cell = [&](const McCell& cell) {
            std::cerr << '[' << ++done << '/' << total << "] system " << cell.system_id << ' ' << cell.method
                      << " sigma2=" << cell.sigma2 << " W=" << cell.W << '\n';
        };
    const McStats st = run_monte_carlo(spec, opt);

    const fs::path d = out_dir(c);
    write_json(d / "mc_config.json", to_json(spec));
    write_json(d / "mc_stats.json", to_json(st));
    write_csv(d / "mc_raw.csv", [&](std::ostream& os) { write_mc_raw_csv(os, st); });

    std::size_t failed = 0;
    for (const auto& cell : st.raw) failed += std::isnan(cell.W) ? 1 : 0;
    std::cout << "method,sigma2,mean,median,std,count,failed\n" << std::setprecision(6);
    for (const auto& s : st.summary)
        std::cout << s.method << ',' << s.sigma2 << ',' << s.mean << ',' << s.median << ',' << s.std << ',' << s.count
                  << ',' << s.failed << '\n';
    if (failed > 0) warn(std::to_string(failed) + " of " + std::to_string(st.raw.size()) + " cells failed");
    return 10 * failed > st.raw.size() ? kExitMcFailures : 0;
}

int cmd_atoms_info(const Common& c) {
    const json cfg    = load_config(c, false);
    const GridSpec gs = grid_spec_from_json(cfg.value("grid", json(kPaperGridPreset)));
    const int m       = cfg.value("m", 20);
    if (m < 1 || m > gs.N) throw Error("m must lie in [1, N]");
    const PoleGrid grid = PoleGrid::from_spec(gs);

    const fs::path d = out_dir(c);
    auto os          = open_out(d / "atoms.csv");
    os << "index,kind,re,im,radius,omega,hankel_nuclear_norm\n" << std::setprecision(17);
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    std::size_t n_real = 0;
    for (std::size_t k = 0; k < grid.size(); ++k) {
        const Complex w   = grid.pole(k);
        const bool real   = grid.kind(k) == PoleKind::Real;
        const double nn   = hankel_nuclear_norm_of_atom(w, gs.N, m);
        n_real += real ? 1 : 0;
        if (std::abs(w) <= 0.98 + 1e-12) {
            lo = std::min(lo, nn);
            hi = std::max(hi, nn);
        }
        os << k << ',' << (real ? "real" : "complex") << ',' << w.real() << ',' << w.imag() << ',' << std::abs(w) << ','
           << (real ? 1 : 2) << ',' << nn << '\n';
    }
    const json info{{"grid", to_json(gs)},
                    {"m", m},
                    {"stored", grid.size()},
                    {"real", n_real},
                    {"complex_upper", grid.size() - n_real},
                    {"nominal", grid.n_nominal()},
                    {"nuclear_norm_min_r_le_0.98", lo},
                    {"nuclear_norm_max_r_le_0.98", hi}};
    write_json(d / "atoms_info.json", info);
    std::cout << info.dump(2) << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Identification of linear time-periodic systems"};
    app.require_subcommand(1);
    Common c;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", c.config, "JSON config file");
        sub->add_option("--out", c.out, "output directory (created if absent)");
        sub->add_option("--seed", c.seed, "RNG seed, overrides the config")->each([&](const std::string&) {
            c.seed_given = true;
        });
        sub->add_flag("--allow-unstable", c.allow_unstable, "proceed with an unstable system");
        sub->add_flag("--full-scale", c.full_scale, "Monte Carlo with 100 systems");
        sub->add_flag("-v,--verbose", c.verbosity, "progress on stderr");
    };
    std::map<CLI::App*, std::function<int(const Common&)>> commands;
    auto add = [&](const char* name, const char* help, int (*fn)(const Common&)) {
        CLI::App* sub = app.add_subcommand(name, help);
        add_common(sub);
        commands[sub] = fn;
    };
    add("simulate", "simulate training/validation records from a state-space model", cmd_simulate);
    add("identify", "run estimators on dataset files", cmd_identify);
    add("pendulum", "pendulum case study: data, fits and order sweeps", cmd_pendulum);
    add("montecarlo", "Monte Carlo comparison on a random LTP bank", cmd_montecarlo);
    add("atoms-info", "pole grid and atom normalization table", cmd_atoms_info);

    CLI11_PARSE(app, argc, argv);
    try {
        for (const auto& [sub, fn] : commands)
            if (sub->parsed()) return fn(c);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}

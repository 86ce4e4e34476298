#include "ltpid/experiments.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <unistd.h>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ltpid;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / ("ltpid_cli_" + std::to_string(::getpid())) / name;
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

int run(const std::string& args) {
    const std::string cmd = std::string(LTPID_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int rc          = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), {}};
}

void put(const fs::path& p, const json& j) { std::ofstream(p, std::ios::binary) << j.dump(2); }

std::size_t count_lines(const fs::path& p) {
    const std::string s = slurp(p);
    return std::size_t(std::count(s.begin(), s.end(), '\n'));
}

json small_grid() {
    return json{{"radii", {0.3, 0.6, 0.8, 0.9}},
                {"angles", {0.0, std::numbers::pi / 4, std::numbers::pi / 2, 3 * std::numbers::pi / 4, std::numbers::pi}},
                {"N", 100}};
}

PeriodicStateSpace two_tag_system() {
    Matrix A1(2, 2), A2(2, 2);
    A1 << 0.5, 0.2, -0.1, 0.3;
    A2 << 0.4, -0.3, 0.2, 0.6;
    Matrix B1(2, 1), B2(2, 1), C1(1, 2), C2(1, 2);
    B1 << 1, 0.5;
    B2 << -0.2, 1;
    C1 << 1, 0;
    C2 << 0.3, 1;
    return PeriodicStateSpace({A1, A2}, {B1, B2}, {C1, C2});
}

/// Simulated P=2 dataset; returns the directory holding config and data.
fs::path simulated(const std::string& name, double sigma2) {
    const fs::path d = scratch(name);
    put(d / "sim.json", json{{"system", to_json(two_tag_system())}, {"nP", 400}, {"noise_sigma2", sigma2}, {"seed", 3}});
    EXPECT_EQ(run("simulate --config " + (d / "sim.json").string() + " --out " + d.string()), 0);
    return d;
}

}  // namespace

TEST(Cli, RejectsUnknownFlagsAndMissingSubcommand) {
    EXPECT_NE(run(""), 0);
    EXPECT_NE(run("simulate --bogus"), 0);
    EXPECT_NE(run("frobnicate"), 0);
    EXPECT_NE(run("simulate"), 0);  // config required
}

TEST(Cli, SimulateScalarWritesThreeFilesDeterministically) {
    const fs::path d = scratch("sim_scalar");
    const PeriodicStateSpace sys({Matrix::Constant(1, 1, 0.5)}, {Matrix::Ones(1, 1)}, {Matrix::Ones(1, 1)});
    put(d / "cfg.json", json{{"system", "system.json"}, {"nP", 500}, {"noise_sigma2", 0.1}});
    put(d / "system.json", to_json(sys));
    const std::string cfg = " --config " + (d / "cfg.json").string();
    ASSERT_EQ(run("simulate" + cfg + " --seed 11 --out " + (d / "a" / "nested").string()), 0);
    ASSERT_EQ(run("simulate" + cfg + " --seed 11 --out " + (d / "b").string()), 0);
    ASSERT_EQ(run("simulate" + cfg + " --seed 12 --out " + (d / "c").string()), 0);
    const fs::path a = d / "a" / "nested";
    for (const char* f : {"train.csv", "validation.csv", "truth_ir.csv"}) {
        ASSERT_TRUE(fs::exists(a / f)) << f;
        EXPECT_EQ(slurp(a / f), slurp(d / "b" / f)) << f;
    }
    EXPECT_EQ(std::distance(fs::directory_iterator(a), fs::directory_iterator{}), 3);
    EXPECT_EQ(count_lines(a / "train.csv"), 501u);
    EXPECT_NE(slurp(a / "train.csv"), slurp(d / "c" / "train.csv"));

    const Record r      = read_record_csv((a / "train.csv").string());
    const Vector noise  = r.z - simulate(sys, r.u);
    const double var    = noise.squaredNorm() / double(noise.size());
    EXPECT_NEAR(var, 0.1, 0.02);
}

TEST(Cli, SimulateRefusesUnstableWithoutFlag) {
    const fs::path d = scratch("sim_unstable");
    const PeriodicStateSpace sys({Matrix::Constant(1, 1, 1.2)}, {Matrix::Ones(1, 1)}, {Matrix::Ones(1, 1)});
    put(d / "cfg.json", json{{"system", to_json(sys)}, {"nP", 20}});
    EXPECT_NE(run("simulate --config " + (d / "cfg.json").string() + " --out " + (d / "x").string()), 0);
    EXPECT_FALSE(fs::exists(d / "x" / "train.csv"));
    EXPECT_EQ(run("simulate --allow-unstable --config " + (d / "cfg.json").string() + " --out " + (d / "x").string()), 0);
    EXPECT_TRUE(fs::exists(d / "x" / "train.csv"));
}

TEST(Cli, IdentifyLsAndGAtomReports) {
    const fs::path d = simulated("ident", 0.01);
    put(d / "id.json", json{{"period", 2},
                            {"train", "train.csv"},
                            {"validation", "validation.csv"},
                            {"truth", "truth_ir.csv"},
                            {"methods", {"LS", {{"method", "GAtom"}, {"grid", small_grid()}}}}});
    ASSERT_EQ(run("identify --config " + (d / "id.json").string() + " --out " + (d / "r1").string()), 0);
    ASSERT_EQ(run("identify --config " + (d / "id.json").string() + " --out " + (d / "r2").string()), 0);
    for (const char* f : {"report_LS.json", "ir_LS.csv", "eps_curve_LS.csv", "fit_LS.json", "report_GAtom.json",
                          "ir_GAtom.csv", "eps_curve_GAtom.csv", "fit_GAtom.json", "summary.json"})
        EXPECT_TRUE(fs::exists(d / "r1" / f)) << f;
    const json fit = json::parse(slurp(d / "r1" / "fit_LS.json"));
    EXPECT_TRUE(std::isfinite(fit.at("W").get<double>()));
    const json rep = json::parse(slurp(d / "r1" / "report_GAtom.json"));
    const auto ord = rep.at("orders").get<std::vector<int>>();
    ASSERT_EQ(ord.size(), 2u);
    EXPECT_EQ(ord[0], ord[1]);
    const json rep2 = json::parse(slurp(d / "r2" / "report_GAtom.json"));
    EXPECT_EQ(rep.at("gamma_star"), rep2.at("gamma_star"));
    EXPECT_EQ(count_lines(d / "r1" / "eps_curve_GAtom.csv"), 11u);
}

TEST(Cli, IdentifyPeriodMismatchFailsBeforeSolving) {
    const fs::path d = simulated("ident_bad", 0.1);
    put(d / "id.json", json{{"period", 3}, {"train", "train.csv"}, {"validation", "validation.csv"}, {"methods", {"LS"}}});
    EXPECT_NE(run("identify --config " + (d / "id.json").string() + " --out " + (d / "r").string()), 0);
    put(d / "id2.json", json{{"period", 4}, {"train", "train.csv"}, {"truth", "truth_ir.csv"}, {"methods", {"LS"}}});
    EXPECT_NE(run("identify --config " + (d / "id2.json").string() + " --out " + (d / "r2").string()), 0);
    EXPECT_FALSE(fs::exists(d / "r2" / "report_LS.json"));
}

TEST(Cli, MonteCarloOutputsConsistentAndReproducible) {
    const fs::path d = scratch("mc");
    put(d / "mc.json", json{{"n_systems", 3},
                            {"noise_sigma2", {0.1, 0.01}},
                            {"nP", 200},
                            {"methods", {"LS", {{"method", "GAtom"}, {"grid", small_grid()}}}}});
    ASSERT_EQ(run("montecarlo --config " + (d / "mc.json").string() + " --seed 4 --out " + (d / "a").string()), 0);
    ASSERT_EQ(run("montecarlo --config " + (d / "mc.json").string() + " --seed 4 --out " + (d / "b").string()), 0);
    EXPECT_EQ(slurp(d / "a" / "mc_raw.csv"), slurp(d / "b" / "mc_raw.csv"));
    EXPECT_EQ(slurp(d / "a" / "mc_stats.json"), slurp(d / "b" / "mc_stats.json"));
    EXPECT_EQ(count_lines(d / "a" / "mc_raw.csv"), 1u + 3 * 2 * 2);

    std::map<std::pair<std::string, double>, std::vector<double>> cells;
    std::ifstream is(d / "a" / "mc_raw.csv");
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) {
        std::istringstream ss(line);
        std::string id, m, s2, w;
        std::getline(ss, id, ',');
        std::getline(ss, m, ',');
        std::getline(ss, s2, ',');
        std::getline(ss, w);
        cells[{m, std::stod(s2)}].push_back(std::stod(w));
    }
    const json st = json::parse(slurp(d / "a" / "mc_stats.json"));
    ASSERT_EQ(st.at("summary").size(), 4u);
    for (const auto& s : st.at("summary")) {
        for (const char* k : {"mean", "median", "std"}) EXPECT_TRUE(s.contains(k));
        const auto& w = cells.at({s.at("method").get<std::string>(), s.at("sigma2").get<double>()});
        EXPECT_EQ(median_of(w), s.at("median").get<double>());
    }
    EXPECT_TRUE(fs::exists(d / "a" / "mc_config.json"));
}

TEST(Cli, AtomsInfoStandardGrid) {
    const fs::path d = scratch("atoms");
    ASSERT_EQ(run("atoms-info --out " + d.string()), 0);
    const json info = json::parse(slurp(d / "atoms_info.json"));
    EXPECT_EQ(info.at("stored"), 2601);
    EXPECT_EQ(info.at("real"), 102);
    EXPECT_EQ(info.at("complex_upper"), 2499);
    EXPECT_EQ(count_lines(d / "atoms.csv"), 2602u);
}

TEST(Cli, PendulumSmallConfig) {
    const fs::path d = scratch("pend");
    const json est{{"grid", small_grid()}};
    put(d / "p.json", json{{"seed", 2},
                           {"methods", {{{"method", "GAtom"}, {"grid", small_grid()}}}},
                           {"sweeps",
                            {{"points", 3}, {"beta1", {"Hank", "Atom"}}, {"gamma", {"GAtom"}}, {"estimator", est}}}});
    ASSERT_EQ(run("pendulum --config " + (d / "p.json").string() + " --out " + (d / "o").string()), 0);
    for (const char* f : {"pendulum_truth.json", "pendulum_data.csv", "pendulum_fit.json", "sweep_beta1_Hank.csv",
                          "sweep_beta1_Atom.csv", "sweep_gamma_GAtom.csv"})
        EXPECT_TRUE(fs::exists(d / "o" / f)) << f;
    EXPECT_EQ(count_lines(d / "o" / "pendulum_data.csv"), 501u);
    EXPECT_EQ(count_lines(d / "o" / "sweep_gamma_GAtom.csv"), 4u);
    const std::string hdr = slurp(d / "o" / "sweep_beta1_Atom.csv");
    EXPECT_EQ(hdr.substr(0, hdr.find('\n')), "beta1,order_tau1,order_tau2,order_tau3,order_tau4");
    const json truth = json::parse(slurp(d / "o" / "pendulum_truth.json"));
    EXPECT_EQ(truth.at("system").at("P"), 4);
}

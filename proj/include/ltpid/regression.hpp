#pragma once

#include "ltpid/atoms.hpp"
#include "ltpid/core.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>
#include <tuple>

namespace ltpid {

/// One input/output record; u(t), z(t) for t = 1..length.
struct Record {
    Vector u;
    Vector z;

    Eigen::Index length() const { return u.size(); }
};

/// Identification data over n periods plus an optional validation record.
struct IdentDataset {
    int P = 1;
    Record train;
    std::optional<Record> validation;

    IdentDataset() = default;
    IdentDataset(int period, Record tr, std::optional<Record> val = std::nullopt)
        : P(period), train(std::move(tr)), validation(std::move(val)) {
        validate();
    }

    int n() const { return static_cast<int>(train.length() / P); }
    int n_validation() const { return validation ? static_cast<int>(validation->length() / P) : 0; }

    void validate() const {
        if (P < 1) throw std::invalid_argument("IdentDataset: period must be >= 1");
        check(train, "training");
        if (validation) check(*validation, "validation");
    }

  private:
    void check(const Record& r, const char* what) const {
        if (r.u.size() != r.z.size())
            throw std::invalid_argument(std::string("IdentDataset: ") + what + " u and z lengths differ");
        if (r.u.size() == 0 || r.u.size() % P != 0)
            throw std::invalid_argument(std::string("IdentDataset: ") + what +
                                        " record length must be a positive multiple of P");
        if (!r.u.allFinite() || !r.z.allFinite())
            throw std::invalid_argument(std::string("IdentDataset: ") + what + " record has non-finite values");
    }
};

/// Regression block of tag time tau: rows k = 0..n-1 read output time
/// t = kP + tau; Phi(k, i-1) = u(t - i), zero for t - i <= 0.
struct TagRegression {
    int tau = 1;
    Matrix Phi;
    Vector z;
};

struct TagRegressions {
    std::vector<TagRegression> blocks;
    /// set when N exceeds the number of rows per tag
    bool underdetermined = false;

    std::size_t size() const { return blocks.size(); }
    const TagRegression& operator[](std::size_t k) const { return blocks[k]; }
    int N() const { return blocks.empty() ? 0 : static_cast<int>(blocks.front().Phi.cols()); }
    int P() const { return static_cast<int>(blocks.size()); }
};

inline TagRegressions build_tag_regressions(const Record& rec, int P, int N) {
    if (N < 1) throw std::invalid_argument("build_tag_regressions: N must be >= 1");
    if (P < 1 || rec.length() % P != 0 || rec.u.size() != rec.z.size())
        throw std::invalid_argument("build_tag_regressions: record length must be a multiple of P");
    const int n = static_cast<int>(rec.length() / P);
    TagRegressions out;
    out.underdetermined = N > n;
    out.blocks.reserve(std::size_t(P));
    for (int tau = 1; tau <= P; ++tau) {
        TagRegression r;
        r.tau = tau;
        r.Phi = Matrix::Zero(n, N);
        r.z.resize(n);
        for (int k = 0; k < n; ++k) {
            const long t = long(k) * P + tau;
            r.z(k)       = rec.z(t - 1);
            for (int i = 1; i <= N && t - i >= 1; ++i) r.Phi(k, i - 1) = rec.u(t - i - 1);
        }
        out.blocks.push_back(std::move(r));
    }
    return out;
}

inline TagRegressions build_tag_regressions(const IdentDataset& data, int N) {
    return build_tag_regressions(data.train, data.P, N);
}

/// sum_tau || z_tau - Phi_tau g^tau ||^2
inline double ls_objective(const ImpulseResponseMatrix& g, const TagRegressions& regs) {
    if (g.period() != regs.P() || g.length() != regs.N())
        throw std::invalid_argument("ls_objective: dimension mismatch");
    double v = 0.0;
    for (const auto& b : regs.blocks) v += (b.z - b.Phi * g.values.col(b.tau - 1)).squaredNorm();
    return v;
}

/// Atom-space regressors Phi_tau D_alpha and Phi_tau D_beta per tag.
struct AtomRegression {
    std::vector<Matrix> phi_alpha;
    std::vector<Matrix> phi_beta;
    std::vector<Vector> z;

    Vector residual(const CoefficientMatrix& c, int tau) const {
        const auto s = std::size_t(tau - 1);
        return z[s] - phi_alpha[s] * c.alpha.col(tau - 1) - phi_beta[s] * c.beta.col(tau - 1);
    }
    double objective(const CoefficientMatrix& c) const {
        double v = 0.0;
        for (int tau = 1; tau <= int(z.size()); ++tau) v += residual(c, tau).squaredNorm();
        return v;
    }
};

inline AtomRegression atom_regressors(const TagRegressions& regs, const AtomDictionary& dict) {
    if (regs.N() != dict.N()) throw std::invalid_argument("atom_regressors: truncation length mismatch");
    AtomRegression ar;
    for (const auto& b : regs.blocks) {
        ar.phi_alpha.push_back(b.Phi * dict.d_alpha());
        ar.phi_beta.push_back(b.Phi * dict.d_beta());
        ar.z.push_back(b.z);
    }
    return ar;
}

// CSV: header "t,u,z", one row per sample in time order.

inline void write_record_csv(std::ostream& os, const Record& rec) {
    os << "t,u,z\n" << std::setprecision(17);
    for (Eigen::Index k = 0; k < rec.length(); ++k) os << (k + 1) << ',' << rec.u(k) << ',' << rec.z(k) << '\n';
}

inline void write_record_csv(const std::string& path, const Record& rec) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write '" + path + "'");
    write_record_csv(os, rec);
}

inline Record read_record_csv(std::istream& is, int P = 1) {
    std::string line;
    if (!std::getline(is, line)) throw Error("dataset CSV: empty input");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "t,u,z") throw Error("dataset CSV: expected header 't,u,z', got '" + line + "'");
    std::vector<double> u, z;
    long expected_t = 1;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string ft, fu, fz;
        if (!std::getline(ss, ft, ',') || !std::getline(ss, fu, ',') || !std::getline(ss, fz))
            throw Error("dataset CSV: malformed row '" + line + "'");
        try {
            if (std::stol(ft) != expected_t) throw Error("dataset CSV: rows must be in time order starting at t=1");
            u.push_back(std::stod(fu));
            z.push_back(std::stod(fz));
        } catch (const std::logic_error&) {
            throw Error("dataset CSV: malformed row '" + line + "'");
        }
        ++expected_t;
    }
    if (u.empty() || u.size() % std::size_t(P) != 0)
        throw Error("dataset CSV: " + std::to_string(u.size()) + " samples is not a positive multiple of P=" +
                    std::to_string(P));
    Record rec;
    rec.u = Eigen::Map<Vector>(u.data(), Eigen::Index(u.size()));
    rec.z = Eigen::Map<Vector>(z.data(), Eigen::Index(z.size()));
    return rec;
}

inline Record read_record_csv(const std::string& path, int P = 1) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot read '" + path + "'");
    return read_record_csv(is, P);
}

/// Impulse responses as "i,tau,g" rows.
inline void write_impulse_response_csv(std::ostream& os, const ImpulseResponseMatrix& g) {
    os << "i,tau,g\n" << std::setprecision(17);
    for (int tau = 1; tau <= g.period(); ++tau)
        for (int i = 1; i <= g.length(); ++i) os << i << ',' << tau << ',' << g.at(i, tau) << '\n';
}

inline void write_impulse_response_csv(const std::string& path, const ImpulseResponseMatrix& g) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write '" + path + "'");
    write_impulse_response_csv(os, g);
}

inline ImpulseResponseMatrix read_impulse_response_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw Error("impulse-response CSV: empty input");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "i,tau,g") throw Error("impulse-response CSV: expected header 'i,tau,g', got '" + line + "'");
    std::vector<std::tuple<int, int, double>> rows;
    int N = 0, P = 0;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string fi, ft, fg;
        if (!std::getline(ss, fi, ',') || !std::getline(ss, ft, ',') || !std::getline(ss, fg))
            throw Error("impulse-response CSV: malformed row '" + line + "'");
        try {
            rows.emplace_back(std::stoi(fi), std::stoi(ft), std::stod(fg));
        } catch (const std::logic_error&) {
            throw Error("impulse-response CSV: malformed row '" + line + "'");
        }
        const auto& [i, tau, g] = rows.back();
        if (i < 1 || tau < 1) throw Error("impulse-response CSV: indices must be >= 1");
        N = std::max(N, i);
        P = std::max(P, tau);
    }
    if (rows.size() != std::size_t(N) * std::size_t(P)) throw Error("impulse-response CSV: incomplete table");
    ImpulseResponseMatrix g = ImpulseResponseMatrix::zeros(N, P);
    for (const auto& [i, tau, v] : rows) g.values(i - 1, tau - 1) = v;
    return g;
}

inline ImpulseResponseMatrix read_impulse_response_csv(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot read '" + path + "'");
    return read_impulse_response_csv(is);
}

}  // namespace ltpid

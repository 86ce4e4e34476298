// Pendulum with periodically varying length: discretize, simulate a noisy
// experiment and identify it with the grouped atomic estimator.

#include "ltpid/experiments.hpp"

#include <iostream>

using namespace ltpid;

int main(int argc, char** argv) {
    const std::uint64_t seed = argc > 1 ? std::stoull(argv[1]) : 1;
    const PendulumSpec spec;
    const PendulumCase pc = pendulum_dataset(spec, seed);
    for (const auto& w : pc.warnings) std::cerr << "warning: " << w << '\n';

    const Eigen::VectorXcd mult = Eigen::EigenSolver<Matrix>(monodromy(pc.truth, 1)).eigenvalues();
    std::cout << std::setprecision(10) << "Ts = " << spec.Ts() << " s, P = " << spec.P << "\n"
              << "monodromy spectral radius " << pc.stability.spectral_radius << "\nFloquet multipliers";
    for (Eigen::Index k = 0; k < mult.size(); ++k) std::cout << ' ' << mult(k);
    std::cout << "\n\n";

    EstimatorSpec est;
    est.method     = Method::GAtom;
    const auto rep = identify(pc.data, est);
    const auto fit = fit_metric(true_impulse_response(pc.truth, kFitHorizon), rep.g, "GAtom", rep.gamma_star);
    std::cout << std::setprecision(6) << "gamma* = " << *rep.gamma_star << "\nW = " << fit.W << "\norders";
    for (int o : rep.orders) std::cout << ' ' << o;
    std::cout << '\n';
}

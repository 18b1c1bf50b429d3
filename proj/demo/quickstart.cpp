// Sharp estimate and a Monte Carlo check for the skew OU bridge leaving
// the half-plane {z0 < 1}, in both first-order forms.

#include "sharp_bridge/hj.hpp"
#include "sharp_bridge/mc.hpp"

#include <fmt/format.h>

#include <cmath>

namespace sb = sharp_bridge;

int main() {
    sb::Matrix m(2, 2);
    m << 0, 1, -1, 0;
    sb::Vector v(2), x(2), y(2);
    v << 1, 0;
    x << 0, 0;
    y << 0, 1;
    sb::BridgeProblem problem{sb::make_ou(m), sb::HalfSpaceDomain(v, 1.0), x, y, 0.0, 0.4};

    for (auto form : {sb::FirstOrderForm::kOriginCentered, sb::FirstOrderForm::kBridgeCentered}) {
        sb::SharpOptions opts;
        opts.form = form;
        opts.t_values = {problem.t};
        const auto est = sb::sharp_estimate(problem, opts);
        fmt::print("{:>16}: ell = {:.6f}  w = {:+.6f}  c = {:.6f}  q_hat(t={}) = {:.4e}  t* = {:.4f}\n",
                   sb::to_string(form), est.ell, est.w, est.c, problem.t, est.q_hat(problem.t),
                   est.characteristic.t_star);
    }

    sb::McConfig mc;
    mc.paths = 200000;
    mc.seed = 3;
    const auto p = sb::exit_probability(problem, mc);
    fmt::print("{:>16}: p_hat = {:.4e} +/- {:.1e}  c_hat = {:.4f}\n", "monte carlo", p.p_hat, p.half_width,
               p.p_hat * std::exp(2.0 / problem.t));
}

#pragma once

// The command layer behind the CLI: predict, simulate, validate, sweep and
// geodesic, each producing CSV tables in the configured output directory.

#include "sharp_bridge/config.hpp"
#include "sharp_bridge/csv.hpp"
#include "sharp_bridge/errors.hpp"
#include "sharp_bridge/expansion.hpp"
#include "sharp_bridge/geometry.hpp"
#include "sharp_bridge/hj.hpp"
#include "sharp_bridge/mc.hpp"
#include "sharp_bridge/ou.hpp"

#include <cmath>
#include <exception>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <vector>

namespace sharp_bridge {

enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitValidation = 3, kExitNumeric = 4 };

/// Exit status for an exception escaping a command.
inline int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
    if (dynamic_cast<const RsrError*>(&e)) return kExitValidation;
    return kExitNumeric;
}

struct CommandResult {
    int exit_code = kExitOk;
    std::vector<std::filesystem::path> files;
    std::vector<std::string> messages;
};

inline SharpOptions sharp_options(const RunConfig& cfg) {
    SharpOptions opts;
    opts.route = cfg.problem.route;
    opts.form = cfg.model.first_order_form;
    opts.conditioned = cfg.mc.mode == McMode::kBridge;
    opts.delta_floor = cfg.mc.delta;
    opts.t_values = cfg.problem.times();
    return opts;
}

inline CsvTable predict_table(const RunConfig& cfg) {
    const auto problem = build_problem(cfg);
    const auto est = sharp_estimate(problem, sharp_options(cfg));
    CsvTable table({"t", "ell", "w", "c", "q_hat", "t_star", "rsr_ok"});
    for (const auto& p : est.predictions) {
        table.add_row({p.t, est.ell, est.w, est.c, p.q_hat, est.characteristic.t_star, est.diagnostics.rsr_ok});
    }
    return table;
}

inline std::vector<McEstimate> simulate_runs(const RunConfig& cfg) {
    std::vector<McEstimate> runs;
    for (double t : cfg.problem.times()) runs.push_back(exit_probability(build_problem(cfg, t), cfg.mc));
    return runs;
}

inline CsvTable mc_table(const std::vector<McEstimate>& runs) {
    CsvTable table({"t", "p_hat", "ci_half_width", "n_paths", "delta", "corrected"});
    for (const auto& r : runs) table.add_row({r.t, r.p_hat, r.half_width, r.n_paths, r.delta, r.corrected});
    return table;
}

struct SweepTables {
    CsvTable sweep{{"t", "ell", "c", "q_hat", "p_hat", "ci_half_width", "n_paths", "c_hat", "c_half_width",
                    "log_gap", "log_gap_tolerance", "consistent"}};
    CsvTable plot{{"inv_t", "log_q_hat", "log_p_hat"}};
};

/// Predictions joined with Monte Carlo estimates over the t-grid.
/// log_gap = log q̂ − log p̂; it is consistent when within 3 CI half-widths
/// of log p̂ (half-width/p̂).
inline SweepTables sweep_tables(const RunConfig& cfg) {
    if (cfg.problem.t_grid.empty()) throw ConfigError("problem.t_grid: required by sweep");
    auto opts = sharp_options(cfg);
    const auto est = sharp_estimate(build_problem(cfg), opts);
    SweepTables out;
    for (double t : cfg.problem.t_grid) {
        const auto r = exit_probability(build_problem(cfg, t), cfg.mc);
        const double q = est.q_hat(t);
        const double scale = std::exp(est.ell / t);
        const double log_p = std::log(r.p_hat);
        const double gap = std::log(q) - log_p;
        const double tol = r.p_hat > 0.0 ? 3.0 * r.half_width / r.p_hat : std::numeric_limits<double>::infinity();
        out.sweep.add_row({t, est.ell, est.c, q, r.p_hat, r.half_width, r.n_paths, r.p_hat * scale,
                           r.half_width * scale, gap, tol, std::abs(gap) <= tol});
        out.plot.add_row({1.0 / t, std::log(q), log_p});
    }
    return out;
}

inline CsvTable geodesic_table(const RunConfig& cfg) {
    const auto model = build_model(cfg.model);
    const auto geo = geodesic_bvp(model, cfg.problem.x, cfg.problem.y);
    const double h = van_vleck_from_geodesic(model, cfg.problem.x, geo).value;
    const double a = work_integral_A(model, geo);
    std::vector<std::string> header{"i", "t"};
    for (int j = 0; j < model.dim; ++j) header.push_back("z" + std::to_string(j));
    for (const char* c : {"distance", "H", "A"}) header.emplace_back(c);
    CsvTable table(header);
    const auto n = geo.nodes.size() - 1;
    for (std::size_t i = 0; i <= n; ++i) {
        std::vector<CsvCell> row{static_cast<std::uint64_t>(i), static_cast<double>(i) / static_cast<double>(n)};
        for (int j = 0; j < model.dim; ++j) row.emplace_back(geo.nodes[i](j));
        row.emplace_back(geo.length);
        row.emplace_back(h);
        row.emplace_back(a);
        table.add_row(std::move(row));
    }
    return table;
}

struct ValidationCheck {
    std::string name;
    double measured = 0.0;
    double tolerance = 0.0;
    /// Pass when measured ≤ tolerance, or measured > tolerance for detectors.
    bool detector = false;

    bool passed() const { return std::isfinite(measured) && (detector ? measured > tolerance : measured <= tolerance); }
};

/// The built-in oracle battery. The Monte Carlo check uses `mc` for paths,
/// seed and workers.
inline std::vector<ValidationCheck> validation_battery(const McConfig& mc) {
    std::vector<ValidationCheck> checks;
    auto run = [&checks](const std::string& name, double tol, const std::function<double()>& f, bool detector = false) {
        double measured;
        try {
            measured = f();
        } catch (const Error&) {
            measured = std::numeric_limits<double>::quiet_NaN();
        }
        checks.push_back({name, measured, tol, detector});
    };
    auto v2 = [](double a, double b) {
        Vector v(2);
        v << a, b;
        return v;
    };
    Matrix skew(2, 2);
    skew << 0, 1, -1, 0;
    const HalfSpaceDomain half(v2(1, 0), 1.0);
    const Matrix id2 = Matrix::Identity(2, 2);

    run("ou_skew_characteristic_tau", 1e-6, [&] {
        const auto model = make_ou(skew);
        const Vector y = v2(0, 1);
        const auto ch = characteristic_solve(model, half, make_expansion(model, y), closed_value_field(half, id2, y),
                                             v2(0, 0), 0.0);
        return std::abs(ch.t_star - 0.5);
    });
    run("ou_skew_characteristic_eta", 1e-6, [&] {
        const auto model = make_ou(skew);
        const Vector y = v2(0, 1);
        const auto ch = characteristic_solve(model, half, make_expansion(model, y), closed_value_field(half, id2, y),
                                             v2(0, 0), 0.0);
        return (ch.exit_point - v2(1, 0.5)).cwiseAbs().maxCoeff();
    });
    run("ou_w_quadrature_vs_closed_form", 1e-6, [&] {
        const HalfSpaceDomain dom(v2(0.6, 0.8), 1.0);
        Matrix m1(2, 2), m2(2, 2);
        m1 << 0.3, 1.1, -0.4, 0.2;
        m2 << -0.2, 0.0, 0.7, 0.1;
        double worst = 0.0;
        for (const Matrix& m : {skew, m1, m2}) {
            const auto model = make_ou(m);
            const Vector x = v2(-0.3, 0.1), y = v2(0.4, -0.6);
            const auto u = closed_value_field(dom, id2, y);
            for (auto form : {FirstOrderForm::kOriginCentered, FirstOrderForm::kBridgeCentered}) {
                const auto e = make_expansion(model, y, form);
                const double w = w_integral(model, e, u, characteristic_solve(model, dom, e, u, x, 0.0));
                worst = std::max(worst, std::abs(w - ou_halfspace_solution(m, dom, x, y, 0.0, form).w));
            }
        }
        return worst;
    });
    run("hj_residual_brownian_bridge", 1e-6, [&] {
        const auto model = make_brownian(2);
        const Vector y = v2(0, 1);
        const auto u = closed_value_field(half, id2, y);
        return pde_residuals(model, u.value, {}, make_expansion(model, y), {{v2(0, 0), 0.1}, {v2(0.5, -0.3), 0.4}})
            .hj_residual;
    });
    run("transport_residual_ou_skew", 1e-4, [&] {
        const auto model = make_ou(skew);
        const Vector y = v2(0, 1);
        const auto u = closed_value_field(half, id2, y);
        const auto e = make_expansion(model, y);
        return pde_residuals(model, u.value, w_field(model, half, e, u), e, {{v2(0, 0), 0.1}, {v2(0.3, 0.4), 0.3}})
            .transport_residual;
    });
    run("hj_perturbation_detected", 1e-2, [&] {
        const auto model = make_brownian(2);
        const Vector y = v2(0, 1);
        const auto u = closed_value_field(half, id2, y);
        const SpaceTimeScalar bad = [&](const Vector& z, double s) { return 1.1 * u(z, s); };
        return pde_residuals(model, bad, {}, make_expansion(model, y), {{v2(0, 0), 0.1}}).hj_residual;
    }, true);
    run("geodesic_round_trip", 1e-5, [&] {
        const auto model = make_scalar_sigma(Expression::parse("exp(z)"));
        const Vector x = Vector::Zero(1), y = Vector::Ones(1);
        return (exp_map(model, x, geodesic_bvp(model, x, y).initial_velocity).endpoint - y).norm();
    });
    run("geodesic_distance_variable_sigma", 1e-4, [&] {
        const auto model = make_scalar_sigma(Expression::parse("exp(z)"));
        return std::abs(geodesic_bvp(model, Vector::Zero(1), Vector::Ones(1)).length - (1.0 - std::exp(-1.0)));
    });
    run("van_vleck_constant_metric", 1e-8, [&] { return std::abs(van_vleck_H(make_brownian(2), v2(0, 0), v2(1, -2)) - 1.0); });
    run("work_integral_gradient_case", 1e-6, [&] {
        const auto model = make_ou(id2);
        return std::abs(work_integral_A(model, geodesic_bvp(model, v2(0, 0), v2(1, 1))) - 1.0);
    });
    run("variational_vs_closed_u", 1e-4, [&] {
        const auto model = make_brownian(2);
        return std::abs(u_variational(model, half, v2(0, 1), v2(0, 0), 0.0).value - 2.0);
    });
    run("gram_matrix_series_order_deficit", 0.0, [&] {
        Matrix m(2, 2);
        m << 0.3, 0.8, -0.5, 0.1;
        const double e2 = (gram_matrix(m, 1e-2) - gram_matrix_series(m, 1e-2)).cwiseAbs().maxCoeff();
        const double e4 = (gram_matrix(m, 1e-4) - gram_matrix_series(m, 1e-4)).cwiseAbs().maxCoeff();
        return std::max(0.0, 2.7 - std::log(e2 / e4) / std::log(100.0));
    });
    run("brownian_prediction_log_error", 1e-12, [&] {
        BridgeProblem p{make_brownian(1), HalfSpaceDomain(Vector::Ones(1), 1.0), Vector::Zero(1), Vector::Zero(1),
                        0.0, 0.5};
        SharpOptions opts;
        opts.compute_residuals = false;
        const auto est = sharp_estimate(p, opts);
        return std::abs(std::log(est.q_hat(0.5)) - (-4.0)) / 4.0;
    });
    run("brownian_mc_ci_units", 3.0, [&] {
        BridgeProblem p{make_brownian(1), HalfSpaceDomain(Vector::Ones(1), 1.0), Vector::Zero(1), Vector::Zero(1),
                        0.0, 0.5};
        McConfig c = mc;
        c.mode = McMode::kBridge;
        c.scheme = McScheme::kAuto;
        c.crossing_correction = true;
        const auto est = exit_probability(p, c);
        return std::abs(est.p_hat - std::exp(-4.0)) / est.half_width;
    });
    return checks;
}

inline CsvTable validation_table(const std::vector<ValidationCheck>& checks) {
    CsvTable table({"check", "measured", "tolerance", "passed"});
    for (const auto& c : checks) table.add_row({c.name, c.measured, c.tolerance, c.passed()});
    return table;
}

/// Runs a command and writes its CSV files under `out_dir`.
inline CommandResult run_command(const std::string& name, const RunConfig& cfg, const std::filesystem::path& out_dir) {
    CommandResult res;
    auto emit = [&](const CsvTable& t, const char* file) {
        const auto path = out_dir / file;
        t.write(path);
        res.files.push_back(path);
    };
    if (name == "predict") {
        emit(predict_table(cfg), "sharp_estimate.csv");
    } else if (name == "simulate") {
        const auto runs = simulate_runs(cfg);
        for (const auto& r : runs) {
            if (r.advisories > 0) {
                res.messages.push_back("t = " + fmt::format("{}", r.t) + ": " + std::to_string(r.advisories) +
                                       " paths stopped early (|drift|*dt > 0.5)");
            }
            if (!r.reachable) {
                res.messages.push_back("t = " + fmt::format("{}", r.t) +
                                       ": p_hat below 10/n, beyond reach without variance reduction");
            }
        }
        emit(mc_table(runs), "mc.csv");
    } else if (name == "validate") {
        const auto checks = validation_battery(cfg.mc);
        emit(validation_table(checks), "validate_report.csv");
        for (const auto& c : checks) {
            if (!c.passed()) {
                res.exit_code = kExitValidation;
                res.messages.push_back("check failed: " + c.name + " (measured " + fmt::format("{:.3g}", c.measured) +
                                       ", tolerance " + fmt::format("{:.3g}", c.tolerance) + ")");
            }
        }
    } else if (name == "sweep") {
        const auto tables = sweep_tables(cfg);
        emit(tables.sweep, "sweep.csv");
        emit(tables.plot, "sweep_plotdata.csv");
    } else if (name == "geodesic") {
        emit(geodesic_table(cfg), "geodesic.csv");
    } else {
        throw ConfigError("unknown command \"" + name + "\"");
    }
    return res;
}

}  // namespace sharp_bridge

#pragma once

// Monte Carlo for the time-changed bridge η_v = X_{tv}: exact Gaussian
// transitions for linear models, Euler-Maruyama otherwise, exit detection
// with a per-step Brownian-bridge crossing correction, and extrapolation of
// the rate and prefactor from a t-grid.

#include "sharp_bridge/errors.hpp"
#include "sharp_bridge/expansion.hpp"
#include "sharp_bridge/linalg.hpp"
#include "sharp_bridge/model.hpp"
#include "sharp_bridge/ou.hpp"
#include "sharp_bridge/rng.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace sharp_bridge {

enum class McMode { kBridge, kFree };
enum class McScheme { kAuto, kExact, kEuler };

inline const char* to_string(McMode m) { return m == McMode::kBridge ? "bridge" : "free"; }
inline const char* to_string(McScheme s) {
    switch (s) {
        case McScheme::kAuto: return "auto";
        case McScheme::kExact: return "exact";
        default: return "euler";
    }
}

struct McConfig {
    std::uint64_t paths = 100000;
    /// Steps per unit of time-changed time.
    int steps = 64;
    double delta = 0.05;
    std::uint64_t seed = 1;
    int workers = 1;
    bool crossing_correction = true;
    McMode mode = McMode::kBridge;
    McScheme scheme = McScheme::kAuto;

    void validate() const {
        if (paths < 1) throw ConfigError("mc.paths must be at least 1");
        if (steps < 4) throw ConfigError("mc.steps must be at least 4");
        if (!(delta >= 0.0 && delta < 1.0)) throw ConfigError("mc.delta must lie in [0, 1)");
        if (workers < 1) throw ConfigError("mc.workers must be at least 1");
    }
};

struct McEstimate {
    double t = 0.0;
    double p_hat = 0.0;
    /// 95% binomial half-width: normal approximation, Wilson below 30 exits.
    double half_width = 0.0;
    /// Sample standard error of the per-path contributions.
    double std_error = 0.0;
    std::uint64_t n_paths = 0;
    double delta = 0.0;
    double truncated_at = 1.0;
    bool corrected = false;
    std::string ci_method;
    /// Paths that hit ∂D at a grid time.
    std::uint64_t exits = 0;
    /// Paths stopped early because |drift|·Δ exceeded 0.5.
    std::uint64_t advisories = 0;
    /// p̂ ≥ 10/n; below that the estimate is reported but not trusted.
    bool reachable = false;
};

struct SampledPath {
    std::vector<double> times;
    std::vector<Vector> states;
    bool exited = false;
    bool truncated = false;
};

/// Uniform grid from s to 1 − δ with spacing at most 1/steps.
inline std::vector<double> time_grid(double s, double delta, int steps) {
    const double end = 1.0 - delta;
    if (!(end > s)) throw ConfigError("empty simulation window: 1 - delta must exceed s");
    const auto n = static_cast<int>(std::max(1.0, std::ceil((end - s) * steps - 1e-9)));
    std::vector<double> v(static_cast<std::size_t>(n) + 1);
    for (int i = 0; i <= n; ++i) v[static_cast<std::size_t>(i)] = s + (end - s) * i / n;
    v.back() = end;
    return v;
}

inline double normal_half_width(double p, double n) { return 1.96 * std::sqrt(std::max(0.0, p * (1.0 - p)) / n); }

inline double wilson_half_width(double p, double n) {
    constexpr double z = 1.96;
    return z / (1.0 + z * z / n) * std::sqrt(std::max(0.0, p * (1.0 - p)) / n + z * z / (4.0 * n * n));
}

namespace detail {

/// One Gaussian transition z ↦ A z + c + L N per grid step.
struct LinearStep {
    std::vector<double> a, c, l;
};

class PathEngine {
public:
    PathEngine(const BridgeProblem& problem, const McConfig& config)
        : problem_(problem), config_(config), d_(problem.model.dim),
          grid_(time_grid(problem.s, config.delta, config.steps)) {
        const bool linear = problem.model.is_linear();
        exact_ = config.scheme == McScheme::kExact || (config.scheme == McScheme::kAuto && linear);
        if (exact_ && !linear) throw ConfigError("exact scheme requires a linear (OU or Brownian) model");
        if (exact_) build_linear_steps();
        else if (linear && config.mode == McMode::kBridge) build_scores();
        else if (config.mode == McMode::kBridge) {
            ExpansionOptions opts;
            opts.geodesic.nodes = 64;
            expansion_ = make_expansion(problem.model, problem.y, FirstOrderForm::kOriginCentered, opts);
        }
        const Vector& vb = problem.domain.normal;
        if (problem.model.constant_dispersion) q_const_ = vb.dot(diffusion_matrix(problem.model, problem.x) * vb);
    }

    const std::vector<double>& grid() const { return grid_; }

    /// Contribution of one path to the estimator (1 on exit, 1 − survival
    /// weight otherwise), and the path itself when `record` is given.
    double run(std::uint64_t index, bool& exited, bool& truncated, SampledPath* record = nullptr) const {
        const auto& dom = problem_.domain;
        const double t = problem_.t;
        const GaussianStream rng(config_.seed, index);
        std::vector<double> z(problem_.x.data(), problem_.x.data() + d_), next(static_cast<std::size_t>(d_)),
            noise(static_cast<std::size_t>(d_));
        exited = false;
        truncated = false;
        if (record) {
            record->times.assign(1, grid_[0]);
            record->states.assign(1, problem_.x);
        }
        double dist = dom.boundary_distance(problem_.x);
        if (dist <= 0.0) {
            exited = true;
            if (record) record->exited = true;
            return 1.0;
        }
        double log_survival = 0.0;
        for (std::size_t n = 0; n + 1 < grid_.size(); ++n) {
            const double dv = grid_[n + 1] - grid_[n];
            rng.fill(static_cast<std::uint32_t>(n), noise.data(), d_);
            double q = q_const_;
            if (exact_) {
                const auto& st = steps_[n];
                for (int i = 0; i < d_; ++i) {
                    double acc = st.c[static_cast<std::size_t>(i)];
                    for (int j = 0; j < d_; ++j) {
                        acc += st.a[static_cast<std::size_t>(i * d_ + j)] * z[static_cast<std::size_t>(j)];
                        acc += st.l[static_cast<std::size_t>(i * d_ + j)] * noise[static_cast<std::size_t>(j)];
                    }
                    next[static_cast<std::size_t>(i)] = acc;
                }
            } else {
                const Vector zv = Eigen::Map<const Vector>(z.data(), d_);
                const Vector drift = euler_drift(zv, grid_[n]);
                if (drift.norm() * dv > 0.5) {
                    truncated = true;
                    break;
                }
                const Matrix sigma = problem_.model.dispersion_at(zv);
                const Vector nz = Eigen::Map<const Vector>(noise.data(), d_);
                const Vector out = zv + drift * dv + std::sqrt(t * dv) * (sigma * nz);
                for (int i = 0; i < d_; ++i) next[static_cast<std::size_t>(i)] = out(i);
                if (!problem_.model.constant_dispersion) {
                    const Matrix a = sigma * sigma.transpose();
                    q = dom.normal.dot(a * dom.normal);
                }
            }
            double nd = dom.level;
            for (int i = 0; i < d_; ++i) nd -= dom.normal(i) * next[static_cast<std::size_t>(i)];
            std::swap(z, next);
            if (record) {
                record->times.push_back(grid_[n + 1]);
                record->states.push_back(Eigen::Map<const Vector>(z.data(), d_));
            }
            if (nd <= 0.0) {
                exited = true;
                break;
            }
            if (config_.crossing_correction) {
                const double p = std::exp(-2.0 * dist * nd / (t * dv * q));
                log_survival += std::log1p(-p);
            }
            dist = nd;
        }
        if (record) {
            record->exited = exited;
            record->truncated = truncated;
        }
        if (exited) return 1.0;
        return config_.crossing_correction ? -std::expm1(log_survival) : 0.0;
    }

private:
    Vector euler_drift(const Vector& z, double v) const {
        const double t = problem_.t;
        const auto& model = problem_.model;
        if (config_.mode == McMode::kFree) return t * model.drift_at(z);
        if (model.is_linear()) {
            const auto it = std::lower_bound(grid_.begin(), grid_.end(), v);
            const auto& sc = scores_[static_cast<std::size_t>(it - grid_.begin())];
            return t * (*model.linear_drift * z + sc.offset - sc.gain * z);
        }
        return expansion_.b_tilde(z, v) + t * expansion_.b_tilde_1(z, v);
    }

    /// ∇log p(t(1−v), z, y) = offset − gain·z at each grid time but the last.
    void build_scores() {
        const Matrix& m = *problem_.model.linear_drift;
        for (std::size_t n = 0; n + 1 < grid_.size(); ++n) {
            const double tau = problem_.t * (1.0 - grid_[n]);
            const Matrix e = matrix_exponential(m * tau);
            const Matrix g = gram_matrix(m, tau).ldlt().solve(e).transpose();
            scores_.push_back({g * problem_.y, g * e});
        }
    }

    void build_linear_steps() {
        const Matrix m = *problem_.model.linear_drift;
        const double t = problem_.t;
        const auto d = static_cast<Eigen::Index>(d_);
        const Matrix id = Matrix::Identity(d, d);
        const Vector& y = problem_.y;
        for (std::size_t n = 0; n + 1 < grid_.size(); ++n) {
            const double h = t * (grid_[n + 1] - grid_[n]);
            const Matrix e_step = matrix_exponential(m * h);
            const Matrix s_step = gram_matrix(m, h);
            Matrix a, cov;
            Vector c;
            if (config_.mode == McMode::kFree) {
                a = e_step;
                c = Vector::Zero(d);
                cov = s_step;
            } else {
                // Condition the one-step Gaussian on X_t = y.
                const double rem = t * (1.0 - grid_[n + 1]);
                const Matrix e_rem = matrix_exponential(m * rem);
                const Matrix s_total = gram_matrix(m, t * (1.0 - grid_[n]));
                const Matrix gain = s_total.ldlt().solve(e_rem * s_step).transpose();
                a = (id - gain * e_rem) * e_step;
                c = gain * y;
                cov = symmetrized(s_step - gain * e_rem * s_step);
            }
            const Matrix l = psd_factor(cov);
            LinearStep st;
            for (Eigen::Index i = 0; i < d; ++i) {
                st.c.push_back(c(i));
                for (Eigen::Index j = 0; j < d; ++j) {
                    st.a.push_back(a(i, j));
                    st.l.push_back(l(i, j));
                }
            }
            steps_.push_back(std::move(st));
        }
    }

    const BridgeProblem& problem_;
    McConfig config_;
    int d_;
    std::vector<double> grid_;
    bool exact_ = false;
    std::vector<LinearStep> steps_;
    struct Score {
        Vector offset;
        Matrix gain;
    };
    std::vector<Score> scores_;
    DriftExpansion expansion_;
    double q_const_ = 1.0;
};

struct BlockTally {
    double sum = 0.0;
    double sum_sq = 0.0;
    std::uint64_t exits = 0;
    std::uint64_t advisories = 0;
};

inline constexpr std::uint64_t kBlockSize = 4096;

}  // namespace detail

/// One path of the time-changed process on the step grid [s, 1 − δ].
/// Stops at the first grid time outside D.
inline SampledPath sample_bridge_path(const BridgeProblem& problem, const McConfig& config, std::uint64_t index) {
    problem.validate();
    config.validate();
    detail::PathEngine engine(problem, config);
    SampledPath path;
    bool exited = false, truncated = false;
    engine.run(index, exited, truncated, &path);
    return path;
}

/// P(exit before 1 − δ) for the time-changed process at horizon problem.t.
/// Paths are grouped in fixed blocks whose tallies are summed in block
/// order, so the result does not depend on the number of workers.
inline McEstimate exit_probability(const BridgeProblem& problem, const McConfig& config) {
    if (config.mode == McMode::kBridge) problem.validate();
    else if (problem.domain.boundary_distance(problem.x) < 0.0) throw DomainError("start outside domain");
    config.validate();
    const detail::PathEngine engine(problem, config);

    const std::uint64_t n_blocks = (config.paths + detail::kBlockSize - 1) / detail::kBlockSize;
    std::vector<detail::BlockTally> tallies(n_blocks);
    std::atomic<std::uint64_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr error;
    auto worker = [&] {
        try {
            for (std::uint64_t b = next++; b < n_blocks; b = next++) {
                detail::BlockTally tally;
                const std::uint64_t begin = b * detail::kBlockSize;
                const std::uint64_t end = std::min(config.paths, begin + detail::kBlockSize);
                for (std::uint64_t i = begin; i < end; ++i) {
                    bool exited = false, truncated = false;
                    const double c = engine.run(i, exited, truncated);
                    tally.sum += c;
                    tally.sum_sq += c * c;
                    tally.exits += exited ? 1 : 0;
                    tally.advisories += truncated ? 1 : 0;
                }
                tallies[b] = tally;
            }
        } catch (...) {
            std::lock_guard<std::mutex> lock(error_mutex);
            if (!error) error = std::current_exception();
            next = n_blocks;
        }
    };
    const auto n_workers = static_cast<std::uint64_t>(config.workers);
    if (n_workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        for (std::uint64_t w = 0; w < std::min(n_workers, n_blocks); ++w) threads.emplace_back(worker);
        for (auto& th : threads) th.join();
    }
    if (error) std::rethrow_exception(error);

    detail::BlockTally total;
    for (const auto& tl : tallies) {
        total.sum += tl.sum;
        total.sum_sq += tl.sum_sq;
        total.exits += tl.exits;
        total.advisories += tl.advisories;
    }
    McEstimate est;
    const auto n = static_cast<double>(config.paths);
    est.t = problem.t;
    est.n_paths = config.paths;
    est.delta = config.delta;
    est.truncated_at = 1.0 - config.delta;
    est.corrected = config.crossing_correction;
    est.exits = total.exits;
    est.advisories = total.advisories;
    est.p_hat = total.sum / n;
    const double var = n > 1 ? std::max(0.0, (total.sum_sq - n * est.p_hat * est.p_hat) / (n - 1.0)) : 0.0;
    est.std_error = std::sqrt(var / n);
    if (n * est.p_hat < 30.0) {
        est.half_width = wilson_half_width(est.p_hat, n);
        est.ci_method = "wilson";
    } else {
        est.half_width = normal_half_width(est.p_hat, n);
        est.ci_method = "normal";
    }
    est.reachable = est.p_hat >= 10.0 / n;
    return est;
}

struct ExtrapolationRow {
    double t = 0.0;
    double p_hat = 0.0;
    double half_width = 0.0;
    /// p̂·e^{ℓ/t} with the predicted ℓ.
    double c_hat = 0.0;
    double c_half_width = 0.0;
};

struct Extrapolation {
    /// Intercept of the least-squares line −t·log p̂ = ℓ̂ + slope·t.
    double ell_hat = 0.0;
    double ell_half_width = 0.0;
    /// e^{−slope}.
    double c_fit = 0.0;
    std::vector<ExtrapolationRow> rows;
    std::vector<std::string> warnings;
};

/// Fits ℓ̂ and ĉ from estimates on a t-grid; rows with p̂ = 0 are dropped.
inline Extrapolation extrapolate(const std::vector<McEstimate>& estimates, double ell_predicted) {
    if (estimates.size() < 3) throw ConfigError("extrapolate: need at least 3 grid points");
    Extrapolation out;
    std::vector<double> ts, ys, sig;
    for (const auto& e : estimates) {
        if (!(e.p_hat > 0.0)) {
            out.warnings.push_back("dropped t = " + std::to_string(e.t) + ": no exits observed");
            continue;
        }
        ExtrapolationRow row;
        row.t = e.t;
        row.p_hat = e.p_hat;
        row.half_width = e.half_width;
        const double scale = std::exp(ell_predicted / e.t);
        row.c_hat = e.p_hat * scale;
        row.c_half_width = e.half_width * scale;
        out.rows.push_back(row);
        ts.push_back(e.t);
        ys.push_back(-e.t * std::log(e.p_hat));
        sig.push_back(e.t * (e.half_width / 1.96) / e.p_hat);
    }
    if (ts.size() < 3) throw ConfigError("extrapolate: fewer than 3 grid points with p_hat > 0");
    const auto n = static_cast<double>(ts.size());
    double mt = 0.0, my = 0.0;
    for (std::size_t i = 0; i < ts.size(); ++i) {
        mt += ts[i] / n;
        my += ys[i] / n;
    }
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < ts.size(); ++i) {
        sxx += (ts[i] - mt) * (ts[i] - mt);
        sxy += (ts[i] - mt) * (ys[i] - my);
    }
    if (!(sxx > 0.0)) throw ConfigError("extrapolate: grid times must be distinct");
    const double slope = sxy / sxx;
    out.ell_hat = my - slope * mt;
    out.c_fit = std::exp(-slope);
    // The intercept is linear in the data: ℓ̂ = Σ wᵢ yᵢ.
    double var = 0.0;
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const double wi = 1.0 / n - mt * (ts[i] - mt) / sxx;
        var += wi * wi * sig[i] * sig[i];
    }
    out.ell_half_width = 1.96 * std::sqrt(var);
    return out;
}

/// Runs exit_probability at every t of a decreasing grid, then extrapolates.
inline Extrapolation extrapolate(const BridgeProblem& problem, const std::vector<double>& t_grid,
                                 const McConfig& config, double ell_predicted,
                                 std::vector<McEstimate>* estimates = nullptr) {
    if (t_grid.size() < 3) throw ConfigError("extrapolate: need at least 3 grid points");
    for (std::size_t i = 1; i < t_grid.size(); ++i) {
        if (!(t_grid[i] < t_grid[i - 1])) throw ConfigError("extrapolate: t-grid must be strictly decreasing");
    }
    std::vector<McEstimate> runs;
    for (double t : t_grid) {
        BridgeProblem p = problem;
        p.t = t;
        runs.push_back(exit_probability(p, config));
    }
    if (estimates) *estimates = runs;
    return extrapolate(runs, ell_predicted);
}

}  // namespace sharp_bridge

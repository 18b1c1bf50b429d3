#pragma once

// JSON run configuration: parsing with field-precise errors, defaults,
// serialization, and construction of the bridge problem it describes.

#include "sharp_bridge/errors.hpp"
#include "sharp_bridge/expression.hpp"
#include "sharp_bridge/hj.hpp"
#include "sharp_bridge/mc.hpp"
#include "sharp_bridge/model.hpp"
#include "sharp_bridge/ou.hpp"

#include "json.hpp"

#include <cmath>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace sharp_bridge {

inline bool same(const Vector& a, const Vector& b) { return a.size() == b.size() && a == b; }
inline bool same(const Matrix& a, const Matrix& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && a == b;
}

struct ModelSpec {
    /// "brownian", "ou" or "scalar-sigma".
    std::string kind = "brownian";
    int dim = 1;
    std::optional<Matrix> M;
    std::string sigma;
    std::string drift;
    std::string potential;
    FirstOrderForm first_order_form = FirstOrderForm::kOriginCentered;

    bool operator==(const ModelSpec& o) const {
        return kind == o.kind && dim == o.dim && M.has_value() == o.M.has_value() && (!M || same(*M, *o.M)) &&
               sigma == o.sigma && drift == o.drift && potential == o.potential &&
               first_order_form == o.first_order_form;
    }
};

struct DomainSpec {
    Vector v_bar;
    double k = 1.0;

    bool operator==(const DomainSpec& o) const { return same(v_bar, o.v_bar) && k == o.k; }
};

struct ProblemSpec {
    Vector x;
    Vector y;
    /// Absent only for unconditioned runs.
    bool has_y = true;
    double s = 0.0;
    std::optional<double> t;
    std::vector<double> t_grid;
    Route route = Route::kClosed;

    bool operator==(const ProblemSpec& o) const {
        return same(x, o.x) && same(y, o.y) && has_y == o.has_y && s == o.s && t == o.t && t_grid == o.t_grid &&
               route == o.route;
    }

    /// The t-grid if given, otherwise the single t.
    std::vector<double> times() const {
        if (!t_grid.empty()) return t_grid;
        if (t) return {*t};
        return {};
    }
};

struct OutputSpec {
    std::string directory = "out";
    std::string format = "csv";

    bool operator==(const OutputSpec&) const = default;
};

inline bool operator==(const McConfig& a, const McConfig& b) {
    return a.paths == b.paths && a.steps == b.steps && a.delta == b.delta && a.seed == b.seed &&
           a.workers == b.workers && a.crossing_correction == b.crossing_correction && a.mode == b.mode &&
           a.scheme == b.scheme;
}

struct RunConfig {
    ModelSpec model;
    DomainSpec domain;
    ProblemSpec problem;
    McConfig mc;
    OutputSpec output;
    /// Non-fatal notes from parsing (e.g. v̄ renormalized).
    std::vector<std::string> warnings;

    bool operator==(const RunConfig& o) const {
        return model == o.model && domain == o.domain && problem == o.problem && mc == o.mc && output == o.output;
    }
};

namespace detail {

using nlohmann::json;

inline void reject_unknown(const json& obj, const std::string& where, const std::set<std::string>& allowed) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (!allowed.count(it.key())) throw ConfigError(where + "." + it.key() + ": unknown key");
    }
}

inline const json& require_object(const json& root, const std::string& name) {
    if (!root.contains(name)) throw ConfigError("missing section \"" + name + "\"");
    const json& s = root.at(name);
    if (!s.is_object()) throw ConfigError(name + ": expected an object");
    return s;
}

inline double get_number(const json& j, const std::string& field) {
    if (!j.is_number()) throw ConfigError(field + ": expected a number");
    const double v = j.get<double>();
    if (!std::isfinite(v)) throw ConfigError(field + ": expected a finite number");
    return v;
}

inline std::uint64_t get_count(const json& j, const std::string& field) {
    if (j.is_number_unsigned()) return j.get<std::uint64_t>();
    if (j.is_number_integer() && j.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(j.get<std::int64_t>());
    throw ConfigError(field + ": expected a non-negative integer");
}

inline bool get_bool(const json& j, const std::string& field) {
    if (!j.is_boolean()) throw ConfigError(field + ": expected true or false");
    return j.get<bool>();
}

inline std::string get_string(const json& j, const std::string& field) {
    if (!j.is_string()) throw ConfigError(field + ": expected a string");
    return j.get<std::string>();
}

inline Vector get_vector(const json& j, const std::string& field) {
    if (!j.is_array() || j.empty()) throw ConfigError(field + ": expected a non-empty array of numbers");
    Vector v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        v(static_cast<Eigen::Index>(i)) = get_number(j[i], field + "[" + std::to_string(i) + "]");
    }
    return v;
}

inline Matrix get_matrix(const json& j, const std::string& field) {
    if (!j.is_array() || j.empty()) throw ConfigError(field + ": expected a square array of rows");
    const auto n = j.size();
    Matrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        const std::string row = field + "[" + std::to_string(i) + "]";
        if (!j[i].is_array() || j[i].size() != n) {
            throw ConfigError(row + ": expected " + std::to_string(n) + " numbers (matrix must be square)");
        }
        for (std::size_t c = 0; c < n; ++c) {
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) =
                get_number(j[i][c], row + "[" + std::to_string(c) + "]");
        }
    }
    return m;
}

inline Expression get_expression(const json& j, const std::string& field) {
    try {
        return Expression::parse(get_string(j, field));
    } catch (const ConfigError& e) {
        throw ConfigError(field + ": " + e.what());
    }
}

inline std::string line_column(const std::string& text, std::size_t byte) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

}  // namespace detail

/// Parses and validates a JSON configuration. Sections "model", "domain"
/// and "problem" are required; "mc" and "output" default.
inline RunConfig parse_config(const std::string& text) {
    using detail::json;
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("config syntax error at " + detail::line_column(text, e.byte) + ": " + e.what());
    }
    if (!root.is_object()) throw ConfigError("config: expected a JSON object at top level");
    detail::reject_unknown(root, "config", {"model", "domain", "problem", "mc", "output"});

    RunConfig cfg;

    // model
    const json& jm = detail::require_object(root, "model");
    detail::reject_unknown(jm, "model", {"kind", "dim", "M", "sigma", "drift", "potential", "first_order_form"});
    auto& ms = cfg.model;
    if (!jm.contains("kind")) throw ConfigError("model.kind: required");
    ms.kind = detail::get_string(jm.at("kind"), "model.kind");
    if (ms.kind == "brownian") {
        ms.dim = jm.contains("dim") ? static_cast<int>(detail::get_count(jm.at("dim"), "model.dim")) : -1;
        for (const char* k : {"M", "sigma", "drift", "potential"}) {
            if (jm.contains(k)) throw ConfigError(std::string("model.") + k + ": not allowed for kind \"brownian\"");
        }
    } else if (ms.kind == "ou") {
        if (!jm.contains("M")) throw ConfigError("model.M: required for kind \"ou\"");
        ms.M = detail::get_matrix(jm.at("M"), "model.M");
        ms.dim = static_cast<int>(ms.M->rows());
        if (jm.contains("dim") && static_cast<int>(detail::get_count(jm.at("dim"), "model.dim")) != ms.dim) {
            throw ConfigError("model.dim: does not match the size of model.M");
        }
        for (const char* k : {"sigma", "drift", "potential"}) {
            if (jm.contains(k)) throw ConfigError(std::string("model.") + k + ": not allowed for kind \"ou\"");
        }
    } else if (ms.kind == "scalar-sigma") {
        ms.dim = 1;
        if (jm.contains("dim") && detail::get_count(jm.at("dim"), "model.dim") != 1) {
            throw ConfigError("model.dim: kind \"scalar-sigma\" is one-dimensional");
        }
        if (!jm.contains("sigma")) throw ConfigError("model.sigma: required for kind \"scalar-sigma\"");
        ms.sigma = detail::get_expression(jm.at("sigma"), "model.sigma").text();
        if (jm.contains("drift")) ms.drift = detail::get_expression(jm.at("drift"), "model.drift").text();
        if (jm.contains("potential")) {
            ms.potential = detail::get_expression(jm.at("potential"), "model.potential").text();
        }
        if (jm.contains("M")) throw ConfigError("model.M: not allowed for kind \"scalar-sigma\"");
    } else {
        throw ConfigError("model.kind: expected \"brownian\", \"ou\" or \"scalar-sigma\", got \"" + ms.kind + "\"");
    }
    if (jm.contains("first_order_form")) {
        const auto f = detail::get_string(jm.at("first_order_form"), "model.first_order_form");
        if (f == "origin-centered") ms.first_order_form = FirstOrderForm::kOriginCentered;
        else if (f == "bridge-centered") ms.first_order_form = FirstOrderForm::kBridgeCentered;
        else throw ConfigError("model.first_order_form: expected \"origin-centered\" or \"bridge-centered\"");
    }

    // domain
    const json& jd = detail::require_object(root, "domain");
    detail::reject_unknown(jd, "domain", {"v_bar", "k"});
    if (!jd.contains("v_bar")) throw ConfigError("domain.v_bar: required");
    if (!jd.contains("k")) throw ConfigError("domain.k: required");
    cfg.domain.v_bar = detail::get_vector(jd.at("v_bar"), "domain.v_bar");
    cfg.domain.k = detail::get_number(jd.at("k"), "domain.k");
    if (ms.dim < 0) ms.dim = static_cast<int>(cfg.domain.v_bar.size());
    if (ms.dim < 1) throw ConfigError("model.dim: must be at least 1");
    if (cfg.domain.v_bar.size() != ms.dim) {
        throw ConfigError("domain.v_bar: expected " + std::to_string(ms.dim) + " components");
    }
    const double norm = cfg.domain.v_bar.norm();
    if (std::abs(norm - 1.0) > 1e-6) {
        throw ConfigError("domain.v_bar: must have unit length (|v_bar| = " + std::to_string(norm) + ")");
    }
    if (norm != 1.0) {
        cfg.domain.v_bar /= norm;
        cfg.warnings.push_back("domain.v_bar: normalized to unit length");
    }

    // mc (needed before problem: the free mode makes y optional)
    if (root.contains("mc")) {
        const json& jc = root.at("mc");
        if (!jc.is_object()) throw ConfigError("mc: expected an object");
        detail::reject_unknown(jc, "mc",
                               {"paths", "steps", "delta", "seed", "workers", "crossing_correction", "mode", "scheme"});
        auto& mc = cfg.mc;
        if (jc.contains("paths")) mc.paths = detail::get_count(jc.at("paths"), "mc.paths");
        if (jc.contains("steps")) mc.steps = static_cast<int>(detail::get_count(jc.at("steps"), "mc.steps"));
        if (jc.contains("delta")) mc.delta = detail::get_number(jc.at("delta"), "mc.delta");
        if (jc.contains("seed")) mc.seed = detail::get_count(jc.at("seed"), "mc.seed");
        if (jc.contains("workers")) mc.workers = static_cast<int>(detail::get_count(jc.at("workers"), "mc.workers"));
        if (jc.contains("crossing_correction")) {
            mc.crossing_correction = detail::get_bool(jc.at("crossing_correction"), "mc.crossing_correction");
        }
        if (jc.contains("mode")) {
            const auto m = detail::get_string(jc.at("mode"), "mc.mode");
            if (m == "bridge") mc.mode = McMode::kBridge;
            else if (m == "free") mc.mode = McMode::kFree;
            else throw ConfigError("mc.mode: expected \"bridge\" or \"free\"");
        }
        if (jc.contains("scheme")) {
            const auto s = detail::get_string(jc.at("scheme"), "mc.scheme");
            if (s == "auto") mc.scheme = McScheme::kAuto;
            else if (s == "exact") mc.scheme = McScheme::kExact;
            else if (s == "euler") mc.scheme = McScheme::kEuler;
            else throw ConfigError("mc.scheme: expected \"auto\", \"exact\" or \"euler\"");
        }
        mc.validate();
    }

    // problem
    const json& jp = detail::require_object(root, "problem");
    detail::reject_unknown(jp, "problem", {"x", "y", "s", "t", "t_grid", "route"});
    auto& ps = cfg.problem;
    if (!jp.contains("x")) throw ConfigError("problem.x: required");
    ps.x = detail::get_vector(jp.at("x"), "problem.x");
    if (ps.x.size() != ms.dim) throw ConfigError("problem.x: expected " + std::to_string(ms.dim) + " components");
    if (jp.contains("y")) {
        ps.y = detail::get_vector(jp.at("y"), "problem.y");
        if (ps.y.size() != ms.dim) throw ConfigError("problem.y: expected " + std::to_string(ms.dim) + " components");
    } else if (cfg.mc.mode == McMode::kFree) {
        ps.has_y = false;
        ps.y = Vector::Zero(ms.dim);
    } else {
        throw ConfigError("problem.y: required unless mc.mode is \"free\"");
    }
    if (jp.contains("s")) ps.s = detail::get_number(jp.at("s"), "problem.s");
    if (!(ps.s >= 0.0 && ps.s < 1.0)) throw ConfigError("problem.s: must lie in [0, 1)");
    if (jp.contains("t")) {
        ps.t = detail::get_number(jp.at("t"), "problem.t");
        if (!(*ps.t > 0.0)) throw ConfigError("problem.t: must be positive");
    }
    if (jp.contains("t_grid")) {
        const Vector g = detail::get_vector(jp.at("t_grid"), "problem.t_grid");
        for (Eigen::Index i = 0; i < g.size(); ++i) {
            if (!(g(i) > 0.0)) throw ConfigError("problem.t_grid[" + std::to_string(i) + "]: must be positive");
            ps.t_grid.push_back(g(i));
        }
    }
    if (!ps.t && ps.t_grid.empty()) throw ConfigError("problem: one of \"t\" or \"t_grid\" is required");
    if (jp.contains("route")) {
        const auto r = detail::get_string(jp.at("route"), "problem.route");
        if (r == "closed") ps.route = Route::kClosed;
        else if (r == "variational") ps.route = Route::kVariational;
        else throw ConfigError("problem.route: expected \"closed\" or \"variational\"");
    }
    const HalfSpaceDomain dom(cfg.domain.v_bar, cfg.domain.k);
    if (dom.boundary_distance(ps.x) < 0.0) throw DomainError("start outside domain");
    if (ps.has_y && !dom.contains(ps.y)) throw DomainError("conditioning point outside domain");

    // output
    if (root.contains("output")) {
        const json& jo = root.at("output");
        if (!jo.is_object()) throw ConfigError("output: expected an object");
        detail::reject_unknown(jo, "output", {"directory", "format"});
        if (jo.contains("directory")) cfg.output.directory = detail::get_string(jo.at("directory"), "output.directory");
        if (jo.contains("format")) cfg.output.format = detail::get_string(jo.at("format"), "output.format");
        if (cfg.output.format != "csv") throw ConfigError("output.format: only \"csv\" is supported");
    }
    return cfg;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file \"" + path + "\"");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

/// JSON text that parse_config maps back to an equal RunConfig.
inline std::string serialize_config(const RunConfig& cfg) {
    using detail::json;
    auto vec = [](const Vector& v) {
        json a = json::array();
        for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
        return a;
    };
    json root;
    json m;
    m["kind"] = cfg.model.kind;
    if (cfg.model.kind == "brownian") m["dim"] = cfg.model.dim;
    if (cfg.model.M) {
        json rows = json::array();
        for (Eigen::Index i = 0; i < cfg.model.M->rows(); ++i) rows.push_back(vec(cfg.model.M->row(i).transpose()));
        m["M"] = rows;
    }
    if (!cfg.model.sigma.empty()) m["sigma"] = cfg.model.sigma;
    if (!cfg.model.drift.empty()) m["drift"] = cfg.model.drift;
    if (!cfg.model.potential.empty()) m["potential"] = cfg.model.potential;
    m["first_order_form"] = to_string(cfg.model.first_order_form);
    root["model"] = m;
    root["domain"] = {{"v_bar", vec(cfg.domain.v_bar)}, {"k", cfg.domain.k}};
    json p;
    p["x"] = vec(cfg.problem.x);
    if (cfg.problem.has_y) p["y"] = vec(cfg.problem.y);
    p["s"] = cfg.problem.s;
    if (cfg.problem.t) p["t"] = *cfg.problem.t;
    if (!cfg.problem.t_grid.empty()) p["t_grid"] = cfg.problem.t_grid;
    p["route"] = to_string(cfg.problem.route);
    root["problem"] = p;
    root["mc"] = {{"paths", cfg.mc.paths},
                  {"steps", cfg.mc.steps},
                  {"delta", cfg.mc.delta},
                  {"seed", cfg.mc.seed},
                  {"workers", cfg.mc.workers},
                  {"crossing_correction", cfg.mc.crossing_correction},
                  {"mode", to_string(cfg.mc.mode)},
                  {"scheme", to_string(cfg.mc.scheme)}};
    root["output"] = {{"directory", cfg.output.directory}, {"format", cfg.output.format}};
    return root.dump(2);
}

inline DiffusionModel build_model(const ModelSpec& spec) {
    if (spec.kind == "brownian") return make_brownian(spec.dim);
    if (spec.kind == "ou") return make_ou(*spec.M);
    auto parse = [](const std::string& s) { return s.empty() ? Expression{} : Expression::parse(s); };
    return make_scalar_sigma(parse(spec.sigma), parse(spec.drift), parse(spec.potential));
}

/// The bridge problem at horizon t (defaults to the first configured time).
inline BridgeProblem build_problem(const RunConfig& cfg, std::optional<double> t = std::nullopt) {
    BridgeProblem p{build_model(cfg.model), HalfSpaceDomain(cfg.domain.v_bar, cfg.domain.k), cfg.problem.x,
                    cfg.problem.y, cfg.problem.s, t ? *t : cfg.problem.times().front()};
    return p;
}

}  // namespace sharp_bridge

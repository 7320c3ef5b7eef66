#pragma once

// Experiment harness: JSON config validation, named pipelines and report
// emission. Reports are deterministic: everything that depends on the host
// (wall time, worker count, output path) goes to a separate timing record.

#include <algorithm>
#include <charconv>
#include <deque>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "livsic/livsic_solver.hpp"
#include "livsic/shadowing.hpp"

namespace livsic::lab {

using json = nlohmann::json;

inline constexpr const char* kVersion = "livsic-lab 1.0.0";

inline const std::vector<std::string>& experiments() {
  static const std::vector<std::string> names{"poc-check", "spectrum",   "solve",
                                              "classify",  "shadow",     "lemma-tests",
                                              "main-theorem-sweep"};
  return names;
}

// ---------------------------------------------------------------- CSV

/// Shortest round-trip decimal form; inf and nan spelled out.
inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  void row(std::vector<std::string> cells) {
    if (cells.size() != header_.size()) throw Error(ErrorCode::PreconditionViolated, "CSV row width mismatch");
    rows_.push_back(std::move(cells));
  }

  static std::string quote(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
      if (c == '"') out += '"';
      out += c;
    }
    return out + "\"";
  }

  std::string str() const {
    std::string out;
    const auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out += ',';
        out += quote(cells[i]);
      }
      out += "\r\n";
    };
    line(header_);
    for (const auto& r : rows_) line(r);
    return out;
  }

  std::size_t size() const { return rows_.size(); }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

// ---------------------------------------------------------------- config validation

[[noreturn]] inline void config_error(const std::string& path, const std::string& what) {
  throw Error(ErrorCode::ConfigInvalid, path + ": " + what);
}

enum class Kind { Number, Integer, Bool, String, NumberList, IntPair, IntMatrix2, Object };

/// Reads keys of one JSON object, fills defaults and rejects anything that
/// was not asked for once `finish` runs.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) config_error(path_, "expected an object");
  }

  /// `def` null means required.
  const json& get(const std::string& key, Kind kind, const json& def = nullptr) {
    const std::string p = path_ + "." + key;
    if (!j_.contains(key)) {
      if (def.is_null()) config_error(p, "missing required key");
      out_[key] = def;
      return out_[key];
    }
    const json& v = j_.at(key);
    check(v, kind, p);
    out_[key] = v;
    return out_[key];
  }

  double number(const std::string& key, const json& def = nullptr) { return get(key, Kind::Number, def).get<double>(); }
  std::int64_t integer(const std::string& key, const json& def = nullptr) {
    return get(key, Kind::Integer, def).get<std::int64_t>();
  }
  std::string string(const std::string& key, const json& def = nullptr) {
    return get(key, Kind::String, def).get<std::string>();
  }

  double positive(const std::string& key, const json& def = nullptr) {
    const double v = number(key, def);
    if (!(v > 0)) config_error(path_ + "." + key, "must be > 0");
    return v;
  }
  std::int64_t at_least(const std::string& key, std::int64_t lo, const json& def = nullptr) {
    const auto v = integer(key, def);
    if (v < lo) config_error(path_ + "." + key, "must be >= " + std::to_string(lo));
    return v;
  }

  json finish() const {
    for (const auto& [k, v] : j_.items())
      if (!out_.contains(k)) config_error(path_ + "." + k, "unknown key");
    return out_;
  }

  const std::string& path() const { return path_; }
  void set(const std::string& key, json v) { out_[key] = std::move(v); }

 private:
  static void check(const json& v, Kind kind, const std::string& p) {
    switch (kind) {
      case Kind::Number:
        if (!v.is_number()) config_error(p, "expected a number");
        return;
      case Kind::Integer:
        if (!v.is_number_integer()) config_error(p, "expected an integer");
        return;
      case Kind::Bool:
        if (!v.is_boolean()) config_error(p, "expected true or false");
        return;
      case Kind::String:
        if (!v.is_string()) config_error(p, "expected a string");
        return;
      case Kind::NumberList:
        if (!v.is_array() || v.empty()) config_error(p, "expected a non-empty array of numbers");
        for (const auto& e : v)
          if (!e.is_number()) config_error(p, "expected a non-empty array of numbers");
        return;
      case Kind::IntPair:
        if (!v.is_array() || v.size() != 2 || !v[0].is_number_integer() || !v[1].is_number_integer())
          config_error(p, "expected two integers");
        return;
      case Kind::IntMatrix2:
        if (!v.is_array() || v.size() != 2) config_error(p, "expected a 2x2 integer matrix");
        for (const auto& r : v)
          if (!r.is_array() || r.size() != 2 || !r[0].is_number_integer() || !r[1].is_number_integer())
            config_error(p, "expected a 2x2 integer matrix");
        return;
      case Kind::Object:
        if (!v.is_object()) config_error(p, "expected an object");
        return;
    }
  }

  const json& j_;
  std::string path_;
  json out_ = json::object();
};

inline json resolve_base(const json& j) {
  Fields f(j, "$.base");
  const auto type = f.string("type", "cat");
  if (type == "toral") {
    f.get("matrix", Kind::IntMatrix2);
  } else if (type == "shift") {
    const auto m = f.at_least("alphabet", 2, 2);
    if (m > 16) config_error("$.base.alphabet", "must be <= 16");
    const auto w = f.at_least("window", 8, 64);
    if (w > 4096) config_error("$.base.window", "must be <= 4096");
  } else if (type != "cat") {
    config_error("$.base.type", "unknown base type '" + type + "' (cat, toral, shift)");
  }
  return f.finish();
}

inline void check_shear_amplitude(const std::string& path, double amp, const json& k, std::int64_t axis) {
  const double kmax = std::abs(k[static_cast<std::size_t>(axis)].get<double>());
  if (!(amp * kmax < 1.0)) config_error(path, "shear amplitude times |k_axis| must stay below 1");
}

inline json resolve_cocycle(const json& j) {
  Fields f(j, "$.cocycle");
  const auto fam = f.string("family", "identity");
  const auto fiber_dim = [&] {
    const auto q = f.integer("q", 1);
    if (q != 1 && q != 2) config_error("$.cocycle.q", "fiber dimension must be 1 or 2");
    return q;
  };
  const auto axis_of = [&](std::int64_t q) {
    const auto axis = f.integer("axis", 0);
    if (axis < 0 || axis >= q) config_error("$.cocycle.axis", "axis outside the fiber dimension");
    return axis;
  };
  if (fam == "identity") {
    fiber_dim();
  } else if (fam == "constant-shear") {
    const auto q = fiber_dim();
    const double a = f.number("a");
    const auto& k = f.get("k", Kind::IntPair, json::array({1, 0}));
    check_shear_amplitude("$.cocycle.a", std::abs(a), k, axis_of(q));
  } else if (fam == "constant-rotation") {
    f.number("theta");
  } else if (fam == "constant-linear") {
    const auto& m = f.get("matrix", Kind::IntMatrix2);
    const auto det = m[0][0].get<std::int64_t>() * m[1][1].get<std::int64_t>() -
                     m[0][1].get<std::int64_t>() * m[1][0].get<std::int64_t>();
    if (det != 1) config_error("$.cocycle.matrix", "fiber automorphism needs determinant 1");
  } else if (fam == "rotation") {
    f.number("offset", 0.0);
    f.number("amp");
    f.get("harmonic", Kind::IntPair, json::array({1, 0}));
  } else if (fam == "shear") {
    const auto q = fiber_dim();
    const double a0 = f.number("a0"), a1 = f.number("a1", 0.0);
    f.get("harmonic", Kind::IntPair, json::array({1, 0}));
    const auto& k = f.get("k", Kind::IntPair, json::array({1, 0}));
    check_shear_amplitude("$.cocycle.a0", std::abs(a0) + std::abs(a1), k, axis_of(q));
  } else if (fam == "coboundary") {
    const auto name = f.string("transfer");
    if (name != "rotation" && name != "shear" && name != "rotation-shear" && name != "torus-shear")
      config_error("$.cocycle.transfer", "unknown transfer family '" + name + "'");
  } else {
    config_error("$.cocycle.family", "unknown cocycle family '" + fam + "'");
  }
  return f.finish();
}

inline void solver_fields(Fields& f) {
  f.positive("density", 0.02);
  f.at_least("max_len", 1000, 4'000'000);
  f.at_least("stride", 1, 32);
  f.at_least("grid", 0, 0);
  f.at_least("holonomy_depth", -1, -1);
  f.at_least("p_max", 0, 0);
  f.at_least("p_exponents", 0, 3);
  f.at_least("exponent_reps", 1, 1000);
  f.at_least("fiber_starts", 1, 4);
  f.positive("poc_tol", 1e-6);
  f.positive("exp_tol", 1e-2);
  f.at_least("exp_n", 1000, 10000);
  f.at_least("exp_starts", 1, 10);
  f.positive("verify_tol", 1e-4);
  f.at_least("verify_points", 1, 100);
  f.at_least("holder_pairs", 100, 400);
}

inline json resolve_params(const std::string& exp, const json& j) {
  Fields f(j, "$.params");
  if (exp == "poc-check") {
    f.at_least("p_max", 1, 6);
    f.at_least("grid", 0, 0);
    f.positive("threshold", 1e-12);
  } else if (exp == "spectrum") {
    f.at_least("n", 1000, 10000);
    f.at_least("starts", 1, 10);
    f.positive("tol", 1e-2);
    f.at_least("trace_stride", 1, 100);
  } else if (exp == "solve") {
    solver_fields(f);
    f.get("check_preconditions", Kind::Bool, true);
  } else if (exp == "classify") {
    solver_fields(f);
  } else if (exp == "shadow") {
    f.at_least("n", 2, 40);
    f.at_least("events", 1, 100);
    f.positive("epsilon0", 0.05);
    f.at_least("max_steps", 1, 2'000'000);
    f.positive("ell", 2.0);
    f.positive("beta", 1.0);
    f.at_least("exp_n", 1000, 2000);
    f.positive("rate_margin", 0.05);
  } else if (exp == "main-theorem-sweep") {
    f.get("amplitudes", Kind::NumberList, json::array({0.0, 0.1, 0.2, 0.3, 0.4, 0.5}));
    const auto fam = f.string("family", "constant-shear");
    if (fam != "constant-shear" && fam != "shear")
      config_error("$.params.family", "sweep family must be constant-shear or shear");
    f.get("coboundaries", Kind::Bool, true);
    solver_fields(f);
  }
  return f.finish();
}

struct ResolvedConfig {
  std::string experiment;
  std::uint64_t seed = 0;
  json base, cocycle, params;
  std::string output;  // not echoed in the report

  json echo() const {
    return json{{"experiment", experiment}, {"seed", seed}, {"base", base}, {"cocycle", cocycle}, {"params", params}};
  }
};

inline const std::vector<std::string>& lemma_check_names() {
  static const std::vector<std::string> n{"closing",        "conjugacy",    "cones",          "flags",
                                          "conjugated-gap", "localization", "graph-transform"};
  return n;
}

inline json lemma_defaults() {
  return json{{"checks", lemma_check_names()},
              {"closing_events", 1000},
              {"closing_max_period", 20},
              {"rate_margin", 0.05},
              {"conjugacy_trials", 1000},
              {"conjugacy_length", 80},
              {"ell", 2.0},
              {"delta", 0.1},
              {"cone_trials", 20},
              {"cone_samples", 1000},
              {"flag_trials", 20},
              {"flag_horizon", 200},
              {"flag_perturbation", 1e-3},
              {"flag_angle", 1e-2},
              {"gap_trials", 1000},
              {"gap_ell", 3.0},
              {"gap_eta", 0.2},
              {"radii", {0.1, 0.05, 0.025, 0.0125}},
              {"beta", 1.0},
              {"slope_tol", 0.1}};
}

inline json resolve_lemma(const json& j) {
  if (!j.is_object()) config_error("$.params", "expected an object");
  json out = lemma_defaults();
  for (const auto& [k, v] : j.items()) {
    const std::string p = "$.params." + k;
    if (!out.contains(k)) config_error(p, "unknown key");
    const json& def = out[k];
    if (k == "checks") {
      if (!v.is_array()) config_error(p, "expected an array of check names");
      const auto& names = lemma_check_names();
      for (const auto& e : v)
        if (!e.is_string() || std::find(names.begin(), names.end(), e.get<std::string>()) == names.end())
          config_error(p, "unknown check " + e.dump());
    } else if (def.is_array()) {
      if (!v.is_array() || v.empty()) config_error(p, "expected a non-empty array of numbers");
      for (const auto& e : v)
        if (!e.is_number() || !(e.get<double>() > 0)) config_error(p, "expected positive numbers");
    } else if (def.is_number_integer()) {
      if (!v.is_number_integer() || v.get<std::int64_t>() < 1) config_error(p, "expected a positive integer");
    } else if (!v.is_number() || !(v.get<double>() > 0)) {
      config_error(p, "expected a positive number");
    }
    out[k] = v;
  }
  return out;
}

/// Validates a raw config document. The CLI experiment name wins over the
/// document's own, which must agree when present; `seed` overrides too.
inline ResolvedConfig resolve_config(const json& raw, const std::string& experiment,
                                     std::optional<std::uint64_t> seed_override = std::nullopt) {
  if (!raw.is_object()) config_error("$", "expected an object");
  const auto& names = experiments();
  if (std::find(names.begin(), names.end(), experiment) == names.end())
    config_error("experiment", "unknown experiment '" + experiment + "'");
  ResolvedConfig c;
  c.experiment = experiment;
  for (const auto& [k, v] : raw.items())
    if (k != "experiment" && k != "seed" && k != "base" && k != "cocycle" && k != "params" && k != "output")
      config_error("$." + k, "unknown key");
  if (raw.contains("experiment")) {
    if (!raw["experiment"].is_string()) config_error("$.experiment", "expected a string");
    if (raw["experiment"].get<std::string>() != experiment)
      config_error("$.experiment", "config is for '" + raw["experiment"].get<std::string>() + "', not '" + experiment + "'");
  }
  if (raw.contains("seed")) {
    const auto& sd = raw["seed"];
    if (!sd.is_number_unsigned() && !(sd.is_number_integer() && sd.get<std::int64_t>() >= 0))
      config_error("$.seed", "expected a non-negative integer");
    c.seed = raw["seed"].get<std::uint64_t>();
  }
  if (seed_override) c.seed = *seed_override;
  if (raw.contains("output")) {
    if (!raw["output"].is_string()) config_error("$.output", "expected a string");
    c.output = raw["output"].get<std::string>();
  }
  c.base = resolve_base(raw.value("base", json::object()));
  c.cocycle = resolve_cocycle(raw.value("cocycle", json::object()));
  const json params = raw.value("params", json::object());
  c.params = experiment == "lemma-tests" ? resolve_lemma(params) : resolve_params(experiment, params);
  return c;
}

inline ResolvedConfig load_config(const std::filesystem::path& path, const std::string& experiment,
                                  std::optional<std::uint64_t> seed_override = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigInvalid, path.string() + ": cannot open config");
  json raw;
  try {
    raw = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ConfigInvalid, path.string() + ": " + e.what());
  }
  return resolve_config(raw, experiment, seed_override);
}

// ---------------------------------------------------------------- builders

inline std::array<int, 2> int_pair(const json& j) { return {j[0].get<int>(), j[1].get<int>()}; }

inline std::shared_ptr<const BaseSystem> make_base(const json& b) {
  const auto type = b.at("type").get<std::string>();
  if (type == "cat") return std::make_shared<const BaseSystem>(BaseSystem::cat_map());
  if (type == "toral") {
    const auto& m = b.at("matrix");
    detail::Int2 a{{{m[0][0].get<std::int64_t>(), m[0][1].get<std::int64_t>()},
                    {m[1][0].get<std::int64_t>(), m[1][1].get<std::int64_t>()}}};
    return std::make_shared<const BaseSystem>(ToralAutomorphism(a));
  }
  return std::make_shared<const BaseSystem>(FullShift(b.at("alphabet").get<int>(), b.at("window").get<int>()));
}

inline Cocycle make_cocycle(std::shared_ptr<const BaseSystem> base, const json& c) {
  const auto fam = c.at("family").get<std::string>();
  if (fam == "identity") return families::identity(std::move(base), c.at("q").get<int>());
  if (fam == "constant-shear")
    return families::constant(std::move(base),
                              Diffeo::shear(c.at("q").get<int>(), c.at("a").get<double>(), int_pair(c.at("k")),
                                            c.at("axis").get<int>()),
                              "constant-shear");
  if (fam == "constant-rotation")
    return families::constant(std::move(base), Diffeo::rotation(c.at("theta").get<double>()), "constant-rotation");
  if (fam == "constant-linear") {
    Mat L(2, 2);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) L(i, j) = c.at("matrix")[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)].get<double>();
    return families::constant(std::move(base), Diffeo::linear(L), "constant-linear");
  }
  if (fam == "rotation")
    return families::rotation(std::move(base), c.at("offset").get<double>(), c.at("amp").get<double>(),
                              int_pair(c.at("harmonic")));
  if (fam == "shear")
    return families::shear(std::move(base), c.at("q").get<int>(), c.at("a0").get<double>(), c.at("a1").get<double>(),
                           int_pair(c.at("harmonic")), int_pair(c.at("k")), c.at("axis").get<int>());
  const auto name = c.at("transfer").get<std::string>();
  for (const auto& t : families::transfer_families(base))
    if (t.name == name) return make_coboundary(base, t.q, t.u, "coboundary-" + name);
  throw Error(ErrorCode::ConfigInvalid, "$.cocycle.transfer: unknown transfer family");
}

inline SolverOptions solver_options(const json& p, std::uint64_t seed, int workers) {
  SolverOptions o;
  o.density = p.at("density").get<double>();
  o.max_len = p.at("max_len").get<std::size_t>();
  o.stride = p.at("stride").get<int>();
  o.grid = p.at("grid").get<int>();
  o.holonomy_depth = p.at("holonomy_depth").get<int>();
  o.p_max = p.at("p_max").get<int>();
  o.p_exponents = p.at("p_exponents").get<int>();
  o.exponent_reps = p.at("exponent_reps").get<int>();
  o.fiber_starts = p.at("fiber_starts").get<int>();
  o.poc_tol = p.at("poc_tol").get<double>();
  o.exp_tol = p.at("exp_tol").get<double>();
  o.exp_n = p.at("exp_n").get<int>();
  o.exp_starts = p.at("exp_starts").get<int>();
  o.verify_tol = p.at("verify_tol").get<double>();
  o.verify_points = p.at("verify_points").get<int>();
  o.holder_pairs = p.at("holder_pairs").get<int>();
  o.seed = seed;
  o.workers = workers;
  return o;
}

// ---------------------------------------------------------------- serialization helpers

inline json vec_json(const Vec& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline std::string symbols(const ShiftPoint& s, std::int64_t from, std::int64_t to) {
  std::string w;
  for (std::int64_t i = from; i < to; ++i) {
    const int c = s.at(i);
    w += static_cast<char>(c < 10 ? '0' + c : 'a' + c - 10);
  }
  return w;
}

inline json point_json(const BaseSystem& b, const BasePoint& x) {
  if (b.is_torus()) {
    const auto& t = as_torus(x);
    return json{{"x", t.x}, {"y", t.y}};
  }
  const auto& s = as_shift(x);
  return json{{"past", symbols(s, -16, 0)}, {"future", symbols(s, 0, 16)}};
}

inline json skew_json(const BaseSystem& b, const SkewPoint& z) {
  return json{{"base", point_json(b, z.base)}, {"fiber", vec_json(z.fiber)}};
}

inline json witness_json(const BaseSystem& b, const ObstructionWitness& w) {
  json j{{"kind", w.kind}, {"value", w.value}, {"tolerance", w.tolerance}};
  if (w.kind == "fibered-exponent") {
    j["start"] = skew_json(b, w.start);
    j["n"] = w.n;
    return j;
  }
  j["period"] = w.orbit.period;
  j["point"] = point_json(b, w.orbit.point);
  if (w.kind == "poc") {
    j["c0"] = w.poc.c0;
    j["c1"] = w.poc.c1;
  } else {
    j["fiber_point"] = vec_json(w.exponent.y);
    j["exponents"] = vec_json(w.exponent.exponents);
    j["fixed_point"] = w.exponent.fixed_point;
    j["reps"] = w.exponent.reps;
  }
  return j;
}

inline json holder_json(const HolderEstimate& h) {
  return json{{"K", h.K}, {"beta_fit", h.beta_fit}, {"max_ratio", h.max_ratio}, {"degenerate", h.degenerate},
              {"pairs", h.pairs}};
}

inline json verification_json(const VerificationReport& v) {
  return json{{"c0", v.c0},         {"c1", v.c1},   {"tolerance", v.tolerance}, {"points", v.points},
              {"worst_index", v.worst_index}, {"worst_coords", v.worst_coords}, {"passed", v.passed}};
}

inline json scan_json(const BaseSystem& b, const ScanReport& s) {
  json w = json::array();
  for (const auto& x : s.witnesses) w.push_back(witness_json(b, x));
  return json{{"poc_max", s.poc_max},
              {"poc_c0_max", s.poc_c0_max},
              {"orbits", s.orbits},
              {"periodic_exponent_max", s.periodic_exponent_max},
              {"fibered_exponent_max", s.fibered_exponent_max},
              {"fibered", s.fibered},
              {"witnesses", w}};
}

inline json shadowing_json(const ShadowingResult& r) {
  return json{{"n", r.n},
              {"base_period", r.base_period},
              {"deviations", r.deviations},
              {"fitted_rate", r.fitted_rate},
              {"rate_forward", r.rate_forward},
              {"rate_backward", r.rate_backward},
              {"gap", r.gap},
              {"bound_constant", r.bound_constant},
              {"bound_flagged", r.bound_flagged},
              {"base_orbit_defect", r.base_orbit_defect},
              {"fiber_rates", vec_json(r.fiber_rates)},
              {"mode", r.mode}};
}

// ---------------------------------------------------------------- run output

struct RunOutput {
  json report;
  std::vector<std::pair<std::string, CsvTable>> csv;
  int exit_code = 0;
};

inline SkewPoint random_skew_point(const Cocycle& A, CounterRng& rng) {
  SkewPoint z{A.base().random_point(rng), Vec(A.fiber_dim())};
  for (int i = 0; i < A.fiber_dim(); ++i) z.fiber(i) = rng.uniform();
  return z;
}

// ---------------------------------------------------------------- checks shared with the acceptance run

namespace checks {

struct ClosingCheck {
  int events = 0;
  double min_rate = INFINITY;  // min over events of the two one-sided decay rates
  double tau = 0;
  int envelope_violations = 0;
  int fitted = 0;              // events with enough resolved points to fit a rate
  bool passed = false;
};

/// Recurrent events d(x_k, x_{k+n}) < delta, 2 <= n <= max_period, along one
/// orbit. The closing trace splits through y = [p, x] into a stable leg
/// d(f^i x, f^i y), fitted forward, and an unstable leg d(f^i p, f^i y),
/// fitted backward; both must decay at >= tau - margin.
inline ClosingCheck closing_rates(const BaseSystem& b, int events, int max_period, double margin, std::uint64_t seed) {
  ClosingCheck c;
  const auto& h = b.hyperbolicity();
  c.tau = h.tau;
  CounterRng rng(seed, 0xc105e);
  std::vector<BasePoint> window{b.random_point(rng)};
  const double floor = 1e-12;
  for (long step = 0; step < 50'000'000 && c.events < events; ++step) {
    window.push_back(b.step(window.back()));
    if (static_cast<int>(window.size()) > max_period + 1) window.erase(window.begin());
    for (int n = 2; n < static_cast<int>(window.size()); ++n) {
      const auto& start = window[window.size() - 1 - static_cast<std::size_t>(n)];
      if (b.distance(start, window.back()) >= h.delta) continue;
      const auto r = b.anosov_close(start, n);
      std::vector<double> ts, tu, t;
      for (int i = 0; i <= n; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        ts.push_back(r.trace_y_x[ui]);
        tu.push_back(r.trace_y_p[ui]);
        t.push_back(i);
        const double env = r.C * r.gap * std::exp(-h.tau * std::min(i, n - i));
        if (r.trace[ui] > env * (1 + 1e-9) + 1e-14) ++c.envelope_violations;
      }
      std::vector<double> tb(t.rbegin(), t.rend());
      const auto fs = livsic::detail::decay_rate(ts, t, floor);
      const auto fu = livsic::detail::decay_rate(tu, tb, floor);
      if (fs.second >= 3 || fu.second >= 3) ++c.fitted;
      if (fs.second >= 3) c.min_rate = std::min(c.min_rate, fs.first);
      if (fu.second >= 3) c.min_rate = std::min(c.min_rate, fu.first);
      ++c.events;
      window.erase(window.begin(), window.end() - 1);
      break;
    }
  }
  c.passed = c.events == events && c.envelope_violations == 0 && c.fitted > 0 && c.min_rate >= c.tau - margin;
  return c;
}


inline json closing_json(const ClosingCheck& c, int events, double margin) {
  return json{{"name", "closing"},
              {"events", c.events},
              {"requested", events},
              {"fitted", c.fitted},
              {"min_rate", c.min_rate},
              {"tau", c.tau},
              {"threshold", c.tau - margin},
              {"envelope_violations", c.envelope_violations},
              {"passed", c.passed}};
}

inline Mat cat_matrix() {
  Mat M(2, 2);
  M << 2, 1, 1, 1;
  return M;
}

inline double cat_log_lambda() { return std::log((3 + std::sqrt(5.0)) / 2); }

inline json conjugacy(double ell, double delta, int trials, int len, std::uint64_t seed, int workers) {
  std::vector<ScaledMatrix> tr;
  ScaledMatrix p = ScaledMatrix::identity(2);
  for (int n = 0; n < len; ++n) {
    p = p.left_multiplied(cat_matrix());
    tr.push_back(p);
  }
  Vec lam(2);
  lam << cat_log_lambda(), -cat_log_lambda();
  const auto rep = bounded_conjugacy_stability(tr, lam, ell, delta, trials, seed, 0.05, workers);
  return json{{"name", "conjugacy"},
              {"ell", ell},
              {"delta", delta},
              {"N", rep.N},
              {"length", len},
              {"trials", rep.trials},
              {"violations", rep.violations},
              {"largest_violating_n", rep.largest_violating_n},
              {"worst_deviation", rep.worst_deviation},
              {"sandwich_violations", rep.sandwich_violations},
              {"worst_sandwich", rep.worst_sandwich},
              {"passed", rep.violations == 0 && rep.sandwich_violations == 0}};
}

/// Diagonal splitting with exponents +-0.5 and a second matrix inside the
/// hypothesis window; gamma and the perturbation radius are calibrated,
/// then each trial perturbs every matrix at that radius.
inline json cones(int trials, int samples, std::uint64_t seed, int workers) {
  auto c = make_cone_system({1, 1}, Mat::Identity(2, 2), {0.5, -0.5}, 0.2);
  std::vector<Mat> A;
  for (double s : {0.0, -0.03}) {
    Mat D = Mat::Zero(2, 2);
    D(0, 0) = std::exp(0.5 + s);
    D(1, 1) = std::exp(-0.5 + s);
    A.push_back(D);
  }
  CounterRng rng(seed, 0xc0e);
  calibrate_gamma(c, A, rng);
  calibrate_alpha1(c, A, seed ^ 0xa1a1);
  const auto reps = parallel_map(static_cast<std::size_t>(trials), workers, [&](std::size_t t) {
    CounterRng r(seed, 0x1000 + t);
    std::vector<Mat> P;
    for (std::size_t i = 0; i < A.size(); ++i) P.push_back(livsic::detail::random_perturbation(2, c.alpha1, r));
    return cone_invariance_check(c, A, P, samples, r, false);
  });
  json out{{"name", "cones"}, {"gamma", c.gamma}, {"alpha1", c.alpha1}, {"kappa", c.kappa}, {"delta", c.delta},
           {"trials", trials}};
  int failures = 0;
  double fast = 0, slow = 0, gs = -INFINITY, gf = -INFINITY;
  for (std::size_t t = 0; t < reps.size(); ++t) {
    const auto& r = reps[t];
    fast = std::max(fast, r.worst_fast_aperture);
    slow = std::max(slow, r.worst_slow_aperture);
    gs = std::max(gs, r.worst_slow_growth);
    gf = std::max(gf, r.worst_fast_growth);
    if (!r.passed) {
      if (failures == 0) out["witness"] = json{{"trial", t}, {"failure", r.failure}, {"vector", vec_json(r.witness)}};
      ++failures;
    }
  }
  out["samples_per_trial"] = reps.empty() ? 0 : reps.front().samples;
  out["rate_exponent"] = reps.empty() ? 0.0 : reps.front().rate_exponent;
  out["aperture_bound"] = std::exp(-c.kappa + c.delta / 2);
  out["worst_fast_aperture"] = fast;
  out["worst_slow_aperture"] = slow;
  out["worst_slow_growth"] = gs;
  out["worst_fast_growth"] = gf;
  out["failures"] = failures;
  out["passed"] = failures == 0;
  return out;
}

inline ConeSystem cat_cones() {
  Eigen::SelfAdjointEigenSolver<Mat> es(cat_matrix());
  Mat basis(2, 2);
  basis << es.eigenvectors().col(1), es.eigenvectors().col(0);
  return make_cone_system({1, 1}, basis, {cat_log_lambda(), -cat_log_lambda()}, 0.3);
}

/// Flags of constant perturbed cat matrices against their slow eigenvector.
inline json flags(int trials, int horizon, double perturbation, double angle_tol, std::uint64_t seed, int workers) {
  const auto c = cat_cones();
  struct Row {
    double angle = 0, rate_error = 0;
  };
  const auto rows = parallel_map(static_cast<std::size_t>(trials), workers, [&](std::size_t t) {
    CounterRng r(seed, 0x2000 + t);
    const Mat CM = cat_matrix() + livsic::detail::random_perturbation(2, perturbation, r);
    const auto f = flag_construction(c, std::vector<Mat>(static_cast<std::size_t>(horizon), CM), horizon);
    Eigen::EigenSolver<Mat> es(CM);
    const auto ev = es.eigenvalues();
    const int idx = std::abs(ev(0)) < std::abs(ev(1)) ? 0 : 1;
    const Vec slow = es.eigenvectors().col(idx).real().normalized();
    Row row;
    row.angle = subspace_angle(f.H[1], slow);
    row.rate_error = std::max(std::abs(f.rates[0] - std::log(std::abs(ev(1 - idx)))),
                              std::abs(f.rates[1] - std::log(std::abs(ev(idx)))));
    return row;
  });
  double angle = 0, rate = 0;
  for (const auto& r : rows) {
    angle = std::max(angle, r.angle);
    rate = std::max(rate, r.rate_error);
  }
  return json{{"name", "flags"},         {"trials", trials},        {"horizon", horizon},
              {"perturbation", perturbation}, {"worst_angle", angle}, {"angle_tolerance", angle_tol},
              {"worst_rate_error", rate}, {"rate_tolerance", c.delta / 2},
              {"passed", angle <= angle_tol && rate <= c.delta / 2}};
}

/// Random A, B in the allowed norm pattern, g linear and h a smooth
/// perturbation of it.
inline json conjugated_gap(int trials, double ell, double eta, std::uint64_t seed, int workers) {
  const auto grid = box_grid(2, 0.5, 9);
  struct Row {
    bool violated = false;
    double ratio = 0;
    std::string message;
  };
  const auto rows = parallel_map(static_cast<std::size_t>(trials), workers, [&](std::size_t t) {
    CounterRng rng(seed, 0x3000 + t);
    const auto bounded = [&](double bound) {
      Mat m(2, 2);
      for (int i = 0; i < 4; ++i) m(i / 2, i % 2) = rng.normal();
      return Mat(m * (bound * (0.05 + 0.95 * rng.uniform()) / op_norm(m)));
    };
    const bool swap = rng.below(2) == 1;
    const Mat A = bounded(swap ? ell : ell * std::exp(eta) * (1 - 1e-12));
    const Mat B = bounded(swap ? ell * std::exp(eta) * (1 - 1e-12) : ell);
    const Mat L = bounded(2.0);
    const double c1 = rng.uniform() - 0.5, c2 = rng.uniform() - 0.5, w = 1 + 3 * rng.uniform();
    const TangentMap g = linear_map(L);
    const TangentMap h = [=](const Vec& v) {
      Jet j{L * v, L};
      j.value(0) += c1 * std::sin(w * v(1));
      j.value(1) += c2 * std::cos(w * v(0));
      j.jacobian(0, 1) += c1 * w * std::cos(w * v(1));
      j.jacobian(1, 0) -= c2 * w * std::sin(w * v(0));
      return j;
    };
    Row row;
    try {
      const auto rep = conjugated_gap_check(A, B, g, h, ell, eta, grid);
      row.ratio = rep.bound > 0 ? rep.gap / rep.bound : 0.0;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::BoundViolated) throw;
      row.violated = true;
      row.message = e.what();
    }
    return row;
  });
  int violations = 0;
  double worst = 0;
  json out{{"name", "conjugated-gap"}, {"trials", trials}, {"ell", ell}, {"eta", eta}};
  for (std::size_t t = 0; t < rows.size(); ++t) {
    worst = std::max(worst, rows[t].ratio);
    if (rows[t].violated) {
      if (violations == 0) out["witness"] = json{{"trial", t}, {"message", rows[t].message}};
      ++violations;
    }
  }
  out["violations"] = violations;
  out["worst_gap_over_bound"] = worst;
  out["passed"] = violations == 0;
  return out;
}

inline std::vector<Diffeo> localization_families() {
  return {Diffeo::shear(1, 0.3),
          Diffeo::shear(1, 0.45, {2, 0}),
          compose(Diffeo::rotation(0.2), Diffeo::shear(1, 0.4)),
          Diffeo::shear(2, 0.3, {1, 1}, 0),
          compose(Diffeo::shear(2, 0.2, {0, 1}, 0), Diffeo::shear(2, 0.3, {1, 0}, 1))};
}

inline json localization(const std::vector<double>& radii, double beta, double tol) {
  json rows = json::array();
  bool passed = true;
  for (const auto& g : localization_families()) {
    const auto s = localization_slope(g, radii, beta);
    const bool ok = !s.affine && std::abs(s.slope - beta) <= tol;
    passed = passed && ok;
    rows.push_back(json{{"family", g.describe()},
                        {"gaps", s.gaps},
                        {"slope", s.slope},
                        {"constant", s.constant},
                        {"affine", s.affine},
                        {"passed", ok}});
  }
  return json{{"name", "localization"}, {"radii", radii}, {"beta", beta}, {"tolerance", tol}, {"families", rows},
              {"passed", passed}};
}

inline TangentMap quadratic_map(double c) {
  return [c](const Vec& x) {
    const double u = x(0), s = x(1);
    Jet j;
    j.value = Vec(2);
    j.value << 3 * u + c * s * s, 0.3 * s + c * (s * s + u * u) / 2;
    j.jacobian = Mat(2, 2);
    j.jacobian << 3, 2 * c * s, c * u, 0.3 + c * s;
    return j;
  };
}

/// Stable graph of a quadratic perturbation of diag(3, 0.3) against a
/// bisection on the sign of the first exit from |u| <= 2.
inline json graph_transform() {
  const double lambda = 0.5;
  Mat L = Mat::Zero(2, 2);
  L(0, 0) = 3;
  L(1, 1) = 0.3;
  const auto pts = box_grid(2, 1.0, 33);
  const double c = hadamard_perron_radius(lambda) / 2 / c1_gap(quadratic_map(1.0), linear_map(L), pts);
  const auto f = quadratic_map(c);
  const auto G = finite_graph_transform({L}, {f}, 1, 1, lambda);
  const auto bisect = [&](double s0) {
    const auto exit_sign = [&](double u0) {
      Vec x(2);
      x << u0, s0;
      for (int k = 0; k < 20; ++k) {
        x = f(x).value;
        if (std::abs(x(0)) > 2) return x(0) > 0 ? 1 : -1;
      }
      return 0;
    };
    double lo = -1, hi = 1;
    for (int it = 0; it < 80; ++it) {
      const double mid = 0.5 * (lo + hi);
      const int s = exit_sign(mid);
      if (s == 0) return mid;
      (s > 0 ? hi : lo) = mid;
    }
    return 0.5 * (lo + hi);
  };
  double worst = 0;
  for (int i = 0; i <= 40; ++i) {
    const double s = -1 + 2.0 * i / 40;
    Vec sv(1);
    sv << s;
    worst = std::max(worst, std::abs(G.eval(0, sv)(0) - bisect(s)));
  }
  return json{{"name", "graph-transform"},
              {"perturbation", c},
              {"sweeps", G.sweeps},
              {"invariance_residual", G.invariance_residual},
              {"max_slope", G.max_slope},
              {"oracle_error", worst},
              {"passed", G.invariance_residual <= 1e-8 && G.max_slope <= 1.0 && worst <= 1e-4}};
}

}  // namespace checks

// ---------------------------------------------------------------- experiments

namespace pipelines {

inline void poc_check(const ResolvedConfig& cfg, const Cocycle& A, int workers, RunOutput& out) {
  const auto& p = cfg.params;
  const auto& b = A.base();
  const int pmax = p.at("p_max").get<int>();
  const int grid = p.at("grid").get<int>() > 0 ? p.at("grid").get<int>() : (A.fiber_dim() == 1 ? 256 : 32);
  const double threshold = p.at("threshold").get<double>();
  CsvTable csv({"period", "points", "max_c0", "max_c1"});
  json rows = json::array();
  double c0 = 0, c1 = 0;
  for (int n = 1; n <= pmax; ++n) {
    const auto orbits = b.periodic_points(n);
    const auto res = parallel_map(orbits.size(), workers, [&](std::size_t i) { return A.poc_residual(orbits[i], grid); });
    double m0 = 0, m1 = 0;
    std::size_t worst = 0;
    for (std::size_t i = 0; i < res.size(); ++i) {
      m0 = std::max(m0, res[i].c0);
      if (res[i].c1 > m1) {
        m1 = res[i].c1;
        worst = i;
      }
    }
    json row{{"period", n}, {"points", orbits.size()}, {"max_c0", m0}, {"max_c1", m1}};
    if (!orbits.empty()) row["worst_point"] = point_json(b, orbits[worst].point);
    rows.push_back(row);
    csv.row({std::to_string(n), std::to_string(orbits.size()), format_number(m0), format_number(m1)});
    c0 = std::max(c0, m0);
    c1 = std::max(c1, m1);
  }
  const double worst = std::max(c0, c1);
  out.report["results"] = json{{"periods", rows}, {"max_c0", c0}, {"max_c1", c1}, {"threshold", threshold}, {"grid", grid}};
  out.report["verdict"] = worst <= threshold ? "all residuals ≤ " + format_number(threshold)
                                             : "max residual " + format_number(worst);
  out.csv.emplace_back("poc.csv", std::move(csv));
}

inline void spectrum(const ResolvedConfig& cfg, const Cocycle& A, int workers, RunOutput& out) {
  const auto& p = cfg.params;
  const int n = p.at("n").get<int>(), starts = p.at("starts").get<int>(), stride = p.at("trace_stride").get<int>();
  const double tol = p.at("tol").get<double>();
  const int q = A.fiber_dim();
  struct Run {
    SkewPoint z;
    DerivativeTrace tr;
    LyapunovSpectrum s;
  };
  const auto runs = parallel_map(static_cast<std::size_t>(starts), workers, [&](std::size_t s) {
    CounterRng rng(cfg.seed, s);
    Run r;
    r.z = random_skew_point(A, rng);
    r.tr = A.derivative_cocycle(r.z, n);
    r.s = spectrum_from_trace(r.tr, tol);
    return r;
  });
  std::vector<std::string> header{"start", "n"};
  for (int j = 1; j <= q; ++j) header.push_back("log_sigma_" + std::to_string(j));
  for (int j = 1; j <= q; ++j) header.push_back("lambda_est_" + std::to_string(j));
  CsvTable csv(header);
  json rows = json::array();
  double max_abs = 0, max_slope = 0;
  for (std::size_t s = 0; s < runs.size(); ++s) {
    const auto& r = runs[s];
    rows.push_back(json{{"start", skew_json(A.base(), r.z)},
                        {"all", vec_json(r.s.all)},
                        {"exponents", r.s.exponents},
                        {"multiplicities", r.s.multiplicities},
                        {"slope", r.s.slope},
                        {"det_rate", r.s.det_rate},
                        {"converged", r.s.slope <= tol}});
    max_abs = std::max(max_abs, r.s.all.cwiseAbs().maxCoeff());
    max_slope = std::max(max_slope, r.s.slope);
    for (int k = stride; k <= n; k += stride) {
      const Vec& ls = r.tr.log_svals[static_cast<std::size_t>(k - 1)];
      std::vector<std::string> cells{std::to_string(s), std::to_string(k)};
      for (int j = 0; j < q; ++j) cells.push_back(format_number(ls(j)));
      for (int j = 0; j < q; ++j) cells.push_back(format_number(ls(j) / k));
      csv.row(std::move(cells));
    }
  }
  out.report["results"] = json{{"n", n}, {"tol", tol}, {"starts", rows}, {"max_abs_exponent", max_abs},
                               {"max_slope", max_slope}};
  out.report["verdict"] = max_slope <= tol ? "converged" : "not converged";
  out.csv.emplace_back("spectrum.csv", std::move(csv));
}

inline void solve(const ResolvedConfig& cfg, const Cocycle& A, int workers, RunOutput& out) {
  auto o = solver_options(cfg.params, cfg.seed, workers);
  o.check_preconditions = cfg.params.at("check_preconditions").get<bool>();
  const auto u = livsic::solve(A, o);
  const auto v = verify_coboundary(u, A, o.verify_points, o.seed, workers, o.verify_tol);
  out.report["results"] = json{{"segment_length", u.segment_length()},
                               {"table_length", u.table_length()},
                               {"density", u.density()},
                               {"holonomy_depth", u.holonomy_depth()},
                               {"grid", o.fiber_grid_size(A.fiber_dim())},
                               {"anchor", point_json(A.base(), u.anchor())},
                               {"holder", holder_json(u.holder)},
                               {"verification", verification_json(v)}};
  out.report["verdict"] = v.passed ? "verified" : "residual above tolerance";
  if (!v.passed) out.exit_code = exit_code(ErrorCode::BoundViolated);
}

inline json classification_json(const BaseSystem& b, const Classification& c, const SolverOptions& o) {
  json w = json::array();
  for (const auto& x : c.scan.witnesses) w.push_back(witness_json(b, x));
  json residuals{{"poc_max", c.scan.poc_max},
                 {"poc_c0_max", c.scan.poc_c0_max},
                 {"orbits", c.scan.orbits},
                 {"periodic_exponent_max", c.scan.periodic_exponent_max},
                 {"fibered_exponent_max", c.scan.fibered_exponent_max},
                 {"fibered", c.scan.fibered}};
  if (c.residual) residuals["verification"] = verification_json(*c.residual);
  return json{{"verdict", c.verdict},
              {"marginal", c.marginal},
              {"reason", c.reason},
              {"witnesses", w},
              {"tolerances", {{"poc", o.poc_tol}, {"exponent", o.exp_tol}, {"verify", c.verify_tol}}},
              {"residuals", residuals},
              {"table_length", c.table_length},
              {"density", c.density}};
}

inline void classify(const ResolvedConfig& cfg, const Cocycle& A, int workers, RunOutput& out) {
  const auto o = solver_options(cfg.params, cfg.seed, workers);
  const auto c = livsic::classify(A, o);
  out.report["results"] = classification_json(A.base(), c, o);
  out.report["verdict"] = c.verdict;
  CsvTable csv({"start", "max_abs_exponent"});
  for (std::size_t s = 0; s < c.scan.fibered.size(); ++s)
    csv.row({std::to_string(s), format_number(c.scan.fibered[s])});
  out.csv.emplace_back("fibered_exponents.csv", std::move(csv));
}

inline json fake_set_json(const FakeSetParams& p) {
  return json{{"r0", p.r0},          {"C", p.C},         {"C_tilde", p.C_tilde}, {"kappa", p.kappa},
              {"eta", p.eta},        {"alpha2", p.alpha2}, {"beta", p.beta},     {"ell", p.ell},
              {"K_loc", p.K_loc},    {"tau", p.tau},     {"epsilon0", p.epsilon0}, {"N0", p.N0},
              {"closing_K", p.closing_K()}};
}

/// Recurrent skew events d(z_k, z_{k+n}) < epsilon0 along one orbit; after an
/// event the scan restarts at z_{k+n}, so events do not overlap.
inline std::vector<SkewPoint> recurrent_events(const Cocycle& A, SkewPoint z, int n, double eps, int events,
                                               long max_steps) {
  std::vector<SkewPoint> found;
  std::deque<SkewPoint> w{z};
  for (long k = 0; k < max_steps && static_cast<int>(found.size()) < events; ++k) {
    w.push_back(A.skew_step(w.back()));
    if (static_cast<int>(w.size()) > n + 1) w.pop_front();
    if (static_cast<int>(w.size()) == n + 1 && skew_distance(A.base(), w.front(), w.back()) < eps) {
      found.push_back(w.front());
      w.erase(w.begin(), w.end() - 1);
    }
  }
  return found;
}

inline void shadow(const ResolvedConfig& cfg, const Cocycle& A, int workers, RunOutput& out) {
  const auto& p = cfg.params;
  const auto& b = A.base();
  const int n = p.at("n").get<int>(), events = p.at("events").get<int>();
  const double margin = p.at("rate_margin").get<double>();
  CounterRng rng(cfg.seed, 0x5ad0);
  SkewPoint z = random_skew_point(A, rng);
  const auto spec = exponent_estimate(A, z, p.at("exp_n").get<int>(), 1e-2, false);
  const double beta = p.at("beta").get<double>();
  const auto loc = localization_slope(A(z.base), {0.1, 0.05, 0.025, 0.0125}, beta);
  auto fp = make_fake_set_params(spec.exponents, b.hyperbolicity().tau, beta, p.at("ell").get<double>(),
                                 loc.affine ? 0.0 : loc.constant, b.hyperbolicity().K0, n);
  const double eps_formula = fp.epsilon0;
  fp.epsilon0 = p.at("epsilon0").get<double>();
  const auto starts = recurrent_events(A, A.skew_step(z, 1000), n, fp.epsilon0, events,
                                       p.at("max_steps").get<long>());
  if (starts.empty())
    throw Error(ErrorCode::NotRecurrent, "no recurrent event within " + std::to_string(p.at("max_steps").get<long>()) +
                                             " steps at epsilon0 = " + format_number(fp.epsilon0));
  struct Event {
    std::optional<ShadowingResult> r;
    std::string error;
  };
  const auto res = parallel_map(starts.size(), workers, [&](std::size_t i) {
    Event e;
    try {
      e.r = fiber_close(A, starts[i], n, fp);
    } catch (const Error& err) {
      e.error = err.what();
    }
    return e;
  });
  CsvTable csv({"event", "i", "deviation"});
  json rows = json::array();
  int hyperbolic = 0, neutral = 0, errors = 0, slow = 0;
  double min_rate = INFINITY, max_defect = 0;
  for (std::size_t i = 0; i < res.size(); ++i) {
    json row{{"start", skew_json(b, starts[i])}};
    if (!res[i].r) {
      ++errors;
      row["error"] = res[i].error;
      rows.push_back(row);
      continue;
    }
    const auto& r = *res[i].r;
    row.update(shadowing_json(r));
    rows.push_back(row);
    max_defect = std::max(max_defect, r.base_orbit_defect);
    if (r.mode == "neutral") {
      ++neutral;
    } else {
      ++hyperbolic;
      min_rate = std::min(min_rate, r.fitted_rate);
      if (r.fitted_rate < fp.kappa - margin) ++slow;
    }
    for (std::size_t k = 0; k < r.deviations.size(); ++k)
      csv.row({std::to_string(i), std::to_string(k), format_number(r.deviations[k])});
  }
  const bool passed = errors == 0 && slow == 0 && max_defect <= 1e-12 && static_cast<int>(starts.size()) == events;
  out.report["results"] = json{{"fake_set", fake_set_json(fp)},
                               {"epsilon0_from_constants", eps_formula},
                               {"exponents", spec.exponents},
                               {"events", rows},
                               {"summary",
                                {{"requested", events},
                                 {"found", starts.size()},
                                 {"hyperbolic", hyperbolic},
                                 {"neutral", neutral},
                                 {"errors", errors},
                                 {"below_rate", slow},
                                 {"min_hyperbolic_rate", min_rate},
                                 {"rate_threshold", fp.kappa - margin},
                                 {"max_base_orbit_defect", max_defect},
                                 {"passed", passed}}}};
  out.report["verdict"] = passed ? "closed" : "closing bound not met";
  if (!passed) out.exit_code = exit_code(ErrorCode::BoundViolated);
  out.csv.emplace_back("deviations.csv", std::move(csv));
}

inline void lemma_tests(const ResolvedConfig& cfg, const BaseSystem& b, int workers, RunOutput& out) {
  const auto& p = cfg.params;
  const auto num = [&](const char* k) { return p.at(k).get<double>(); };
  const auto integer = [&](const char* k) { return p.at(k).get<int>(); };
  json rows = json::array();
  std::vector<std::string> failed;
  CsvTable csv({"check", "passed"});
  for (const auto& name : p.at("checks")) {
    const auto nm = name.get<std::string>();
    json r;
    if (nm == "closing") {
      const auto c = checks::closing_rates(b, integer("closing_events"), integer("closing_max_period"),
                                           num("rate_margin"), cfg.seed);
      r = checks::closing_json(c, integer("closing_events"), num("rate_margin"));
    } else if (nm == "conjugacy") {
      r = checks::conjugacy(num("ell"), num("delta"), integer("conjugacy_trials"), integer("conjugacy_length"),
                            cfg.seed, workers);
    } else if (nm == "cones") {
      r = checks::cones(integer("cone_trials"), integer("cone_samples"), cfg.seed, workers);
    } else if (nm == "flags") {
      r = checks::flags(integer("flag_trials"), integer("flag_horizon"), num("flag_perturbation"), num("flag_angle"),
                        cfg.seed, workers);
    } else if (nm == "conjugated-gap") {
      r = checks::conjugated_gap(integer("gap_trials"), num("gap_ell"), num("gap_eta"), cfg.seed, workers);
    } else if (nm == "localization") {
      r = checks::localization(p.at("radii").get<std::vector<double>>(), num("beta"), num("slope_tol"));
    } else {
      r = checks::graph_transform();
    }
    const bool ok = r.at("passed").get<bool>();
    if (!ok) failed.push_back(nm);
    csv.row({nm, ok ? "true" : "false"});
    rows.push_back(std::move(r));
  }
  out.report["results"] = json{{"checks", rows}, {"failed", failed}};
  if (failed.empty()) {
    out.report["verdict"] = "all lemma checks passed";
  } else {
    std::string v = "failed:";
    for (const auto& f : failed) v += " " + f;
    out.report["verdict"] = v;
    out.exit_code = exit_code(ErrorCode::BoundViolated);
  }
  out.csv.emplace_back("lemma_checks.csv", std::move(csv));
}

/// Classifies a family over an amplitude grid (plus the built-in
/// coboundaries) and records, where POC holds, whether vanishing exponents
/// and the coboundary verdict agree.
inline void sweep(const ResolvedConfig& cfg, std::shared_ptr<const BaseSystem> base, int workers, RunOutput& out) {
  const auto& p = cfg.params;
  const auto o = solver_options(p, cfg.seed, workers);
  const auto fam = p.at("family").get<std::string>();
  struct Entry {
    std::string family;
    double amplitude = 0;
    std::optional<std::string> expected;
    std::optional<Cocycle> A;
  };
  std::vector<Entry> entries;
  for (const auto& a : p.at("amplitudes")) {
    const double amp = a.get<double>();
    if (!(std::abs(amp) < 1)) config_error("$.params.amplitudes", "amplitudes must satisfy |a| < 1");
    Entry e;
    e.family = fam;
    e.amplitude = amp;
    if (fam == "constant-shear") {
      e.A.emplace(families::constant(base, Diffeo::shear(1, amp), "constant-shear"));
      // a = 0 is the identity; a != 0 has POC residual |a| / 2pi at the fixed point
      e.expected = amp == 0 ? "coboundary" : "obstruction";
    } else {
      e.A.emplace(families::shear(base, 1, 0.0, amp, {1, 0}));
    }
    entries.push_back(std::move(e));
  }
  if (p.at("coboundaries").get<bool>())
    for (const auto& t : families::transfer_families(base)) {
      Entry e;
      e.family = "coboundary-" + t.name;
      e.expected = "coboundary";
      e.A.emplace(make_coboundary(base, t.q, t.u, e.family));
      entries.push_back(std::move(e));
    }
  CsvTable csv({"family", "amplitude", "verdict", "poc_max", "exponent_max", "marginal", "equivalence_observed"});
  json rows = json::array();
  bool consistent = true;
  for (const auto& e : entries) {
    const auto c = livsic::classify(*e.A, o);
    const double exp_max = std::max(c.scan.periodic_exponent_max, c.scan.fibered_exponent_max);
    const bool poc = c.scan.poc_max <= o.poc_tol;
    const bool vanish = exp_max <= o.exp_tol;
    const bool cob = c.verdict == "coboundary";
    const bool equivalence = !poc || vanish == cob;
    const bool matches = !e.expected || *e.expected == c.verdict;
    consistent = consistent && equivalence && matches;
    json row{{"family", e.family},
             {"amplitude", e.amplitude},
             {"verdict", c.verdict},
             {"marginal", c.marginal},
             {"reason", c.reason},
             {"poc_max", c.scan.poc_max},
             {"exponent_max", exp_max},
             {"poc_holds", poc},
             {"exponents_vanish", vanish},
             {"equivalence_observed", equivalence},
             {"expected", e.expected ? json(*e.expected) : json(nullptr)},
             {"matches_expected", matches}};
    if (c.residual) row["verification"] = verification_json(*c.residual);
    rows.push_back(row);
    csv.row({e.family, format_number(e.amplitude), c.verdict, format_number(c.scan.poc_max), format_number(exp_max),
             c.marginal ? "true" : "false", equivalence ? "true" : "false"});
  }
  out.report["results"] = json{{"rows", rows},
                               {"tolerances", {{"poc", o.poc_tol}, {"exponent", o.exp_tol}}},
                               {"consistent", consistent}};
  out.report["verdict"] = consistent ? "equivalence observed on every row" : "equivalence or expected verdict violated";
  if (!consistent) out.exit_code = exit_code(ErrorCode::BoundViolated);
  out.csv.emplace_back("sweep.csv", std::move(csv));
}

}  // namespace pipelines

/// Runs the configured experiment. Module errors propagate; callers map them
/// to exit codes with error_report.
inline RunOutput run(const ResolvedConfig& cfg, int workers) {
  RunOutput out;
  out.report = json{{"version", kVersion}, {"config", cfg.echo()}};
  const auto base = make_base(cfg.base);
  const auto& e = cfg.experiment;
  if (e == "lemma-tests") {
    pipelines::lemma_tests(cfg, *base, workers, out);
  } else if (e == "main-theorem-sweep") {
    pipelines::sweep(cfg, base, workers, out);
  } else {
    const auto A = make_cocycle(base, cfg.cocycle);
    if (e == "poc-check") pipelines::poc_check(cfg, A, workers, out);
    else if (e == "spectrum") pipelines::spectrum(cfg, A, workers, out);
    else if (e == "solve") pipelines::solve(cfg, A, workers, out);
    else if (e == "classify") pipelines::classify(cfg, A, workers, out);
    else pipelines::shadow(cfg, A, workers, out);
  }
  out.report["status"] = out.exit_code == 0 ? "ok" : "bound-violation";
  return out;
}

inline json error_report(const ResolvedConfig& cfg, const Error& err) {
  return json{{"version", kVersion},
              {"config", cfg.echo()},
              {"status", "error"},
              {"error", {{"code", std::string(to_string(err.code()))}, {"message", err.what()}, {"exit_code", exit_code(err.code())}}}};
}

inline std::string report_text(const json& report) { return report.dump(2) + "\n"; }

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::ConfigInvalid, path.string() + ": cannot write");
  f << text;
}

inline void write_outputs(const std::filesystem::path& dir, const RunOutput& out) {
  std::filesystem::create_directories(dir);
  write_text(dir / "report.json", report_text(out.report));
  for (const auto& [name, table] : out.csv) write_text(dir / name, table.str());
}

}  // namespace livsic::lab

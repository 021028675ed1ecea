#pragma once

// Experiment configuration: TOML (or JSON when the file ends in .json),
// validated into an ExperimentConfig. Validation errors carry the source line.

#define TOML_EXCEPTIONS 1
#include <toml.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hlab/environments.hpp"
#include "hlab/error.hpp"
#include "hlab/greens.hpp"
#include "hlab/solver.hpp"

namespace hlab {

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

struct EnvCommandConfig {
  int samples = 4;
};

struct QmatrixConfig {
  int samples = 32;
  std::vector<std::vector<double>> xi;  ///< grid of xi points
  std::vector<double> eta;              ///< evaluated at every xi
  std::vector<double> q00_ladder = {1e-2, 5e-3, 2.5e-3};
  int series_terms = 0;                 ///< 0 disables the Neumann-series column
  std::vector<std::vector<double>> holder_xi;
  std::vector<double> holder_eta;
};

struct GreenConfig {
  int samples = 100;
  std::vector<double> eta = {0.05, 0.1, 0.2};
  int sources = 64;
  bool control_variate = true;
  std::vector<DecayClaim> claims = {DecayClaim::J1, DecayClaim::K1, DecayClaim::M1};
  int bootstrap = 400;
  double cutoff_scale = 0.0;  ///< 0 disables the smoothed split
  bool cache = true;
};

struct VerifyConfig {
  std::vector<int> criteria = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
  int sources = 256;        ///< point sources per sample in the Green's function criteria
  int rerun_threads = 0;    ///< 0: threads + 3
};

struct ExperimentConfig {
  EnvironmentSpec environment = EnvironmentSpec::bernoulli(0.0);
  int dim = 2;
  int side = 32;
  bool double_L = false;
  SolveControls solver;
  EnvCommandConfig env_cmd;
  QmatrixConfig qmatrix;
  GreenConfig green;
  VerifyConfig verify;
  std::string out = "out";
  std::uint64_t seed = 0;
  int threads = 1;
  std::uint64_t hash = 0;  ///< FNV-1a of the canonical (reserialized) document

  TorusGrid grid() const { return TorusGrid(dim, side); }
};

namespace detail {

inline std::string where(const toml::node& n) {
  const auto& s = n.source();
  return s.begin.line ? "line " + std::to_string(s.begin.line) + ": " : std::string();
}

class ConfigReader {
 public:
  explicit ConfigReader(const toml::table& root) : root_(root) {}

  [[noreturn]] void fail(const toml::node& n, const std::string& key, const std::string& msg) const {
    throw ConfigError(where(n) + key + ": " + msg);
  }
  [[noreturn]] void fail(const std::string& key, const std::string& msg) const { throw ConfigError(key + ": " + msg); }

  const toml::node* find(const toml::table& t, const std::string& key) const { return t.get(key); }

  double number(const toml::table& t, const std::string& key, std::optional<double> def = {}) const {
    const auto* n = find(t, key);
    if (!n) {
      if (def) return *def;
      fail(key, "required key missing");
    }
    if (const auto v = n->value<double>()) return *v;
    fail(*n, key, "expected a number");
  }
  std::int64_t integer(const toml::table& t, const std::string& key, std::optional<std::int64_t> def = {}) const {
    const auto* n = find(t, key);
    if (!n) {
      if (def) return *def;
      fail(key, "required key missing");
    }
    if (n->is_integer()) return *n->value<std::int64_t>();
    fail(*n, key, "expected an integer");
  }
  bool boolean(const toml::table& t, const std::string& key, bool def) const {
    const auto* n = find(t, key);
    if (!n) return def;
    if (n->is_boolean()) return *n->value<bool>();
    fail(*n, key, "expected true or false");
  }
  std::string string(const toml::table& t, const std::string& key, std::optional<std::string> def = {}) const {
    const auto* n = find(t, key);
    if (!n) {
      if (def) return *def;
      fail(key, "required key missing");
    }
    if (n->is_string()) return *n->value<std::string>();
    fail(*n, key, "expected a string");
  }
  std::vector<double> numbers(const toml::table& t, const std::string& key, std::vector<double> def) const {
    const auto* n = find(t, key);
    if (!n) return def;
    const auto* a = n->as_array();
    if (!a) fail(*n, key, "expected an array of numbers");
    std::vector<double> out;
    for (const auto& e : *a) {
      const auto v = e.value<double>();
      if (!v) fail(e, key, "expected an array of numbers");
      out.push_back(*v);
    }
    return out;
  }
  std::vector<std::vector<double>> points(const toml::table& t, const std::string& key, int d) const {
    const auto* n = find(t, key);
    if (!n) return {};
    const auto* a = n->as_array();
    if (!a) fail(*n, key, "expected an array of points");
    std::vector<std::vector<double>> out;
    for (const auto& e : *a) {
      const auto* p = e.as_array();
      if (!p || static_cast<int>(p->size()) != d) fail(e, key, "each point needs exactly " + std::to_string(d) + " numbers");
      std::vector<double> v;
      for (const auto& c : *p) {
        const auto x = c.value<double>();
        if (!x) fail(c, key, "expected a number");
        v.push_back(*x);
      }
      out.push_back(std::move(v));
    }
    return out;
  }
  const toml::table* table(const toml::table& t, const std::string& key) const {
    const auto* n = find(t, key);
    if (!n) return nullptr;
    if (!n->is_table()) fail(*n, key, "expected a table");
    return n->as_table();
  }
  Eigen::MatrixXd matrix(const toml::node& n, const std::string& key, int d) const {
    const auto* rows = n.as_array();
    if (!rows || static_cast<int>(rows->size()) != d) fail(n, key, "expected a " + std::to_string(d) + "x" + std::to_string(d) + " matrix");
    Eigen::MatrixXd m(d, d);
    for (int i = 0; i < d; ++i) {
      const auto* row = (*rows)[static_cast<std::size_t>(i)].as_array();
      if (!row || static_cast<int>(row->size()) != d) fail(n, key, "matrix rows must have " + std::to_string(d) + " entries");
      for (int j = 0; j < d; ++j) {
        const auto v = (*row)[static_cast<std::size_t>(j)].value<double>();
        if (!v) fail(n, key, "matrix entries must be numbers");
        m(i, j) = *v;
      }
    }
    return m;
  }

  /// Line of key within t, for messages about values that parse but fail validation.
  std::string line_of(const toml::table& t, const std::string& key) const {
    const auto* n = find(t, key);
    return n ? where(*n) : where(t);
  }

  /// Rejects keys of t outside `allowed`; `prefix` names the table in messages.
  void only(const toml::table& t, const std::string& prefix, std::initializer_list<std::string_view> allowed) const {
    for (const auto& [k, v] : t)
      if (std::find(allowed.begin(), allowed.end(), k.str()) == allowed.end())
        fail(v, prefix + std::string(k.str()), "unknown key");
  }

  const toml::table& root() const { return root_; }

 private:
  const toml::table& root_;
};

inline McmcControls read_mcmc(const ConfigReader& r, const toml::table* t) {
  McmcControls c;
  if (!t) return c;
  r.only(*t, "environment.mcmc.",
         {"burn_in", "adapt_steps", "trace_interval", "target_acceptance", "initial_step", "stationarity_z", "preconditioner"});
  c.burn_in = static_cast<int>(r.integer(*t, "burn_in", c.burn_in));
  c.adapt_steps = static_cast<int>(r.integer(*t, "adapt_steps", c.adapt_steps));
  c.trace_interval = static_cast<int>(r.integer(*t, "trace_interval", c.trace_interval));
  c.target_acceptance = r.number(*t, "target_acceptance", c.target_acceptance);
  c.initial_step = r.number(*t, "initial_step", c.initial_step);
  c.stationarity_z = r.number(*t, "stationarity_z", c.stationarity_z);
  const auto pre = r.string(*t, "preconditioner", "fourier");
  if (pre == "fourier") c.preconditioner = McmcPreconditioner::fourier;
  else if (pre == "none") c.preconditioner = McmcPreconditioner::none;
  else r.fail(*t->get("preconditioner"), "environment.mcmc.preconditioner", "expected \"fourier\" or \"none\"");
  try {
    c.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(where(*t) + "environment.mcmc: " + e.what());
  }
  return c;
}

inline GradientPotential read_potential(const ConfigReader& r, const toml::table& env) {
  const auto* t = r.table(env, "potential");
  if (!t) return GradientPotential::quadratic();
  r.only(*t, "environment.potential.", {"kappa", "lambda4"});
  GradientPotential V{r.number(*t, "kappa", 0.0), r.number(*t, "lambda4", 1.0)};
  try {
    V.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(where(*t) + "environment.potential: " + e.what());
  }
  return V;
}

inline EnvironmentSpec read_environment(const ConfigReader& r, const toml::table& env, int d) {
  const auto kind = r.string(env, "kind");
  r.only(env, "environment.",
         {"kind", "gamma", "law", "lo", "hi", "atoms", "potential", "mcmc", "map", "mass", "proxy_mass"});
  const auto guard = [&](const std::string& key, auto&& make) {
    try {
      return make();
    } catch (const InvalidArgument& e) {
      throw ConfigError(r.line_of(env, key) + "environment." + key + ": " + e.what());
    }
  };
  if (kind == "bernoulli") {
    const double gamma = r.number(env, "gamma");
    if (!(gamma >= 0.0 && gamma < 1.0))
      throw ConfigError(r.line_of(env, "gamma") + "environment.gamma: must satisfy 0 <= gamma < 1 so that the lower "
                        "ellipticity bound lambda = 1 - gamma stays > 0 (got " + std::to_string(gamma) + ")");
    return EnvironmentSpec::bernoulli(gamma);
  }
  if (kind == "iid_general") {
    const auto law = r.string(env, "law");
    if (law == "uniform") {
      const double lo = r.number(env, "lo"), hi = r.number(env, "hi");
      return guard("lo", [&] {
        auto m = MatrixDistribution::uniform(d, lo, hi);
        m.validate();
        return EnvironmentSpec{IidGeneralEnv{m}};
      });
    }
    if (law == "atoms") {
      const auto* n = env.get("atoms");
      const auto* arr = n ? n->as_array() : nullptr;
      if (!arr || arr->empty()) r.fail("environment.atoms", "expected a non-empty array of {weight, matrix} tables");
      std::vector<MatrixDistribution::Atom> atoms;
      for (const auto& e : *arr) {
        const auto* t = e.as_table();
        if (!t) r.fail(e, "environment.atoms", "each atom must be a table {weight, matrix}");
        r.only(*t, "environment.atoms.", {"weight", "matrix"});
        const auto* mn = t->get("matrix");
        if (!mn) r.fail(e, "environment.atoms.matrix", "required key missing");
        atoms.push_back({r.number(*t, "weight"), r.matrix(*mn, "environment.atoms.matrix", d)});
      }
      return guard("atoms", [&] {
        auto m = MatrixDistribution::mixture(d, std::move(atoms));
        m.validate();
        return EnvironmentSpec{IidGeneralEnv{m}};
      });
    }
    r.fail(*env.get("law"), "environment.law", "expected \"uniform\" or \"atoms\"");
  }
  if (kind == "massive_field" || kind == "massless_gradient") {
    const auto V = read_potential(r, env);
    const auto mcmc = read_mcmc(r, r.table(env, "mcmc"));
    const auto* map = r.table(env, "map");
    if (map) r.only(*map, "environment.map.", {"c0", "c1"});
    const double c0 = map ? r.number(*map, "c0", 1.0) : 1.0;
    const double c1 = map ? r.number(*map, "c1", 0.0) : 0.0;
    if (kind == "massive_field") {
      const double mass = r.number(env, "mass");
      if (!(mass > 0.0)) throw ConfigError(r.line_of(env, "mass") + "environment.mass: must be > 0");
      return guard("map", [&] {
        return EnvironmentSpec{MassiveFieldEnv{V, mass, mcmc, PhiCoefficientMap::tanh_scalar(d, c0, c1)}};
      });
    }
    const double proxy = r.number(env, "proxy_mass", 0.0);
    if (proxy < 0.0) throw ConfigError(r.line_of(env, "proxy_mass") + "environment.proxy_mass: must be >= 0");
    return guard("map", [&] {
      return EnvironmentSpec{MasslessGradientEnv{V, mcmc, GradientCoefficientMap::diag_tanh(d, c0, c1), proxy}};
    });
  }
  r.fail(*env.get("kind"), "environment.kind",
         "unknown kind \"" + kind + "\" (expected bernoulli, iid_general, massive_field or massless_gradient)");
}

inline DecayClaim parse_claim(const ConfigReader& r, const toml::node& n) {
  const auto s = n.value<std::string>();
  if (s) {
    for (auto c : {DecayClaim::J1, DecayClaim::K1, DecayClaim::M1, DecayClaim::A3, DecayClaim::B3})
      if (*s == to_string(c)) return c;
  }
  r.fail(n, "green.claims", "expected one of J1, K1, M1, A3, B3");
}

inline toml::table json_to_toml(const nlohmann::json& j);

inline void json_insert(toml::array& arr, const nlohmann::json& v);

inline void json_insert(toml::table& t, const std::string& k, const nlohmann::json& v) {
  if (v.is_object()) t.insert(k, json_to_toml(v));
  else if (v.is_array()) {
    toml::array a;
    for (const auto& e : v) json_insert(a, e);
    t.insert(k, std::move(a));
  } else if (v.is_boolean()) t.insert(k, v.get<bool>());
  else if (v.is_number_integer()) t.insert(k, v.get<std::int64_t>());
  else if (v.is_number()) t.insert(k, v.get<double>());
  else if (v.is_string()) t.insert(k, v.get<std::string>());
  else throw ConfigError(k + ": null values are not allowed");
}

inline void json_insert(toml::array& arr, const nlohmann::json& v) {
  if (v.is_object()) arr.push_back(json_to_toml(v));
  else if (v.is_array()) {
    toml::array a;
    for (const auto& e : v) json_insert(a, e);
    arr.push_back(std::move(a));
  } else if (v.is_boolean()) arr.push_back(v.get<bool>());
  else if (v.is_number_integer()) arr.push_back(v.get<std::int64_t>());
  else if (v.is_number()) arr.push_back(v.get<double>());
  else if (v.is_string()) arr.push_back(v.get<std::string>());
  else throw ConfigError("null values are not allowed");
}

inline toml::table json_to_toml(const nlohmann::json& j) {
  toml::table t;
  for (const auto& [k, v] : j.items()) json_insert(t, k, v);
  return t;
}

}  // namespace detail

/// Validates a parsed document.
inline ExperimentConfig config_from_table(const toml::table& root) {
  detail::ConfigReader r(root);
  ExperimentConfig c;
  static const char* known[] = {"seed", "out", "threads", "grid", "environment", "solver", "env", "qmatrix", "green", "verify"};
  for (const auto& [k, v] : root) {
    bool ok = false;
    for (const char* s : known) ok = ok || k.str() == s;
    if (!ok) r.fail(v, std::string(k.str()), "unknown key");
  }

  const auto seed = r.integer(root, "seed", 0);
  if (seed < 0) r.fail(*root.get("seed"), "seed", "must be >= 0");
  c.seed = static_cast<std::uint64_t>(seed);
  c.out = r.string(root, "out", c.out);
  c.threads = static_cast<int>(r.integer(root, "threads", 1));
  if (c.threads < 1) r.fail(*root.get("threads"), "threads", "must be >= 1");

  const auto* grid = r.table(root, "grid");
  if (!grid) r.fail("grid", "required table missing");
  r.only(*grid, "grid.", {"dim", "side", "double_L"});
  c.dim = static_cast<int>(r.integer(*grid, "dim"));
  c.side = static_cast<int>(r.integer(*grid, "side"));
  c.double_L = r.boolean(*grid, "double_L", false);
  if (c.dim < 1 || c.dim > 3) r.fail(*grid->get("dim"), "grid.dim", "must be 1, 2 or 3");
  if (c.side < 4 || c.side % 2) r.fail(*grid->get("side"), "grid.side", "must be even and >= 4");

  const auto* env = r.table(root, "environment");
  if (!env) r.fail("environment", "required table missing");
  c.environment = detail::read_environment(r, *env, c.dim);

  if (const auto* s = r.table(root, "solver")) {
    r.only(*s, "solver.", {"tolerance", "max_iterations"});
    c.solver.rel_tolerance = r.number(*s, "tolerance", c.solver.rel_tolerance);
    c.solver.max_iterations = static_cast<int>(r.integer(*s, "max_iterations", c.solver.max_iterations));
    try {
      c.solver.validate();
    } catch (const InvalidArgument& e) {
      throw ConfigError(detail::where(*s) + "solver: " + e.what());
    }
  }

  if (const auto* e = r.table(root, "env")) {
    r.only(*e, "env.", {"samples"});
    c.env_cmd.samples = static_cast<int>(r.integer(*e, "samples", c.env_cmd.samples));
    if (c.env_cmd.samples < 1) r.fail(*e->get("samples"), "env.samples", "must be >= 1");
  }

  const auto positive_etas = [&](const toml::table& t, const std::string& key, const std::vector<double>& v) {
    for (double x : v)
      if (!(x >= kEtaFloor)) throw ConfigError(r.line_of(t, key) + key + ": every eta must be >= " + std::to_string(kEtaFloor));
  };
  if (const auto* q = r.table(root, "qmatrix")) {
    auto& Q = c.qmatrix;
    r.only(*q, "qmatrix.", {"samples", "xi", "eta", "q00_ladder", "series_terms", "holder_xi", "holder_eta"});
    Q.samples = static_cast<int>(r.integer(*q, "samples", Q.samples));
    if (Q.samples < 1) r.fail(*q->get("samples"), "qmatrix.samples", "must be >= 1");
    Q.xi = r.points(*q, "xi", c.dim);
    Q.eta = r.numbers(*q, "eta", {});
    positive_etas(*q, "qmatrix.eta", Q.eta);
    Q.q00_ladder = r.numbers(*q, "q00_ladder", Q.q00_ladder);
    positive_etas(*q, "qmatrix.q00_ladder", Q.q00_ladder);
    if (!Q.q00_ladder.empty() && Q.q00_ladder.size() < 3)
      throw ConfigError(r.line_of(*q, "q00_ladder") + "qmatrix.q00_ladder: needs >= 3 values (or [] to skip)");
    Q.series_terms = static_cast<int>(r.integer(*q, "series_terms", 0));
    if (Q.series_terms < 0) r.fail(*q->get("series_terms"), "qmatrix.series_terms", "must be >= 0");
    Q.holder_xi = r.points(*q, "holder_xi", c.dim);
    Q.holder_eta = r.numbers(*q, "holder_eta", {});
    positive_etas(*q, "qmatrix.holder_eta", Q.holder_eta);
    if ((Q.holder_xi.empty() != Q.holder_eta.empty()) ||
        (!Q.holder_xi.empty() && (Q.holder_xi.size() < 8 || Q.holder_eta.size() < 8)))
      throw ConfigError(r.line_of(*q, "holder_xi") + "qmatrix.holder_xi/holder_eta: give both, with >= 8 points each");
  }

  if (const auto* g = r.table(root, "green")) {
    auto& G = c.green;
    r.only(*g, "green.", {"samples", "eta", "sources", "control_variate", "claims", "bootstrap", "cutoff_scale", "cache"});
    G.samples = static_cast<int>(r.integer(*g, "samples", G.samples));
    if (G.samples < 1) r.fail(*g->get("samples"), "green.samples", "must be >= 1");
    G.eta = r.numbers(*g, "eta", G.eta);
    positive_etas(*g, "green.eta", G.eta);
    G.sources = static_cast<int>(r.integer(*g, "sources", G.sources));
    if (G.sources < 1) r.fail(*g->get("sources"), "green.sources", "must be >= 1");
    G.control_variate = r.boolean(*g, "control_variate", G.control_variate);
    G.bootstrap = static_cast<int>(r.integer(*g, "bootstrap", G.bootstrap));
    G.cutoff_scale = r.number(*g, "cutoff_scale", 0.0);
    if (G.cutoff_scale < 0.0 || G.cutoff_scale > c.side / 4.0)
      throw ConfigError(r.line_of(*g, "cutoff_scale") + "green.cutoff_scale: must lie in [0, L/4]");
    G.cache = r.boolean(*g, "cache", G.cache);
    if (const auto* n = g->get("claims")) {
      const auto* a = n->as_array();
      if (!a) r.fail(*n, "green.claims", "expected an array of strings");
      G.claims.clear();
      for (const auto& e : *a) G.claims.push_back(detail::parse_claim(r, e));
    }
    if (!G.claims.empty() && G.eta.size() < 3)
      throw ConfigError(r.line_of(*g, "eta") + "green.eta: decay fits need tables at >= 3 values of eta");
  }

  if (const auto* v = r.table(root, "verify")) {
    auto& V = c.verify;
    r.only(*v, "verify.", {"criteria", "sources", "rerun_threads"});
    if (const auto* n = v->get("criteria")) {
      const auto* a = n->as_array();
      if (!a) r.fail(*n, "verify.criteria", "expected an array of integers");
      V.criteria.clear();
      for (const auto& e : *a) {
        const auto id = e.value<std::int64_t>();
        if (!id || *id < 1 || *id > 12) r.fail(e, "verify.criteria", "entries must be integers in 1..12");
        V.criteria.push_back(static_cast<int>(*id));
      }
    }
    V.sources = static_cast<int>(r.integer(*v, "sources", V.sources));
    if (V.sources < 1) r.fail(*v->get("sources"), "verify.sources", "must be >= 1");
    V.rerun_threads = static_cast<int>(r.integer(*v, "rerun_threads", V.rerun_threads));
    if (V.rerun_threads < 0) r.fail(*v->get("rerun_threads"), "verify.rerun_threads", "must be >= 0");
  }

  std::ostringstream canon;
  canon << toml::json_formatter{root};
  c.hash = fnv1a64(canon.str());
  return c;
}

/// Parses TOML text; `name` labels error messages.
inline ExperimentConfig parse_config(std::string_view text, std::string_view name = "config") {
  try {
    const auto root = toml::parse(text, name);
    return config_from_table(root);
  } catch (const toml::parse_error& e) {
    const auto& s = e.source();
    throw ConfigError(std::string(name) + ":" + std::to_string(s.begin.line) + ":" + std::to_string(s.begin.column) +
                      ": " + std::string(e.description()));
  }
}

inline ExperimentConfig parse_config_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("json: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("json: top level must be an object");
  return config_from_table(detail::json_to_toml(j));
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  if (path.extension() == ".json") return parse_config_json(ss.str());
  return parse_config(ss.str(), path.string());
}

}  // namespace hlab

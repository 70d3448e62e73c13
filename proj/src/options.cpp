#include "bifa/options.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <sstream>

namespace bifa {

namespace {

enum class Kind { kInt, kUint, kDouble, kBool, kString, kInts, kStrings, kMethods };

struct KeySpec {
  const char* name;
  Kind kind;
  bool per_method;
};

const std::vector<KeySpec> kKeys = {
    // MCMC control and factor counts.
    {"k", Kind::kInt, true},
    {"j", Kind::kInts, true},
    {"nrun", Kind::kInt, true},
    {"burn", Kind::kInt, true},
    {"thin", Kind::kInt, true},
    {"seed", Kind::kUint, true},
    {"evd_refit", Kind::kBool, true},
    {"evd_threshold", Kind::kDouble, true},
    // Shrinkage and residual priors.
    {"kappa", Kind::kDouble, true},
    {"a1", Kind::kDouble, true},
    {"a2", Kind::kDouble, true},
    {"psi_shape", Kind::kDouble, true},
    {"psi_scale", Kind::kDouble, true},
    // PFA.
    {"cutoff", Kind::kDouble, true},
    {"alpha_q", Kind::kDouble, true},
    {"truncation_start", Kind::kDouble, true},
    {"a_nu", Kind::kDouble, true},
    {"b_nu", Kind::kDouble, true},
    {"allow_large_p", Kind::kBool, true},
    // MOM-SS.
    {"tau0", Kind::kDouble, true},
    {"tau1", Kind::kDouble, true},
    {"a_zeta", Kind::kDouble, true},
    {"b_zeta", Kind::kDouble, true},
    {"max_iter", Kind::kInt, true},
    {"tol", Kind::kDouble, true},
    {"init", Kind::kString, true},
    {"update_zeta", Kind::kBool, true},
    {"folds", Kind::kInt, true},
    // SUFA.
    {"a_dl", Kind::kDouble, true},
    {"hmc_steps", Kind::kInt, true},
    {"step_size", Kind::kDouble, true},
    {"adapt_target", Kind::kDouble, true},
    {"threads", Kind::kInt, true},
    {"spread_remainder", Kind::kBool, true},
    // Tetris.
    {"alpha", Kind::kDouble, true},
    {"beta", Kind::kDouble, true},
    {"k_init", Kind::kInt, true},
    {"cap_factor", Kind::kDouble, true},
    {"mode_radius", Kind::kInt, true},
    {"checkpoint", Kind::kString, true},
    {"checkpoint_every", Kind::kInt, true},
    {"time_budget", Kind::kDouble, true},
    {"resume", Kind::kBool, true},
    {"fixed_t", Kind::kString, true},
    // Runs.
    {"command", Kind::kString, false},
    {"method", Kind::kString, false},
    {"data", Kind::kStrings, false},
    {"covariates", Kind::kStrings, false},
    {"center", Kind::kBool, false},
    {"scale", Kind::kBool, false},
    {"log_offset", Kind::kDouble, false},
    {"out_dir", Kind::kString, false},
    {"edge_threshold", Kind::kDouble, false},
    {"scenarios", Kind::kInts, false},
    {"scenario", Kind::kInt, false},
    {"methods", Kind::kMethods, false},
    {"reps", Kind::kInt, false},
    {"mini", Kind::kBool, false},
    {"overspecified", Kind::kBool, false},
    {"mse", Kind::kBool, false},
    {"workers", Kind::kInt, false},
};

const KeySpec* find_key(const std::string& name) {
  for (const auto& k : kKeys)
    if (name == k.name) return &k;
  return nullptr;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  for (std::string item; std::getline(ss, item, ',');) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

long long parse_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const std::string t = trim(v);
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty())
    throw ConfigError("option '" + key + "': '" + v + "' is not an integer");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  const std::string t = trim(v);
  try {
    std::size_t used = 0;
    const double out = std::stod(t, &used);
    if (used == t.size()) return out;
  } catch (const std::exception&) {
  }
  throw ConfigError("option '" + key + "': '" + v + "' is not a number");
}

bool parse_bool(const std::string& key, const std::string& v) {
  const std::string t = trim(v);
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw ConfigError("option '" + key + "': '" + v + "' is not a boolean");
}

void check_value(const std::string& key, Kind kind, const std::string& v) {
  switch (kind) {
    case Kind::kInt: parse_int(key, v); break;
    case Kind::kUint:
      if (parse_int(key, v) < 0) throw ConfigError("option '" + key + "' must be non-negative");
      break;
    case Kind::kDouble: parse_double(key, v); break;
    case Kind::kBool: parse_bool(key, v); break;
    case Kind::kString: break;
    case Kind::kInts:
      for (const auto& item : split_list(v)) parse_int(key, item);
      break;
    case Kind::kStrings: break;
    case Kind::kMethods:
      for (const auto& item : split_list(v)) parse_method(item);
      break;
  }
}

IntMatrix read_sharing(const std::string& path) {
  const CsvTable t = read_csv(path);
  IntMatrix m(t.values.rows(), t.values.cols());
  for (Index i = 0; i < m.size(); ++i) {
    const double v = t.values.data()[i];
    if (v != 0.0 && v != 1.0) throw ConfigError(path + ": sharing matrix entries must be 0 or 1");
    m.data()[i] = static_cast<int>(v);
  }
  return m;
}

}  // namespace

void Options::set(const std::string& key, const std::string& value) {
  std::string bare = key;
  const auto dot = key.find('.');
  if (dot != std::string::npos) {
    parse_method(key.substr(0, dot));
    bare = key.substr(dot + 1);
  }
  const KeySpec* spec = find_key(bare);
  if (!spec) throw ConfigError("unknown option '" + key + "'");
  if (dot != std::string::npos && !spec->per_method)
    throw ConfigError("option '" + bare + "' cannot be scoped to a method");
  check_value(key, spec->kind, value);
  if (bare == "method") parse_method(trim(value));
  if (bare == "init") {
    const std::string t = trim(value);
    if (t != "auto" && t != "plain" && t != "varimax") throw ConfigError("option 'init' must be auto, plain or varimax");
  }
  values_[key] = value;
}

std::string Options::get(const std::string& key, const std::string& fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

MethodConfig Options::method_config(Method m) const {
  const std::string prefix = std::string(method_name(m)) + ".";
  auto lookup = [&](const char* k) -> const std::string* {
    auto it = values_.find(prefix + k);
    if (it != values_.end()) return &it->second;
    it = values_.find(k);
    return it != values_.end() ? &it->second : nullptr;
  };
  MethodConfig c;
  auto as_int = [&](const char* k, auto& dst) {
    if (const auto* v = lookup(k)) dst = static_cast<std::remove_reference_t<decltype(dst)>>(parse_int(k, *v));
  };
  auto as_double = [&](const char* k, double& dst) {
    if (const auto* v = lookup(k)) dst = parse_double(k, *v);
  };
  auto as_bool = [&](const char* k, bool& dst) {
    if (const auto* v = lookup(k)) dst = parse_bool(k, *v);
  };

  as_int("k", c.k);
  if (const auto* v = lookup("j"))
    for (const auto& item : split_list(*v)) c.j.push_back(static_cast<Index>(parse_int("j", item)));
  as_int("nrun", c.mcmc.nrun);
  as_int("burn", c.mcmc.burn);
  as_int("thin", c.mcmc.thin);
  as_int("seed", c.mcmc.seed);
  as_bool("evd_refit", c.evd_refit);
  as_double("evd_threshold", c.evd_threshold);

  for (MgpsHyper* h : {&c.mgps.hyper, &c.pfa.hyper, &c.tetris.hyper}) {
    as_double("kappa", h->kappa);
    as_double("a1", h->a1);
    as_double("a2", h->a2);
  }
  for (PsiPrior* p : {&c.mgps.psi_prior, &c.pfa.psi_prior, &c.tetris.psi_prior}) {
    as_double("psi_shape", p->shape);
    as_double("psi_scale", p->scale);
  }
  as_double("psi_shape", c.momss.psi_shape);
  as_double("psi_scale", c.momss.psi_scale);

  as_double("cutoff", c.pfa.cutoff);
  if (const auto* v = lookup("alpha_q")) c.pfa.alpha_q = parse_double("alpha_q", *v);
  as_double("truncation_start", c.pfa.truncation_start);
  as_double("a_nu", c.pfa.a_nu);
  as_double("b_nu", c.pfa.b_nu);
  as_bool("allow_large_p", c.pfa.allow_large_p);

  as_double("tau0", c.momss.nlp.tau0);
  as_double("tau1", c.momss.nlp.tau1);
  as_double("a_zeta", c.momss.nlp.a_zeta);
  as_double("b_zeta", c.momss.nlp.b_zeta);
  as_int("max_iter", c.momss.max_iter);
  as_double("tol", c.momss.tol);
  if (const auto* v = lookup("init")) {
    const std::string t = trim(*v);
    if (t == "plain") c.momss.force_init = MomssInit::kPlain;
    if (t == "varimax") c.momss.force_init = MomssInit::kVarimax;
  }
  as_bool("update_zeta", c.momss.update_zeta);
  as_int("folds", c.momss.folds);

  as_double("a_dl", c.sufa.a_dl);
  as_int("hmc_steps", c.sufa.hmc.steps);
  as_double("step_size", c.sufa.hmc.step_size);
  as_double("adapt_target", c.sufa.hmc.adapt_target);
  as_int("threads", c.sufa.threads);
  as_bool("spread_remainder", c.sufa.spread_remainder);

  const auto* alpha = lookup("alpha");
  const auto* beta = lookup("beta");
  if (alpha || beta) {
    if (!alpha || !beta) throw ConfigError("tetris: set both alpha and beta");
    c.tetris.ibp = IbpConfig{parse_double("alpha", *alpha), parse_double("beta", *beta)};
  }
  as_int("k_init", c.tetris.k_init);
  as_double("cap_factor", c.tetris.cap_factor);
  as_int("mode_radius", c.tetris.mode_radius);
  if (const auto* v = lookup("checkpoint")) c.tetris.checkpoint_path = trim(*v);
  as_int("checkpoint_every", c.tetris.checkpoint_every);
  as_double("time_budget", c.tetris.time_budget_seconds);
  as_bool("resume", c.tetris.resume);
  if (const auto* v = lookup("fixed_t")) c.tetris.fixed_t = SharingMatrix(read_sharing(trim(*v)));
  return c;
}

BenchConfig Options::bench_config() const {
  BenchConfig b;
  if (has("scenarios")) {
    b.scenarios.clear();
    for (const auto& item : split_list(get("scenarios"))) b.scenarios.push_back(static_cast<int>(parse_int("scenarios", item)));
  } else if (has("scenario")) {
    b.scenarios = {static_cast<int>(parse_int("scenario", get("scenario")))};
  }
  if (has("methods")) {
    b.methods.clear();
    for (const auto& item : split_list(get("methods"))) b.methods.push_back(parse_method(item));
  } else if (has("method")) {
    b.methods = {parse_method(trim(get("method")))};
  }
  if (has("reps")) b.reps = static_cast<int>(parse_int("reps", get("reps")));
  if (has("seed")) b.seed = static_cast<std::uint64_t>(parse_int("seed", get("seed")));
  if (has("mini")) b.mini = parse_bool("mini", get("mini"));
  if (has("overspecified")) b.overspecified = parse_bool("overspecified", get("overspecified"));
  if (has("mse")) b.mse = parse_bool("mse", get("mse"));
  if (has("workers")) b.workers = static_cast<int>(parse_int("workers", get("workers")));
  b.out_dir = trim(get("out_dir"));
  for (Method m : b.methods) {
    MethodConfig mc = method_config(m);
    b.method_configs.push_back({m, mc});
  }
  return b;
}

PreprocessSpec Options::preprocess_spec() const {
  PreprocessSpec p;
  if (has("center")) p.center = parse_bool("center", get("center"));
  if (has("scale")) p.scale = parse_bool("scale", get("scale"));
  return p;
}

double Options::log_offset() const { return has("log_offset") ? parse_double("log_offset", get("log_offset")) : 0.0; }

std::string Options::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : values_) j[k] = v;
  return j.dump(2);
}

std::vector<std::string> Options::known_keys() {
  std::vector<std::string> out;
  for (const auto& k : kKeys) out.emplace_back(k.name);
  return out;
}

}  // namespace bifa

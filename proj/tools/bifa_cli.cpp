// Command-line front end over the C API.
#include "bifa/bifa.h"

#include <CLI11.hpp>
#define TOML_EXCEPTIONS 1
#include <toml.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kMethods = {"stackfa", "indfa", "pfa", "momss", "sufa", "bmsfa", "tetris"};
// Sections whose keys are not scoped to a method.
const std::vector<std::string> kPlainSections = {"run", "fit", "bench", "mcmc", "preprocess", "simulate", "data"};

struct Failure {
  int exit_code;
  std::string status;
  std::string message;
};

int exit_code_for(bifa_status s) {
  switch (s) {
    case BIFA_OK: return 0;
    case BIFA_ERR_NUMERIC: return 3;
    case BIFA_ERR_GUARD: return 4;
    case BIFA_ERR_INTERNAL: return 1;
    default: return 2;
  }
}

void check(bifa_status s) {
  if (s != BIFA_OK) throw Failure{exit_code_for(s), bifa_status_name(s), bifa_last_error()};
}

std::string json_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof buf, "\\u%04x", c);
          out += buf;
        } else {
          out += c;
        }
    }
  }
  return out;
}

std::string error_json(const Failure& f) {
  return "{\"status\": \"" + json_escape(f.status) + "\", \"exit_code\": " + std::to_string(f.exit_code) +
         ", \"message\": \"" + json_escape(f.message) + "\"}";
}

std::string scalar_text(const toml::node& n) {
  if (auto v = n.value<std::string>()) return *v;
  if (auto v = n.value<bool>(); v && n.is_boolean()) return *v ? "true" : "false";
  if (n.is_integer()) return std::to_string(*n.value<long long>());
  if (n.is_floating_point()) {
    std::ostringstream o;
    o.precision(17);
    o << *n.value<double>();
    return o.str();
  }
  if (const auto* arr = n.as_array()) {
    std::string out;
    for (const auto& item : *arr) out += (out.empty() ? "" : ",") + scalar_text(item);
    return out;
  }
  throw Failure{2, "config", "unsupported value type in configuration"};
}

// Flattens a TOML file: [stackfa] k = 6 becomes "stackfa.k"; plain sections
// and top-level keys become bare keys.
std::vector<std::pair<std::string, std::string>> read_config(const std::string& path) {
  toml::table tbl;
  try {
    tbl = toml::parse_file(path);
  } catch (const toml::parse_error& e) {
    std::ostringstream o;
    o << path << ": " << e.description() << " (line " << e.source().begin.line << ")";
    throw Failure{2, "config", o.str()};
  }
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& [key, node] : tbl) {
    const std::string k(key.str());
    if (const auto* sub = node.as_table()) {
      const bool method = std::find(kMethods.begin(), kMethods.end(), k) != kMethods.end();
      const bool plain = std::find(kPlainSections.begin(), kPlainSections.end(), k) != kPlainSections.end();
      if (!method && !plain) throw Failure{2, "config", path + ": unknown section [" + k + "]"};
      for (const auto& [sk, sn] : *sub) out.emplace_back(method ? k + "." + std::string(sk.str()) : std::string(sk.str()), scalar_text(sn));
    } else {
      out.emplace_back(k, scalar_text(node));
    }
  }
  return out;
}

struct OptionsHandle {
  bifa_options* p = nullptr;
  OptionsHandle() { check(bifa_options_create(&p)); }
  ~OptionsHandle() { bifa_options_free(p); }
  void set(const std::string& k, const std::string& v) { check(bifa_options_set(p, k.c_str(), v.c_str())); }
  std::string get(const std::string& k) const {
    size_t needed = 0;
    check(bifa_options_get(p, k.c_str(), nullptr, 0, &needed));
    std::string buf(needed, '\0');
    check(bifa_options_get(p, k.c_str(), buf.data(), buf.size(), &needed));
    buf.resize(needed - 1);
    return buf;
  }
};

// File values first, then --set pairs, then dedicated flags.
void apply(OptionsHandle& o, const std::string& config, const std::vector<std::string>& sets,
           const std::map<std::string, std::string>& flags) {
  if (!config.empty())
    for (const auto& [k, v] : read_config(config)) o.set(k, v);
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Failure{2, "config", "--set expects key=value, got '" + kv + "'"};
    o.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  for (const auto& [k, v] : flags) o.set(k, v);
}

std::vector<std::string> split(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Failure{2, "io", "cannot write " + p.string()};
  out << text;
}

int progress_printer(long it, long total, void*) {
  if (total >= 10 && it % (total / 10) == 0) std::fprintf(stderr, "  iteration %ld / %ld\n", it, total);
  return 0;
}

int cmd_fit(OptionsHandle& o, bool progress, const std::string& edges_which) {
  const std::string method = o.get("method");
  if (method.empty()) throw Failure{2, "config", "fit: no method given"};
  const std::vector<std::string> data = split(o.get("data"));
  if (data.empty()) throw Failure{2, "config", "fit: no data files given"};
  for (const auto& d : data)
    if (!fs::exists(d)) throw Failure{2, "config", "fit: data file " + d + " does not exist"};
  const std::vector<std::string> cov = split(o.get("covariates"));
  for (const auto& c : cov)
    if (!fs::exists(c)) throw Failure{2, "config", "fit: covariate file " + c + " does not exist"};
  std::string out_dir = o.get("out_dir");
  if (out_dir.empty()) out_dir = "bifa_out";

  std::vector<const char*> dp, cp;
  for (const auto& d : data) dp.push_back(d.c_str());
  for (const auto& c : cov) cp.push_back(c.c_str());
  bifa_dataset* ds = nullptr;
  check(bifa_dataset_load(dp.data(), dp.size(), cp.empty() ? nullptr : cp.data(), cp.size(), &ds));
  std::unique_ptr<bifa_dataset, void (*)(bifa_dataset*)> ds_guard(ds, bifa_dataset_free);
  check(bifa_dataset_preprocess(ds, o.p));

  bifa_fit* fit = nullptr;
  check(bifa_fit_run(method.c_str(), ds, o.p, progress ? progress_printer : nullptr, nullptr, &fit));
  std::unique_ptr<bifa_fit, void (*)(bifa_fit*)> fit_guard(fit, bifa_fit_free);

  std::string seed = o.get("seed");
  if (seed.empty()) seed = "0";
  const fs::path dir = fs::path(out_dir) / method / "data" / seed;
  check(bifa_fit_write(fit, ds, dir.string().c_str()));
  const std::string threshold = o.get("edge_threshold");
  if (!threshold.empty()) {
    const double t = std::stod(threshold);
    long k = 0;
    size_t studies = 0;
    check(bifa_fit_counts(fit, &k, &studies));
    if (k > 0 && edges_which != "study")
      check(bifa_fit_write_edges(fit, ds, BIFA_SIGMA_PHI, 0, t, 1, (dir / "edges_common.csv").string().c_str()));
    if (edges_which != "common")
      for (size_t s = 0; s < studies; ++s)
        check(bifa_fit_write_edges(fit, ds, BIFA_SIGMA, s, t, 1,
                                   (dir / ("edges_study_" + std::to_string(s + 1) + ".csv")).string().c_str()));
  }
  std::cout << bifa_fit_meta_json(fit) << "\n";
  std::cerr << "wrote " << dir.string() << "\n";
  return 0;
}

int cmd_bench(OptionsHandle& o) {
  bifa_bench* b = nullptr;
  check(bifa_bench_run(o.p, &b));
  std::unique_ptr<bifa_bench, void (*)(bifa_bench*)> guard(b, bifa_bench_free);
  const std::string out_dir = o.get("out_dir");
  if (!out_dir.empty()) write_text(fs::path(out_dir) / "config.json", "{\"version\": \"" + std::string(bifa_version()) + "\"}\n");
  std::cout << bifa_bench_table(b, "factor_counts") << "\n" << bifa_bench_table(b, "accuracy") << "\n"
            << bifa_bench_table(b, "profile");
  int failed = 0;
  for (size_t i = 0; i < bifa_bench_size(b); ++i)
    if (std::string(bifa_bench_record_json(b, i)).find("\"status\": \"ok\"") == std::string::npos) ++failed;
  if (failed) std::cerr << failed << " cell(s) failed; see the per-cell records\n";
  return 0;
}

int cmd_simulate(OptionsHandle& o) {
  const std::string sc = o.get("scenario");
  if (sc.empty()) throw Failure{2, "config", "simulate: no scenario given"};
  std::string out_dir = o.get("out_dir");
  if (out_dir.empty()) out_dir = "bifa_sim";
  const std::string seed = o.get("seed").empty() ? "0" : o.get("seed");
  const bool mini = o.get("mini") == "true" || o.get("mini") == "1";
  check(bifa_simulate(std::stoi(sc), std::stoull(seed), mini ? 1 : 0, out_dir.c_str()));
  std::cout << "wrote scenario " << sc << " (seed " << seed << ") to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian integrative factor analysis for multi-study data"};
  app.set_version_flag("--version", std::string(bifa_version()));
  app.require_subcommand(1);

  std::string config;
  std::vector<std::string> sets;
  bool progress = false;
  std::string edges = "both";

  std::map<std::string, std::string> flags;
  auto flag = [&](CLI::App* sub, const std::string& name, const std::string& key, const std::string& help) {
    sub->add_option_function<std::string>(name, [&flags, key](const std::string& v) { flags[key] = v; }, help);
  };
  auto common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config, "TOML configuration file")->check(CLI::ExistingFile);
    sub->add_option("--set", sets, "extra key=value setting (repeatable)");
    flag(sub, "-o,--out", "out_dir", "output directory");
    flag(sub, "--seed", "seed", "random seed");
  };

  CLI::App* fit = app.add_subcommand("fit", "fit one method to study CSV files");
  common(fit);
  flag(fit, "-m,--method", "method", "stackfa | indfa | pfa | momss | sufa | bmsfa | tetris");
  fit->add_option_function<std::vector<std::string>>(
      "-d,--data", [&](const std::vector<std::string>& v) {
        std::string j;
        for (const auto& s : v) j += (j.empty() ? "" : ",") + s;
        flags["data"] = j;
      },
      "study CSV files, one per study");
  fit->add_option_function<std::vector<std::string>>(
      "--covariates", [&](const std::vector<std::string>& v) {
        std::string j;
        for (const auto& s : v) j += (j.empty() ? "" : ",") + s;
        flags["covariates"] = j;
      },
      "covariate CSV files, one per study");
  flag(fit, "-k,--k", "k", "number of common factors");
  flag(fit, "-j,--j", "j", "study-specific factors, one value per study (comma separated)");
  flag(fit, "--nrun", "nrun", "MCMC iterations");
  flag(fit, "--burn", "burn", "burn-in iterations");
  flag(fit, "--center", "center", "center each study (true/false)");
  flag(fit, "--scale", "scale", "scale each variable (true/false)");
  flag(fit, "--log-offset", "log_offset", "log(x + offset) before centering");
  flag(fit, "--edge-threshold", "edge_threshold", "write correlation edge lists at this |weight|");
  fit->add_option("--edges", edges, "edge lists for common, study or both")->check(CLI::IsMember({"common", "study", "both"}));
  fit->add_flag("--progress", progress, "report progress on stderr");

  CLI::App* bench = app.add_subcommand("bench", "run a scenario x method grid");
  common(bench);
  flag(bench, "-s,--scenarios", "scenarios", "scenario ids (comma separated)");
  flag(bench, "-m,--methods", "methods", "methods (comma separated)");
  flag(bench, "-r,--reps", "reps", "replicates per cell");
  flag(bench, "--mini", "mini", "shrunk Scenario 4 and 5 (true/false)");
  flag(bench, "--overspecified", "overspecified", "fit with over-specified factor counts (true/false)");
  flag(bench, "--mse", "mse", "70/30 split and held-out prediction error (true/false)");
  flag(bench, "--nrun", "nrun", "MCMC iterations");
  flag(bench, "--burn", "burn", "burn-in iterations");
  flag(bench, "-w,--workers", "workers", "parallel cells (default: BIFA_WORKERS or 1)");

  CLI::App* sim = app.add_subcommand("simulate", "write a simulated scenario and its truth");
  common(sim);
  flag(sim, "-s,--scenario", "scenario", "scenario id 1-5");
  flag(sim, "--mini", "mini", "shrunk Scenario 4 and 5 (true/false)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  std::string out_dir_for_error;
  try {
    OptionsHandle o;
    if (const char* w = std::getenv("BIFA_WORKERS"); w && bench->parsed()) o.set("workers", w);
    apply(o, config, sets, flags);
    out_dir_for_error = o.get("out_dir");
    if (fit->parsed()) return cmd_fit(o, progress, edges);
    if (bench->parsed()) return cmd_bench(o);
    return cmd_simulate(o);
  } catch (const Failure& f) {
    const std::string j = error_json(f);
    std::cerr << j << "\n";
    if (!out_dir_for_error.empty()) {
      std::error_code ec;
      fs::create_directories(out_dir_for_error, ec);
      std::ofstream(fs::path(out_dir_for_error) / "error.json") << j << "\n";
    }
    return f.exit_code;
  }
}

#include "bifa/bench.hpp"

#include "bifa/metrics.hpp"
#include "bifa/profile.hpp"
#include "bifa/random.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <thread>

namespace bifa {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

const std::vector<Method> kAll = {Method::kStackFa, Method::kIndFa, Method::kPfa,  Method::kMomss,
                                  Method::kSufa,    Method::kBmsfa, Method::kTetris};

bool same_counts(const std::vector<Index>& a, const std::vector<Index>& b) { return a == b; }

void need_k(const MethodConfig& cfg, Method m) {
  if (cfg.k < 1) throw ConfigError(std::string(method_name(m)) + ": K must be at least 1");
}

void need_j(const MethodConfig& cfg, Method m, Index studies) {
  if (static_cast<Index>(cfg.j.size()) != studies)
    throw ConfigError(std::string(method_name(m)) + ": one J per study is required");
}

McmcControl refit_control(const McmcControl& c) {
  McmcControl out = c;
  out.seed = derive_seed(c.seed, 2);
  return out;
}

// Two-pass fit for the MGPS models: counts come from the eigenvalue shares of
// the first-pass covariance estimates, the returned fit from the second pass.
MethodRun run_mgps(Method m, const MultiStudyDataset& ds, const MethodConfig& cfg, const ProgressFn& progress) {
  auto fit = [&](Index k, const std::vector<Index>& j, const McmcControl& c) {
    switch (m) {
      case Method::kStackFa: return mgps_point_estimates(fit_stack_fa(ds, k, c, cfg.mgps, progress));
      case Method::kIndFa: return mgps_point_estimates(fit_ind_fa(ds, j, c, cfg.mgps, progress));
      default: return mgps_point_estimates(fit_bmsfa(ds, k, j, c, cfg.mgps, progress));
    }
  };
  if (m != Method::kIndFa) need_k(cfg, m);
  if (m != Method::kStackFa) need_j(cfg, m, ds.num_studies());

  MethodRun run;
  run.result = fit(cfg.k, cfg.j, cfg.mcmc);
  const FactorCounts counts = evd_factor_counts(run.result, cfg.evd_threshold);
  run.k_first = m == Method::kIndFa ? 0 : counts.k;
  run.j_first = counts.j;
  if (!cfg.evd_refit) return run;

  Index k2 = m == Method::kIndFa ? 0 : counts.k;
  std::vector<Index> j2 = counts.j;
  if (m != Method::kIndFa && k2 < 1) {
    run.result.warnings.push_back("eigenvalue count of the common covariance is 0; refit skipped");
    return run;
  }
  if (m == Method::kIndFa && std::all_of(j2.begin(), j2.end(), [](Index v) { return v == 0; })) {
    run.result.warnings.push_back("eigenvalue counts of the study covariances are all 0; refit skipped");
    return run;
  }
  if (k2 == cfg.k && (m == Method::kStackFa || same_counts(j2, cfg.j))) return run;
  std::vector<std::string> first_warnings = std::move(run.result.warnings);
  run.result = fit(k2, j2, refit_control(cfg.mcmc));
  run.result.warnings.insert(run.result.warnings.begin(), first_warnings.begin(), first_warnings.end());
  run.refit = true;
  return run;
}

MethodRun run_once(Method m, const MultiStudyDataset& ds, const MethodConfig& cfg, const ProgressFn& progress) {
  MethodRun run;
  switch (m) {
    case Method::kStackFa:
    case Method::kIndFa:
    case Method::kBmsfa: return run_mgps(m, ds, cfg, progress);
    case Method::kPfa:
      need_k(cfg, m);
      run.result = pfa_point_estimates(fit_pfa(ds, cfg.k, cfg.mcmc, cfg.pfa, progress));
      break;
    case Method::kMomss: {
      need_k(cfg, m);
      MomssOptions o = cfg.momss;
      o.seed = cfg.mcmc.seed;
      run.result = momss_point_estimates(fit_momss(ds, cfg.k, o));
      break;
    }
    case Method::kSufa: {
      const Index k = cfg.k > 0 ? cfg.k : sufa_select_kmax(ds, ds.num_vars());
      const std::vector<Index> j =
          cfg.j.empty() ? sufa_default_j(k, ds.num_studies(), cfg.sufa.spread_remainder) : cfg.j;
      run.result = sufa_point_estimates(fit_sufa(ds, k, j, cfg.mcmc, cfg.sufa, progress));
      break;
    }
    case Method::kTetris:
      run.result = tetris_decompose(fit_tetris(ds, cfg.mcmc, cfg.tetris, progress));
      break;
  }
  run.k_first = run.result.k_hat;
  run.j_first = run.result.j_hat;
  return run;
}

std::string status_of(const Error& e) {
  switch (e.kind()) {
    case Error::Kind::kConfig: return "config";
    case Error::Kind::kNumeric: return "numeric";
    case Error::Kind::kGuard: return "guard";
    default: return "error";
  }
}

double mean_finite(const std::vector<double>& v) {
  double s = 0.0;
  int n = 0;
  for (double x : v)
    if (std::isfinite(x)) {
      s += x;
      ++n;
    }
  return n ? s / n : kNa;
}

double safe_rv(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.size() == 0 || b.size() == 0) return kNa;
  try {
    return rv_coefficient(a, b);
  } catch (const DomainError&) {
    return kNa;
  }
}

json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::string csv_cell(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_named_matrix(const std::string& path, const Matrix& m, const std::vector<std::string>& rows,
                        const std::string& col_prefix) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << "variable";
  for (Index c = 0; c < m.cols(); ++c) out << ',' << col_prefix << c + 1;
  out << '\n';
  for (Index r = 0; r < m.rows(); ++r) {
    out << csv_cell(r < static_cast<Index>(rows.size()) ? rows[static_cast<std::size_t>(r)] : "V" + std::to_string(r + 1));
    for (Index c = 0; c < m.cols(); ++c) out << ',' << fmt(m(r, c));
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path);
}

// Records grouped by scenario then method, in the configured order.
template <class Fn>
void for_groups(const std::vector<CellRecord>& records, const std::vector<Method>& order, Fn fn) {
  std::vector<int> scenarios;
  for (const auto& r : records)
    if (std::find(scenarios.begin(), scenarios.end(), r.scenario) == scenarios.end()) scenarios.push_back(r.scenario);
  for (int sc : scenarios)
    for (Method m : order) {
      std::vector<const CellRecord*> all;
      for (const auto& r : records)
        if (r.scenario == sc && r.method == method_name(m)) all.push_back(&r);
      if (!all.empty()) fn(sc, m, all);
    }
}

std::string summarize(const std::vector<const CellRecord*>& recs, double CellRecord::*field) {
  std::vector<double> v;
  for (const auto* r : recs)
    if (r->ok() && std::isfinite(r->*field)) v.push_back(r->*field);
  return format_mean_sd(v);
}

}  // namespace

const char* method_name(Method m) {
  switch (m) {
    case Method::kStackFa: return "stackfa";
    case Method::kIndFa: return "indfa";
    case Method::kPfa: return "pfa";
    case Method::kMomss: return "momss";
    case Method::kSufa: return "sufa";
    case Method::kBmsfa: return "bmsfa";
    case Method::kTetris: return "tetris";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  for (Method m : kAll)
    if (name == method_name(m)) return m;
  throw ConfigError("unknown method '" + name + "'");
}

const std::vector<Method>& all_methods() { return kAll; }

MethodRun run_method(Method m, const MultiStudyDataset& ds, const MethodConfig& cfg, const ProgressFn& progress) {
  MethodRun run;
  const ProfileResult prof = profile([&] { run = run_once(m, ds, cfg, progress); });
  run.seconds = prof.seconds;
  run.peak_mib = prof.peak_mib;
  run.result.method = method_name(m);
  return run;
}

MethodConfig scenario_defaults(Method m, const ScenarioSpec& spec, bool overspecified, MethodConfig base) {
  const Index s = spec.num_studies();
  const bool big = spec.id == 5;
  Index k, j_joint, j_ind;
  if (overspecified) {
    k = big ? 20 : 6;
    j_joint = big ? 4 : 2;
    j_ind = k;
  } else {
    k = spec.k;
    j_joint = spec.j;
    j_ind = spec.k + spec.j;
  }
  if (base.k == 0 && m != Method::kTetris && m != Method::kIndFa) base.k = k;
  if (base.j.empty()) {
    if (m == Method::kBmsfa) base.j.assign(static_cast<std::size_t>(s), j_joint);
    if (m == Method::kIndFa) base.j.assign(static_cast<std::size_t>(s), j_ind);
    // Fixed J_s when the truth has study-specific factors and sum J_s <= K
    // holds, else the K/S default.
    if (m == Method::kSufa && !overspecified && spec.j > 0 && s * spec.j <= base.k)
      base.j.assign(static_cast<std::size_t>(s), spec.j);
  }
  return base;
}

void evaluate_fit(const FitResult& fit, const GroundTruth& truth, CellRecord& rec) {
  if (truth.phi.cols() > 0 && fit.phi.cols() > 0) {
    rec.rv_phi = safe_rv(fit.phi, truth.phi);
    if (fit.phi.cols() == truth.phi.cols())
      rec.fn_phi = frobenius_distance(fit.phi * procrustes_rotation(fit.phi, truth.phi), truth.phi);
  }
  if (fit.k_hat > 0 && truth.sigma_phi.size() > 0 && fit.sigma_phi.rows() == truth.sigma_phi.rows()) {
    rec.rv_sigma_phi = safe_rv(fit.sigma_phi, truth.sigma_phi);
    rec.fn_sigma_phi = frobenius_distance(fit.sigma_phi, truth.sigma_phi);
  }
  std::vector<double> rvl, fnl, rvs, fns;
  for (std::size_t s = 0; s < truth.sigma.size(); ++s) {
    if (truth.has_lambda() && s < fit.lambda.size() && truth.lambda[s].cols() > 0 && fit.lambda[s].cols() > 0) {
      rvl.push_back(safe_rv(fit.lambda[s], truth.lambda[s]));
      if (s < fit.sigma_lambda.size() && s < truth.sigma_lambda.size())
        fnl.push_back(frobenius_distance(fit.sigma_lambda[s], truth.sigma_lambda[s]));
    }
    if (s < fit.sigma_marginal.size()) {
      rvs.push_back(safe_rv(fit.sigma_marginal[s], truth.sigma[s]));
      fns.push_back(frobenius_distance(fit.sigma_marginal[s], truth.sigma[s]));
    }
  }
  rec.rv_lambda = mean_finite(rvl);
  rec.fn_lambda = mean_finite(fnl);
  rec.rv_sigma = mean_finite(rvs);
  rec.fn_sigma = mean_finite(fns);
}

std::vector<CellRecord> run_bench(const BenchConfig& cfg) {
  if (cfg.reps < 1) throw ConfigError("bench: reps must be at least 1");
  if (cfg.methods.empty() || cfg.scenarios.empty()) throw ConfigError("bench: empty scenario or method list");
  struct Cell {
    int scenario;
    int rep;
    Method method;
  };
  std::vector<Cell> cells;
  for (int sc : cfg.scenarios)
    for (int r = 0; r < cfg.reps; ++r)
      for (Method m : cfg.methods) cells.push_back({sc, r, m});
  std::vector<CellRecord> out(cells.size());

  auto base_for = [&](Method m) {
    for (const auto& [mm, c] : cfg.method_configs)
      if (mm == m) return c;
    return MethodConfig{};
  };

  auto run_cell = [&](std::size_t i) {
    const Cell& c = cells[i];
    CellRecord& rec = out[i];
    rec.scenario = c.scenario;
    rec.method = method_name(c.method);
    rec.seed = cfg.seed + static_cast<std::uint64_t>(c.rep);
    try {
      const ScenarioSpec spec = ScenarioSpec::preset(c.scenario, rec.seed, cfg.mini);
      const Scenario sc = generate_scenario(spec);
      MethodConfig mc = scenario_defaults(c.method, spec, cfg.overspecified, base_for(c.method));
      mc.mcmc.seed = derive_seed(rec.seed, static_cast<std::uint64_t>(c.method) + 10);
      if (c.method == Method::kTetris && !cfg.overspecified && sc.truth.sharing.size() > 0 && !mc.tetris.fixed_t)
        mc.tetris.fixed_t = SharingMatrix(sc.truth.sharing);
      MultiStudyDataset train = preprocess(sc.data, {}), test;
      if (cfg.mse) {
        Split split = train_test_split(sc.data, 0.7, derive_seed(rec.seed, 1));
        train = preprocess(split.train, {});
        test = preprocess(split.test, {});
      }
      const MethodRun run = run_method(c.method, train, mc);
      evaluate_fit(run.result, sc.truth, rec);
      if (cfg.mse) rec.mse = prediction_mse(run.result, test, !run.result.lambda.empty(), &rec.warnings);
      rec.k_hat = c.method == Method::kIndFa ? -1 : run.k_first;
      rec.j_hat = run.j_first;
      rec.seconds = run.seconds;
      rec.peak_mib = run.peak_mib;
      rec.warnings.insert(rec.warnings.end(), run.result.warnings.begin(), run.result.warnings.end());
      if (!cfg.out_dir.empty()) {
        const fs::path dir = fs::path(cfg.out_dir) / rec.method / ("sc" + std::to_string(c.scenario)) /
                             std::to_string(rec.seed);
        fs::create_directories(dir);
        write_fit_csv(dir.string(), run.result, sc.data.variable_names);
      }
    } catch (const Error& e) {
      rec.status = status_of(e);
      rec.message = e.what();
    } catch (const std::exception& e) {
      rec.status = "error";
      rec.message = e.what();
    }
  };

  const int workers = std::max(1, std::min<int>(cfg.workers, static_cast<int>(cells.size())));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < cells.size();) run_cell(i);
  };
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  if (!cfg.out_dir.empty()) {
    fs::create_directories(cfg.out_dir);
    for (const auto& rec : out) {
      const fs::path dir = fs::path(cfg.out_dir) / rec.method / ("sc" + std::to_string(rec.scenario)) /
                           std::to_string(rec.seed);
      fs::create_directories(dir);
      write_record_json((dir / "record.json").string(), rec);
    }
    write_table_csv((fs::path(cfg.out_dir) / "factor_counts.csv").string(), factor_count_report(out, cfg.methods));
    write_table_csv((fs::path(cfg.out_dir) / "accuracy.csv").string(), accuracy_report(out, cfg.methods));
    write_table_csv((fs::path(cfg.out_dir) / "profile.csv").string(), profile_report(out, cfg.methods));
  }
  return out;
}

Table factor_count_report(const std::vector<CellRecord>& records, const std::vector<Method>& order) {
  std::size_t studies = 0;
  for (const auto& r : records) studies = std::max(studies, r.j_hat.size());
  Table t;
  std::vector<std::string> head = {"scenario", "method", "ok", "K"};
  for (std::size_t s = 0; s < studies; ++s) head.push_back("J" + std::to_string(s + 1));
  t.push_back(head);
  for_groups(records, order, [&](int sc, Method m, const std::vector<const CellRecord*>& recs) {
    std::vector<double> k;
    std::vector<std::vector<double>> j(studies);
    int ok = 0;
    for (const auto* r : recs) {
      if (!r->ok()) continue;
      ++ok;
      if (r->k_hat >= 0) k.push_back(static_cast<double>(r->k_hat));
      for (std::size_t s = 0; s < r->j_hat.size(); ++s) j[s].push_back(static_cast<double>(r->j_hat[s]));
    }
    std::vector<std::string> row = {std::to_string(sc), method_name(m), std::to_string(ok) + "/" + std::to_string(recs.size()),
                                    format_mean_sd(k)};
    for (const auto& v : j) row.push_back(format_mean_sd(v));
    t.push_back(row);
  });
  return t;
}

Table accuracy_report(const std::vector<CellRecord>& records, const std::vector<Method>& order) {
  Table t = {{"scenario", "method", "ok", "rv_phi", "rv_sigma_phi", "rv_lambda", "rv_sigma", "fn_phi", "fn_sigma_phi",
              "fn_lambda", "fn_sigma", "mse"}};
  for_groups(records, order, [&](int sc, Method m, const std::vector<const CellRecord*>& recs) {
    const auto ok = std::count_if(recs.begin(), recs.end(), [](const CellRecord* r) { return r->ok(); });
    t.push_back({std::to_string(sc), method_name(m), std::to_string(ok) + "/" + std::to_string(recs.size()),
                 summarize(recs, &CellRecord::rv_phi), summarize(recs, &CellRecord::rv_sigma_phi),
                 summarize(recs, &CellRecord::rv_lambda), summarize(recs, &CellRecord::rv_sigma),
                 summarize(recs, &CellRecord::fn_phi), summarize(recs, &CellRecord::fn_sigma_phi),
                 summarize(recs, &CellRecord::fn_lambda), summarize(recs, &CellRecord::fn_sigma),
                 summarize(recs, &CellRecord::mse)});
  });
  return t;
}

Table profile_report(const std::vector<CellRecord>& records, const std::vector<Method>& order) {
  Table t = {{"scenario", "method", "ok", "seconds", "peak_mib", "failures"}};
  for_groups(records, order, [&](int sc, Method m, const std::vector<const CellRecord*>& recs) {
    const auto ok = std::count_if(recs.begin(), recs.end(), [](const CellRecord* r) { return r->ok(); });
    std::string failures;
    for (const auto* r : recs)
      if (!r->ok()) failures += (failures.empty() ? "" : ";") + r->status;
    t.push_back({std::to_string(sc), method_name(m), std::to_string(ok) + "/" + std::to_string(recs.size()),
                 summarize(recs, &CellRecord::seconds), summarize(recs, &CellRecord::peak_mib), failures});
  });
  return t;
}

void write_table_csv(const std::string& path, const Table& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& row : table) {
    for (std::size_t c = 0; c < row.size(); ++c) out << (c ? "," : "") << csv_cell(row[c]);
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path);
}

std::string record_json(const CellRecord& r) {
  json j = {{"scenario", r.scenario},
            {"method", r.method},
            {"seed", r.seed},
            {"status", r.status},
            {"message", r.message},
            {"rv_phi", num(r.rv_phi)},
            {"fn_phi", num(r.fn_phi)},
            {"rv_sigma_phi", num(r.rv_sigma_phi)},
            {"fn_sigma_phi", num(r.fn_sigma_phi)},
            {"rv_lambda", num(r.rv_lambda)},
            {"fn_lambda", num(r.fn_lambda)},
            {"rv_sigma", num(r.rv_sigma)},
            {"fn_sigma", num(r.fn_sigma)},
            {"mse", num(r.mse)},
            {"k_hat", r.k_hat < 0 ? json(nullptr) : json(r.k_hat)},
            {"j_hat", r.j_hat},
            {"seconds", r.seconds},
            {"peak_mib", r.peak_mib},
            {"warnings", r.warnings}};
  return j.dump(2);
}

void write_record_json(const std::string& path, const CellRecord& rec) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << record_json(rec) << '\n';
  if (!out) throw IoError("write failed for " + path);
}

std::vector<std::string> write_fit_csv(const std::string& dir, const FitResult& fit,
                                       const std::vector<std::string>& variable_names) {
  std::vector<std::string> paths;
  auto put = [&](const std::string& name, const Matrix& m, const std::string& prefix) {
    const std::string p = (fs::path(dir) / name).string();
    write_named_matrix(p, m, variable_names, prefix);
    paths.push_back(p);
  };
  if (fit.phi.cols() > 0) {
    put("phi.csv", fit.phi, "F");
    put("sigma_phi.csv", fit.sigma_phi, "V");
  }
  for (std::size_t s = 0; s < fit.sigma_marginal.size(); ++s) {
    const std::string id = std::to_string(s + 1);
    if (s < fit.lambda.size() && fit.lambda[s].cols() > 0) put("lambda_" + id + ".csv", fit.lambda[s], "L");
    if (s < fit.sigma_lambda.size() && fit.sigma_lambda[s].size() > 0)
      put("sigma_lambda_" + id + ".csv", fit.sigma_lambda[s], "V");
    if (s < fit.psi.size()) put("psi_" + id + ".csv", Matrix(fit.psi[s]), "psi");
    put("sigma_" + id + ".csv", fit.sigma_marginal[s], "V");
  }
  return paths;
}

void write_edge_list(const std::string& path, const Matrix& sigma, double threshold,
                     const std::vector<std::string>& names, bool correlation) {
  if (sigma.rows() != sigma.cols()) throw DimensionError("edge list needs a square matrix");
  if (!names.empty() && static_cast<Index>(names.size()) != sigma.rows())
    throw DimensionError("edge list: name count does not match the matrix");
  Matrix w = sigma;
  if (correlation) {
    const Vector d = sigma.diagonal().cwiseMax(0.0).cwiseSqrt();
    for (Index i = 0; i < w.rows(); ++i)
      for (Index j = 0; j < w.cols(); ++j) w(i, j) = d(i) > 0 && d(j) > 0 ? sigma(i, j) / (d(i) * d(j)) : 0.0;
  }
  auto name = [&](Index i) { return names.empty() ? "V" + std::to_string(i + 1) : names[static_cast<std::size_t>(i)]; };
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << "source,target,weight\n";
  for (Index i = 0; i < w.rows(); ++i)
    for (Index j = i + 1; j < w.cols(); ++j)
      if (std::abs(w(i, j)) >= threshold) out << csv_cell(name(i)) << ',' << csv_cell(name(j)) << ',' << fmt(w(i, j)) << '\n';
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace bifa

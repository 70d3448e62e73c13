#include "bifa/bifa.h"

#include "bifa/bench.hpp"
#include "bifa/options.hpp"

#include <nlohmann/json.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

struct bifa_options {
  bifa::Options opts;
};

struct bifa_dataset {
  bifa::MultiStudyDataset ds;
};

struct bifa_fit {
  bifa::MethodRun run;
  std::string meta;
};

struct bifa_bench {
  std::vector<bifa::CellRecord> records;
  std::vector<std::string> json;
  std::map<std::string, std::string> tables;
};

namespace {

using namespace bifa;
namespace fs = std::filesystem;

thread_local std::string g_last_error;

struct Cancelled {};

bifa_status code_of(const Error& e) {
  switch (e.kind()) {
    case Error::Kind::kSchema: return BIFA_ERR_SCHEMA;
    case Error::Kind::kParse: return BIFA_ERR_PARSE;
    case Error::Kind::kDimension: return BIFA_ERR_DIMENSION;
    case Error::Kind::kDomain: return BIFA_ERR_DOMAIN;
    case Error::Kind::kNumeric: return BIFA_ERR_NUMERIC;
    case Error::Kind::kGuard: return BIFA_ERR_GUARD;
    case Error::Kind::kConfig: return BIFA_ERR_CONFIG;
    case Error::Kind::kIo: return BIFA_ERR_IO;
  }
  return BIFA_ERR_INTERNAL;
}

template <class Fn>
bifa_status guarded(Fn fn) {
  try {
    g_last_error.clear();
    fn();
    return BIFA_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return code_of(e);
  } catch (const Cancelled&) {
    g_last_error = "cancelled by the progress callback";
    return BIFA_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return BIFA_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return BIFA_ERR_INTERNAL;
  }
}

bifa_status bad_argument(const char* what) {
  g_last_error = what;
  return BIFA_ERR_ARGUMENT;
}

std::string csv_of(const Table& t) {
  std::ostringstream out;
  for (const auto& row : t) {
    for (std::size_t c = 0; c < row.size(); ++c) out << (c ? "," : "") << row[c];
    out << '\n';
  }
  return out.str();
}

std::string meta_json(const MethodRun& run, const Options& opts) {
  const FitResult& r = run.result;
  nlohmann::json j = {{"method", r.method},
                      {"version", kVersion},
                      {"seed", r.provenance.seed},
                      {"iterations", r.provenance.iterations},
                      {"alignment", r.provenance.alignment},
                      {"k_hat", r.k_hat},
                      {"j_hat", r.j_hat},
                      {"first_pass", {{"k", run.k_first}, {"j", run.j_first}}},
                      {"refit", run.refit},
                      {"seconds", run.seconds},
                      {"peak_mib", run.peak_mib},
                      {"warnings", r.warnings},
                      {"options", nlohmann::json::parse(opts.to_json())}};
  return j.dump(2);
}

const Matrix* pick(const FitResult& r, bifa_quantity which, std::size_t s, Matrix& tmp) {
  switch (which) {
    case BIFA_PHI: return &r.phi;
    case BIFA_SIGMA_PHI: return &r.sigma_phi;
    case BIFA_LAMBDA:
      if (s >= r.lambda.size()) return nullptr;
      return &r.lambda[s];
    case BIFA_PSI:
      if (s >= r.psi.size()) return nullptr;
      tmp = r.psi[s];
      return &tmp;
    case BIFA_SIGMA_LAMBDA:
      if (s >= r.sigma_lambda.size()) return nullptr;
      return &r.sigma_lambda[s];
    case BIFA_SIGMA:
      if (s >= r.sigma_marginal.size()) return nullptr;
      return &r.sigma_marginal[s];
  }
  return nullptr;
}

}  // namespace

extern "C" {

const char* bifa_version(void) { return kVersion; }

const char* bifa_last_error(void) { return g_last_error.c_str(); }

const char* bifa_status_name(bifa_status status) {
  switch (status) {
    case BIFA_OK: return "ok";
    case BIFA_ERR_SCHEMA: return "schema";
    case BIFA_ERR_PARSE: return "parse";
    case BIFA_ERR_DIMENSION: return "dimension";
    case BIFA_ERR_DOMAIN: return "domain";
    case BIFA_ERR_NUMERIC: return "numeric";
    case BIFA_ERR_GUARD: return "guard";
    case BIFA_ERR_CONFIG: return "config";
    case BIFA_ERR_IO: return "io";
    case BIFA_ERR_ARGUMENT: return "argument";
    case BIFA_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

bifa_status bifa_options_create(bifa_options** out) {
  if (!out) return bad_argument("null output pointer");
  return guarded([&] { *out = new bifa_options; });
}

bifa_status bifa_options_set(bifa_options* opts, const char* key, const char* value) {
  if (!opts || !key || !value) return bad_argument("null options, key or value");
  return guarded([&] { opts->opts.set(key, value); });
}

bifa_status bifa_options_get(const bifa_options* opts, const char* key, char* buf, size_t cap, size_t* needed) {
  if (!opts || !key) return bad_argument("null options or key");
  return guarded([&] {
    const std::string v = opts->opts.get(key);
    if (needed) *needed = v.size() + 1;
    if (buf && cap > 0) {
      const std::size_t n = std::min(cap - 1, v.size());
      std::memcpy(buf, v.data(), n);
      buf[n] = '\0';
    }
  });
}

void bifa_options_free(bifa_options* opts) { delete opts; }

bifa_status bifa_dataset_from_arrays(size_t studies, const size_t* rows, size_t vars, const double* const* data,
                                     bifa_dataset** out) {
  if (!out || (studies > 0 && (!rows || !data))) return bad_argument("null dataset arguments");
  return guarded([&] {
    MatrixList ys;
    for (std::size_t s = 0; s < studies; ++s) {
      if (!data[s]) throw DimensionError("study " + std::to_string(s + 1) + " has no data");
      Matrix y(static_cast<Index>(rows[s]), static_cast<Index>(vars));
      for (std::size_t i = 0; i < rows[s]; ++i)
        for (std::size_t p = 0; p < vars; ++p) y(static_cast<Index>(i), static_cast<Index>(p)) = data[s][i * vars + p];
      ys.push_back(std::move(y));
    }
    auto* d = new bifa_dataset{make_dataset(std::move(ys))};
    try {
      d->ds.validate();
    } catch (...) {
      delete d;
      throw;
    }
    *out = d;
  });
}

bifa_status bifa_dataset_load(const char* const* paths, size_t n_paths, const char* const* covariate_paths,
                              size_t n_covariates, bifa_dataset** out) {
  if (!out || (n_paths > 0 && !paths) || (n_covariates > 0 && !covariate_paths)) return bad_argument("null path list");
  return guarded([&] {
    std::vector<std::string> p(paths, paths + n_paths), c;
    if (n_covariates) c.assign(covariate_paths, covariate_paths + n_covariates);
    *out = new bifa_dataset{load_dataset(p, c)};
  });
}

bifa_status bifa_dataset_preprocess(bifa_dataset* ds, const bifa_options* opts) {
  if (!ds) return bad_argument("null dataset");
  return guarded([&] {
    const Options empty;
    const Options& o = opts ? opts->opts : empty;
    MultiStudyDataset d = ds->ds;
    if (o.log_offset() > 0.0) d = log_transform(d, o.log_offset());
    ds->ds = preprocess(d, o.preprocess_spec());
  });
}

bifa_status bifa_dataset_dims(const bifa_dataset* ds, size_t* studies, size_t* vars) {
  if (!ds) return bad_argument("null dataset");
  if (studies) *studies = static_cast<size_t>(ds->ds.num_studies());
  if (vars) *vars = static_cast<size_t>(ds->ds.num_vars());
  g_last_error.clear();
  return BIFA_OK;
}

bifa_status bifa_dataset_rows(const bifa_dataset* ds, size_t study, size_t* rows) {
  if (!ds || !rows) return bad_argument("null dataset or output");
  if (study >= ds->ds.studies.size()) return bad_argument("study index out of range");
  *rows = static_cast<size_t>(ds->ds.studies[study].rows());
  g_last_error.clear();
  return BIFA_OK;
}

bifa_status bifa_dataset_save(const bifa_dataset* ds, const char* dir, const char* prefix) {
  if (!ds || !dir) return bad_argument("null dataset or directory");
  return guarded([&] { save_dataset(ds->ds, dir, prefix ? prefix : "study"); });
}

void bifa_dataset_free(bifa_dataset* ds) { delete ds; }

bifa_status bifa_simulate(int scenario, uint64_t seed, int mini, const char* dir) {
  if (!dir) return bad_argument("null directory");
  return guarded([&] {
    const Scenario sc = generate_scenario(ScenarioSpec::preset(scenario, seed, mini != 0));
    save_dataset(sc.data, dir, "study");
    const fs::path truth = fs::path(dir) / "truth";
    fs::create_directories(truth);
    const GroundTruth& t = sc.truth;
    auto put = [&](const std::string& name, const Matrix& m) {
      if (m.size() > 0) write_csv((truth / name).string(), m);
    };
    put("phi.csv", t.phi);
    put("sigma_phi.csv", t.sigma_phi);
    put("alpha.csv", t.alpha);
    put("beta.csv", t.beta);
    put("phi_star.csv", t.phi_star);
    if (t.sharing.size() > 0) put("sharing.csv", t.sharing.cast<double>());
    for (std::size_t s = 0; s < t.sigma.size(); ++s) {
      const std::string id = std::to_string(s + 1);
      put("sigma_" + id + ".csv", t.sigma[s]);
      if (s < t.psi.size()) put("psi_" + id + ".csv", Matrix(t.psi[s]));
      if (s < t.lambda.size()) put("lambda_" + id + ".csv", t.lambda[s]);
      if (s < t.sigma_lambda.size()) put("sigma_lambda_" + id + ".csv", t.sigma_lambda[s]);
      if (s < t.q.size()) put("q_" + id + ".csv", t.q[s]);
      if (s < t.a.size()) put("a_" + id + ".csv", t.a[s]);
    }
  });
}

bifa_status bifa_fit_run(const char* method, const bifa_dataset* ds, const bifa_options* opts,
                         bifa_progress_fn progress, void* user, bifa_fit** out) {
  if (!method || !ds || !out) return bad_argument("null method, dataset or output");
  return guarded([&] {
    const Options empty;
    const Options& o = opts ? opts->opts : empty;
    const Method m = parse_method(method);
    const MethodConfig cfg = o.method_config(m);
    ProgressFn fn;
    if (progress)
      fn = [&](long it, long total) {
        if (progress(it, total, user) != 0) throw Cancelled{};
      };
    auto* f = new bifa_fit{run_method(m, ds->ds, cfg, fn), {}};
    f->meta = meta_json(f->run, o);
    *out = f;
  });
}

bifa_status bifa_fit_counts(const bifa_fit* fit, long* k_hat, size_t* studies) {
  if (!fit) return bad_argument("null fit");
  if (k_hat) *k_hat = static_cast<long>(fit->run.result.k_hat);
  if (studies) *studies = static_cast<size_t>(fit->run.result.num_studies());
  g_last_error.clear();
  return BIFA_OK;
}

bifa_status bifa_fit_study_count(const bifa_fit* fit, size_t study, long* j_hat) {
  if (!fit || !j_hat) return bad_argument("null fit or output");
  const auto& r = fit->run.result;
  if (study >= static_cast<size_t>(r.num_studies())) return bad_argument("study index out of range");
  *j_hat = study < r.j_hat.size() ? static_cast<long>(r.j_hat[study]) : -1;
  g_last_error.clear();
  return BIFA_OK;
}

bifa_status bifa_fit_matrix(const bifa_fit* fit, bifa_quantity which, size_t study, double* buf, size_t cap,
                            size_t* rows, size_t* cols) {
  if (!fit || !rows || !cols) return bad_argument("null fit or dimension outputs");
  Matrix tmp;
  const Matrix* m = pick(fit->run.result, which, study, tmp);
  if (!m) return bad_argument("quantity not available for this study");
  *rows = static_cast<size_t>(m->rows());
  *cols = static_cast<size_t>(m->cols());
  if (buf && cap >= static_cast<size_t>(m->size())) std::memcpy(buf, m->data(), sizeof(double) * static_cast<size_t>(m->size()));
  g_last_error.clear();
  return BIFA_OK;
}

const char* bifa_fit_meta_json(const bifa_fit* fit) { return fit ? fit->meta.c_str() : ""; }

bifa_status bifa_fit_write(const bifa_fit* fit, const bifa_dataset* ds, const char* dir) {
  if (!fit || !dir) return bad_argument("null fit or directory");
  return guarded([&] {
    fs::create_directories(dir);
    write_fit_csv(dir, fit->run.result, ds ? ds->ds.variable_names : std::vector<std::string>{});
    std::ofstream out(fs::path(dir) / "meta.json", std::ios::binary);
    if (!out) throw IoError(std::string("cannot write meta.json in ") + dir);
    out << fit->meta << '\n';
    if (!out) throw IoError("write failed for meta.json");
  });
}

bifa_status bifa_fit_write_edges(const bifa_fit* fit, const bifa_dataset* ds, bifa_quantity which, size_t study,
                                 double threshold, int correlation, const char* path) {
  if (!fit || !path) return bad_argument("null fit or path");
  if (which != BIFA_SIGMA_PHI && which != BIFA_SIGMA) return bad_argument("edges need BIFA_SIGMA_PHI or BIFA_SIGMA");
  Matrix tmp;
  const Matrix* m = pick(fit->run.result, which, study, tmp);
  if (!m || m->size() == 0) return bad_argument("quantity not available");
  return guarded([&] {
    write_edge_list(path, *m, threshold, ds ? ds->ds.variable_names : std::vector<std::string>{}, correlation != 0);
  });
}

void bifa_fit_free(bifa_fit* fit) { delete fit; }

bifa_status bifa_bench_run(const bifa_options* opts, bifa_bench** out) {
  if (!opts || !out) return bad_argument("null options or output");
  return guarded([&] {
    const BenchConfig cfg = opts->opts.bench_config();
    auto* b = new bifa_bench;
    b->records = run_bench(cfg);
    for (const auto& r : b->records) b->json.push_back(record_json(r));
    b->tables["factor_counts"] = csv_of(factor_count_report(b->records, cfg.methods));
    b->tables["accuracy"] = csv_of(accuracy_report(b->records, cfg.methods));
    b->tables["profile"] = csv_of(profile_report(b->records, cfg.methods));
    *out = b;
  });
}

size_t bifa_bench_size(const bifa_bench* bench) { return bench ? bench->records.size() : 0; }

const char* bifa_bench_record_json(const bifa_bench* bench, size_t index) {
  if (!bench || index >= bench->json.size()) return "";
  return bench->json[index].c_str();
}

const char* bifa_bench_table(const bifa_bench* bench, const char* name) {
  if (!bench || !name) return "";
  const auto it = bench->tables.find(name);
  return it == bench->tables.end() ? "" : it->second.c_str();
}

void bifa_bench_free(bifa_bench* bench) { delete bench; }

}  // extern "C"

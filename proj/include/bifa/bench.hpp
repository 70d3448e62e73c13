#pragma once

#include "bifa/mgps_gibbs.hpp"
#include "bifa/momss.hpp"
#include "bifa/pfa.hpp"
#include "bifa/scenarios.hpp"
#include "bifa/sufa.hpp"
#include "bifa/tetris.hpp"

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace bifa {

enum class Method { kStackFa, kIndFa, kPfa, kMomss, kSufa, kBmsfa, kTetris };

const char* method_name(Method m);  // "stackfa", "indfa", ...
Method parse_method(const std::string& name);  // ConfigError
const std::vector<Method>& all_methods();

/// Settings for one fit. K = 0 or an empty J lets the caller's defaults apply.
struct MethodConfig {
  Index k = 0;
  std::vector<Index> j;
  McmcControl mcmc;
  bool evd_refit = true;        // second pass at the eigenvalue-share counts
  double evd_threshold = 0.05;
  MgpsOptions mgps;
  PfaOptions pfa;
  MomssOptions momss;
  SufaOptions sufa;
  TetrisOptions tetris;
};

struct MethodRun {
  FitResult result;
  Index k_first = 0;             // reported counts of the first pass
  std::vector<Index> j_first;
  bool refit = false;
  double seconds = 0.0;
  double peak_mib = 0.0;
};

/// Fit, post-process and (for Stack FA, Ind FA, BMSFA) refit at the
/// eigenvalue-share counts.
MethodRun run_method(Method m, const MultiStudyDataset& ds, const MethodConfig& cfg, const ProgressFn& progress = {});

/// Factor counts used by the published comparisons: correctly specified
/// (true K and J) or over-specified.
MethodConfig scenario_defaults(Method m, const ScenarioSpec& spec, bool overspecified, MethodConfig base = {});

inline constexpr double kNa = std::numeric_limits<double>::quiet_NaN();

/// One method on one replicate of one scenario.
struct CellRecord {
  int scenario = 0;
  std::string method;
  std::uint64_t seed = 0;
  std::string status = "ok";   // ok | config | numeric | guard | error
  std::string message;
  double rv_phi = kNa, fn_phi = kNa;
  double rv_sigma_phi = kNa, fn_sigma_phi = kNa;
  double rv_lambda = kNa, fn_lambda = kNa;  // averaged over studies
  double rv_sigma = kNa, fn_sigma = kNa;    // averaged over studies
  double mse = kNa;
  Index k_hat = -1;
  std::vector<Index> j_hat;
  double seconds = 0.0, peak_mib = 0.0;
  std::vector<std::string> warnings;

  bool ok() const { return status == "ok"; }
};

/// Accuracy metrics of a fit against the generating truth. Quantities the
/// truth or the method lacks stay NaN.
void evaluate_fit(const FitResult& fit, const GroundTruth& truth, CellRecord& rec);

struct BenchConfig {
  std::vector<int> scenarios = {1};
  std::vector<Method> methods = {Method::kStackFa};
  int reps = 1;
  std::uint64_t seed = 1;         // replicate r uses seed + r
  bool mini = true;
  bool overspecified = false;
  bool mse = false;               // 70/30 split and held-out MSE
  int workers = 1;
  std::vector<std::pair<Method, MethodConfig>> method_configs;  // base settings per method
  std::string out_dir;            // empty: nothing written
};

/// Every scenario x method x replicate cell. Failures are recorded, never
/// rethrown. Records come back in grid order whatever the worker count.
std::vector<CellRecord> run_bench(const BenchConfig& cfg);

/// Rows of strings; the first row is the header.
using Table = std::vector<std::vector<std::string>>;

/// Mean(sd) of K-hat and each J-hat per scenario and method.
Table factor_count_report(const std::vector<CellRecord>& records, const std::vector<Method>& order);
/// Mean(sd) of the accuracy metrics per scenario and method; NA when absent.
Table accuracy_report(const std::vector<CellRecord>& records, const std::vector<Method>& order);
/// Mean(sd) of seconds and peak MiB per scenario and method.
Table profile_report(const std::vector<CellRecord>& records, const std::vector<Method>& order);

void write_table_csv(const std::string& path, const Table& table);
std::string record_json(const CellRecord& rec);
void write_record_json(const std::string& path, const CellRecord& rec);

/// phi.csv, lambda_<s>.csv, psi_<s>.csv, sigma_phi.csv, sigma_lambda_<s>.csv,
/// sigma_<s>.csv under dir; returns the paths written.
std::vector<std::string> write_fit_csv(const std::string& dir, const FitResult& fit,
                                       const std::vector<std::string>& variable_names);

/// source,target,weight rows for the upper-triangle entries with
/// |weight| >= threshold. With `correlation` the matrix is rescaled first.
void write_edge_list(const std::string& path, const Matrix& sigma, double threshold,
                     const std::vector<std::string>& names, bool correlation = false);

}  // namespace bifa

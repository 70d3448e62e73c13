#pragma once

#include "bifa/common.hpp"

#include <optional>
#include <string>
#include <vector>

namespace bifa {

/// S studies observed on a common set of P variables. Rows are subjects.
struct MultiStudyDataset {
  MatrixList studies;
  std::vector<std::string> variable_names;
  std::vector<std::string> study_names;
  MatrixList covariates;  // empty, or one N_s x Q matrix per study
  std::vector<std::string> warnings;

  Index num_studies() const { return static_cast<Index>(studies.size()); }
  Index num_vars() const { return studies.empty() ? 0 : studies.front().cols(); }
  Index num_covariates() const { return covariates.empty() ? 0 : covariates.front().cols(); }
  Index total_rows() const;
  bool has_covariates() const { return !covariates.empty(); }

  /// Throws DimensionError / DomainError if the invariants do not hold.
  void validate() const;

  /// All studies stacked row-wise (N x P).
  Matrix stacked() const;
};

/// Build a dataset from in-memory matrices with generated names.
MultiStudyDataset make_dataset(MatrixList studies, MatrixList covariates = {});

struct PreprocessSpec {
  bool center = true;
  bool scale = false;
};

MultiStudyDataset preprocess(const MultiStudyDataset& ds, const PreprocessSpec& spec);

/// Elementwise log(x + offset). Values with x + offset <= 0 are rejected.
MultiStudyDataset log_transform(const MultiStudyDataset& ds, double offset);

/// Whether every study column has |mean| below tol.
bool is_centered(const MultiStudyDataset& ds, double tol = 1e-8);

struct CsvTable {
  std::vector<std::string> header;
  Matrix values;
};

CsvTable read_csv(const std::string& path);
void write_csv(const std::string& path, const Matrix& values, const std::vector<std::string>& header = {});

MultiStudyDataset load_dataset(const std::vector<std::string>& paths,
                               const std::vector<std::string>& covariate_paths = {});

/// Writes study s to dir/<prefix><s+1>.csv with the variable-name header.
std::vector<std::string> save_dataset(const MultiStudyDataset& ds, const std::string& dir,
                                      const std::string& prefix = "study");

}  // namespace bifa

#pragma once

#include "bifa/dataset.hpp"
#include "bifa/postprocess.hpp"

#include <string>
#include <vector>

namespace bifa {

/// tr(X X' Y Y') / sqrt(tr((X X')^2) tr((Y Y')^2)). DomainError if either
/// matrix is zero.
double rv_coefficient(const Matrix& x, const Matrix& y);

double frobenius_distance(const Matrix& x, const Matrix& y);

/// Bartlett factor scores for the rows of y (N x P): returns N x K.
/// A singular Gram matrix gets a ridge of 1e-8 * trace / K; `ridged` reports it.
Matrix bartlett_scores(const Matrix& basis, const Vector& psi, const Matrix& y, bool* ridged = nullptr);

/// Held-out reconstruction error averaged over all entries of all test
/// studies. With `use_specific` the basis for study s is [phi, lambda_s],
/// otherwise phi alone.
double prediction_mse(const FitResult& fit, const MultiStudyDataset& test, bool use_specific,
                      std::vector<std::string>* warnings = nullptr);

/// "mean(sd)" with two decimals and the n - 1 standard deviation.
std::string format_mean_sd(const std::vector<double>& values);

}  // namespace bifa

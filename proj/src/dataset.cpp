#include "bifa/dataset.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace bifa {

namespace {

// Splits one logical CSV record. Quoted fields may contain commas, doubled
// quotes and newlines; `in` is advanced past the record terminator.
bool read_record(std::istream& in, std::vector<std::string>& fields) {
  fields.clear();
  std::string field;
  bool in_quotes = false;
  bool any = false;
  char c;
  while (in.get(c)) {
    any = true;
    if (in_quotes) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field.push_back('"');
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      in_quotes = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c == '\n') {
      fields.push_back(std::move(field));
      return true;
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  if (!any) return false;
  fields.push_back(std::move(field));
  return true;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace

Index MultiStudyDataset::total_rows() const {
  Index n = 0;
  for (const auto& y : studies) n += y.rows();
  return n;
}

void MultiStudyDataset::validate() const {
  if (studies.empty()) throw DimensionError("dataset has no studies");
  const Index p = studies.front().cols();
  if (p < 1) throw DimensionError("dataset has no variables");
  for (std::size_t s = 0; s < studies.size(); ++s) {
    if (studies[s].cols() != p) throw DimensionError("study " + std::to_string(s + 1) + " has a different column count");
    if (studies[s].rows() < 2) throw DimensionError("study " + std::to_string(s + 1) + " has fewer than 2 rows");
    if (!studies[s].allFinite()) throw DomainError("study " + std::to_string(s + 1) + " has non-finite entries");
  }
  if (!covariates.empty()) {
    if (covariates.size() != studies.size()) throw DimensionError("covariate list does not match study count");
    const Index q = covariates.front().cols();
    for (std::size_t s = 0; s < covariates.size(); ++s) {
      if (covariates[s].rows() != studies[s].rows())
        throw DimensionError("covariates for study " + std::to_string(s + 1) + " have the wrong row count");
      if (covariates[s].cols() != q) throw DimensionError("covariate column count differs across studies");
      if (!covariates[s].allFinite()) throw DomainError("covariates contain non-finite entries");
    }
  }
  if (!variable_names.empty() && static_cast<Index>(variable_names.size()) != p)
    throw DimensionError("variable name count does not match P");
}

Matrix MultiStudyDataset::stacked() const {
  Matrix out(total_rows(), num_vars());
  Index r = 0;
  for (const auto& y : studies) {
    out.middleRows(r, y.rows()) = y;
    r += y.rows();
  }
  return out;
}

MultiStudyDataset make_dataset(MatrixList studies, MatrixList covariates) {
  MultiStudyDataset ds;
  ds.studies = std::move(studies);
  ds.covariates = std::move(covariates);
  const Index p = ds.num_vars();
  for (Index j = 0; j < p; ++j) ds.variable_names.push_back("V" + std::to_string(j + 1));
  for (std::size_t s = 0; s < ds.studies.size(); ++s) ds.study_names.push_back("study" + std::to_string(s + 1));
  ds.validate();
  return ds;
}

MultiStudyDataset preprocess(const MultiStudyDataset& ds, const PreprocessSpec& spec) {
  if (spec.scale && !spec.center) throw ConfigError("scaling requires centering");
  MultiStudyDataset out = ds;
  if (!spec.center) return out;
  for (std::size_t s = 0; s < out.studies.size(); ++s) {
    Matrix& y = out.studies[s];
    const Index n = y.rows();
    for (Index j = 0; j < y.cols(); ++j) {
      auto col = y.col(j);
      col.array() -= col.mean();
      // A second pass removes the rounding residue of the first.
      col.array() -= col.mean();
      if (!spec.scale) continue;
      const double sd = std::sqrt(col.squaredNorm() / static_cast<double>(n - 1));
      if (sd < 1e-12 * std::max(1.0, ds.studies[s].col(j).cwiseAbs().maxCoeff())) {
        col.setZero();
        out.warnings.push_back("constant column '" +
                               (out.variable_names.empty() ? std::to_string(j + 1) : out.variable_names[j]) +
                               "' in study " + std::to_string(s + 1) + " left centered, not scaled");
        continue;
      }
      col /= sd;
    }
  }
  return out;
}

MultiStudyDataset log_transform(const MultiStudyDataset& ds, double offset) {
  MultiStudyDataset out = ds;
  for (auto& y : out.studies) {
    if (((y.array() + offset) <= 0.0).any()) throw DomainError("log transform: value + offset is not positive");
    y = (y.array() + offset).log().matrix();
  }
  return out;
}

bool is_centered(const MultiStudyDataset& ds, double tol) {
  for (const auto& y : ds.studies)
    if ((y.colwise().mean().cwiseAbs().array() > tol).any()) return false;
  return true;
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  CsvTable table;
  std::vector<std::string> fields;
  if (!read_record(in, fields)) throw DimensionError(path + ": empty file");
  if (fields.size() == 1 && fields[0].empty()) throw DimensionError(path + ": empty header");
  if (!fields.empty() && fields[0].rfind("\xEF\xBB\xBF", 0) == 0) fields[0].erase(0, 3);
  for (auto& f : fields) table.header.push_back(trim(f));

  std::vector<std::vector<double>> rows;
  std::size_t line = 1;
  while (read_record(in, fields)) {
    ++line;
    if (fields.size() == 1 && trim(fields[0]).empty()) continue;
    if (fields.size() != table.header.size())
      throw ParseError(path + ": row " + std::to_string(line) + " has " + std::to_string(fields.size()) +
                       " fields, expected " + std::to_string(table.header.size()));
    std::vector<double> row(fields.size());
    for (std::size_t j = 0; j < fields.size(); ++j) {
      const std::string cell = trim(fields[j]);
      const char* b = cell.data();
      const char* e = b + cell.size();
      if (b != e && *b == '+') ++b;
      auto res = std::from_chars(b, e, row[j]);
      if (cell.empty() || res.ec != std::errc() || res.ptr != e || !std::isfinite(row[j]))
        throw ParseError(path + ": non-numeric value '" + cell + "' at row " + std::to_string(line) + ", column " +
                         std::to_string(j + 1) + " (" + table.header[j] + ")");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DimensionError(path + ": no data rows");
  table.values.resize(static_cast<Index>(rows.size()), static_cast<Index>(table.header.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) table.values(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
  return table;
}

void write_csv(const std::string& path, const Matrix& values, const std::vector<std::string>& header) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  std::vector<std::string> names = header;
  if (names.empty())
    for (Index j = 0; j < values.cols(); ++j) names.push_back("V" + std::to_string(j + 1));
  if (static_cast<Index>(names.size()) != values.cols()) throw DimensionError(path + ": header/column mismatch");
  for (std::size_t j = 0; j < names.size(); ++j) out << (j ? "," : "") << csv_quote(names[j]);
  out << '\n';
  for (Index i = 0; i < values.rows(); ++i) {
    for (Index j = 0; j < values.cols(); ++j) out << (j ? "," : "") << format_double(values(i, j));
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path);
}

MultiStudyDataset load_dataset(const std::vector<std::string>& paths, const std::vector<std::string>& covariate_paths) {
  if (paths.empty()) throw DimensionError("no study files given");
  if (!covariate_paths.empty() && covariate_paths.size() != paths.size())
    throw DimensionError("covariate file count does not match study file count");
  MultiStudyDataset ds;
  for (std::size_t s = 0; s < paths.size(); ++s) {
    CsvTable t = read_csv(paths[s]);
    if (s == 0) {
      ds.variable_names = t.header;
    } else {
      if (t.header.size() != ds.variable_names.size())
        throw SchemaError(paths[s] + ": header has " + std::to_string(t.header.size()) + " columns, expected " +
                          std::to_string(ds.variable_names.size()));
      for (std::size_t j = 0; j < t.header.size(); ++j)
        if (t.header[j] != ds.variable_names[j])
          throw SchemaError(paths[s] + ": column " + std::to_string(j + 1) + " is '" + t.header[j] + "', expected '" +
                            ds.variable_names[j] + "'");
    }
    ds.studies.push_back(std::move(t.values));
    ds.study_names.push_back(std::filesystem::path(paths[s]).stem().string());
  }
  std::vector<std::string> cov_header;
  for (std::size_t s = 0; s < covariate_paths.size(); ++s) {
    CsvTable t = read_csv(covariate_paths[s]);
    if (s == 0) cov_header = t.header;
    else if (t.header != cov_header) throw SchemaError(covariate_paths[s] + ": covariate header mismatch");
    ds.covariates.push_back(std::move(t.values));
  }
  ds.validate();
  return ds;
}

std::vector<std::string> save_dataset(const MultiStudyDataset& ds, const std::string& dir, const std::string& prefix) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> paths;
  for (std::size_t s = 0; s < ds.studies.size(); ++s) {
    const std::string p = (std::filesystem::path(dir) / (prefix + std::to_string(s + 1) + ".csv")).string();
    write_csv(p, ds.studies[s], ds.variable_names);
    paths.push_back(p);
  }
  for (std::size_t s = 0; s < ds.covariates.size(); ++s) {
    const std::string p = (std::filesystem::path(dir) / (prefix + std::to_string(s + 1) + "_covariates.csv")).string();
    write_csv(p, ds.covariates[s]);
  }
  return paths;
}

}  // namespace bifa

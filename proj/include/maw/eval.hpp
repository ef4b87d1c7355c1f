#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "maw/linalg.hpp"
#include "maw/model.hpp"

namespace maw::eval {

enum class Provenance { Synthetic, Csv };

/// Rows of `features` are points; label 0 = inlier, 1 = outlier.
struct Dataset {
  Matrix features;
  std::vector<int> labels;
  Provenance provenance = Provenance::Synthetic;
  bool has_labels = true;  // false for CSV input without a label column

  int size() const { return static_cast<int>(features.rows()); }
  int dim() const { return static_cast<int>(features.cols()); }
  int count(int label) const;
  Dataset subset(const std::vector<int>& rows) const;
};

/// Scale each row to unit L2 norm; zero rows stay zero.
void normalize_rows(Matrix& m);

/// `inliers` points near a random rank-r subspace plus `outliers` isotropic
/// Gaussian points, all rows unit-normalized. Inliers come first.
Dataset gen_synthetic_counts(int dim, int rank, int inliers, int outliers, double noise, std::uint64_t seed);
/// Same with round(inliers * c) outliers.
Dataset gen_synthetic(int dim, int rank, int inliers, double c, double noise, std::uint64_t seed);

/// Header row, numeric feature columns, optional `label` column in {0, 1}.
/// Lines starting with '#' are comments. Error rows count data rows from 1;
/// columns are 1-based.
Dataset parse_csv(std::istream& in);
Dataset load_csv(const std::string& path);
/// Writes `comment` (if non-empty) as a leading '#' line.
void write_csv(const Dataset& data, std::ostream& out, const std::string& comment = "");

/// Mann-Whitney AUC with half credit for ties; outliers (label 1) positive
/// and larger scores rank as more outlying.
double auc(const std::vector<double>& scores, const std::vector<int>& labels);
/// Step-wise average precision; ties ordered by index.
double ap(const std::vector<double>& scores, const std::vector<int>& labels);

struct SplitSpec {
  int train_inliers = 500;
  double c = 0.2;
  int test_inliers = 200;
  std::vector<double> c_test = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  std::uint64_t seed = 0;

  void validate() const;
  int train_outliers() const;
  int test_outliers(double c_test_value) const;
  int max_test_outliers() const;
};

/// Training set plus one test set per c_test value. Every test set shares
/// the same inliers; outliers are nested prefixes of one pool.
struct Split {
  Dataset train;
  Dataset test_pool;               // test inliers then max test outliers
  std::vector<std::vector<int>> test_rows;  // rows of test_pool per c_test
};

/// Draws disjoint train/test subsets. The pool is put in canonical order
/// first, so the result does not depend on the row order of `pool`.
Split make_split(const Dataset& pool, const SplitSpec& spec);

struct SyntheticSpec {
  int dim = 20;
  int rank = 1;
  double noise = 0.1;
};

struct DataSpec {
  Provenance source = Provenance::Synthetic;
  SyntheticSpec synthetic;
  std::string path;
};

struct ExperimentSpec {
  DataSpec data;
  SplitSpec split;                  // split.c is overridden by c_values
  std::vector<double> c_values = {0.2};
  std::vector<Variant> variants = {Variant::Maw};
  std::vector<std::uint64_t> seeds = {0};
  Hyperparams hp;

  void validate() const;
};

struct CTestMetrics {
  double c_test = 0.0;
  double auc = 0.0;
  double ap = 0.0;
};

struct SeedMetrics {
  std::uint64_t seed = 0;
  double auc = 0.0;  // mean over c_test
  double ap = 0.0;
  std::vector<CTestMetrics> per_c_test;
};

struct MetricReport {
  std::string variant;
  double c = 0.0;
  std::string param;   // sweep parameter, empty outside sweeps
  double value = 0.0;  // sweep value
  double auc_mean = 0.0;
  double auc_std = 0.0;  // population std over seeds
  double ap_mean = 0.0;
  double ap_std = 0.0;
  std::vector<SeedMetrics> per_seed;
};

using ProgressFn = std::function<void(const std::string&)>;

/// One report per (variant, c). Deterministic per seed.
std::vector<MetricReport> run_experiment(const ExperimentSpec& spec, const ProgressFn& progress = {});

/// Names accepted by sweep().
const std::vector<std::string>& sweep_parameters();
/// Re-runs the experiment once per value of one parameter; one report per
/// (value, variant, c).
std::vector<MetricReport> sweep(const ExperimentSpec& base, const std::string& param,
                                const std::vector<double>& values, const ProgressFn& progress = {});

/// Population mean and standard deviation.
std::pair<double, double> mean_std(const std::vector<double>& values);

nlohmann::json report_json(const std::vector<MetricReport>& reports);
/// Flat CSV: variant,c,param,value,auc_mean,auc_std,ap_mean,ap_std,n_seeds.
std::string report_csv(const std::vector<MetricReport>& reports);

}  // namespace maw::eval

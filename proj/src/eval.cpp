#include "maw/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include "maw/errors.hpp"

namespace maw::eval {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(trim(field));
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

bool parse_double(const std::string& text, double& out) {
  if (text.empty()) return false;
  char* end = nullptr;
  out = std::strtod(text.c_str(), &end);
  return end == text.c_str() + text.size() && std::isfinite(out);
}

std::string format_double(double v) {
  std::ostringstream ss;
  ss << std::setprecision(17) << v;
  return ss.str();
}

int rounded_count(int n, double fraction) { return static_cast<int>(std::lround(n * fraction)); }

/// Canonical order: by label, then lexicographically by features.
std::vector<int> canonical_order(const Dataset& d) {
  std::vector<int> order(static_cast<std::size_t>(d.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (d.labels[a] != d.labels[b]) return d.labels[a] < d.labels[b];
    for (int j = 0; j < d.dim(); ++j) {
      if (d.features(a, j) != d.features(b, j)) return d.features(a, j) < d.features(b, j);
    }
    return false;
  });
  return order;
}

}  // namespace

int Dataset::count(int label) const {
  return static_cast<int>(std::count(labels.begin(), labels.end(), label));
}

Dataset Dataset::subset(const std::vector<int>& rows) const {
  Dataset out;
  out.provenance = provenance;
  out.has_labels = has_labels;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
  out.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.features.row(static_cast<Eigen::Index>(i)) = features.row(rows[i]);
    out.labels.push_back(labels[static_cast<std::size_t>(rows[i])]);
  }
  return out;
}

void normalize_rows(Matrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double n = m.row(i).norm();
    if (n > 0.0) m.row(i) /= n;
  }
}

Dataset gen_synthetic_counts(int dim, int rank, int inliers, int outliers, double noise, std::uint64_t seed) {
  if (rank < 1 || rank >= dim) throw DomainError("gen_synthetic: need 1 <= rank < dim");
  if (!(noise >= 0.0)) throw DomainError("gen_synthetic: noise must be non-negative");
  if (inliers < 0 || outliers < 0) throw DomainError("gen_synthetic: counts must be non-negative");
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto gaussian = [&](Eigen::Index r, Eigen::Index c) {
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
    return m;
  };
  const Matrix raw = gaussian(dim, rank);
  const Eigen::HouseholderQR<Matrix> qr(raw);
  const Matrix frame = qr.householderQ() * Matrix::Identity(dim, rank);

  Dataset d;
  d.provenance = Provenance::Synthetic;
  d.features.resize(inliers + outliers, dim);
  d.labels.assign(static_cast<std::size_t>(inliers), 0);
  d.labels.resize(static_cast<std::size_t>(inliers + outliers), 1);
  for (int i = 0; i < inliers; ++i) {
    const Matrix s = gaussian(rank, 1);
    const Matrix e = gaussian(dim, 1);
    d.features.row(i) = (frame * s + noise * e).transpose();
  }
  // Isotropic outliers rescaled to the typical inlier norm before the final
  // normalization, so norms carry no signal at any stage.
  const double scale = std::sqrt((rank + noise * noise * dim) / static_cast<double>(dim));
  for (int i = 0; i < outliers; ++i) d.features.row(inliers + i) = scale * gaussian(1, dim);
  normalize_rows(d.features);
  return d;
}

Dataset gen_synthetic(int dim, int rank, int inliers, double c, double noise, std::uint64_t seed) {
  if (!(c >= 0.0)) throw DomainError("gen_synthetic: outlier fraction must be non-negative");
  return gen_synthetic_counts(dim, rank, inliers, rounded_count(inliers, c), noise, seed);
}

Dataset parse_csv(std::istream& in) {
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    have_header = true;
    break;
  }
  if (!have_header) throw FormatError("csv: empty input");
  const std::vector<std::string> header = split_fields(line);
  int label_col = -1;
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (header[j] == "label") {
      if (label_col >= 0) throw FormatError("csv: duplicate label column");
      label_col = static_cast<int>(j);
    }
  }
  const int n_features = static_cast<int>(header.size()) - (label_col >= 0 ? 1 : 0);
  if (n_features < 1) throw FormatError("csv: no feature columns");

  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  long row = 0;
  while (std::getline(in, line)) {
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    ++row;
    const std::vector<std::string> fields = split_fields(line);
    if (fields.size() != header.size()) {
      throw ParseError("csv: row " + std::to_string(row) + " has " + std::to_string(fields.size()) +
                           " fields, expected " + std::to_string(header.size()),
                       row, static_cast<long>(std::min(fields.size(), header.size())) + 1);
    }
    std::vector<double> values;
    values.reserve(static_cast<std::size_t>(n_features));
    int label = 0;
    for (std::size_t j = 0; j < fields.size(); ++j) {
      double v = 0.0;
      if (!parse_double(fields[j], v)) {
        throw ParseError("csv: non-numeric value '" + fields[j] + "' at row " + std::to_string(row) + ", column " +
                             std::to_string(j + 1),
                         row, static_cast<long>(j) + 1);
      }
      if (static_cast<int>(j) == label_col) {
        if (v != 0.0 && v != 1.0) {
          throw ParseError("csv: label must be 0 or 1 at row " + std::to_string(row), row, static_cast<long>(j) + 1);
        }
        label = static_cast<int>(v);
      } else {
        values.push_back(v);
      }
    }
    rows.push_back(std::move(values));
    labels.push_back(label);
  }
  if (rows.empty()) throw FormatError("csv: no data rows");
  Dataset d;
  d.provenance = Provenance::Csv;
  d.features.resize(static_cast<Eigen::Index>(rows.size()), n_features);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (int j = 0; j < n_features; ++j) d.features(static_cast<Eigen::Index>(i), j) = rows[i][static_cast<std::size_t>(j)];
  d.labels = std::move(labels);
  d.has_labels = label_col >= 0;
  normalize_rows(d.features);
  return d;
}

Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  return parse_csv(in);
}

void write_csv(const Dataset& data, std::ostream& out, const std::string& comment) {
  if (!comment.empty()) out << "# " << comment << '\n';
  for (int j = 0; j < data.dim(); ++j) out << 'f' << (j + 1) << ',';
  out << "label\n";
  for (int i = 0; i < data.size(); ++i) {
    for (int j = 0; j < data.dim(); ++j) out << format_double(data.features(i, j)) << ',';
    out << data.labels[static_cast<std::size_t>(i)] << '\n';
  }
}

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw ShapeError("auc: scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Twice the Mann-Whitney statistic, accumulated exactly in integers.
  long long twice_wins = 0;
  long long neg_below = 0;
  long long pos = 0;
  long long neg = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    long long group_pos = 0;
    long long group_neg = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      const int l = labels[order[j]];
      if (l != 0 && l != 1) throw DomainError("auc: labels must be 0 or 1");
      (l == 1 ? group_pos : group_neg) += 1;
      ++j;
    }
    twice_wins += group_pos * (2 * neg_below + group_neg);
    neg_below += group_neg;
    pos += group_pos;
    neg += group_neg;
    i = j;
  }
  if (pos == 0 || neg == 0) throw UndefinedMetricError("auc: both classes must be present");
  return static_cast<double>(twice_wins) / static_cast<double>(2 * pos * neg);
}

double ap(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw ShapeError("ap: scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double total = 0.0;
  long hits = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const int l = labels[order[k]];
    if (l != 0 && l != 1) throw DomainError("ap: labels must be 0 or 1");
    if (l == 1) {
      ++hits;
      total += static_cast<double>(hits) / static_cast<double>(k + 1);
    }
  }
  if (hits == 0) throw UndefinedMetricError("ap: no positive labels");
  return total / static_cast<double>(hits);
}

// ---------------------------------------------------------------------------
// Splits

void SplitSpec::validate() const {
  if (train_inliers < 2) throw ConfigError("train_inliers must be at least 2", "split.train_inliers");
  if (!(c >= 0.0 && c < 1.0)) throw ConfigError("c must lie in [0, 1)", "split.c");
  if (test_inliers < 1) throw ConfigError("test_inliers must be positive", "split.test_inliers");
  if (c_test.empty()) throw ConfigError("c_test must not be empty", "split.c_test");
  for (double v : c_test) {
    if (!(v > 0.0 && v < 1.0)) throw ConfigError("c_test values must lie in (0, 1)", "split.c_test");
    if (test_outliers(v) < 1) throw ConfigError("c_test value yields no test outliers", "split.c_test");
  }
}

int SplitSpec::train_outliers() const { return rounded_count(train_inliers, c); }

int SplitSpec::test_outliers(double c_test_value) const { return rounded_count(test_inliers, c_test_value); }

int SplitSpec::max_test_outliers() const {
  int m = 0;
  for (double v : c_test) m = std::max(m, test_outliers(v));
  return m;
}

Split make_split(const Dataset& pool, const SplitSpec& spec) {
  spec.validate();
  const std::vector<int> order = canonical_order(pool);
  std::vector<int> inliers, outliers;
  for (int r : order) (pool.labels[static_cast<std::size_t>(r)] == 0 ? inliers : outliers).push_back(r);
  const int need_in = spec.train_inliers + spec.test_inliers;
  const int need_out = spec.train_outliers() + spec.max_test_outliers();
  if (static_cast<int>(inliers.size()) < need_in || static_cast<int>(outliers.size()) < need_out) {
    throw FormatError("split: dataset has " + std::to_string(inliers.size()) + " inliers and " +
                      std::to_string(outliers.size()) + " outliers, needs " + std::to_string(need_in) + " and " +
                      std::to_string(need_out));
  }
  Rng rng(stream_seed(spec.seed, 3));
  std::shuffle(inliers.begin(), inliers.end(), rng);
  std::shuffle(outliers.begin(), outliers.end(), rng);

  std::vector<int> train_rows(inliers.begin(), inliers.begin() + spec.train_inliers);
  train_rows.insert(train_rows.end(), outliers.begin(), outliers.begin() + spec.train_outliers());
  std::vector<int> test_rows(inliers.begin() + spec.train_inliers, inliers.begin() + need_in);
  test_rows.insert(test_rows.end(), outliers.begin() + spec.train_outliers(), outliers.begin() + need_out);

  Split split;
  split.train = pool.subset(train_rows);
  split.test_pool = pool.subset(test_rows);
  for (double v : spec.c_test) {
    std::vector<int> rows(static_cast<std::size_t>(spec.test_inliers));
    std::iota(rows.begin(), rows.end(), 0);
    for (int k = 0; k < spec.test_outliers(v); ++k) rows.push_back(spec.test_inliers + k);
    split.test_rows.push_back(std::move(rows));
  }
  return split;
}

// ---------------------------------------------------------------------------
// Experiments

void ExperimentSpec::validate() const {
  hp.validate();
  if (c_values.empty()) throw ConfigError("at least one c value is required", "split.c");
  if (variants.empty()) throw ConfigError("at least one variant is required", "variant");
  if (seeds.empty()) throw ConfigError("at least one seed is required", "seeds");
  for (double c : c_values) {
    SplitSpec s = split;
    s.c = c;
    s.validate();
  }
  if (data.source == Provenance::Synthetic) {
    if (data.synthetic.rank < 1 || data.synthetic.rank >= data.synthetic.dim) {
      throw ConfigError("synthetic rank must satisfy 1 <= rank < dim", "data.rank");
    }
    if (!(data.synthetic.noise >= 0.0)) throw ConfigError("synthetic noise must be non-negative", "data.noise");
  }
}

std::pair<double, double> mean_std(const std::vector<double>& values) {
  if (values.empty()) return {0.0, 0.0};
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  return {mean, std::sqrt(var / n)};
}

std::vector<MetricReport> run_experiment(const ExperimentSpec& spec, const ProgressFn& progress) {
  spec.validate();
  Dataset csv_pool;
  if (spec.data.source == Provenance::Csv) csv_pool = load_csv(spec.data.path);

  std::vector<MetricReport> reports;
  for (Variant variant : spec.variants) {
    for (double c : spec.c_values) {
      MetricReport report;
      report.variant = to_string(variant);
      report.c = c;
      std::vector<double> aucs, aps;
      for (std::uint64_t seed : spec.seeds) {
        SplitSpec split_spec = spec.split;
        split_spec.c = c;
        split_spec.seed = seed;
        Dataset pool;
        if (spec.data.source == Provenance::Synthetic) {
          const SyntheticSpec& s = spec.data.synthetic;
          pool = gen_synthetic_counts(s.dim, s.rank, split_spec.train_inliers + split_spec.test_inliers,
                                      split_spec.train_outliers() + split_spec.max_test_outliers(), s.noise, seed);
        } else {
          pool = csv_pool;
        }
        const Split split = make_split(pool, split_spec);
        Hyperparams hp = spec.hp;
        hp.variant = variant;
        const std::string cell = "variant=" + report.variant + " c=" + format_double(c) +
                                 " seed=" + std::to_string(seed);
        if (progress) progress("training " + cell);
        TrainResult trained;
        try {
          trained = train(split.train.features, hp, seed);
        } catch (const NumericalError& e) {
          throw NumericalError(std::string(e.what()) + " [" + cell + "]");
        }
        const std::vector<double> normality =
            score_all(trained.model, split.test_pool.features, hp.samples, stream_seed(seed, 2));

        SeedMetrics sm;
        sm.seed = seed;
        std::vector<double> seed_auc, seed_ap;
        for (std::size_t k = 0; k < split_spec.c_test.size(); ++k) {
          std::vector<double> outlierness;
          std::vector<int> labels;
          for (int r : split.test_rows[k]) {
            outlierness.push_back(-normality[static_cast<std::size_t>(r)]);
            labels.push_back(split.test_pool.labels[static_cast<std::size_t>(r)]);
          }
          CTestMetrics m{split_spec.c_test[k], auc(outlierness, labels), ap(outlierness, labels)};
          if (!std::isfinite(m.auc) || !std::isfinite(m.ap)) {
            throw NumericalError("non-finite metric [" + cell + "]");
          }
          seed_auc.push_back(m.auc);
          seed_ap.push_back(m.ap);
          sm.per_c_test.push_back(m);
        }
        sm.auc = mean_std(seed_auc).first;
        sm.ap = mean_std(seed_ap).first;
        aucs.push_back(sm.auc);
        aps.push_back(sm.ap);
        report.per_seed.push_back(std::move(sm));
      }
      std::tie(report.auc_mean, report.auc_std) = mean_std(aucs);
      std::tie(report.ap_mean, report.ap_std) = mean_std(aps);
      reports.push_back(std::move(report));
    }
  }
  return reports;
}

const std::vector<std::string>& sweep_parameters() {
  static const std::vector<std::string> names = {"latent_dim", "feature_dim", "eta",  "samples",
                                                 "c",          "rank",        "noise"};
  return names;
}

std::vector<MetricReport> sweep(const ExperimentSpec& base, const std::string& param,
                                const std::vector<double>& values, const ProgressFn& progress) {
  const auto& names = sweep_parameters();
  if (std::find(names.begin(), names.end(), param) == names.end()) {
    throw ConfigError("unknown sweep parameter '" + param + "'", "sweep.param");
  }
  if (values.empty()) throw ConfigError("sweep needs at least one value", "sweep.values");
  std::vector<MetricReport> all;
  for (double v : values) {
    ExperimentSpec spec = base;
    const int iv = static_cast<int>(std::lround(v));
    if (param == "latent_dim") spec.hp.latent_dim = iv;
    else if (param == "feature_dim") spec.hp.feature_dim = iv;
    else if (param == "eta") spec.hp.eta = v;
    else if (param == "samples") spec.hp.samples = iv;
    else if (param == "c") spec.c_values = {v};
    else if (param == "rank") spec.data.synthetic.rank = iv;
    else if (param == "noise") spec.data.synthetic.noise = v;
    if (progress) progress("sweep " + param + "=" + format_double(v));
    std::vector<MetricReport> reports = run_experiment(spec, progress);
    for (auto& r : reports) {
      r.param = param;
      r.value = v;
      all.push_back(std::move(r));
    }
  }
  return all;
}

nlohmann::json report_json(const std::vector<MetricReport>& reports) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : reports) {
    nlohmann::json per_seed = nlohmann::json::array();
    for (const auto& s : r.per_seed) {
      nlohmann::json per_c = nlohmann::json::array();
      for (const auto& m : s.per_c_test) per_c.push_back({{"c_test", m.c_test}, {"auc", m.auc}, {"ap", m.ap}});
      per_seed.push_back({{"seed", s.seed}, {"auc", s.auc}, {"ap", s.ap}, {"per_c_test", std::move(per_c)}});
    }
    nlohmann::json row = {{"variant", r.variant}, {"c", r.c},         {"auc_mean", r.auc_mean},
                          {"auc_std", r.auc_std}, {"ap_mean", r.ap_mean}, {"ap_std", r.ap_std},
                          {"per_seed", std::move(per_seed)}};
    if (!r.param.empty()) {
      row["param"] = r.param;
      row["value"] = r.value;
    }
    out.push_back(std::move(row));
  }
  return out;
}

std::string report_csv(const std::vector<MetricReport>& reports) {
  std::ostringstream out;
  out << "variant,c,param,value,auc_mean,auc_std,ap_mean,ap_std,n_seeds\n";
  for (const auto& r : reports) {
    out << r.variant << ',' << format_double(r.c) << ',' << r.param << ','
        << (r.param.empty() ? std::string() : format_double(r.value)) << ',' << format_double(r.auc_mean) << ','
        << format_double(r.auc_std) << ',' << format_double(r.ap_mean) << ',' << format_double(r.ap_std) << ','
        << r.per_seed.size() << '\n';
  }
  return out.str();
}

}  // namespace maw::eval

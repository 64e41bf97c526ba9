#ifndef STF_FILTERLEARN_HPP
#define STF_FILTERLEARN_HPP

// Unsupervised spatiotemporal filter learning.
//
// The slow filters minimise E[(w'X - w'phi(X))^2] subject to unit response variance.
// With A = E[d d'] (d = X - phi(X)) and B the regularised covariance of X this is the
// symmetric-definite generalised eigenproblem A w = lambda B w. It is solved by
// whitening with B (dropping modes below a relative floor) and diagonalising the
// whitened A; eigenvectors of the smallest lambdas are the filters, scaled so w'Bw = 1.
//
// PCA and random unit projections are provided as baselines with the same FilterBank
// interface.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "stf/common.hpp"
#include "stf/perturb.hpp"
#include "stf/voxel.hpp"

namespace stf {

enum class FilterMethod { sfa, pca, random };

inline const char* to_string(FilterMethod m) {
  switch (m) {
    case FilterMethod::sfa: return "sfa";
    case FilterMethod::pca: return "pca";
    case FilterMethod::random: return "random";
  }
  return "?";
}

inline FilterMethod filter_method_from_string(const std::string& s) {
  if (s == "sfa") return FilterMethod::sfa;
  if (s == "pca") return FilterMethod::pca;
  if (s == "random") return FilterMethod::random;
  throw PreconditionError("unknown filter method '" + s + "' (expected sfa, pca or random)");
}

struct FilterBank {
  FilterMethod method = FilterMethod::sfa;
  int a = 0;
  int k = 0;
  std::int64_t t_vox = 1;
  double alpha = 0.2;
  /// One filter per row, flattened like RoiSample::values.
  Eigen::MatrixXd filters;
  /// Generalised eigenvalues (sfa, ascending). Empty for the baselines.
  std::vector<double> slowness;
  /// Component variances (pca, descending). Empty otherwise.
  std::vector<double> explained_variance;
  /// Per-filter response statistics; empty until fit_normalization runs.
  std::vector<double> norm_mean;
  std::vector<double> norm_std;

  int n_filters() const noexcept { return static_cast<int>(filters.rows()); }
  int dim() const noexcept { return a * a * k; }
  bool normalized() const noexcept {
    return static_cast<int>(norm_mean.size()) == n_filters() && static_cast<int>(norm_std.size()) == n_filters();
  }
  /// Weight of filter f at patch offset (dx, dy, bin).
  double weight(int f, int dx, int dy, int bin) const { return filters(f, roi_index(a, dx, dy, bin)); }

  friend bool operator==(const FilterBank& l, const FilterBank& r) {
    return l.method == r.method && l.a == r.a && l.k == r.k && l.t_vox == r.t_vox && l.alpha == r.alpha &&
           l.filters.rows() == r.filters.rows() && l.filters.cols() == r.filters.cols() &&
           l.filters == r.filters && l.slowness == r.slowness && l.explained_variance == r.explained_variance &&
           l.norm_mean == r.norm_mean && l.norm_std == r.norm_std;
  }
};

/// First n filters with their statistics (the smallest-slowness prefix for sfa banks).
inline FilterBank truncate(const FilterBank& bank, int n) {
  if (n < 1 || n > bank.n_filters()) throw PreconditionError("truncation count out of range");
  FilterBank out = bank;
  out.filters = bank.filters.topRows(n);
  auto cut = [n](std::vector<double>& v) {
    if (static_cast<int>(v.size()) > n) v.resize(n);
  };
  cut(out.slowness);
  cut(out.explained_variance);
  cut(out.norm_mean);
  cut(out.norm_std);
  return out;
}

namespace detail {

// Flip each row so that its largest-magnitude entry (first on ties) is positive.
inline void canonical_signs(Eigen::MatrixXd& rows) {
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    Eigen::Index arg = 0;
    double best = -1;
    for (Eigen::Index c = 0; c < rows.cols(); ++c) {
      if (std::abs(rows(r, c)) > best) {
        best = std::abs(rows(r, c));
        arg = c;
      }
    }
    if (rows(r, arg) < 0) rows.row(r) *= -1.0;
  }
}

inline void check_samples(std::span<const RoiSample> samples) {
  if (samples.empty()) throw InsufficientDataError("no ROI samples");
  const auto& s0 = samples.front();
  for (const auto& s : samples)
    if (s.a != s0.a || s.k != s0.k || s.values.size() != s0.values.size())
      throw DimensionError("ROI samples have inconsistent shapes");
}

inline Eigen::MatrixXd stack_values(std::span<const RoiSample> samples) {
  const Eigen::Index m = static_cast<Eigen::Index>(samples.size());
  const Eigen::Index d = static_cast<Eigen::Index>(samples.front().values.size());
  Eigen::MatrixXd X(m, d);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < d; ++j) X(i, j) = samples[i].values[j];
  return X;
}

}  // namespace detail

/// Data and perturbed-data matrices (one sample per row) for the slowness problem.
struct SlownessData {
  Eigen::MatrixXd X;
  Eigen::MatrixXd X_perturbed;
};

inline SlownessData build_slowness_data(std::span<const RoiSample> samples, std::int64_t time_scale,
                                        unsigned threads = 1) {
  detail::check_samples(samples);
  SlownessData data;
  data.X = detail::stack_values(samples);
  data.X_perturbed.resize(data.X.rows(), data.X.cols());
  parallel_for(samples.size(), threads, [&](std::size_t i) {
    const RoiSample p = phi(samples[i], time_scale);
    for (std::size_t j = 0; j < p.values.size(); ++j)
      data.X_perturbed(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = p.values[j];
  });
  return data;
}

/// Solution of A w = lambda B w restricted to the n smallest eigenvalues.
struct SlownessSolution {
  Eigen::MatrixXd filters;  // n x dim, rows are w_i with w_i' B w_i = 1
  Eigen::VectorXd lambda;   // ascending
  Eigen::MatrixXd A;
  Eigen::MatrixXd B;        // regularised
};

struct SfaOptions {
  double ridge = 1e-6;           // times trace(B)/dim added to the diagonal of B
  double whitening_floor = 1e-12;  // drop B-modes below this fraction of the largest
};

inline SlownessSolution solve_slowness(const Eigen::MatrixXd& X, const Eigen::MatrixXd& X_perturbed, int n_filters,
                                       const SfaOptions& opt = {}) {
  if (X.rows() != X_perturbed.rows() || X.cols() != X_perturbed.cols())
    throw DimensionError("data and perturbed data shapes differ");
  if (X.rows() < 2) throw InsufficientDataError("need at least two samples");
  const Eigen::Index dim = X.cols();
  if (n_filters < 1 || n_filters > dim) throw PreconditionError("n_filters must be in [1, dim]");
  if (opt.ridge < 0) throw PreconditionError("ridge must be non-negative");
  const double m = static_cast<double>(X.rows());

  SlownessSolution sol;
  const Eigen::RowVectorXd mu = X.colwise().mean();
  const Eigen::MatrixXd Xc = X.rowwise() - mu;
  sol.B = (Xc.transpose() * Xc) / m;
  const Eigen::MatrixXd D = X - X_perturbed;
  sol.A = (D.transpose() * D) / m;
  const double trace = sol.B.trace();
  sol.B.diagonal().array() += opt.ridge * trace / static_cast<double>(dim);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eb(sol.B);
  if (eb.info() != Eigen::Success) throw RankDeficiencyError("eigendecomposition of the covariance failed");
  const Eigen::VectorXd& s = eb.eigenvalues();
  const double s_max = s.maxCoeff();
  if (!(s_max > 0)) throw RankDeficiencyError("data covariance is zero");
  Eigen::Index first = 0;  // eigenvalues ascending; keep [first, dim)
  while (first < dim && s(first) <= opt.whitening_floor * s_max) ++first;
  const Eigen::Index rank = dim - first;
  if (rank < n_filters)
    throw RankDeficiencyError("regularised covariance has rank " + std::to_string(rank) + " < " +
                              std::to_string(n_filters) + " requested filters");

  const Eigen::MatrixXd whiten =
      eb.eigenvectors().rightCols(rank) * s.tail(rank).cwiseSqrt().cwiseInverse().asDiagonal();
  Eigen::MatrixXd Aw = whiten.transpose() * sol.A * whiten;
  Aw = 0.5 * (Aw + Aw.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(Aw);
  if (ea.info() != Eigen::Success) throw RankDeficiencyError("eigendecomposition of the whitened slowness matrix failed");

  sol.filters = (whiten * ea.eigenvectors().leftCols(n_filters)).transpose();
  sol.lambda = ea.eigenvalues().head(n_filters).cwiseMax(0.0);
  detail::canonical_signs(sol.filters);
  return sol;
}

inline FilterBank learn_sfa(std::span<const RoiSample> samples, int n_filters, std::int64_t time_scale,
                            const SfaOptions& opt = {}, unsigned threads = 1) {
  detail::check_samples(samples);
  const auto& s0 = samples.front();
  const std::size_t dim = s0.values.size();
  if (samples.size() < 10 * dim)
    std::clog << "warning: " << samples.size() << " ROI samples for a " << dim
              << "-dimensional filter; at least " << 10 * dim << " recommended\n";
  const SlownessData data = build_slowness_data(samples, time_scale, threads);
  const SlownessSolution sol = solve_slowness(data.X, data.X_perturbed, n_filters, opt);
  FilterBank bank;
  bank.method = FilterMethod::sfa;
  bank.a = s0.a;
  bank.k = s0.k;
  bank.t_vox = s0.t_vox;
  bank.filters = sol.filters;
  bank.slowness.assign(sol.lambda.data(), sol.lambda.data() + sol.lambda.size());
  return bank;
}

struct PcaSolution {
  Eigen::MatrixXd components;  // n x dim, unit rows
  Eigen::VectorXd variance;    // descending
};

inline PcaSolution solve_pca(const Eigen::MatrixXd& X, int n_components) {
  if (X.rows() < 2) throw InsufficientDataError("need at least two samples");
  if (n_components < 1 || n_components > X.cols()) throw PreconditionError("n_filters must be in [1, dim]");
  const Eigen::RowVectorXd mu = X.colwise().mean();
  const Eigen::MatrixXd Xc = X.rowwise() - mu;
  const Eigen::MatrixXd C = (Xc.transpose() * Xc) / static_cast<double>(X.rows());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(C);
  if (es.info() != Eigen::Success) throw RankDeficiencyError("covariance eigendecomposition failed");
  const Eigen::Index d = X.cols();
  PcaSolution out;
  out.components.resize(n_components, d);
  out.variance.resize(n_components);
  for (int i = 0; i < n_components; ++i) {
    out.components.row(i) = es.eigenvectors().col(d - 1 - i).transpose();
    out.variance(i) = es.eigenvalues()(d - 1 - i);
  }
  detail::canonical_signs(out.components);
  return out;
}

inline FilterBank learn_pca(std::span<const RoiSample> samples, int n_filters) {
  detail::check_samples(samples);
  const auto& s0 = samples.front();
  const PcaSolution sol = solve_pca(detail::stack_values(samples), n_filters);
  FilterBank bank;
  bank.method = FilterMethod::pca;
  bank.a = s0.a;
  bank.k = s0.k;
  bank.t_vox = s0.t_vox;
  bank.filters = sol.components;
  bank.explained_variance.assign(sol.variance.data(), sol.variance.data() + sol.variance.size());
  return bank;
}

/// Gaussian random directions normalised to unit length.
inline FilterBank learn_random(int a, int k, std::int64_t t_vox, int n_filters, std::uint64_t seed) {
  const int dim = a * a * k;
  if (n_filters < 1 || n_filters > dim) throw PreconditionError("n_filters must be in [1, dim]");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  FilterBank bank;
  bank.method = FilterMethod::random;
  bank.a = a;
  bank.k = k;
  bank.t_vox = t_vox;
  bank.filters.resize(n_filters, dim);
  for (int i = 0; i < n_filters; ++i) {
    for (int j = 0; j < dim; ++j) bank.filters(i, j) = normal(rng);
    bank.filters.row(i).normalize();
  }
  return bank;
}

/// Per filter: mean of (w'X - w'phi(X))^2 divided by the variance of w'X.
inline std::vector<double> slowness_of(const FilterBank& bank, std::span<const RoiSample> samples,
                                       std::int64_t time_scale, unsigned threads = 1) {
  detail::check_samples(samples);
  if (static_cast<int>(samples.front().values.size()) != bank.filters.cols())
    throw DimensionError("filter and sample dimensions differ");
  const SlownessData data = build_slowness_data(samples, time_scale, threads);
  const Eigen::MatrixXd r = data.X * bank.filters.transpose();
  const Eigen::MatrixXd p = data.X_perturbed * bank.filters.transpose();
  const double m = static_cast<double>(r.rows());
  std::vector<double> out(bank.n_filters());
  for (int f = 0; f < bank.n_filters(); ++f) {
    const double mean = r.col(f).mean();
    const double var = (r.col(f).array() - mean).square().sum() / m;
    if (!(var > 0)) throw Error("filter " + std::to_string(f) + " has constant responses (zero variance)");
    out[f] = (r.col(f) - p.col(f)).squaredNorm() / m / var;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialisation

inline nlohmann::json bank_to_json(const FilterBank& b) {
  nlohmann::json j;
  j["method"] = to_string(b.method);
  j["a"] = b.a;
  j["k"] = b.k;
  j["t_vox"] = b.t_vox;
  j["alpha"] = b.alpha;
  j["slowness"] = b.slowness;
  j["explained_variance"] = b.explained_variance;
  j["norm_mean"] = b.norm_mean;
  j["norm_std"] = b.norm_std;
  nlohmann::json rows = nlohmann::json::array();
  for (int f = 0; f < b.n_filters(); ++f) {
    std::vector<double> row(b.filters.cols());
    for (Eigen::Index c = 0; c < b.filters.cols(); ++c) row[c] = b.filters(f, c);
    rows.push_back(std::move(row));
  }
  j["filters"] = std::move(rows);
  return j;
}

inline FilterBank bank_from_json(const nlohmann::json& j) {
  FilterBank b;
  try {
    b.method = filter_method_from_string(j.at("method").get<std::string>());
    b.a = j.at("a").get<int>();
    b.k = j.at("k").get<int>();
    b.t_vox = j.at("t_vox").get<std::int64_t>();
    b.alpha = j.at("alpha").get<double>();
    b.slowness = j.value("slowness", std::vector<double>{});
    b.explained_variance = j.value("explained_variance", std::vector<double>{});
    b.norm_mean = j.value("norm_mean", std::vector<double>{});
    b.norm_std = j.value("norm_std", std::vector<double>{});
    const auto& rows = j.at("filters");
    const int dim = b.a * b.a * b.k;
    b.filters.resize(static_cast<Eigen::Index>(rows.size()), dim);
    for (std::size_t f = 0; f < rows.size(); ++f) {
      const auto row = rows[f].get<std::vector<double>>();
      if (static_cast<int>(row.size()) != dim) throw DimensionError("filter row length does not match a*a*k");
      for (int c = 0; c < dim; ++c) b.filters(static_cast<Eigen::Index>(f), c) = row[c];
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed filter bank: ") + e.what());
  }
  return b;
}

inline void save_bank(const FilterBank& b, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write filter bank " + path.string());
  out << bank_to_json(b).dump() << '\n';
}

inline FilterBank load_bank(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open filter bank " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("filter bank " + path.string() + ": " + e.what());
  }
  return bank_from_json(j);
}

/// Writes each filter as k binary PGM cross-sections (filter_FF_tBB.pgm, mid-grey = 0,
/// scaled by the filter's largest magnitude) plus weights.json holding the full bank.
inline void export_filters(const FilterBank& b, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  for (int f = 0; f < b.n_filters(); ++f) {
    const double scale = b.filters.row(f).cwiseAbs().maxCoeff();
    for (int bin = 0; bin < b.k; ++bin) {
      char name[64];
      std::snprintf(name, sizeof name, "filter_%02d_t%02d.pgm", f, bin);
      std::ofstream out(out_dir / name, std::ios::binary);
      if (!out) throw IoError("cannot write " + (out_dir / name).string());
      out << "P5\n" << b.a << ' ' << b.a << "\n255\n";
      for (int dy = 0; dy < b.a; ++dy) {
        for (int dx = 0; dx < b.a; ++dx) {
          const double w = scale > 0 ? b.weight(f, dx, dy, bin) / scale : 0.0;
          out.put(static_cast<char>(static_cast<unsigned char>(std::lround(127.5 + 127.5 * w))));
        }
      }
    }
  }
  save_bank(b, out_dir / "weights.json");
}

}  // namespace stf

#endif  // STF_FILTERLEARN_HPP

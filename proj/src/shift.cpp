#include "specalign/shift.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "specalign/errors.hpp"
#include "specalign/parallel.hpp"
#include "specalign/rng.hpp"

namespace specalign {

namespace {

constexpr std::uint64_t kDirectionStream = 0x44495253ull;  // "DIRS"
constexpr std::uint64_t kPartitionStream = 0x50415254ull;  // "PART"

// Quantile at probability t of sorted samples, linear between order
// statistics placed at (i + 0.5) / n.
double quantile(const std::vector<double>& sorted, double t) {
  const double pos = t * static_cast<double>(sorted.size()) - 0.5;
  if (pos <= 0.0) return sorted.front();
  const auto last = static_cast<double>(sorted.size() - 1);
  if (pos >= last) return sorted.back();
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

}  // namespace

Matrix joint_embed(const PairedDataset& ds, std::span<const std::size_t> records) {
  const Index ms = static_cast<Index>(ds.spectra.dim());
  const Index mol = static_cast<Index>(ds.molecules.dim());
  Matrix out(static_cast<Index>(records.size()), ms + mol);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto r = records[i];
    if (r >= ds.size()) throw Error(ErrorCode::index_out_of_range, "record " + std::to_string(r));
    auto s = ds.spectra.row(r);
    auto m = ds.molecules.row(ds.positive_of(r));
    const Index row = static_cast<Index>(i);
    for (Index c = 0; c < ms; ++c) out(row, c) = s[static_cast<std::size_t>(c)];
    for (Index c = 0; c < mol; ++c) out(row, ms + c) = m[static_cast<std::size_t>(c)];
  }
  return out;
}

double wasserstein2_squared_1d(std::vector<double>& a, std::vector<double>& b) {
  if (a.empty() || b.empty()) throw Error(ErrorCode::empty_input, "empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double acc = 0.0;
  if (a.size() == b.size()) {
    for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
    return acc / static_cast<double>(a.size());
  }
  const std::size_t grid = std::max(a.size(), b.size());
  for (std::size_t i = 0; i < grid; ++i) {
    const double t = (static_cast<double>(i) + 0.5) / static_cast<double>(grid);
    const double d = quantile(a, t) - quantile(b, t);
    acc += d * d;
  }
  return acc / static_cast<double>(grid);
}

Matrix random_directions(Index count, Index dim, std::uint64_t seed) {
  Rng rng(derive_seed(seed, kDirectionStream));
  Matrix dirs(count, dim);
  for (Index p = 0; p < count; ++p) {
    double norm = 0.0;
    do {
      for (Index c = 0; c < dim; ++c) dirs(p, c) = rng.normal();
      norm = dirs.row(p).norm();
    } while (norm < 1e-12);
    dirs.row(p) /= norm;
  }
  return dirs;
}

double sliced_w2(const Matrix& a, const Matrix& b, const Matrix& directions, std::size_t threads) {
  if (a.cols() != b.cols() || directions.cols() != a.cols()) {
    throw Error(ErrorCode::dim_mismatch, "point sets have dims " + std::to_string(a.cols()) + " and " +
                                             std::to_string(b.cols()));
  }
  if (directions.rows() == 0) throw Error(ErrorCode::zero_projections, "no projection directions");
  if (a.rows() == 0 || b.rows() == 0) throw Error(ErrorCode::empty_input, "empty point set");

  const Matrix pa = a * directions.transpose();
  const Matrix pb = b * directions.transpose();
  const auto p = static_cast<std::size_t>(directions.rows());
  std::vector<double> per_direction(p);
  parallel_for(p, threads, [&](std::size_t k) {
    const Index col = static_cast<Index>(k);
    std::vector<double> xa(static_cast<std::size_t>(pa.rows()));
    std::vector<double> xb(static_cast<std::size_t>(pb.rows()));
    for (Index i = 0; i < pa.rows(); ++i) xa[static_cast<std::size_t>(i)] = pa(i, col);
    for (Index i = 0; i < pb.rows(); ++i) xb[static_cast<std::size_t>(i)] = pb(i, col);
    per_direction[k] = wasserstein2_squared_1d(xa, xb);
  });
  const double sum = std::accumulate(per_direction.begin(), per_direction.end(), 0.0);
  return std::sqrt(sum / static_cast<double>(p));
}

double sliced_w2(const Matrix& a, const Matrix& b, std::size_t n_projections, std::uint64_t seed,
                 std::size_t threads) {
  if (a.cols() != b.cols()) {
    throw Error(ErrorCode::dim_mismatch, "point sets have dims " + std::to_string(a.cols()) + " and " +
                                             std::to_string(b.cols()));
  }
  if (n_projections == 0) throw Error(ErrorCode::zero_projections, "n_projections must be positive");
  return sliced_w2(a, b, random_directions(static_cast<Index>(n_projections), a.cols(), seed), threads);
}

ShiftReport shift_metric(const Matrix& train_joint, const Matrix& test_joint, std::size_t n_projections,
                         std::size_t n_seeds, std::uint64_t base_seed, std::size_t threads) {
  if (train_joint.rows() < 4) throw Error(ErrorCode::empty_input, "shift needs at least 4 training rows");
  if (test_joint.rows() < 1) throw Error(ErrorCode::empty_input, "shift needs test rows");
  if (train_joint.cols() != test_joint.cols()) throw Error(ErrorCode::dim_mismatch, "train/test dims differ");
  if (n_projections == 0) throw Error(ErrorCode::zero_projections, "n_projections must be positive");
  if (n_seeds == 0) throw Error(ErrorCode::invalid_config, "n_seeds must be positive");

  ShiftReport report;
  report.n_projections = n_projections;
  report.n_seeds = n_seeds;
  const auto n = static_cast<std::size_t>(train_joint.rows());
  std::vector<double> ratios;
  for (std::size_t s = 0; s < n_seeds; ++s) {
    const std::uint64_t seed = derive_seed(base_seed, s);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng(derive_seed(seed, kPartitionStream)).shuffle(perm);
    const std::size_t half = n / 2;
    Matrix h1(static_cast<Index>(half), train_joint.cols());
    Matrix h2(static_cast<Index>(n - half), train_joint.cols());
    for (std::size_t i = 0; i < half; ++i) h1.row(static_cast<Index>(i)) = train_joint.row(static_cast<Index>(perm[i]));
    for (std::size_t i = half; i < n; ++i) {
      h2.row(static_cast<Index>(i - half)) = train_joint.row(static_cast<Index>(perm[i]));
    }

    const Matrix dirs = random_directions(static_cast<Index>(n_projections), train_joint.cols(), seed);
    const double num = sliced_w2(train_joint, test_joint, dirs, threads);
    const double den = sliced_w2(h1, h2, dirs, threads);
    if (den < 1e-12) {
      throw Error(ErrorCode::degenerate_denominator, "within-train distance is " + std::to_string(den));
    }
    report.numerator_per_seed.push_back(num);
    report.denominator_per_seed.push_back(den);
    ratios.push_back(num / den);
  }
  const double mean = std::accumulate(ratios.begin(), ratios.end(), 0.0) / static_cast<double>(ratios.size());
  double ss = 0.0;
  for (double r : ratios) ss += (r - mean) * (r - mean);
  report.shift_mean = mean;
  report.shift_std = ratios.size() > 1 ? std::sqrt(ss / static_cast<double>(ratios.size() - 1)) : 0.0;
  return report;
}

std::string to_json(const ShiftReport& r) {
  nlohmann::ordered_json j;
  j["shift_mean"] = r.shift_mean;
  j["shift_std"] = r.shift_std;
  j["n_projections"] = r.n_projections;
  j["n_seeds"] = r.n_seeds;
  j["numerators"] = r.numerator_per_seed;
  j["denominators"] = r.denominator_per_seed;
  return j.dump();
}

}  // namespace specalign

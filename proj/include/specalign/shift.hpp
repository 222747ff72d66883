#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "specalign/embedstore.hpp"
#include "specalign/model.hpp"

namespace specalign {

struct ShiftReport {
  double shift_mean = 0.0;
  double shift_std = 0.0;  // sample std over seeds (n_seeds - 1 denominator)
  std::vector<double> numerator_per_seed;
  std::vector<double> denominator_per_seed;
  std::size_t n_projections = 100;
  std::size_t n_seeds = 5;
};

// [frozen spectrum row, frozen positive-molecule row] per record.
Matrix joint_embed(const PairedDataset& ds, std::span<const std::size_t> records);

// Squared 1-D Wasserstein-2 between two empirical samples (sorted in place).
// Equal sizes pair sorted samples directly; otherwise both quantile
// functions are linearly interpolated on a common grid of max(n, m) points.
double wasserstein2_squared_1d(std::vector<double>& a, std::vector<double>& b);

// Projection directions drawn uniformly on the unit sphere.
Matrix random_directions(Index count, Index dim, std::uint64_t seed);

// sqrt(mean over directions of squared 1-D W2 between projections).
double sliced_w2(const Matrix& a, const Matrix& b, std::size_t n_projections, std::uint64_t seed,
                 std::size_t threads = 1);
double sliced_w2(const Matrix& a, const Matrix& b, const Matrix& directions, std::size_t threads = 1);

// Shift = W(train, test) / W(train half 1, train half 2), repeated over seeds.
ShiftReport shift_metric(const Matrix& train_joint, const Matrix& test_joint, std::size_t n_projections = 100,
                         std::size_t n_seeds = 5, std::uint64_t base_seed = 0, std::size_t threads = 1);

std::string to_json(const ShiftReport& report);

}  // namespace specalign

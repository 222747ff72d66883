#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "specalign/embedstore.hpp"
#include "specalign/model.hpp"

namespace specalign {

// 1 + number of other candidates scoring >= the positive (ties count
// against the positive).
std::size_t rank_positive(std::span<const double> scores, std::size_t positive_slot);

// Fraction of ranks <= k.
double recall_at_k(std::span<const std::size_t> ranks, std::size_t k);

// Mean cosine similarity over unordered pairs of rows.
double mean_pairwise_candidate_similarity(const Matrix& candidates);

struct RankingResult {
  std::size_t rank = 0;
  std::size_t num_candidates = 0;
  std::vector<double> scores;  // filled only when requested
};

struct EvalOptions {
  bool filter_formula = false;
  std::vector<std::size_t> ks = {1, 5, 20};
  std::size_t threads = 1;
  bool keep_scores = false;
  // Rows embedded per forward call.
  std::size_t chunk_rows = 4096;
};

struct EvalReport {
  std::map<std::size_t, double> recall_at;
  std::size_t n_records = 0;
  double mean_candidates_per_record = 0.0;
  std::optional<double> mu_pc_input;
  std::optional<double> mu_pc_learned;
  bool filtered = false;
  std::vector<RankingResult> rankings;
};

// Scores every record against its (optionally formula-filtered) candidates
// with raw cosine similarity in the learned space.
EvalReport evaluate(const AlignmentModel& model, const PairedDataset& ds, const EvalOptions& options = {});

std::string to_json(const EvalReport& report);

}  // namespace specalign

#include "specalign/retrieval.hpp"

#include <cmath>
#include <limits>

#include <json.hpp>

#include "specalign/errors.hpp"
#include "specalign/parallel.hpp"

namespace specalign {

std::size_t rank_positive(std::span<const double> scores, std::size_t positive_slot) {
  if (positive_slot >= scores.size()) {
    throw Error(ErrorCode::index_out_of_range, "positive slot " + std::to_string(positive_slot));
  }
  const double target = scores[positive_slot];
  std::size_t rank = 1;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (j != positive_slot && scores[j] >= target) ++rank;
  }
  return rank;
}

double recall_at_k(std::span<const std::size_t> ranks, std::size_t k) {
  if (ranks.empty()) throw Error(ErrorCode::empty_input, "no ranks");
  if (k < 1) throw Error(ErrorCode::invalid_config, "k must be >= 1");
  std::size_t hits = 0;
  for (auto r : ranks) hits += r <= k ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

double mean_pairwise_candidate_similarity(const Matrix& candidates) {
  const Index k = candidates.rows();
  if (k < 2) throw Error(ErrorCode::too_few_candidates, "need at least two candidates");
  Matrix unit = l2_normalize_rows(candidates);
  // sum_{j<l} u_j.u_l = (|sum_j u_j|^2 - sum_j |u_j|^2) / 2
  const Eigen::RowVectorXd total = unit.colwise().sum();
  const double pair_sum = 0.5 * (total.squaredNorm() - unit.rowwise().squaredNorm().sum());
  return pair_sum / (0.5 * static_cast<double>(k) * static_cast<double>(k - 1));
}

EvalReport evaluate(const AlignmentModel& model, const PairedDataset& ds, const EvalOptions& options) {
  const std::size_t n = ds.size();
  if (n == 0) throw Error(ErrorCode::empty_input, "no records to evaluate");
  for (auto k : options.ks) {
    if (k < 1) throw Error(ErrorCode::invalid_config, "k must be >= 1");
  }

  // Per-record candidate lists and positive slots, after optional filtering.
  std::vector<std::vector<std::uint32_t>> lists(n);
  std::vector<std::size_t> positive_slot(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& entry = ds.candidates[i];
    const auto& formula = ds.meta[i].formula;
    if (options.filter_formula && (!formula || !entry.candidate_formulas)) {
      throw Error(ErrorCode::missing_formula, "record " + entry.record_id + " lacks formula information");
    }
    bool found = false;
    for (std::size_t j = 0; j < entry.candidates.size(); ++j) {
      const auto c = entry.candidates[j];
      if (options.filter_formula && (*entry.candidate_formulas)[j] != *formula) {
        if (c == entry.positive) {
          throw Error(ErrorCode::missing_positive,
                      "record " + entry.record_id + ": positive formula differs from record formula");
        }
        continue;
      }
      if (c == entry.positive) {
        positive_slot[i] = lists[i].size();
        found = true;
      }
      lists[i].push_back(c);
    }
    if (!found) throw Error(ErrorCode::missing_positive, "record " + entry.record_id);
  }

  // Embed each referenced catalog row once.
  const EmbeddingMatrix& side = model.config.tower == Tower::spectrum_only && ds.targets ? *ds.targets : ds.molecules;
  std::vector<std::int64_t> cache_slot(ds.molecules.rows(), -1);
  std::vector<std::size_t> unique_rows;
  for (const auto& list : lists) {
    for (auto c : list) {
      if (c >= cache_slot.size()) throw Error(ErrorCode::index_out_of_range, "candidate " + std::to_string(c));
      if (cache_slot[c] < 0) {
        cache_slot[c] = static_cast<std::int64_t>(unique_rows.size());
        unique_rows.push_back(c);
      }
    }
  }

  Rng unused(0);
  const std::size_t chunk = std::max<std::size_t>(1, options.chunk_rows);
  const Index shared = model.config.tower == Tower::spectrum_only ? static_cast<Index>(side.dim())
                                                                  : model.config.shared_dim;
  Matrix mol_emb(static_cast<Index>(unique_rows.size()), shared);
  for (std::size_t start = 0; start < unique_rows.size(); start += chunk) {
    const std::size_t len = std::min(chunk, unique_rows.size() - start);
    std::span<const std::size_t> rows(unique_rows.data() + start, len);
    mol_emb.middleRows(static_cast<Index>(start), static_cast<Index>(len)) =
        embed_molecule(model, gather_rows(side, rows), Mode::eval, unused);
  }

  Matrix spec_emb(static_cast<Index>(n), shared);
  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t len = std::min(chunk, n - start);
    std::span<const std::size_t> recs(all.data() + start, len);
    spec_emb.middleRows(static_cast<Index>(start), static_cast<Index>(len)) =
        embed_spectrum(model, ds, recs, Mode::eval, unused);
  }
  if (spec_emb.cols() != mol_emb.cols()) {
    throw Error(ErrorCode::shape_mismatch, "spectrum and molecule embeddings live in different spaces");
  }

  EvalReport report;
  report.filtered = options.filter_formula;
  report.n_records = n;
  report.rankings.resize(n);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> mu_in(n, nan);
  std::vector<double> mu_learned(n, nan);

  parallel_for(n, options.threads, [&](std::size_t i) {
    const auto& list = lists[i];
    Matrix cand(static_cast<Index>(list.size()), mol_emb.cols());
    for (std::size_t j = 0; j < list.size(); ++j) {
      cand.row(static_cast<Index>(j)) = mol_emb.row(static_cast<Index>(cache_slot[list[j]]));
    }
    Vector scores = cand * spec_emb.row(static_cast<Index>(i)).transpose();
    auto& res = report.rankings[i];
    res.num_candidates = list.size();
    res.rank = rank_positive(std::span<const double>(scores.data(), list.size()), positive_slot[i]);
    if (options.keep_scores) res.scores.assign(scores.data(), scores.data() + scores.size());
    if (list.size() >= 2) {
      mu_in[i] = mean_pairwise_candidate_similarity(gather_rows(ds.molecules, std::span<const std::uint32_t>(list)));
      mu_learned[i] = mean_pairwise_candidate_similarity(cand);
    }
  });

  std::vector<std::size_t> ranks(n);
  double total_candidates = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ranks[i] = report.rankings[i].rank;
    total_candidates += static_cast<double>(report.rankings[i].num_candidates);
  }
  report.mean_candidates_per_record = total_candidates / static_cast<double>(n);
  for (auto k : options.ks) report.recall_at[k] = recall_at_k(ranks, k);

  auto mean_of = [](const std::vector<double>& v) -> std::optional<double> {
    double sum = 0.0;
    std::size_t count = 0;
    for (double x : v) {
      if (!std::isnan(x)) {
        sum += x;
        ++count;
      }
    }
    if (count == 0) return std::nullopt;
    return sum / static_cast<double>(count);
  };
  report.mu_pc_input = mean_of(mu_in);
  report.mu_pc_learned = mean_of(mu_learned);
  return report;
}

std::string to_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["n"] = report.n_records;
  nlohmann::ordered_json recall = nlohmann::ordered_json::object();
  for (const auto& [k, v] : report.recall_at) recall[std::to_string(k)] = v;
  j["recall"] = recall;
  j["mu_pc_input"] = report.mu_pc_input ? nlohmann::ordered_json(*report.mu_pc_input) : nullptr;
  j["mu_pc_learned"] = report.mu_pc_learned ? nlohmann::ordered_json(*report.mu_pc_learned) : nullptr;
  j["filtered"] = report.filtered;
  j["mean_candidates"] = report.mean_candidates_per_record;
  return j.dump();
}

}  // namespace specalign

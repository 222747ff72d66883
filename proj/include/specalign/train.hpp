#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "specalign/embedstore.hpp"
#include "specalign/model.hpp"
#include "specalign/rng.hpp"

namespace specalign {

enum class LossKind { regression_ms2mol, regression_mol2ms, inbatch, candidate };

const char* to_string(LossKind kind);
// Accepts both "regression_ms2mol" and the CLI spelling "regression-ms2mol".
LossKind loss_kind_from_string(const std::string& name);
// The tower a loss trains: regressions keep one side frozen.
Tower tower_for(LossKind kind);

struct TrainConfig {
  std::size_t batch_size = 128;
  std::size_t negatives_per_spectrum = 128;
  double lr = 1e-4;
  std::size_t max_steps = 24000;
  std::size_t warmup_steps = 4000;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  LossKind loss_kind = LossKind::candidate;
  std::uint64_t seed = 0;
  bool metadata_enabled = true;
  double ce_min = 0.0;
  double ce_max = 200.0;
  // Logging / validation cadence in steps; 0 disables.
  std::size_t log_every = 100;
  std::size_t eval_every = 500;
  std::vector<std::size_t> eval_ks = {1, 5, 20};

  void validate() const;
};

// ----------------------------------------------------------------- losses

struct RegressionLoss {
  double loss = 0.0;
  Matrix grad_pred;
};

// loss = -(1/B) sum_i cos(pred_i, target_i). pred rows are unit norm.
RegressionLoss loss_regression(const Matrix& pred, const Matrix& target);

struct ContrastiveLoss {
  double loss = 0.0;
  Matrix grad_spectra;
  Matrix grad_molecules;
  double grad_log_temperature = 0.0;
};

// In-batch InfoNCE over logits S M^T / temperature; positives on the diagonal.
ContrastiveLoss loss_inbatch(const Matrix& spectra, const Matrix& molecules, double temperature);

// Ragged candidate blocks: block i occupies rows [offsets[i], offsets[i+1])
// of `candidates`, and its positive sits at offsets[i] + positive_slot[i].
struct CandidateBlocks {
  Matrix embeddings;
  std::vector<std::size_t> offsets;
  std::vector<std::size_t> positive_slot;

  std::size_t blocks() const { return positive_slot.size(); }
  std::size_t block_size(std::size_t i) const { return offsets[i + 1] - offsets[i]; }
};

ContrastiveLoss loss_candidate(const Matrix& spectra, const CandidateBlocks& blocks, double temperature);

// ---------------------------------------------------------------- backward

struct UpstreamGrad {
  Matrix d_spectrum;  // w.r.t. unit-norm spectrum embeddings (empty if frozen)
  Matrix d_molecule;  // w.r.t. unit-norm molecule embeddings (empty if frozen)
  double d_log_temperature = 0.0;
};

// Exact gradients through L2 normalization, both heads and the metadata
// parameters touched by the batch.
GradientSet backward(const AlignmentModel& model, const ModelTape& tape, const UpstreamGrad& upstream);

// Backward through a single head; accumulates parameter gradients into
// `grads` and returns the gradient w.r.t. the head input.
Matrix head_backward(const ProjectionHead& head, const HeadTape& tape, const Matrix& d_output,
                     ProjectionHead& grads);

// --------------------------------------------------------------- optimizer

double lr_at(std::size_t step, const TrainConfig& cfg);

struct OptimizerState {
  std::size_t step_count = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

OptimizerState init_optimizer(const AlignmentModel& model);

// Decoupled weight decay is applied to linear weights only.
void adamw_step(AlignmentModel& model, GradientSet& grads, OptimizerState& state, double lr_t,
                const TrainConfig& cfg);

// --------------------------------------------------------------- sampling

// Positive first, then up to K negatives drawn uniformly without replacement.
std::vector<std::uint32_t> sample_negatives(const CandidateEntry& record, std::size_t k, Rng& rng);

// ------------------------------------------------------------------- loop

struct MetricsEntry {
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  std::optional<double> val_r1;
  std::optional<double> val_r5;
  std::optional<double> val_r20;
  double temperature = 0.0;
};

std::string to_jsonl(const MetricsEntry& entry);

struct TrainResult {
  AlignmentModel model;
  std::vector<MetricsEntry> log;
  std::optional<std::size_t> best_step;
  std::optional<double> best_val_r1;
};

// Builds the model configuration implied by a dataset and training setup.
ModelConfig model_config_for(const PairedDataset& ds, const TrainConfig& cfg, ModelConfig base);

// One optimization step on the given records; returns the loss.
double train_step(AlignmentModel& model, OptimizerState& opt, const PairedDataset& ds,
                  std::span<const std::size_t> records, const TrainConfig& cfg, std::size_t step, Rng& rng);

TrainResult train_loop(AlignmentModel model, const PairedDataset& train, const PairedDataset* val,
                       const TrainConfig& cfg);

// Continues training from `base` on the records whose adduct equals
// `adduct_filter`; the returned model is tagged with the adduct.
TrainResult finetune_subset(const AlignmentModel& base, const PairedDataset& ds, const std::string& adduct_filter,
                            const TrainConfig& cfg, const PairedDataset* val = nullptr);

// Objective used by gradient checks: loss of one deterministic step (fixed
// dropout masks and negatives drawn from `seed`) without updating.
struct StepProbe {
  double loss = 0.0;
  GradientSet grads;
};
StepProbe probe_step(const AlignmentModel& model, const PairedDataset& ds, std::span<const std::size_t> records,
                     const TrainConfig& cfg, std::uint64_t seed, bool with_grads);

}  // namespace specalign

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "specalign/errors.hpp"
#include "specalign/retrieval.hpp"
#include "specalign/train.hpp"

namespace specalign {

namespace {

constexpr std::uint64_t kEpochStream = 0x45504F4348ull;  // "EPOCH"
constexpr std::uint64_t kStepStream = 0x53544550ull;     // "STEP"

const EmbeddingMatrix& regression_targets(const PairedDataset& ds) { return ds.targets ? *ds.targets : ds.molecules; }

std::vector<std::uint32_t> positives_of(const PairedDataset& ds, std::span<const std::size_t> records) {
  std::vector<std::uint32_t> out;
  out.reserve(records.size());
  for (auto r : records) out.push_back(ds.positive_of(r));
  return out;
}

struct StepOutcome {
  double loss = 0.0;
  ModelTape tape;
  UpstreamGrad upstream;
};

// Forward pass and loss for one batch. Draw order on `rng`: spectrum
// dropout, negative sampling, molecule dropout.
StepOutcome forward_step(const AlignmentModel& model, const PairedDataset& ds, std::span<const std::size_t> records,
                         const TrainConfig& cfg, Rng& rng) {
  if (tower_for(cfg.loss_kind) != model.config.tower) {
    throw Error(ErrorCode::invalid_config, std::string("loss ") + to_string(cfg.loss_kind) +
                                               " does not match model tower " + to_string(model.config.tower));
  }
  StepOutcome out;
  switch (cfg.loss_kind) {
    case LossKind::candidate: {
      TowerTape st, mt;
      Matrix s = embed_spectrum(model, ds, records, Mode::train, rng, &st);
      std::vector<std::uint32_t> rows;
      CandidateBlocks blocks;
      blocks.offsets.push_back(0);
      for (auto r : records) {
        auto block = sample_negatives(ds.candidates[r], cfg.negatives_per_spectrum, rng);
        rows.insert(rows.end(), block.begin(), block.end());
        blocks.offsets.push_back(rows.size());
        blocks.positive_slot.push_back(0);
      }
      blocks.embeddings = embed_molecule(model, gather_rows(ds.molecules, std::span<const std::uint32_t>(rows)),
                                         Mode::train, rng, &mt);
      auto l = loss_candidate(s, blocks, model.temperature());
      out.loss = l.loss;
      out.upstream = {std::move(l.grad_spectra), std::move(l.grad_molecules), l.grad_log_temperature};
      out.tape.spectrum = std::move(st);
      out.tape.molecule = std::move(mt);
      break;
    }
    case LossKind::inbatch: {
      TowerTape st, mt;
      Matrix s = embed_spectrum(model, ds, records, Mode::train, rng, &st);
      auto pos = positives_of(ds, records);
      Matrix m = embed_molecule(model, gather_rows(ds.molecules, std::span<const std::uint32_t>(pos)), Mode::train,
                                rng, &mt);
      auto l = loss_inbatch(s, m, model.temperature());
      out.loss = l.loss;
      out.upstream = {std::move(l.grad_spectra), std::move(l.grad_molecules), l.grad_log_temperature};
      out.tape.spectrum = std::move(st);
      out.tape.molecule = std::move(mt);
      break;
    }
    case LossKind::regression_ms2mol: {
      TowerTape st;
      Matrix s = embed_spectrum(model, ds, records, Mode::train, rng, &st);
      auto pos = positives_of(ds, records);
      Matrix target = gather_rows(regression_targets(ds), std::span<const std::uint32_t>(pos));
      auto l = loss_regression(s, target);
      out.loss = l.loss;
      out.upstream.d_spectrum = std::move(l.grad_pred);
      out.tape.spectrum = std::move(st);
      break;
    }
    case LossKind::regression_mol2ms: {
      TowerTape mt;
      auto pos = positives_of(ds, records);
      Matrix m = embed_molecule(model, gather_rows(ds.molecules, std::span<const std::uint32_t>(pos)), Mode::train,
                                rng, &mt);
      Matrix target = gather_rows(ds.spectra, records);
      auto l = loss_regression(m, target);
      out.loss = l.loss;
      out.upstream.d_molecule = std::move(l.grad_pred);
      out.tape.molecule = std::move(mt);
      break;
    }
  }
  if (!std::isfinite(out.loss)) throw Error(ErrorCode::non_finite_gradient, "loss is not finite");
  return out;
}

std::optional<double> recall_or_null(const EvalReport& r, std::size_t k) {
  auto it = r.recall_at.find(k);
  if (it == r.recall_at.end()) return std::nullopt;
  return it->second;
}

}  // namespace

std::string to_jsonl(const MetricsEntry& e) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(); };
  nlohmann::ordered_json j;
  j["step"] = e.step;
  j["loss"] = e.loss;
  j["lr"] = e.lr;
  j["val_r1"] = opt(e.val_r1);
  j["val_r5"] = opt(e.val_r5);
  j["val_r20"] = opt(e.val_r20);
  j["temperature"] = e.temperature;
  return j.dump();
}

ModelConfig model_config_for(const PairedDataset& ds, const TrainConfig& cfg, ModelConfig base) {
  base.tower = tower_for(cfg.loss_kind);
  base.ms_in_dim = static_cast<Index>(ds.spectra.dim());
  base.mol_in_dim = static_cast<Index>(
      cfg.loss_kind == LossKind::regression_ms2mol ? regression_targets(ds).dim() : ds.molecules.dim());
  if (base.tower == Tower::spectrum_only) base.shared_dim = base.mol_in_dim;
  if (base.tower == Tower::molecule_only) base.shared_dim = base.ms_in_dim;
  base.metadata_enabled = cfg.metadata_enabled;
  base.ce_min = cfg.ce_min;
  base.ce_max = cfg.ce_max;
  base.seed = cfg.seed;
  std::set<std::string> adducts;
  for (const auto& m : ds.meta) {
    if (m.adduct) adducts.insert(*m.adduct);
  }
  base.adduct_vocabulary.assign(adducts.begin(), adducts.end());
  return base;
}

StepProbe probe_step(const AlignmentModel& model, const PairedDataset& ds, std::span<const std::size_t> records,
                     const TrainConfig& cfg, std::uint64_t seed, bool with_grads) {
  Rng rng(seed);
  auto step = forward_step(model, ds, records, cfg, rng);
  StepProbe out;
  out.loss = step.loss;
  if (with_grads) out.grads = backward(model, step.tape, step.upstream);
  return out;
}

double train_step(AlignmentModel& model, OptimizerState& opt, const PairedDataset& ds,
                  std::span<const std::size_t> records, const TrainConfig& cfg, std::size_t step, Rng& rng) {
  auto fwd = forward_step(model, ds, records, cfg, rng);
  GradientSet grads = backward(model, fwd.tape, fwd.upstream);
  adamw_step(model, grads, opt, lr_at(step, cfg), cfg);
  return fwd.loss;
}

TrainResult train_loop(AlignmentModel model, const PairedDataset& train, const PairedDataset* val,
                       const TrainConfig& cfg) {
  cfg.validate();
  TrainResult result;
  if (cfg.max_steps == 0) {
    result.model = std::move(model);
    return result;
  }
  const std::size_t n = train.size();
  if (n < cfg.batch_size) {
    throw Error(ErrorCode::invalid_config, "batch_size " + std::to_string(cfg.batch_size) +
                                               " exceeds training set of " + std::to_string(n) + " records");
  }
  const bool validating = val != nullptr && val->size() > 0 && cfg.eval_every > 0;

  OptimizerState opt = init_optimizer(model);
  std::vector<std::size_t> order(n);
  std::size_t cursor = n;  // forces a shuffle on the first step
  std::uint64_t epoch = 0;
  std::optional<AlignmentModel> best;

  for (std::size_t step = 0; step < cfg.max_steps; ++step) {
    if (cursor + cfg.batch_size > n) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      Rng(derive_seed(cfg.seed ^ kEpochStream, epoch)).shuffle(order);
      ++epoch;
      cursor = 0;
    }
    std::span<const std::size_t> batch(order.data() + cursor, cfg.batch_size);
    cursor += cfg.batch_size;

    Rng step_rng(derive_seed(cfg.seed ^ kStepStream, step));
    const double lr = lr_at(step, cfg);
    const double loss = train_step(model, opt, train, batch, cfg, step, step_rng);

    const bool last = step + 1 == cfg.max_steps;
    const bool do_log = cfg.log_every > 0 && (step % cfg.log_every == 0 || last);
    const bool do_eval = validating && ((step + 1) % cfg.eval_every == 0 || last);
    if (!do_log && !do_eval) continue;

    MetricsEntry entry{step, loss, lr, std::nullopt, std::nullopt, std::nullopt, model.temperature()};
    if (do_eval) {
      EvalOptions opts;
      opts.ks = {1, 5, 20};
      auto report = evaluate(model, *val, opts);
      entry.val_r1 = recall_or_null(report, 1);
      entry.val_r5 = recall_or_null(report, 5);
      entry.val_r20 = recall_or_null(report, 20);
      if (!result.best_val_r1 || *entry.val_r1 > *result.best_val_r1) {
        result.best_val_r1 = entry.val_r1;
        result.best_step = step;
        best = model;
      }
      spdlog::info("step {} loss {:.4f} lr {:.3g} temp {:.4f} val R@1 {:.3f}", step, loss, lr,
                   model.temperature(), *entry.val_r1);
    } else {
      spdlog::debug("step {} loss {:.4f} lr {:.3g} temp {:.4f}", step, loss, lr, model.temperature());
    }
    result.log.push_back(entry);
  }
  result.model = best ? std::move(*best) : std::move(model);
  return result;
}

TrainResult finetune_subset(const AlignmentModel& base, const PairedDataset& ds, const std::string& adduct_filter,
                            const TrainConfig& cfg, const PairedDataset* val) {
  auto select = [&](const PairedDataset& d) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (d.meta[i].adduct && *d.meta[i].adduct == adduct_filter) idx.push_back(i);
    }
    return idx;
  };
  auto records = select(ds);
  if (records.empty()) throw Error(ErrorCode::empty_subset, "no records with adduct " + adduct_filter);
  PairedDataset subset = ds.subset(records);

  std::optional<PairedDataset> val_subset;
  if (val) {
    auto val_records = select(*val);
    if (!val_records.empty()) val_subset = val->subset(val_records);
  }

  AlignmentModel start = base;
  start.config.tag = adduct_filter;
  TrainConfig sub_cfg = cfg;
  sub_cfg.batch_size = std::min(cfg.batch_size, subset.size());
  auto result = train_loop(std::move(start), subset, val_subset ? &*val_subset : nullptr, sub_cfg);
  result.model.config.tag = adduct_filter;
  return result;
}

}  // namespace specalign

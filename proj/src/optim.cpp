#include <algorithm>
#include <cmath>
#include <numbers>

#include "specalign/errors.hpp"
#include "specalign/train.hpp"

namespace specalign {

const char* to_string(LossKind kind) {
  switch (kind) {
    case LossKind::regression_ms2mol: return "regression_ms2mol";
    case LossKind::regression_mol2ms: return "regression_mol2ms";
    case LossKind::inbatch: return "inbatch";
    case LossKind::candidate: return "candidate";
  }
  return "candidate";
}

LossKind loss_kind_from_string(const std::string& name) {
  std::string n = name;
  std::replace(n.begin(), n.end(), '-', '_');
  if (n == "regression_ms2mol") return LossKind::regression_ms2mol;
  if (n == "regression_mol2ms") return LossKind::regression_mol2ms;
  if (n == "inbatch") return LossKind::inbatch;
  if (n == "candidate") return LossKind::candidate;
  throw Error(ErrorCode::invalid_config, "unknown loss '" + name + "'");
}

Tower tower_for(LossKind kind) {
  switch (kind) {
    case LossKind::regression_ms2mol: return Tower::spectrum_only;
    case LossKind::regression_mol2ms: return Tower::molecule_only;
    default: return Tower::dual;
  }
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::invalid_config, what); };
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (negatives_per_spectrum < 1) fail("negatives_per_spectrum must be >= 1");
  if (warmup_steps < 1) fail("warmup_steps must be >= 1");
  if (max_steps > 0 && warmup_steps > max_steps) fail("warmup_steps must not exceed max_steps");
  if (!(lr > 0.0) || !std::isfinite(lr)) fail("lr must be positive");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) fail("adam_eps must be positive");
  if (!(ce_max > ce_min)) fail("ce bounds must satisfy min < max");
  for (auto k : eval_ks) {
    if (k < 1) fail("eval k must be >= 1");
  }
}

double lr_at(std::size_t step, const TrainConfig& cfg) {
  if (step >= cfg.max_steps) return 0.0;
  if (step < cfg.warmup_steps) {
    return cfg.lr * static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps);
  }
  const double progress =
      static_cast<double>(step - cfg.warmup_steps) / static_cast<double>(cfg.max_steps - cfg.warmup_steps);
  return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

OptimizerState init_optimizer(const AlignmentModel& model) {
  OptimizerState state;
  for (const auto& v : tensor_views(const_cast<AlignmentModel&>(model))) {
    state.first_moment.emplace_back(v.values.size(), 0.0);
    state.second_moment.emplace_back(v.values.size(), 0.0);
  }
  return state;
}

void adamw_step(AlignmentModel& model, GradientSet& grads, OptimizerState& state, double lr_t,
                const TrainConfig& cfg) {
  auto params = tensor_views(model);
  auto gviews = tensor_views(grads);
  if (params.size() != gviews.size() || state.first_moment.size() != params.size()) {
    throw Error(ErrorCode::shape_mismatch, "optimizer state does not mirror the model");
  }
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (params[t].values.size() != gviews[t].values.size() ||
        state.first_moment[t].size() != params[t].values.size()) {
      throw Error(ErrorCode::shape_mismatch, "tensor " + params[t].name + " shape differs");
    }
    for (double g : gviews[t].values) {
      if (!std::isfinite(g)) throw Error(ErrorCode::non_finite_gradient, "gradient of " + params[t].name);
    }
  }

  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k].values;
    auto g = gviews[k].values;
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    const bool decay = params[k].kind == TensorKind::weight && cfg.weight_decay > 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (decay) p[i] -= lr_t * cfg.weight_decay * p[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      p[i] -= lr_t * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg.adam_eps);
    }
  }
}

std::vector<std::uint32_t> sample_negatives(const CandidateEntry& record, std::size_t k, Rng& rng) {
  std::vector<std::uint32_t> negatives;
  negatives.reserve(record.candidates.size());
  for (auto c : record.candidates) {
    if (c != record.positive) negatives.push_back(c);
  }
  std::vector<std::uint32_t> block{record.positive};
  if (negatives.size() <= k) {
    block.insert(block.end(), negatives.begin(), negatives.end());
    return block;
  }
  for (auto i : rng.sample_without_replacement(negatives.size(), k)) block.push_back(negatives[i]);
  return block;
}

}  // namespace specalign

// Acceptance report: one PASS/FAIL line per criterion. Criterion keys given
// as arguments restrict the run to those. Exit status is the number of
// failures.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "oracles.hpp"
#include "specalign/cli.hpp"
#include "specalign/retrieval.hpp"
#include "specalign/shift.hpp"
#include "specalign/splits.hpp"
#include "specalign/train.hpp"
#include "tempdir.hpp"

using namespace specalign;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

Matrix gaussian(Index rows, Index cols, Rng& rng) {
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

// ------------------------------------------------------------- gradients

Outcome gradient_fidelity() {
  SyntheticConfig g;
  g.n_molecules = 8;
  g.ms_dim = 8;
  g.mol_dim = 6;
  g.n_adducts = 2;
  g.ppm_tolerance = 5e5;
  g.candidates_cap = 6;
  g.missing_energy_fraction = 0.3;
  g.seed = 5;
  auto ds = gen_synthetic(g).dataset;

  double worst_full = 0.0;
  std::string worst_name;
  for (auto kind : {LossKind::candidate, LossKind::inbatch, LossKind::regression_ms2mol,
                    LossKind::regression_mol2ms}) {
    TrainConfig cfg;
    cfg.loss_kind = kind;
    cfg.negatives_per_spectrum = 2;  // K' = 3
    ModelConfig base;
    base.hidden_layers = 2;
    base.hidden_dim = 6;
    base.shared_dim = 4;
    base.dropout = 0.2;
    auto model = init_model(model_config_for(ds, cfg, base));
    Rng jitter(17);
    for (auto& v : tensor_views(model)) {
      if (v.kind == TensorKind::temperature) continue;
      for (double& x : v.values) x += 0.05 * jitter.normal();
    }
    std::vector<std::size_t> records = kind == LossKind::candidate ? std::vector<std::size_t>{0, 3}
                                                                   : std::vector<std::size_t>{0, 3, 6};
    auto analytic = probe_step(model, ds, records, cfg, 99, true);
    auto numeric = oracle::finite_difference(
        model, [&](const AlignmentModel& m) { return probe_step(m, ds, records, cfg, 99, false).loss; });
    auto cmp = oracle::compare(model, analytic.grads, numeric);
    if (cmp.compared != parameter_count(model)) return {false, "gradient check skipped parameters"};
    if (cmp.max_relative_error > worst_full) {
      worst_full = cmp.max_relative_error;
      worst_name = std::string(to_string(kind)) + ":" + cmp.worst_tensor;
    }
  }

  Rng rng(3);
  double worst_iso = 0.0;
  {
    const double tau = 0.3;
    Matrix s = oracle::naive_normalize(gaussian(2, 5, rng));
    CandidateBlocks blocks;
    blocks.embeddings = oracle::naive_normalize(gaussian(6, 5, rng));
    blocks.offsets = {0, 3, 6};
    blocks.positive_slot = {1, 0};
    auto l = loss_candidate(s, blocks, tau);
    auto ds_ = oracle::finite_difference(s, [&](const Matrix& x) { return loss_candidate(x, blocks, tau).loss; });
    auto dm = oracle::finite_difference(blocks.embeddings, [&](const Matrix& x) {
      auto b = blocks;
      b.embeddings = x;
      return loss_candidate(s, b, tau).loss;
    });
    const double h = 1e-5;
    const double dt =
        (loss_candidate(s, blocks, tau * std::exp(h)).loss - loss_candidate(s, blocks, tau * std::exp(-h)).loss) /
        (2 * h);
    worst_iso = std::max({worst_iso, oracle::max_relative_error(l.grad_spectra, ds_),
                          oracle::max_relative_error(l.grad_molecules, dm),
                          std::abs(l.grad_log_temperature - dt) / std::max(std::abs(dt), 1e-6)});
  }
  {
    const double tau = 0.5;
    Matrix s = oracle::naive_normalize(gaussian(4, 6, rng));
    Matrix m = oracle::naive_normalize(gaussian(4, 6, rng));
    auto l = loss_inbatch(s, m, tau);
    auto ds_ = oracle::finite_difference(s, [&](const Matrix& x) { return loss_inbatch(x, m, tau).loss; });
    auto dm = oracle::finite_difference(m, [&](const Matrix& x) { return loss_inbatch(s, x, tau).loss; });
    const double h = 1e-5;
    const double dt =
        (loss_inbatch(s, m, tau * std::exp(h)).loss - loss_inbatch(s, m, tau * std::exp(-h)).loss) / (2 * h);
    worst_iso = std::max({worst_iso, oracle::max_relative_error(l.grad_spectra, ds_),
                          oracle::max_relative_error(l.grad_molecules, dm),
                          std::abs(l.grad_log_temperature - dt) / std::max(std::abs(dt), 1e-6)});
  }
  {
    Matrix pred = oracle::naive_normalize(gaussian(3, 5, rng));
    Matrix target = gaussian(3, 5, rng);
    auto l = loss_regression(pred, target);
    auto dp = oracle::finite_difference(pred, [&](const Matrix& x) { return loss_regression(x, target).loss; });
    worst_iso = std::max(worst_iso, oracle::max_relative_error(l.grad_pred, dp));
  }
  return {worst_full < 1e-3 && worst_iso < 1e-4,
          fmt("full-model max rel err %.2e (%s), isolated %.2e", worst_full, worst_name.c_str(), worst_iso)};
}

// ----------------------------------------------------------- closed form

Outcome closed_form_losses() {
  Rng rng(4);
  double worst = 0.0;
  for (std::size_t k : {1u, 3u, 33u, 129u, 257u}) {
    Matrix s = oracle::naive_normalize(gaussian(1, 7, rng));
    CandidateBlocks blocks;
    blocks.embeddings = s.replicate(static_cast<Index>(k), 1);
    blocks.offsets = {0, k};
    blocks.positive_slot = {k - 1};
    worst = std::max(worst, std::abs(loss_candidate(s, blocks, 0.07).loss - std::log(static_cast<double>(k))));
  }
  const double single = loss_inbatch(oracle::naive_normalize(gaussian(1, 5, rng)),
                                     oracle::naive_normalize(gaussian(1, 5, rng)), 0.07)
                            .loss;
  Matrix p = oracle::naive_normalize(gaussian(4, 5, rng));
  const double reg = loss_regression(p, p).loss;
  return {worst < 1e-9 && single == 0.0 && std::abs(reg + 1.0) < 1e-12,
          fmt("|L_cand - ln K'| max %.1e, B=1 in-batch %.1e, perfect regression %.12f", worst, single, reg)};
}

// --------------------------------------------------------------- ranking

Outcome ranking_oracle() {
  Rng rng(5);
  std::size_t rank_mismatch = 0, recall_mismatch = 0;
  for (int t = 0; t < 10000; ++t) {
    const std::size_t n = 1 + rng.below(300);
    std::vector<double> scores(n);
    const bool coarse = rng.bernoulli(0.5);
    for (auto& s : scores) s = coarse ? static_cast<double>(rng.below(8)) : rng.normal();
    const std::size_t pos = rng.below(n);
    rank_mismatch += rank_positive(scores, pos) != oracle::sort_rank(scores, pos);

    std::vector<std::size_t> ranks(1 + rng.below(100));
    for (auto& r : ranks) r = 1 + rng.below(300);
    const std::size_t k = 1 + rng.below(50);
    recall_mismatch += recall_at_k(ranks, k) != oracle::count_recall(ranks, k);
  }
  return {rank_mismatch == 0 && recall_mismatch == 0,
          fmt("10000 instances: %zu rank mismatches, %zu recall mismatches", rank_mismatch, recall_mismatch)};
}

// ---------------------------------------------------------- wasserstein

Outcome sliced_wasserstein() {
  Rng rng(6);
  Matrix a = gaussian(300, 8, rng);
  const double self = sliced_w2(a, a, 100, 1);

  Matrix base = gaussian(2000, 8, rng);
  Eigen::RowVectorXd delta(8);
  for (Index c = 0; c < 8; ++c) delta[c] = 1.5 * rng.normal();
  const double expected = delta.norm() / std::sqrt(8.0);
  const double translated = sliced_w2(base, base.rowwise() + delta, 500, 2);
  const double trans_err = std::abs(translated - expected) / expected;

  double oracle_err = 0.0;
  for (int t = 0; t < 50; ++t) {
    const Index n = 1 + static_cast<Index>(rng.below(6));
    Matrix x = gaussian(n, 2, rng), y = gaussian(n, 2, rng);
    Matrix dirs = random_directions(5, 2, 300 + t);
    double total = 0.0;
    for (Index p = 0; p < 5; ++p) {
      std::vector<double> px(static_cast<std::size_t>(n)), py(static_cast<std::size_t>(n));
      for (Index i = 0; i < n; ++i) {
        px[static_cast<std::size_t>(i)] = x.row(i).dot(dirs.row(p));
        py[static_cast<std::size_t>(i)] = y.row(i).dot(dirs.row(p));
      }
      total += oracle::brute_force_w2_squared(px, py);
    }
    oracle_err = std::max(oracle_err, std::abs(sliced_w2(x, y, dirs) - std::sqrt(total / 5.0)));
  }

  // Same-distribution train/test: one synthetic population split at random.
  SyntheticConfig g;
  g.n_molecules = 4000;
  g.n_adducts = 1;
  g.ppm_tolerance = 10.0;
  auto ds = gen_synthetic(g).dataset;
  SplitSpec spec;
  spec.key_name = "random";
  spec.fractions = {0.5, 0.25, 0.25};
  auto split = split_by_key(ds, spec);
  auto train_idx = split.indices_of(ds, Part::train);
  auto rest = split.indices_of(ds, Part::val);
  auto test_only = split.indices_of(ds, Part::test);
  rest.insert(rest.end(), test_only.begin(), test_only.end());
  Matrix train = joint_embed(ds, train_idx);
  Matrix test = joint_embed(ds, rest);
  const double same = shift_metric(train, test, 100, 5, 0).shift_mean;

  std::vector<double> shifted;
  for (double mag : {0.5, 2.0, 8.0}) shifted.push_back(shift_metric(train, test.array() + mag, 100, 5, 0).shift_mean);
  const bool monotone = same < shifted[0] && shifted[0] < shifted[1] && shifted[1] < shifted[2];

  const bool pass = self == 0.0 && trans_err < 0.1 && oracle_err < 1e-9 && same >= 0.7 && same <= 1.3 && monotone;
  return {pass, fmt("W(A,A)=%g; translation %.4f vs %.4f (%.1f%%); 1-D oracle err %.1e; same-distribution shift "
                    "%.3f (n=%ld/%ld, d=%ld); shifted %.2f < %.2f < %.2f",
                    self, translated, expected, 100 * trans_err, oracle_err, same, static_cast<long>(train.rows()),
                    static_cast<long>(test.rows()), static_cast<long>(train.cols()), shifted[0], shifted[1],
                    shifted[2])};
}

// ------------------------------------------------------------ end to end

struct EndToEnd {
  double candidate_r1 = 0.0;
  double inbatch_r1 = 0.0;
  double inbatch_small_r1 = 0.0;
  std::size_t inbatch_b = 0;
  double mean_candidates = 0.0;
  double mu_in = 0.0;
  double mu_learned = 0.0;
  double seconds = 0.0;
};

const EndToEnd& end_to_end_run() {
  static std::optional<EndToEnd> cached;
  if (cached) return *cached;
  const auto start = std::chrono::steady_clock::now();

  SyntheticConfig g;
  g.n_molecules = 500;
  g.mol_dim = 32;
  g.ms_dim = 48;
  g.noise_sigma = 0.1;
  g.n_adducts = 2;
  g.ppm_tolerance = 1e5;
  auto ds = gen_synthetic(g).dataset;
  auto split = split_by_key(ds, SplitSpec{"formula", {0.8, 0.1, 0.1}, 0});
  auto train = ds.subset(split.indices_of(ds, Part::train));
  auto val = ds.subset(split.indices_of(ds, Part::val));
  auto test = ds.subset(split.indices_of(ds, Part::test));

  ModelConfig mc;
  mc.hidden_layers = 2;
  mc.hidden_dim = 256;
  mc.shared_dim = 128;
  mc.dropout = 0.1;
  TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.max_steps = 2000;
  cfg.warmup_steps = 200;
  cfg.log_every = 0;
  cfg.eval_every = 250;

  auto run = [&](LossKind kind, std::size_t b, std::size_t k) {
    TrainConfig c = cfg;
    c.loss_kind = kind;
    c.batch_size = b;
    c.negatives_per_spectrum = k;
    auto model = train_loop(init_model(model_config_for(train, c, mc)), train, &val, c).model;
    return evaluate(model, test);
  };

  EndToEnd e;
  auto cand = run(LossKind::candidate, 32, 32);
  e.candidate_r1 = cand.recall_at.at(1);
  e.mean_candidates = cand.mean_candidates_per_record;
  e.mu_in = cand.mu_pc_input.value_or(NAN);
  e.mu_learned = cand.mu_pc_learned.value_or(NAN);
  // Matched effective batch B = 32 * 32, capped by the training set size.
  e.inbatch_b = std::min<std::size_t>(32 * 32, train.size());
  e.inbatch_r1 = run(LossKind::inbatch, e.inbatch_b, 1).recall_at.at(1);
  e.inbatch_small_r1 = run(LossKind::inbatch, 32, 1).recall_at.at(1);
  e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  cached = e;
  return *cached;
}

Outcome end_to_end() {
  const auto& e = end_to_end_run();
  const bool pass = e.candidate_r1 >= 0.90 && e.inbatch_r1 < e.candidate_r1 && e.seconds < 600.0;
  return {pass, fmt("candidate R@1 %.3f (B=32, K=32); in-batch R@1 %.3f (B=%zu), %.3f (B=32); %.1f candidates/record; "
                    "%.0f s",
                    e.candidate_r1, e.inbatch_r1, e.inbatch_b, e.inbatch_small_r1, e.mean_candidates, e.seconds)};
}

Outcome separability() {
  const auto& e = end_to_end_run();
  return {e.mu_learned < e.mu_in, fmt("mu_pc input %.4f, learned %.4f", e.mu_in, e.mu_learned)};
}

// ------------------------------------------------------------ determinism

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "specalign");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

Outcome determinism() {
  oracle::TempDir dir;
  oracle::write_file(dir / "cfg.json", R"({
    "seed": 11,
    "paths": {"out_dir": "run"},
    "gen": {"n_molecules": 200, "ppm_tolerance": 100000},
    "model": {"hidden_layers": 2, "hidden_dim": 64, "shared_dim": 32},
    "train": {"batch_size": 32, "negatives_per_spectrum": 32, "lr": 0.001, "max_steps": 200,
              "warmup_steps": 20, "log_every": 10, "eval_every": 50}
  })");
  const std::string cfg = (dir / "cfg.json").string();
  if (cli({"gen", "--config", cfg}) != 0 || cli({"split", "--config", cfg}) != 0) return {false, "setup failed"};
  if (cli({"train", "--config", cfg}) != 0) return {false, "first train failed"};
  auto ckpt1 = oracle::read_bytes(dir / "run/model.msa1");
  auto log1 = oracle::read_bytes(dir / "run/metrics.jsonl");
  if (cli({"train", "--config", cfg}) != 0) return {false, "second train failed"};
  auto ckpt2 = oracle::read_bytes(dir / "run/model.msa1");
  auto log2 = oracle::read_bytes(dir / "run/metrics.jsonl");
  return {ckpt1 == ckpt2 && log1 == log2 && !log1.empty(),
          fmt("checkpoints %s (%zu bytes), metrics logs %s (%zu bytes)", ckpt1 == ckpt2 ? "identical" : "differ",
              ckpt1.size(), log1 == log2 ? "identical" : "differ", log1.size())};
}

// ----------------------------------------------------------------- splits

Outcome split_leakage() {
  SyntheticConfig g;
  g.n_molecules = 500;
  g.n_adducts = 3;
  g.ppm_tolerance = 1e5;
  auto ds = gen_synthetic(g).dataset;
  auto formula = verify_no_leakage(ds, split_by_key(ds, SplitSpec{"formula", {0.8, 0.1, 0.1}, 0}), "formula");
  auto random = verify_no_leakage(ds, split_by_key(ds, SplitSpec{"random", {0.8, 0.1, 0.1}, 0}), "formula");
  return {formula.empty() && !random.empty(),
          fmt("formula split %zu violations, random split %zu violations", formula.size(), random.size())};
}

struct Criterion {
  const char* key;
  const char* title;
  std::function<Outcome()> run;
  double budget_seconds;
};

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_level(spdlog::level::warn);
  const std::vector<Criterion> criteria = {
      {"gradients", "Gradient fidelity", gradient_fidelity, 30.0},
      {"closed_form", "Closed-form losses", closed_form_losses, 1.0},
      {"ranking", "Ranking oracle", ranking_oracle, 10.0},
      {"wasserstein", "Sliced-Wasserstein checks", sliced_wasserstein, 60.0},
      {"end_to_end", "End-to-end synthetic retrieval", end_to_end, 600.0},
      {"separability", "Candidate separability direction", separability, 600.0},
      {"determinism", "Determinism", determinism, 600.0},
      {"leakage", "Split leakage", split_leakage, 600.0},
  };
  const std::set<std::string> only(argv + 1, argv + argc);
  std::set<std::string> unknown = only;
  int failures = 0;
  for (const auto& c : criteria) {
    unknown.erase(c.key);
    if (!only.empty() && !only.contains(c.key)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool pass = o.pass && secs < c.budget_seconds;
    failures += pass ? 0 : 1;
    std::printf("%s  %s: %s [%.2f s, budget %.0f s]\n", pass ? "PASS" : "FAIL", c.title, o.detail.c_str(), secs,
                c.budget_seconds);
    std::fflush(stdout);
  }
  for (const auto& key : unknown) {
    std::fprintf(stderr, "unknown criterion '%s'\n", key.c_str());
    ++failures;
  }
  return failures;
}

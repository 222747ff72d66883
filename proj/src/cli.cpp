#include "specalign/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "specalign/checkpoint.hpp"
#include "specalign/embedstore.hpp"
#include "specalign/errors.hpp"
#include "specalign/retrieval.hpp"
#include "specalign/shift.hpp"

namespace specalign {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

[[noreturn]] void config_error(const std::string& what) { throw Error(ErrorCode::invalid_config, what); }

void reject_unknown(const json& section, const std::string& name, std::initializer_list<const char*> allowed) {
  if (!section.is_object()) config_error("section '" + name + "' must be an object");
  for (const auto& [key, _] : section.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) config_error("unknown key '" + key + "' in section '" + name + "'");
  }
}

template <typename T>
void read_into(const json& section, const char* key, T& out) {
  auto it = section.find(key);
  if (it == section.end() || it->is_null()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    config_error(std::string("key '") + key + "' has the wrong type");
  }
}

std::optional<Part> part_or_all(const std::string& name) {
  if (name == "all") return std::nullopt;
  try {
    return part_from_string(name);
  } catch (const Error&) {
    config_error("unknown split part '" + name + "'");
  }
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

void require_file(const fs::path& p) {
  if (!fs::is_regular_file(p)) throw Error(ErrorCode::io_error, "missing input file " + p.string());
}

void prepare_out_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Error(ErrorCode::io_error, "cannot create output directory " + dir.string());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io_error, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::io_error, "short write to " + path.string());
}

PairedDataset load_inputs(const RunConfig& cfg) {
  auto ds = load_dataset(cfg.paths.spectra, cfg.paths.molecules, cfg.paths.meta, cfg.paths.candidates);
  if (cfg.paths.targets) ds.targets = read_embedding_file(*cfg.paths.targets, EmbeddingRole::target);
  return ds;
}

void require_dataset_files(const RunConfig& cfg) {
  for (const auto* p : {&cfg.paths.spectra, &cfg.paths.molecules, &cfg.paths.meta, &cfg.paths.candidates}) {
    require_file(*p);
  }
  if (cfg.paths.targets) require_file(*cfg.paths.targets);
}

PairedDataset part_of(const PairedDataset& ds, const SplitAssignment& split, std::optional<Part> part) {
  if (!part) return ds;
  auto idx = split.indices_of(ds, *part);
  return ds.subset(idx);
}

void init_logging() {
  auto logger = spdlog::get("specalign");
  if (!logger) {
    logger = spdlog::stderr_color_mt("specalign");
    spdlog::set_default_logger(logger);
  }
  spdlog::level::level_enum level = spdlog::level::info;
  if (const char* env = std::getenv("SPECALIGN_LOG")) {
    const std::string v(env);
    if (v == "error") level = spdlog::level::err;
    else if (v == "debug") level = spdlog::level::debug;
    else if (v != "info") spdlog::warn("ignoring SPECALIGN_LOG={}", v);
  }
  spdlog::set_level(level);
}

}  // namespace

void RunConfig::apply_seed(std::uint64_t value) {
  seed = value;
  gen.seed = value;
  split.seed = value;
  train.seed = value;
  model.seed = value;
}

void RunConfig::validate() const {
  if (threads == 0) config_error("threads must be >= 1");
  gen.validate();
  split.validate();
  train.validate();
  if (model.hidden_layers < 0 || model.hidden_dim < 1 || model.shared_dim < 1) {
    config_error("model sizes must be positive");
  }
  if (!(model.dropout >= 0.0 && model.dropout < 1.0)) config_error("dropout must lie in [0, 1)");
  if (!(model.init_temperature > 0.0)) config_error("init_temperature must be positive");
  if (eval.ks.empty()) config_error("eval.ks must not be empty");
  for (auto k : eval.ks) {
    if (k < 1) config_error("eval k must be >= 1");
  }
  if (shift.n_projections == 0) config_error("shift.n_projections must be positive");
  if (shift.n_seeds == 0) config_error("shift.n_seeds must be positive");
  if (adduct_filter && !init_checkpoint) config_error("train.adduct_filter requires train.init_checkpoint");
}

RunConfig parse_run_config(const std::string& text, const fs::path& base_dir) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    config_error(std::string("config is not valid JSON: ") + e.what());
  }
  reject_unknown(root, "root", {"seed", "threads", "paths", "gen", "split", "model", "train", "eval", "shift"});

  RunConfig cfg;
  std::uint64_t seed = 0;
  read_into(root, "seed", seed);
  read_into(root, "threads", cfg.threads);
  cfg.apply_seed(seed);

  const json empty = json::object();
  auto section = [&](const char* name) -> const json& {
    auto it = root.find(name);
    return it == root.end() ? empty : *it;
  };

  {
    const json& s = section("paths");
    reject_unknown(s, "paths", {"out_dir", "spectra", "molecules", "meta", "candidates", "targets", "split",
                                "checkpoint"});
    std::string out_dir = ".";
    read_into(s, "out_dir", out_dir);
    cfg.paths.out_dir = resolve(base_dir, out_dir);
    auto path_or = [&](const char* key, const char* fallback) {
      std::string v;
      read_into(s, key, v);
      return v.empty() ? cfg.paths.out_dir / fallback : resolve(base_dir, v);
    };
    cfg.paths.spectra = path_or("spectra", "spectra.emb");
    cfg.paths.molecules = path_or("molecules", "molecules.emb");
    cfg.paths.meta = path_or("meta", "meta.jsonl");
    cfg.paths.candidates = path_or("candidates", "candidates.jsonl");
    cfg.paths.split = path_or("split", "split.jsonl");
    cfg.paths.checkpoint = path_or("checkpoint", "model.msa1");
    std::string targets;
    read_into(s, "targets", targets);
    if (!targets.empty()) cfg.paths.targets = resolve(base_dir, targets);
  }
  {
    const json& s = section("gen");
    reject_unknown(s, "gen", {"n_molecules", "mol_dim", "ms_dim", "noise_sigma", "n_adducts", "ppm_tolerance",
                              "mass_range", "candidates_cap", "mass_coupling", "isomers_per_formula",
                              "missing_energy_fraction"});
    auto& g = cfg.gen;
    read_into(s, "n_molecules", g.n_molecules);
    read_into(s, "mol_dim", g.mol_dim);
    read_into(s, "ms_dim", g.ms_dim);
    read_into(s, "noise_sigma", g.noise_sigma);
    read_into(s, "n_adducts", g.n_adducts);
    read_into(s, "ppm_tolerance", g.ppm_tolerance);
    read_into(s, "candidates_cap", g.candidates_cap);
    read_into(s, "mass_coupling", g.mass_coupling);
    read_into(s, "isomers_per_formula", g.isomers_per_formula);
    read_into(s, "missing_energy_fraction", g.missing_energy_fraction);
    std::array<double, 2> range = {g.mass_min, g.mass_max};
    read_into(s, "mass_range", range);
    g.mass_min = range[0];
    g.mass_max = range[1];
  }
  {
    const json& s = section("split");
    reject_unknown(s, "split", {"key", "fractions"});
    read_into(s, "key", cfg.split.key_name);
    read_into(s, "fractions", cfg.split.fractions);
  }
  {
    const json& s = section("model");
    reject_unknown(s, "model", {"hidden_layers", "hidden_dim", "shared_dim", "dropout", "layernorm_eps",
                                "init_temperature"});
    read_into(s, "hidden_layers", cfg.model.hidden_layers);
    read_into(s, "hidden_dim", cfg.model.hidden_dim);
    read_into(s, "shared_dim", cfg.model.shared_dim);
    read_into(s, "dropout", cfg.model.dropout);
    read_into(s, "layernorm_eps", cfg.model.layernorm_eps);
    read_into(s, "init_temperature", cfg.model.init_temperature);
  }
  {
    const json& s = section("train");
    reject_unknown(s, "train", {"batch_size", "negatives_per_spectrum", "lr", "max_steps", "warmup_steps",
                                "weight_decay", "betas", "adam_eps", "loss", "metadata", "ce_bounds", "log_every",
                                "eval_every", "eval_ks", "init_checkpoint", "adduct_filter"});
    auto& t = cfg.train;
    read_into(s, "batch_size", t.batch_size);
    read_into(s, "negatives_per_spectrum", t.negatives_per_spectrum);
    read_into(s, "lr", t.lr);
    read_into(s, "max_steps", t.max_steps);
    read_into(s, "warmup_steps", t.warmup_steps);
    read_into(s, "weight_decay", t.weight_decay);
    read_into(s, "adam_eps", t.adam_eps);
    read_into(s, "metadata", t.metadata_enabled);
    read_into(s, "log_every", t.log_every);
    read_into(s, "eval_every", t.eval_every);
    read_into(s, "eval_ks", t.eval_ks);
    std::array<double, 2> betas = {t.beta1, t.beta2};
    read_into(s, "betas", betas);
    t.beta1 = betas[0];
    t.beta2 = betas[1];
    std::array<double, 2> ce = {t.ce_min, t.ce_max};
    read_into(s, "ce_bounds", ce);
    t.ce_min = ce[0];
    t.ce_max = ce[1];
    std::string loss;
    read_into(s, "loss", loss);
    if (!loss.empty()) {
      try {
        t.loss_kind = loss_kind_from_string(loss);
      } catch (const Error&) {
        config_error("unknown loss '" + loss + "'");
      }
    }
    std::string init, adduct;
    read_into(s, "init_checkpoint", init);
    read_into(s, "adduct_filter", adduct);
    if (!init.empty()) cfg.init_checkpoint = resolve(base_dir, init);
    if (!adduct.empty()) cfg.adduct_filter = adduct;
  }
  {
    const json& s = section("eval");
    reject_unknown(s, "eval", {"ks", "filter_formula", "part"});
    read_into(s, "ks", cfg.eval.ks);
    read_into(s, "filter_formula", cfg.eval.filter_formula);
    std::string part = "test";
    read_into(s, "part", part);
    cfg.eval.part = part_or_all(part);
  }
  {
    const json& s = section("shift");
    reject_unknown(s, "shift", {"n_projections", "n_seeds", "train_part", "test_part"});
    read_into(s, "n_projections", cfg.shift.n_projections);
    read_into(s, "n_seeds", cfg.shift.n_seeds);
    std::string train_part = "train", test_part = "test";
    read_into(s, "train_part", train_part);
    read_into(s, "test_part", test_part);
    auto tp = part_or_all(train_part);
    auto sp = part_or_all(test_part);
    if (!tp || !sp) config_error("shift parts must name a split part");
    cfg.shift.train_part = *tp;
    cfg.shift.test_part = *sp;
  }
  return cfg;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) config_error("cannot read config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str(), path.parent_path());
}

int cmd_gen(const RunConfig& cfg) {
  cfg.validate();
  auto synth = gen_synthetic(cfg.gen);
  prepare_out_dir(cfg.paths.out_dir);
  save_dataset(synth.dataset, cfg.paths.spectra, cfg.paths.molecules, cfg.paths.meta, cfg.paths.candidates);
  std::size_t total = 0;
  for (const auto& c : synth.dataset.candidates) total += c.candidates.size();
  spdlog::info("generated {} records over {} molecules, {:.1f} candidates per record", synth.dataset.size(),
               synth.dataset.molecules.rows(),
               static_cast<double>(total) / static_cast<double>(std::max<std::size_t>(1, synth.dataset.size())));
  return 0;
}

int cmd_split(const RunConfig& cfg, bool allow_leakage) {
  cfg.validate();
  require_dataset_files(cfg);
  const auto ds = load_inputs(cfg);
  const auto split = split_by_key(ds, cfg.split);
  // Leakage is always audited on a real key; a random split is checked
  // against the formula key.
  const std::string audit_key = cfg.split.key_name == "random" ? "formula" : cfg.split.key_name;
  const auto violations = verify_no_leakage(ds, split, audit_key);

  prepare_out_dir(cfg.paths.out_dir);
  write_split_jsonl(split, cfg.paths.split);
  nlohmann::ordered_json report;
  report["key"] = cfg.split.key_name;
  report["audit_key"] = audit_key;
  report["counts"] = {{"train", split.count(Part::train)},
                      {"val", split.count(Part::val)},
                      {"test", split.count(Part::test)}};
  report["n_violations"] = violations.size();
  auto list = nlohmann::ordered_json::array();
  for (const auto& v : violations) {
    std::vector<std::string> parts;
    for (auto p : v.parts) parts.emplace_back(to_string(p));
    list.push_back({{"key_value", v.key_value}, {"parts", parts}});
  }
  report["violations"] = std::move(list);
  write_text(cfg.paths.out_dir / "leakage.json", report.dump() + "\n");

  if (!violations.empty()) {
    spdlog::error("{} '{}' values cross split parts", violations.size(), audit_key);
    return allow_leakage ? 0 : static_cast<int>(ErrorCategory::config);
  }
  spdlog::info("split {}: train {}, val {}, test {}; no leakage", cfg.split.key_name, split.count(Part::train),
               split.count(Part::val), split.count(Part::test));
  return 0;
}

int cmd_train(const RunConfig& cfg) {
  cfg.validate();
  require_dataset_files(cfg);
  require_file(cfg.paths.split);
  if (cfg.init_checkpoint) require_file(*cfg.init_checkpoint);

  const auto ds = load_inputs(cfg);
  const auto split = read_split_jsonl(cfg.paths.split);
  const auto train = part_of(ds, split, Part::train);
  const auto val = part_of(ds, split, Part::val);
  const PairedDataset* val_ptr = val.size() > 0 ? &val : nullptr;

  TrainResult result;
  if (cfg.init_checkpoint) {
    auto base = load_checkpoint(*cfg.init_checkpoint);
    const auto expected = model_config_for(ds, cfg.train, base.config);
    if (base.config.ms_in_dim != expected.ms_in_dim || base.config.mol_in_dim != expected.mol_in_dim ||
        base.config.tower != expected.tower) {
      throw Error(ErrorCode::shape_mismatch, "initial checkpoint does not match the dataset and loss");
    }
    result = cfg.adduct_filter ? finetune_subset(base, train, *cfg.adduct_filter, cfg.train, val_ptr)
                               : train_loop(std::move(base), train, val_ptr, cfg.train);
  } else {
    auto model = init_model(model_config_for(ds, cfg.train, cfg.model));
    result = train_loop(std::move(model), train, val_ptr, cfg.train);
  }

  prepare_out_dir(cfg.paths.out_dir);
  save_checkpoint(result.model, cfg.paths.checkpoint);
  std::string log;
  for (const auto& entry : result.log) log += to_jsonl(entry) + "\n";
  write_text(cfg.paths.out_dir / "metrics.jsonl", log);
  if (result.best_step) {
    spdlog::info("best val R@1 {:.4f} at step {}", result.best_val_r1.value_or(0.0), *result.best_step);
  }
  return 0;
}

int cmd_eval(const RunConfig& cfg) {
  cfg.validate();
  require_dataset_files(cfg);
  require_file(cfg.paths.checkpoint);
  if (cfg.eval.part) require_file(cfg.paths.split);

  const auto ds = load_inputs(cfg);
  const auto model = load_checkpoint(cfg.paths.checkpoint);
  PairedDataset subset = cfg.eval.part ? part_of(ds, read_split_jsonl(cfg.paths.split), cfg.eval.part) : ds;
  EvalOptions options;
  options.ks = cfg.eval.ks;
  options.filter_formula = cfg.eval.filter_formula;
  options.threads = cfg.threads;
  const auto report = evaluate(model, subset, options);
  const std::string text = to_json(report);

  prepare_out_dir(cfg.paths.out_dir);
  write_text(cfg.paths.out_dir / "eval.json", text + "\n");
  std::cout << text << std::endl;
  return 0;
}

int cmd_shift(const RunConfig& cfg) {
  cfg.validate();
  require_dataset_files(cfg);
  require_file(cfg.paths.split);

  const auto ds = load_inputs(cfg);
  const auto split = read_split_jsonl(cfg.paths.split);
  const auto train_idx = split.indices_of(ds, cfg.shift.train_part);
  const auto test_idx = split.indices_of(ds, cfg.shift.test_part);
  const auto report = shift_metric(joint_embed(ds, train_idx), joint_embed(ds, test_idx), cfg.shift.n_projections,
                                   cfg.shift.n_seeds, cfg.seed, cfg.threads);
  const std::string text = to_json(report);

  prepare_out_dir(cfg.paths.out_dir);
  write_text(cfg.paths.out_dir / "shift.json", text + "\n");
  std::cout << text << std::endl;
  return 0;
}

int run_cli(int argc, char** argv) {
  init_logging();
  CLI::App app{"Align frozen spectrum and molecule embeddings, evaluate retrieval, audit splits"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  bool allow_leakage = false;
  bool filter_formula = false;
  std::string loss;
  app.add_option("--config", config_path, "JSON run config")->required();
  app.add_option("--seed", seed, "Override the run seed");
  app.add_option("--threads", threads, "Worker thread cap");
  app.add_flag("--allow-leakage", allow_leakage, "Exit 0 even if the split leaks");
  app.add_flag("--filter-formula", filter_formula, "Keep only candidates matching the true formula");
  app.add_option("--loss", loss, "Training loss")
      ->check(CLI::IsMember({"regression-ms2mol", "regression-mol2ms", "inbatch", "candidate"}));

  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
  auto* split = app.add_subcommand("split", "Split records by a group key and audit leakage");
  auto* train = app.add_subcommand("train", "Train projection heads");
  auto* eval = app.add_subcommand("eval", "Evaluate candidate retrieval");
  auto* shift = app.add_subcommand("shift", "Measure train/test distribution shift");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ErrorCategory::config);
  }

  try {
    RunConfig cfg = load_run_config(config_path);
    if (seed) cfg.apply_seed(*seed);
    if (threads) cfg.threads = *threads;
    if (filter_formula) cfg.eval.filter_formula = true;
    if (!loss.empty()) cfg.train.loss_kind = loss_kind_from_string(loss);

    if (gen->parsed()) return cmd_gen(cfg);
    if (split->parsed()) return cmd_split(cfg, allow_leakage);
    if (train->parsed()) return cmd_train(cfg);
    if (eval->parsed()) return cmd_eval(cfg);
    if (shift->parsed()) return cmd_shift(cfg);
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return e.exit_code();
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return static_cast<int>(ErrorCategory::data);
  }
  return static_cast<int>(ErrorCategory::config);
}

}  // namespace specalign

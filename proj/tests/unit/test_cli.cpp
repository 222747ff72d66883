#include <doctest.h>

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "specalign/checkpoint.hpp"
#include "specalign/cli.hpp"
#include "specalign/embedstore.hpp"
#include "specalign/errors.hpp"
#include "tempdir.hpp"

using namespace specalign;
namespace fs = std::filesystem;

namespace {

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "specalign");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Small, fast configuration rooted at `out`.
nlohmann::json base_config(const std::string& out) {
  return nlohmann::json::parse(R"({
    "seed": 3,
    "paths": {"out_dir": ")" + out + R"("},
    "gen": {"n_molecules": 60, "mol_dim": 6, "ms_dim": 8, "n_adducts": 2, "ppm_tolerance": 100000},
    "split": {"key": "formula", "fractions": [0.8, 0.1, 0.1]},
    "model": {"hidden_layers": 1, "hidden_dim": 16, "shared_dim": 8},
    "train": {"batch_size": 8, "negatives_per_spectrum": 4, "lr": 0.001, "max_steps": 20,
              "warmup_steps": 4, "log_every": 5, "eval_every": 10}
  })");
}

fs::path write_config(const oracle::TempDir& dir, const nlohmann::json& j, const std::string& name = "cfg.json") {
  oracle::write_file(dir / name, j.dump(2));
  return dir / name;
}

}  // namespace

TEST_CASE("gen writes a loadable, deterministic dataset") {
  oracle::TempDir dir;
  auto cfg = write_config(dir, base_config("a"));
  REQUIRE(run({"gen", "--config", cfg.string()}) == 0);
  for (auto f : {"spectra.emb", "molecules.emb", "meta.jsonl", "candidates.jsonl"}) CHECK(fs::exists(dir / "a" / f));
  auto ds = load_dataset(dir / "a/spectra.emb", dir / "a/molecules.emb", dir / "a/meta.jsonl",
                         dir / "a/candidates.jsonl");
  CHECK(ds.size() == 120);
  CHECK(ds.molecules.rows() == 60);
  CHECK(ds.spectra.dim() == 8);
  CHECK(ds.molecules.dim() == 6);

  auto again = write_config(dir, base_config("b"), "cfg_b.json");
  REQUIRE(run({"gen", "--config", again.string()}) == 0);
  for (auto f : {"spectra.emb", "molecules.emb", "meta.jsonl", "candidates.jsonl"}) {
    CHECK(oracle::read_bytes(dir / "a" / f) == oracle::read_bytes(dir / "b" / f));
  }
  REQUIRE(run({"gen", "--config", again.string(), "--seed", "4"}) == 0);
  CHECK(oracle::read_bytes(dir / "a/spectra.emb") != oracle::read_bytes(dir / "b/spectra.emb"));
}

TEST_CASE("split reports leakage through its exit code") {
  oracle::TempDir dir;
  auto j = base_config("out");
  auto cfg = write_config(dir, j);
  REQUIRE(run({"gen", "--config", cfg.string()}) == 0);
  REQUIRE(run({"split", "--config", cfg.string()}) == 0);
  auto report = nlohmann::json::parse(read_text(dir / "out/leakage.json"));
  CHECK(report["n_violations"] == 0);
  CHECK(fs::exists(dir / "out/split.jsonl"));

  j["split"]["key"] = "random";
  auto random_cfg = write_config(dir, j, "random.json");
  CHECK(run({"split", "--config", random_cfg.string()}) == 1);
  report = nlohmann::json::parse(read_text(dir / "out/leakage.json"));
  CHECK(report["audit_key"] == "formula");
  CHECK(report["n_violations"].get<int>() > 0);
  CHECK(run({"split", "--config", random_cfg.string(), "--allow-leakage"}) == 0);
}

TEST_CASE("config errors are caught before any output") {
  oracle::TempDir dir;
  auto j = base_config("fresh");
  j["split"]["fractions"] = {0.5, 0.2, 0.2};
  auto cfg = write_config(dir, j);
  CHECK(run({"gen", "--config", cfg.string()}) == 1);
  CHECK(run({"split", "--config", cfg.string()}) == 1);
  CHECK_FALSE(fs::exists(dir / "fresh"));

  auto unknown = base_config("fresh");
  unknown["train"]["learning_rate"] = 0.1;
  CHECK(run({"gen", "--config", write_config(dir, unknown, "u.json").string()}) == 1);
  CHECK_FALSE(fs::exists(dir / "fresh"));

  CHECK(run({"gen"}) == 1);
  CHECK(run({"frobnicate", "--config", cfg.string()}) == 1);
  CHECK(run({"train", "--config", write_config(dir, base_config("fresh"), "ok.json").string(), "--loss", "triplet"}) ==
        1);
  CHECK(run({"gen", "--config", (dir / "missing.json").string()}) == 1);
  oracle::write_file(dir / "broken.json", "{\"seed\": ");
  CHECK(run({"gen", "--config", (dir / "broken.json").string()}) == 1);
}

TEST_CASE("missing inputs are data errors") {
  oracle::TempDir dir;
  auto cfg = write_config(dir, base_config("none"));
  CHECK(run({"split", "--config", cfg.string()}) == 2);
  CHECK(run({"train", "--config", cfg.string()}) == 2);
  CHECK(run({"eval", "--config", cfg.string()}) == 2);
  CHECK(run({"shift", "--config", cfg.string()}) == 2);
}

TEST_CASE("train, eval and shift end to end") {
  oracle::TempDir dir;
  auto j = base_config("run");
  auto cfg = write_config(dir, j);
  REQUIRE(run({"gen", "--config", cfg.string()}) == 0);
  REQUIRE(run({"split", "--config", cfg.string()}) == 0);

  SUBCASE("training is bitwise reproducible") {
    REQUIRE(run({"train", "--config", cfg.string()}) == 0);
    auto ckpt = oracle::read_bytes(dir / "run/model.msa1");
    auto log = read_text(dir / "run/metrics.jsonl");
    CHECK_FALSE(log.empty());
    REQUIRE(run({"train", "--config", cfg.string()}) == 0);
    CHECK(oracle::read_bytes(dir / "run/model.msa1") == ckpt);
    CHECK(read_text(dir / "run/metrics.jsonl") == log);
    REQUIRE(run({"train", "--config", cfg.string(), "--seed", "9"}) == 0);
    CHECK(oracle::read_bytes(dir / "run/model.msa1") != ckpt);

    auto first = nlohmann::json::parse(log.substr(0, log.find('\n')));
    for (auto key : {"step", "loss", "lr", "val_r1", "val_r5", "val_r20", "temperature"}) CHECK(first.contains(key));
  }
  SUBCASE("max_steps 0 writes the initial model") {
    j["train"]["max_steps"] = 0;
    auto zero = write_config(dir, j, "zero.json");
    REQUIRE(run({"train", "--config", zero.string()}) == 0);
    auto model = load_checkpoint(dir / "run/model.msa1");
    auto ds = load_dataset(dir / "run/spectra.emb", dir / "run/molecules.emb", dir / "run/meta.jsonl",
                           dir / "run/candidates.jsonl");
    TrainConfig tc;
    tc.seed = 3;
    ModelConfig mc;
    mc.hidden_layers = 1;
    mc.hidden_dim = 16;
    mc.shared_dim = 8;
    auto expected = round_to_storage_precision(init_model(model_config_for(ds, tc, mc)));
    CHECK(encode_checkpoint(model) == encode_checkpoint(expected));
  }
  SUBCASE("every loss trains through the CLI and evaluates") {
    for (auto loss : {"candidate", "inbatch", "regression-ms2mol", "regression-mol2ms"}) {
      INFO(loss);
      REQUIRE(run({"train", "--config", cfg.string(), "--loss", loss}) == 0);
      REQUIRE(run({"eval", "--config", cfg.string()}) == 0);
      auto report = nlohmann::json::parse(read_text(dir / "run/eval.json"));
      CHECK(report["recall"]["1"].get<double>() <= report["recall"]["5"].get<double>());
      CHECK(report["recall"]["5"].get<double>() <= report["recall"]["20"].get<double>());
      CHECK(report["n"].get<int>() > 0);
    }
  }
  SUBCASE("eval with a formula filter needs candidate formulas") {
    REQUIRE(run({"train", "--config", cfg.string()}) == 0);
    REQUIRE(run({"eval", "--config", cfg.string(), "--filter-formula"}) == 0);
    CHECK(nlohmann::json::parse(read_text(dir / "run/eval.json"))["filtered"] == true);
    auto cands = read_candidates_jsonl(dir / "run/candidates.jsonl");
    for (auto& c : cands) c.candidate_formulas.reset();
    write_candidates_jsonl(cands, dir / "run/candidates.jsonl");
    CHECK(run({"eval", "--config", cfg.string(), "--filter-formula"}) == 2);
  }
  SUBCASE("shift is deterministic and flags degenerate training data") {
    REQUIRE(run({"shift", "--config", cfg.string()}) == 0);
    auto first = read_text(dir / "run/shift.json");
    REQUIRE(run({"shift", "--config", cfg.string()}) == 0);
    CHECK(read_text(dir / "run/shift.json") == first);
    auto report = nlohmann::json::parse(first);
    CHECK(report["n_seeds"] == 5);
    CHECK(report["numerators"].size() == 5);

    auto ds = load_dataset(dir / "run/spectra.emb", dir / "run/molecules.emb", dir / "run/meta.jsonl",
                           dir / "run/candidates.jsonl");
    for (std::size_t i = 0; i < ds.size(); ++i) {
      for (std::size_t c = 0; c < ds.spectra.dim(); ++c) ds.spectra.at(i, c) = 1.0f;
    }
    for (std::size_t i = 0; i < ds.molecules.rows(); ++i) {
      for (std::size_t c = 0; c < ds.molecules.dim(); ++c) ds.molecules.at(i, c) = 2.0f;
    }
    write_embedding_file(ds.spectra, dir / "run/spectra.emb");
    write_embedding_file(ds.molecules, dir / "run/molecules.emb");
    CHECK(run({"shift", "--config", cfg.string()}) == 3);
  }
}

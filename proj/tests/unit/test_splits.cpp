#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <Eigen/QR>

#include "oracles.hpp"
#include "specalign/errors.hpp"
#include "specalign/splits.hpp"
#include "tempdir.hpp"

using namespace specalign;

namespace {

PairedDataset keyed_dataset(std::size_t records, std::size_t groups) {
  PairedDataset ds;
  ds.spectra = EmbeddingMatrix(records, 2);
  ds.molecules = EmbeddingMatrix(groups, 2, EmbeddingRole::molecule);
  for (std::size_t i = 0; i < records; ++i) {
    RecordMeta m;
    m.record_id = "r" + std::to_string(i);
    m.group_keys["formula"] = "F" + std::to_string(i % groups);
    ds.meta.push_back(m);
    CandidateEntry c;
    c.record_id = m.record_id;
    c.positive = static_cast<std::uint32_t>(i % groups);
    c.candidates = {c.positive};
    ds.candidates.push_back(c);
  }
  return ds;
}

SyntheticConfig multi_adduct() {
  SyntheticConfig g;
  g.n_molecules = 200;
  g.n_adducts = 3;
  g.ppm_tolerance = 5e4;
  g.seed = 3;
  return g;
}

}  // namespace

TEST_CASE("split_by_key partitions whole groups") {
  SUBCASE("one group lands in a single part") {
    auto ds = keyed_dataset(20, 1);
    auto split = split_by_key(ds, SplitSpec{});
    CHECK(split.size() == 20);
    const Part p = split.parts[0];
    CHECK(split.count(p) == 20);
  }
  SUBCASE("unique keys hit the fractions within one group") {
    auto ds = keyed_dataset(1000, 1000);
    SplitSpec spec;
    spec.fractions = {0.7, 0.2, 0.1};
    auto split = split_by_key(ds, spec);
    CHECK(split.size() == 1000);
    CHECK(std::abs(static_cast<double>(split.count(Part::train)) - 700.0) <= 1.0);
    CHECK(std::abs(static_cast<double>(split.count(Part::val)) - 200.0) <= 1.0);
    CHECK(split.count(Part::train) + split.count(Part::val) + split.count(Part::test) == 1000);
  }
  SUBCASE("seed determinism and variability") {
    auto ds = keyed_dataset(300, 150);
    SplitSpec a;
    a.seed = 1;
    SplitSpec b = a;
    b.seed = 2;
    CHECK(split_by_key(ds, a).parts == split_by_key(ds, a).parts);
    CHECK(split_by_key(ds, a).parts != split_by_key(ds, b).parts);
  }
  SUBCASE("records sharing a key share a part") {
    auto ds = keyed_dataset(400, 37);
    auto split = split_by_key(ds, SplitSpec{});
    CHECK(verify_no_leakage(ds, split, "formula").empty());
    std::map<std::string, std::set<Part>> seen;
    for (std::size_t i = 0; i < ds.size(); ++i) seen[ds.meta[i].group_keys.at("formula")].insert(split.parts[i]);
    for (const auto& [k, parts] : seen) CHECK(parts.size() == 1);
  }
  SUBCASE("errors") {
    auto ds = keyed_dataset(10, 5);
    SplitSpec spec;
    spec.key_name = "scaffold";
    try {
      split_by_key(ds, spec);
      FAIL("expected missing_key");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::missing_key);
    }
    SplitSpec bad;
    bad.fractions = {0.5, 0.3, 0.1};
    CHECK_THROWS_AS(bad.validate(), Error);
    bad.fractions = {1.0, 0.0, 0.0};
    CHECK_THROWS_AS(bad.validate(), Error);
  }
}

TEST_CASE("leakage verification") {
  auto ds = keyed_dataset(30, 10);
  auto split = split_by_key(ds, SplitSpec{});
  REQUIRE(verify_no_leakage(ds, split, "formula").empty());
  // Move one record of a group into a different part.
  const Part original = split.parts[4];
  split.parts[4] = original == Part::test ? Part::train : Part::test;
  auto v = verify_no_leakage(ds, split, "formula");
  REQUIRE(v.size() == 1);
  CHECK(v[0].key_value == "F4");
  CHECK(v[0].parts.size() == 2);

  auto synth = gen_synthetic(multi_adduct()).dataset;
  auto formula = split_by_key(synth, SplitSpec{"formula", {0.8, 0.1, 0.1}, 4});
  CHECK(verify_no_leakage(synth, formula, "formula").empty());
  auto random = split_by_key(synth, SplitSpec{"random", {0.8, 0.1, 0.1}, 4});
  CHECK_FALSE(verify_no_leakage(synth, random, "formula").empty());
}

TEST_CASE("split JSONL round-trip") {
  oracle::TempDir dir;
  auto ds = keyed_dataset(12, 4);
  auto split = split_by_key(ds, SplitSpec{});
  write_split_jsonl(split, dir / "split.jsonl");
  auto back = read_split_jsonl(dir / "split.jsonl");
  CHECK(back.record_ids == split.record_ids);
  CHECK(back.parts == split.parts);
  auto idx = back.indices_of(ds, Part::train);
  for (auto i : idx) CHECK(split.parts[i] == Part::train);
  oracle::write_file(dir / "bad.jsonl", "{\"record_id\": \"r0\", \"part\": \"holdout\"}\n");
  CHECK_THROWS_AS(read_split_jsonl(dir / "bad.jsonl"), Error);
}

TEST_CASE("mass filter window") {
  Rng rng(1);
  std::vector<double> masses = {500.0, 500.004, 500.006, 499.996, 499.994};
  auto c = mass_filter_candidates(500.0, 0, masses, 10.0, 256, rng);
  CHECK(c == std::vector<std::uint32_t>{0, 1, 3});
  std::vector<double> lonely = {300.0, 500.0, 700.0};
  CHECK(mass_filter_candidates(500.0, 1, lonely, 10.0, 256, rng) == std::vector<std::uint32_t>{1});

  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> cat(300);
    for (auto& m : cat) m = rng.uniform(100.0, 1000.0);
    const std::uint32_t pos = static_cast<std::uint32_t>(rng.below(cat.size()));
    const double ppm = rng.uniform(100.0, 20000.0);
    auto got = mass_filter_candidates(cat[pos], pos, cat, ppm, 100000, rng);
    CHECK(got == oracle::linear_scan_window(cat[pos], cat, ppm));
  }

  std::vector<double> dense(500, 400.0);
  auto capped = mass_filter_candidates(400.0, 123, dense, 10.0, 32, rng);
  CHECK(capped.size() == 32);
  CHECK(std::find(capped.begin(), capped.end(), 123u) != capped.end());
  CHECK(std::is_sorted(capped.begin(), capped.end()));
}

TEST_CASE("synthetic generator contracts") {
  auto cfg = multi_adduct();
  auto a = gen_synthetic(cfg);
  auto b = gen_synthetic(cfg);
  CHECK(a.dataset.spectra == b.dataset.spectra);
  CHECK(a.dataset.molecules == b.dataset.molecules);
  CHECK(a.dataset.meta == b.dataset.meta);
  CHECK(a.dataset.candidates == b.dataset.candidates);

  const auto& ds = a.dataset;
  CHECK(ds.size() == cfg.n_molecules * cfg.n_adducts);
  CHECK(ds.molecules.rows() == cfg.n_molecules);
  CHECK(ds.spectra.dim() == cfg.ms_dim);
  CHECK(ds.molecules.dim() == cfg.mol_dim);
  CHECK(validate_dataset(ds).empty());

  std::map<std::size_t, std::set<std::string>> formulas;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& c = ds.candidates[i];
    CHECK(std::count(c.candidates.begin(), c.candidates.end(), c.positive) == 1);
    CHECK(c.positive == a.truth.record_molecule[i]);
    formulas[c.positive].insert(ds.meta[i].group_keys.at("formula"));
    CHECK(ds.meta[i].adduct.has_value());
  }
  for (const auto& [mol, keys] : formulas) CHECK(keys.size() == 1);

  SUBCASE("noiseless single adduct is an exact linear image") {
    SyntheticConfig g;
    g.n_molecules = 60;
    g.mol_dim = 6;
    g.ms_dim = 9;
    g.noise_sigma = 0.0;
    g.n_adducts = 1;
    g.ppm_tolerance = 1e4;
    auto s = gen_synthetic(g);
    Matrix ms(60, 9), mol(60, 6);
    for (std::size_t i = 0; i < 60; ++i) {
      for (std::size_t c = 0; c < 9; ++c) ms(static_cast<Index>(i), static_cast<Index>(c)) = s.dataset.spectra.at(i, c);
      const auto m = s.dataset.candidates[i].positive;
      for (std::size_t c = 0; c < 6; ++c) mol(static_cast<Index>(i), static_cast<Index>(c)) = s.dataset.molecules.at(m, c);
    }
    // Least-squares probe ms -> mol.
    Matrix w = ms.colPivHouseholderQr().solve(mol);
    CHECK((ms * w - mol).cwiseAbs().maxCoeff() < 1e-4);
  }
  SUBCASE("invalid configs") {
    SyntheticConfig g;
    g.ppm_tolerance = 0.0;
    CHECK_THROWS_AS(gen_synthetic(g), Error);
    g = SyntheticConfig{};
    g.n_molecules = 0;
    CHECK_THROWS_AS(gen_synthetic(g), Error);
  }
}

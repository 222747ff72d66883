#include <cmath>
#include <cstdio>
#include <numbers>

#include "specalign/errors.hpp"
#include "specalign/rng.hpp"
#include "specalign/splits.hpp"

namespace specalign {

namespace {

const char* const kAdductNames[] = {"[M+H]+", "[M+Na]+", "[M-H]-", "[M+NH4]+", "[M+K]+",
                                    "[M+Cl]-", "[M]+",     "[M+HCOOH-H]-"};

std::string adduct_name(std::size_t a) {
  constexpr std::size_t known = sizeof(kAdductNames) / sizeof(kAdductNames[0]);
  if (a < known) return kAdductNames[a];
  return "[M+X" + std::to_string(a) + "]";
}

std::string padded(const char* prefix, std::size_t value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%06zu", prefix, value);
  return buf;
}

}  // namespace

void SyntheticConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::invalid_config, what); };
  if (n_molecules == 0 || mol_dim == 0 || ms_dim == 0 || n_adducts == 0) fail("synthetic sizes must be positive");
  if (!(noise_sigma >= 0.0)) fail("noise_sigma must be >= 0");
  if (!(ppm_tolerance > 0.0)) fail("ppm_tolerance must be positive");
  if (!(mass_min > 0.0 && mass_max > mass_min)) fail("mass range must satisfy 0 < min < max");
  if (candidates_cap == 0) fail("candidates_cap must be positive");
  if (!(mass_coupling >= 0.0 && mass_coupling < 1.0)) fail("mass_coupling must lie in [0, 1)");
  if (isomers_per_formula == 0) fail("isomers_per_formula must be positive");
  if (!(missing_energy_fraction >= 0.0 && missing_energy_fraction <= 1.0)) {
    fail("missing_energy_fraction must lie in [0, 1]");
  }
}

SyntheticDataset gen_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  const Rng root(cfg.seed);
  SyntheticDataset out;
  auto& truth = out.truth;
  auto& ds = out.dataset;

  // Masses: one per formula, shared by its isomers.
  const std::size_t n_formulas = (cfg.n_molecules + cfg.isomers_per_formula - 1) / cfg.isomers_per_formula;
  std::vector<double> formula_mass(n_formulas);
  Rng mass_rng = root.derive(1);
  for (auto& m : formula_mass) m = mass_rng.uniform(cfg.mass_min, cfg.mass_max);
  truth.molecule_masses.resize(cfg.n_molecules);
  for (std::size_t m = 0; m < cfg.n_molecules; ++m) {
    truth.molecule_masses[m] = formula_mass[m / cfg.isomers_per_formula];
  }

  // Molecule rows: sqrt(1 - c^2) z + c * smooth(mass), z ~ N(0, I). The
  // smooth component has unit variance per dimension over uniform mass.
  const auto mol_dim = static_cast<Index>(cfg.mol_dim);
  const auto ms_dim = static_cast<Index>(cfg.ms_dim);
  Rng wave_rng = root.derive(2);
  Vector freq(mol_dim), phase(mol_dim);
  for (Index d = 0; d < mol_dim; ++d) {
    freq[d] = 2.0 * std::numbers::pi * wave_rng.uniform(0.5, 1.5);
    phase[d] = wave_rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  const double coupling = cfg.mass_coupling;
  const double own = std::sqrt(1.0 - coupling * coupling);
  Rng mol_rng = root.derive(3);
  Matrix molecules(static_cast<Index>(cfg.n_molecules), mol_dim);
  for (Index m = 0; m < molecules.rows(); ++m) {
    const double t = (truth.molecule_masses[static_cast<std::size_t>(m)] - cfg.mass_min) / (cfg.mass_max - cfg.mass_min);
    for (Index d = 0; d < mol_dim; ++d) {
      const double z = mol_rng.normal();
      molecules(m, d) = coupling > 0.0 ? own * z + coupling * std::sqrt(2.0) * std::cos(freq[d] * t + phase[d]) : z;
    }
  }

  Rng map_rng = root.derive(4);
  const double map_scale = 1.0 / std::sqrt(static_cast<double>(cfg.mol_dim));
  for (std::size_t a = 0; a < cfg.n_adducts; ++a) {
    Matrix A(ms_dim, mol_dim);
    for (Index i = 0; i < A.size(); ++i) A.data()[i] = map_scale * map_rng.normal();
    truth.adduct_maps.push_back(std::move(A));
    truth.adduct_names.push_back(adduct_name(a));
  }

  const std::size_t n_records = cfg.n_molecules * cfg.n_adducts;
  std::vector<float> spectra;
  spectra.reserve(n_records * cfg.ms_dim);
  Rng noise_rng = root.derive(5);
  Rng meta_rng = root.derive(6);
  Rng cand_rng = root.derive(7);
  for (std::size_t m = 0; m < cfg.n_molecules; ++m) {
    const std::string formula = padded("F", m / cfg.isomers_per_formula);
    for (std::size_t a = 0; a < cfg.n_adducts; ++a) {
      Vector s = truth.adduct_maps[a] * molecules.row(static_cast<Index>(m)).transpose();
      for (Index i = 0; i < ms_dim; ++i) spectra.push_back(static_cast<float>(s[i] + cfg.noise_sigma * noise_rng.normal()));

      RecordMeta meta;
      meta.record_id = padded("syn", m) + "_" + std::to_string(a);
      meta.adduct = truth.adduct_names[a];
      const double energy = meta_rng.uniform(10.0, 150.0);
      if (!meta_rng.bernoulli(cfg.missing_energy_fraction)) meta.collision_energy = energy;
      meta.group_keys["formula"] = formula;
      meta.group_keys["inchikey14"] = padded("IK", m);
      meta.mol_mass = truth.molecule_masses[m];
      meta.formula = formula;
      ds.meta.push_back(std::move(meta));
      truth.record_molecule.push_back(m);

      CandidateEntry entry;
      entry.record_id = ds.meta.back().record_id;
      entry.positive = static_cast<std::uint32_t>(m);
      entry.candidates = mass_filter_candidates(truth.molecule_masses[m], entry.positive, truth.molecule_masses,
                                                cfg.ppm_tolerance, cfg.candidates_cap, cand_rng);
      std::vector<std::string> formulas;
      for (auto c : entry.candidates) formulas.push_back(padded("F", c / cfg.isomers_per_formula));
      entry.candidate_formulas = std::move(formulas);
      ds.candidates.push_back(std::move(entry));
    }
  }

  std::vector<float> mol_data(molecules.size());
  for (Index i = 0; i < molecules.size(); ++i) mol_data[static_cast<std::size_t>(i)] = static_cast<float>(molecules.data()[i]);
  ds.molecules = EmbeddingMatrix(cfg.n_molecules, cfg.mol_dim, std::move(mol_data), EmbeddingRole::molecule);
  ds.spectra = EmbeddingMatrix(n_records, cfg.ms_dim, std::move(spectra), EmbeddingRole::spectrum);
  return out;
}

}  // namespace specalign

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "specalign/embedstore.hpp"
#include "specalign/model.hpp"

namespace specalign {

enum class Part { train, val, test };

const char* to_string(Part part);
Part part_from_string(const std::string& name);

struct SplitSpec {
  // Group key in RecordMeta::group_keys, or "random".
  std::string key_name = "formula";
  std::array<double, 3> fractions = {0.8, 0.1, 0.1};
  std::uint64_t seed = 0;

  void validate() const;
};

// record_id -> part, kept in dataset record order.
struct SplitAssignment {
  std::vector<std::string> record_ids;
  std::vector<Part> parts;

  std::size_t size() const { return parts.size(); }
  std::size_t count(Part part) const;
  // Dataset record indices assigned to `part`; records must appear in `ds`.
  std::vector<std::size_t> indices_of(const PairedDataset& ds, Part part) const;
};

SplitAssignment split_by_key(const PairedDataset& ds, const SplitSpec& spec);

struct LeakageViolation {
  std::string key_value;
  std::vector<Part> parts;
};

std::vector<LeakageViolation> verify_no_leakage(const PairedDataset& ds, const SplitAssignment& assignment,
                                                const std::string& key_name);

void write_split_jsonl(const SplitAssignment& split, const std::filesystem::path& path);
SplitAssignment read_split_jsonl(const std::filesystem::path& path);

// All catalog indices within target * ppm * 1e-6 of the target mass. When
// more than `cap` qualify, the positive is kept together with a uniform
// subsample of the rest. Output is in ascending index order.
std::vector<std::uint32_t> mass_filter_candidates(double target_mass, std::uint32_t positive,
                                                  std::span<const double> catalog_masses, double ppm,
                                                  std::size_t cap, Rng& rng);

struct SyntheticConfig {
  std::size_t n_molecules = 500;
  std::size_t mol_dim = 32;
  std::size_t ms_dim = 48;
  double noise_sigma = 0.1;
  std::size_t n_adducts = 2;
  double ppm_tolerance = 10.0;
  double mass_min = 100.0;
  double mass_max = 1000.0;
  std::size_t candidates_cap = 256;
  std::uint64_t seed = 0;
  // Weight of a smooth mass-dependent component shared by molecules of
  // similar mass; 0 gives i.i.d. standard normal molecule rows.
  double mass_coupling = 0.0;
  // Molecules per formula; isomers share formula and exact mass.
  std::size_t isomers_per_formula = 1;
  // Fraction of records whose collision energy is left missing.
  double missing_energy_fraction = 0.0;

  void validate() const;
};

struct SyntheticTruth {
  std::vector<Matrix> adduct_maps;  // ms_dim x mol_dim per adduct
  std::vector<std::string> adduct_names;
  std::vector<double> molecule_masses;
  std::vector<std::size_t> record_molecule;  // molecule index per record
};

struct SyntheticDataset {
  PairedDataset dataset;
  SyntheticTruth truth;
};

SyntheticDataset gen_synthetic(const SyntheticConfig& cfg);

}  // namespace specalign

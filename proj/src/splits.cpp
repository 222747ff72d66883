#include "specalign/splits.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <unordered_map>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "specalign/errors.hpp"
#include "specalign/rng.hpp"

namespace specalign {

const char* to_string(Part part) {
  switch (part) {
    case Part::train: return "train";
    case Part::val: return "val";
    case Part::test: return "test";
  }
  return "train";
}

Part part_from_string(const std::string& name) {
  if (name == "train") return Part::train;
  if (name == "val") return Part::val;
  if (name == "test") return Part::test;
  throw Error(ErrorCode::parse_error, "unknown split part '" + name + "'");
}

void SplitSpec::validate() const {
  double sum = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0 && f < 1.0)) throw Error(ErrorCode::invalid_config, "split fractions must lie in (0, 1)");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw Error(ErrorCode::invalid_config, "split fractions sum to " + std::to_string(sum) + ", expected 1");
  }
  if (key_name.empty()) throw Error(ErrorCode::invalid_config, "split key must be named");
}

std::size_t SplitAssignment::count(Part part) const {
  return static_cast<std::size_t>(std::count(parts.begin(), parts.end(), part));
}

std::vector<std::size_t> SplitAssignment::indices_of(const PairedDataset& ds, Part part) const {
  std::unordered_map<std::string, Part> lookup;
  for (std::size_t i = 0; i < parts.size(); ++i) lookup.emplace(record_ids[i], parts[i]);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto it = lookup.find(ds.meta[i].record_id);
    if (it == lookup.end()) {
      throw Error(ErrorCode::count_mismatch, "record " + ds.meta[i].record_id + " missing from split");
    }
    if (it->second == part) out.push_back(i);
  }
  return out;
}

SplitAssignment split_by_key(const PairedDataset& ds, const SplitSpec& spec) {
  spec.validate();
  const std::size_t n = ds.size();
  SplitAssignment out;
  out.parts.assign(n, Part::train);
  for (const auto& m : ds.meta) out.record_ids.push_back(m.record_id);
  Rng rng(spec.seed);
  const std::array<Part, 3> order = {Part::train, Part::val, Part::test};

  if (spec.key_name == "random") {
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle(perm);
    const auto n_train = static_cast<std::size_t>(std::llround(spec.fractions[0] * static_cast<double>(n)));
    const auto n_val = std::min(n - std::min(n, n_train),
                                static_cast<std::size_t>(std::llround(spec.fractions[1] * static_cast<double>(n))));
    for (std::size_t i = 0; i < n; ++i) {
      out.parts[perm[i]] = i < n_train ? Part::train : (i < n_train + n_val ? Part::val : Part::test);
    }
    return out;
  }

  // Groups keyed by value; std::map fixes the pre-shuffle order.
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& keys = ds.meta[i].group_keys;
    auto it = keys.find(spec.key_name);
    if (it == keys.end()) {
      throw Error(ErrorCode::missing_key, "record " + ds.meta[i].record_id + " has no key '" + spec.key_name + "'");
    }
    groups[it->second].push_back(i);
  }
  std::vector<const std::vector<std::size_t>*> shuffled;
  for (const auto& [_, members] : groups) shuffled.push_back(&members);
  rng.shuffle(shuffled);

  std::array<double, 3> target{};
  for (int p = 0; p < 3; ++p) target[p] = spec.fractions[p] * static_cast<double>(n);
  std::array<std::size_t, 3> filled{};
  int current = 0;
  for (const auto* members : shuffled) {
    while (current < 2 && static_cast<double>(filled[current]) >= target[current]) ++current;
    for (auto r : *members) out.parts[r] = order[current];
    filled[current] += members->size();
  }
  for (int p = 0; p < 3; ++p) {
    if (filled[p] == 0) {
      spdlog::warn("split on '{}' left part '{}' empty ({} groups for {} records)", spec.key_name,
                   to_string(order[p]), groups.size(), n);
    }
  }
  return out;
}

std::vector<LeakageViolation> verify_no_leakage(const PairedDataset& ds, const SplitAssignment& assignment,
                                                const std::string& key_name) {
  std::unordered_map<std::string, Part> part_of;
  for (std::size_t i = 0; i < assignment.size(); ++i) part_of.emplace(assignment.record_ids[i], assignment.parts[i]);
  std::map<std::string, std::array<bool, 3>> seen;
  for (const auto& m : ds.meta) {
    auto key = m.group_keys.find(key_name);
    if (key == m.group_keys.end()) {
      throw Error(ErrorCode::missing_key, "record " + m.record_id + " has no key '" + key_name + "'");
    }
    auto part = part_of.find(m.record_id);
    if (part == part_of.end()) throw Error(ErrorCode::count_mismatch, "record " + m.record_id + " missing from split");
    seen[key->second][static_cast<std::size_t>(part->second)] = true;
  }
  std::vector<LeakageViolation> out;
  for (const auto& [value, flags] : seen) {
    LeakageViolation v{value, {}};
    for (std::size_t p = 0; p < 3; ++p) {
      if (flags[p]) v.parts.push_back(static_cast<Part>(p));
    }
    if (v.parts.size() > 1) out.push_back(std::move(v));
  }
  return out;
}

void write_split_jsonl(const SplitAssignment& split, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::io_error, "cannot write " + path.string());
  for (std::size_t i = 0; i < split.size(); ++i) {
    nlohmann::ordered_json j;
    j["record_id"] = split.record_ids[i];
    j["part"] = to_string(split.parts[i]);
    out << j.dump() << '\n';
  }
  if (!out) throw Error(ErrorCode::io_error, "short write to " + path.string());
}

SplitAssignment read_split_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + path.string());
  SplitAssignment out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = nlohmann::json::parse(line);
      out.record_ids.push_back(j.at("record_id").get<std::string>());
      out.parts.push_back(part_from_string(j.at("part").get<std::string>()));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::parse_error, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<std::uint32_t> mass_filter_candidates(double target_mass, std::uint32_t positive,
                                                  std::span<const double> catalog_masses, double ppm,
                                                  std::size_t cap, Rng& rng) {
  if (!(ppm > 0.0)) throw Error(ErrorCode::invalid_config, "ppm tolerance must be positive");
  if (positive >= catalog_masses.size()) throw Error(ErrorCode::index_out_of_range, "positive outside catalog");
  const double half_width = target_mass * ppm * 1e-6;
  std::vector<std::uint32_t> others;
  for (std::size_t j = 0; j < catalog_masses.size(); ++j) {
    if (j != positive && std::abs(catalog_masses[j] - target_mass) <= half_width) {
      others.push_back(static_cast<std::uint32_t>(j));
    }
  }
  std::vector<std::uint32_t> out{positive};
  if (cap == 0 || others.size() + 1 <= cap) {
    out.insert(out.end(), others.begin(), others.end());
  } else {
    for (auto i : rng.sample_without_replacement(others.size(), cap - 1)) out.push_back(others[i]);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace specalign

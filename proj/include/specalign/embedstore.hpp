#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace specalign {

enum class EmbeddingRole { spectrum, molecule, target };

// Dense row-major binary32 matrix of precomputed encoder outputs.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;
  EmbeddingMatrix(std::size_t rows, std::size_t dim, EmbeddingRole role = EmbeddingRole::spectrum);
  EmbeddingMatrix(std::size_t rows, std::size_t dim, std::vector<float> data,
                  EmbeddingRole role = EmbeddingRole::spectrum);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t dim() const noexcept { return dim_; }
  EmbeddingRole role() const noexcept { return role_; }
  void set_role(EmbeddingRole role) noexcept { role_ = role; }

  std::span<const float> row(std::size_t r) const { return {data_.data() + r * dim_, dim_}; }
  std::span<float> row(std::size_t r) { return {data_.data() + r * dim_, dim_}; }
  float& at(std::size_t r, std::size_t c) { return data_[r * dim_ + c]; }
  float at(std::size_t r, std::size_t c) const { return data_[r * dim_ + c]; }

  const std::vector<float>& data() const noexcept { return data_; }
  std::vector<float>& data() noexcept { return data_; }

  // Index of the first row holding a NaN/Inf, if any.
  std::optional<std::size_t> first_non_finite_row() const;

  friend bool operator==(const EmbeddingMatrix&, const EmbeddingMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t dim_ = 1;
  std::vector<float> data_;
  EmbeddingRole role_ = EmbeddingRole::spectrum;
};

struct RecordMeta {
  std::string record_id;
  std::optional<std::string> adduct;
  std::optional<double> collision_energy;
  std::map<std::string, std::string> group_keys;
  std::optional<double> mol_mass;
  std::optional<std::string> formula;

  friend bool operator==(const RecordMeta&, const RecordMeta&) = default;
};

struct CandidateEntry {
  std::string record_id;
  std::vector<std::uint32_t> candidates;
  std::uint32_t positive = 0;
  std::optional<std::vector<std::string>> candidate_formulas;

  friend bool operator==(const CandidateEntry&, const CandidateEntry&) = default;
};

using CandidateTable = std::vector<CandidateEntry>;

// Records are aligned by position: record i uses spectrum row i, meta[i] and
// candidates[i]; its positive molecule is candidates[i].positive.
struct PairedDataset {
  EmbeddingMatrix spectra;
  EmbeddingMatrix molecules;
  std::vector<RecordMeta> meta;
  CandidateTable candidates;
  // Optional fixed regression targets, one row per catalog molecule.
  std::optional<EmbeddingMatrix> targets;

  std::size_t size() const noexcept { return meta.size(); }
  std::uint32_t positive_of(std::size_t record) const { return candidates[record].positive; }

  // Restricts to the given records (in order); catalog and targets are kept whole.
  PairedDataset subset(std::span<const std::size_t> records) const;
};

enum class ViolationRule {
  count_mismatch,
  duplicate_record_id,
  non_finite,
  non_finite_collision_energy,
  index_out_of_range,
  missing_positive,
  duplicate_candidate,
  formula_count_mismatch,
  record_id_mismatch,
};

const char* to_string(ViolationRule rule);

struct Violation {
  std::string record_id;
  ViolationRule rule;
  std::string detail;
};

// EMB1: "EMB1", u32 rows, u32 dim (little-endian), rows*dim binary32 LE.
EmbeddingMatrix read_embedding_file(const std::filesystem::path& path,
                                    EmbeddingRole role = EmbeddingRole::spectrum);
void write_embedding_file(const EmbeddingMatrix& matrix, const std::filesystem::path& path);

std::vector<std::uint8_t> encode_embedding(const EmbeddingMatrix& matrix);
EmbeddingMatrix decode_embedding(std::span<const std::uint8_t> bytes,
                                 EmbeddingRole role = EmbeddingRole::spectrum);

std::vector<RecordMeta> read_meta_jsonl(const std::filesystem::path& path);
void write_meta_jsonl(const std::vector<RecordMeta>& meta, const std::filesystem::path& path);
CandidateTable read_candidates_jsonl(const std::filesystem::path& path);
void write_candidates_jsonl(const CandidateTable& table, const std::filesystem::path& path);

// Loads and eagerly cross-validates; throws the first structural error found.
PairedDataset load_dataset(const std::filesystem::path& spectra_path,
                           const std::filesystem::path& molecules_path,
                           const std::filesystem::path& meta_path,
                           const std::filesystem::path& candidates_path);

void save_dataset(const PairedDataset& ds, const std::filesystem::path& spectra_path,
                  const std::filesystem::path& molecules_path,
                  const std::filesystem::path& meta_path,
                  const std::filesystem::path& candidates_path);

std::vector<Violation> validate_dataset(const PairedDataset& ds);

}  // namespace specalign

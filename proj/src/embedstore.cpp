#include "specalign/embedstore.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <set>
#include <unordered_set>

#include <json.hpp>

#include "specalign/errors.hpp"

namespace specalign {

namespace {

using nlohmann::json;

constexpr std::uint8_t kMagic[4] = {'E', 'M', 'B', '1'};
constexpr std::size_t kHeaderBytes = 12;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[offset + i]) << (8 * i);
  return v;
}

std::vector<std::uint8_t> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    lines.push_back(std::move(line));
  }
  return lines;
}

std::ofstream open_out(const std::filesystem::path& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(path, mode);
  if (!out) throw Error(ErrorCode::io_error, "cannot write " + path.string());
  return out;
}

template <class T>
std::optional<T> optional_field(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  return it->get<T>();
}

json optional_json(const auto& value) {
  if (!value) return nullptr;
  return *value;
}

}  // namespace

EmbeddingMatrix::EmbeddingMatrix(std::size_t rows, std::size_t dim, EmbeddingRole role)
    : EmbeddingMatrix(rows, dim, std::vector<float>(rows * dim, 0.0f), role) {}

EmbeddingMatrix::EmbeddingMatrix(std::size_t rows, std::size_t dim, std::vector<float> data,
                                 EmbeddingRole role)
    : rows_(rows), dim_(dim), data_(std::move(data)), role_(role) {
  if (dim_ == 0) throw Error(ErrorCode::shape_mismatch, "embedding dim must be positive");
  if (data_.size() != rows_ * dim_) {
    throw Error(ErrorCode::shape_mismatch, "data length " + std::to_string(data_.size()) +
                                               " != rows*dim " + std::to_string(rows_ * dim_));
  }
}

std::optional<std::size_t> EmbeddingMatrix::first_non_finite_row() const {
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) return i / dim_;
  }
  return std::nullopt;
}

PairedDataset PairedDataset::subset(std::span<const std::size_t> records) const {
  PairedDataset out;
  out.molecules = molecules;
  out.targets = targets;
  std::vector<float> rows;
  rows.reserve(records.size() * spectra.dim());
  for (std::size_t r : records) {
    auto src = spectra.row(r);
    rows.insert(rows.end(), src.begin(), src.end());
    out.meta.push_back(meta[r]);
    out.candidates.push_back(candidates[r]);
  }
  out.spectra = EmbeddingMatrix(records.size(), spectra.dim(), std::move(rows), spectra.role());
  return out;
}

std::vector<std::uint8_t> encode_embedding(const EmbeddingMatrix& matrix) {
  if (matrix.rows() > std::numeric_limits<std::uint32_t>::max() ||
      matrix.dim() > std::numeric_limits<std::uint32_t>::max()) {
    throw Error(ErrorCode::shape_mismatch, "matrix too large for EMB1 header");
  }
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  out.reserve(kHeaderBytes + matrix.data().size() * 4);
  put_u32(out, static_cast<std::uint32_t>(matrix.rows()));
  put_u32(out, static_cast<std::uint32_t>(matrix.dim()));
  for (float v : matrix.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

EmbeddingMatrix decode_embedding(std::span<const std::uint8_t> bytes, EmbeddingRole role) {
  if (bytes.size() < 4 || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
    throw Error(ErrorCode::bad_magic, "expected leading bytes \"EMB1\"");
  }
  if (bytes.size() < kHeaderBytes) throw Error(ErrorCode::truncated_file, "header shorter than 12 bytes");
  const std::uint64_t rows = get_u32(bytes, 4);
  const std::uint64_t dim = get_u32(bytes, 8);
  if (dim == 0) throw Error(ErrorCode::parse_error, "dim must be positive");
  const std::uint64_t payload = rows * dim * 4;
  if (bytes.size() - kHeaderBytes < payload) {
    throw Error(ErrorCode::truncated_file, "payload has " + std::to_string(bytes.size() - kHeaderBytes) +
                                               " bytes, expected " + std::to_string(payload));
  }
  if (bytes.size() - kHeaderBytes > payload) {
    throw Error(ErrorCode::parse_error, "trailing bytes after payload");
  }
  std::vector<float> data(rows * dim);
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i] = std::bit_cast<float>(get_u32(bytes, kHeaderBytes + 4 * i));
  }
  EmbeddingMatrix m(rows, dim, std::move(data), role);
  if (auto bad = m.first_non_finite_row()) {
    throw Error(ErrorCode::non_finite, "row " + std::to_string(*bad) + " holds NaN/Inf");
  }
  return m;
}

EmbeddingMatrix read_embedding_file(const std::filesystem::path& path, EmbeddingRole role) {
  auto bytes = read_all(path);
  return decode_embedding(bytes, role);
}

void write_embedding_file(const EmbeddingMatrix& matrix, const std::filesystem::path& path) {
  auto bytes = encode_embedding(matrix);
  auto out = open_out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::io_error, "short write to " + path.string());
}

std::vector<RecordMeta> read_meta_jsonl(const std::filesystem::path& path) {
  std::vector<RecordMeta> out;
  std::size_t line_no = 0;
  for (const auto& line : read_lines(path)) {
    ++line_no;
    try {
      json obj = json::parse(line);
      RecordMeta m;
      m.record_id = obj.at("record_id").get<std::string>();
      m.adduct = optional_field<std::string>(obj, "adduct");
      m.collision_energy = optional_field<double>(obj, "collision_energy");
      if (auto it = obj.find("group_keys"); it != obj.end() && !it->is_null()) {
        m.group_keys = it->get<std::map<std::string, std::string>>();
      }
      m.mol_mass = optional_field<double>(obj, "mol_mass");
      m.formula = optional_field<std::string>(obj, "formula");
      out.push_back(std::move(m));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::parse_error, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void write_meta_jsonl(const std::vector<RecordMeta>& meta, const std::filesystem::path& path) {
  auto out = open_out(path);
  for (const auto& m : meta) {
    json obj;
    obj["record_id"] = m.record_id;
    obj["adduct"] = optional_json(m.adduct);
    obj["collision_energy"] = optional_json(m.collision_energy);
    obj["group_keys"] = m.group_keys;
    obj["mol_mass"] = optional_json(m.mol_mass);
    obj["formula"] = optional_json(m.formula);
    out << obj.dump() << '\n';
  }
  if (!out) throw Error(ErrorCode::io_error, "short write to " + path.string());
}

CandidateTable read_candidates_jsonl(const std::filesystem::path& path) {
  CandidateTable out;
  std::size_t line_no = 0;
  for (const auto& line : read_lines(path)) {
    ++line_no;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    CandidateEntry e;
    try {
      json obj = json::parse(line);
      e.record_id = obj.at("record_id").get<std::string>();
      auto to_index = [&](const json& v) -> std::uint32_t {
        auto i = v.get<std::int64_t>();
        if (i < 0 || i > std::numeric_limits<std::uint32_t>::max()) {
          throw Error(ErrorCode::index_out_of_range, where + ": index " + std::to_string(i));
        }
        return static_cast<std::uint32_t>(i);
      };
      for (const auto& v : obj.at("candidates")) e.candidates.push_back(to_index(v));
      e.positive = to_index(obj.at("positive"));
      e.candidate_formulas = optional_field<std::vector<std::string>>(obj, "candidate_formulas");
    } catch (const json::exception& ex) {
      throw Error(ErrorCode::parse_error, where + ": " + ex.what());
    }
    out.push_back(std::move(e));
  }
  return out;
}

void write_candidates_jsonl(const CandidateTable& table, const std::filesystem::path& path) {
  auto out = open_out(path);
  for (const auto& e : table) {
    json obj;
    obj["record_id"] = e.record_id;
    obj["candidates"] = e.candidates;
    obj["positive"] = e.positive;
    obj["candidate_formulas"] = optional_json(e.candidate_formulas);
    out << obj.dump() << '\n';
  }
  if (!out) throw Error(ErrorCode::io_error, "short write to " + path.string());
}

const char* to_string(ViolationRule rule) {
  switch (rule) {
    case ViolationRule::count_mismatch: return "CountMismatch";
    case ViolationRule::duplicate_record_id: return "DuplicateRecordId";
    case ViolationRule::non_finite: return "NonFinite";
    case ViolationRule::non_finite_collision_energy: return "NonFiniteCollisionEnergy";
    case ViolationRule::index_out_of_range: return "IndexOutOfRange";
    case ViolationRule::missing_positive: return "MissingPositive";
    case ViolationRule::duplicate_candidate: return "DuplicateCandidate";
    case ViolationRule::formula_count_mismatch: return "FormulaCountMismatch";
    case ViolationRule::record_id_mismatch: return "RecordIdMismatch";
  }
  return "Unknown";
}

std::vector<Violation> validate_dataset(const PairedDataset& ds) {
  std::vector<Violation> out;
  const std::size_t n = ds.meta.size();
  if (ds.spectra.rows() != n || ds.candidates.size() != n) {
    out.push_back({"", ViolationRule::count_mismatch,
                   "meta=" + std::to_string(n) + " spectra=" + std::to_string(ds.spectra.rows()) +
                       " candidates=" + std::to_string(ds.candidates.size())});
  }
  if (ds.targets && ds.targets->rows() != ds.molecules.rows()) {
    out.push_back({"", ViolationRule::count_mismatch, "targets rows differ from molecule catalog"});
  }

  std::unordered_set<std::string> seen_ids;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& m = ds.meta[i];
    if (!seen_ids.insert(m.record_id).second) {
      out.push_back({m.record_id, ViolationRule::duplicate_record_id, "record_id repeated"});
    }
    if (m.collision_energy && !std::isfinite(*m.collision_energy)) {
      out.push_back({m.record_id, ViolationRule::non_finite_collision_energy, "collision_energy"});
    }
    if (i < ds.spectra.rows()) {
      for (float v : ds.spectra.row(i)) {
        if (!std::isfinite(v)) {
          out.push_back({m.record_id, ViolationRule::non_finite, "spectrum row " + std::to_string(i)});
          break;
        }
      }
    }
  }

  const std::size_t catalog = ds.molecules.rows();
  for (std::size_t i = 0; i < ds.candidates.size(); ++i) {
    const auto& e = ds.candidates[i];
    if (i < n && e.record_id != ds.meta[i].record_id) {
      out.push_back({e.record_id, ViolationRule::record_id_mismatch,
                     "meta line has " + ds.meta[i].record_id});
    }
    std::set<std::uint32_t> uniq;
    bool has_positive = false;
    bool dup_reported = false;
    for (auto c : e.candidates) {
      if (c >= catalog) {
        out.push_back({e.record_id, ViolationRule::index_out_of_range,
                       "candidate " + std::to_string(c) + " >= " + std::to_string(catalog)});
      }
      if (!uniq.insert(c).second && !dup_reported) {
        out.push_back({e.record_id, ViolationRule::duplicate_candidate, "index " + std::to_string(c)});
        dup_reported = true;
      }
      has_positive = has_positive || c == e.positive;
    }
    if (e.positive >= catalog) {
      out.push_back({e.record_id, ViolationRule::index_out_of_range,
                     "positive " + std::to_string(e.positive) + " >= " + std::to_string(catalog)});
    }
    if (!has_positive) {
      out.push_back({e.record_id, ViolationRule::missing_positive,
                     "positive " + std::to_string(e.positive) + " not among candidates"});
    }
    if (e.candidate_formulas && e.candidate_formulas->size() != e.candidates.size()) {
      out.push_back({e.record_id, ViolationRule::formula_count_mismatch, "candidate_formulas length"});
    }
  }

  if (auto bad = ds.molecules.first_non_finite_row()) {
    out.push_back({"", ViolationRule::non_finite, "molecule row " + std::to_string(*bad)});
  }
  return out;
}

PairedDataset load_dataset(const std::filesystem::path& spectra_path,
                           const std::filesystem::path& molecules_path,
                           const std::filesystem::path& meta_path,
                           const std::filesystem::path& candidates_path) {
  PairedDataset ds;
  ds.spectra = read_embedding_file(spectra_path, EmbeddingRole::spectrum);
  ds.molecules = read_embedding_file(molecules_path, EmbeddingRole::molecule);
  ds.meta = read_meta_jsonl(meta_path);
  ds.candidates = read_candidates_jsonl(candidates_path);

  auto violations = validate_dataset(ds);
  if (violations.empty()) return ds;
  // Report the most fundamental problem first.
  auto rank = [](ViolationRule r) {
    switch (r) {
      case ViolationRule::count_mismatch: return 0;
      case ViolationRule::record_id_mismatch: return 1;
      case ViolationRule::index_out_of_range: return 2;
      case ViolationRule::missing_positive: return 3;
      default: return 4;
    }
  };
  const auto& v = *std::min_element(violations.begin(), violations.end(),
                                     [&](const auto& a, const auto& b) { return rank(a.rule) < rank(b.rule); });
  const std::string what = (v.record_id.empty() ? std::string() : "record " + v.record_id + ": ") + v.detail;
  switch (v.rule) {
    case ViolationRule::count_mismatch:
    case ViolationRule::record_id_mismatch:
    case ViolationRule::formula_count_mismatch:
      throw Error(ErrorCode::count_mismatch, what);
    case ViolationRule::index_out_of_range: throw Error(ErrorCode::index_out_of_range, what);
    case ViolationRule::missing_positive: throw Error(ErrorCode::missing_positive, what);
    case ViolationRule::duplicate_candidate: throw Error(ErrorCode::duplicate_candidate, what);
    case ViolationRule::duplicate_record_id: throw Error(ErrorCode::duplicate_record_id, what);
    case ViolationRule::non_finite:
    case ViolationRule::non_finite_collision_energy:
      throw Error(ErrorCode::non_finite, what);
  }
  throw Error(ErrorCode::parse_error, what);
}

void save_dataset(const PairedDataset& ds, const std::filesystem::path& spectra_path,
                  const std::filesystem::path& molecules_path,
                  const std::filesystem::path& meta_path,
                  const std::filesystem::path& candidates_path) {
  write_embedding_file(ds.spectra, spectra_path);
  write_embedding_file(ds.molecules, molecules_path);
  write_meta_jsonl(ds.meta, meta_path);
  write_candidates_jsonl(ds.candidates, candidates_path);
}

}  // namespace specalign

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "specalign/embedstore.hpp"
#include "specalign/rng.hpp"

namespace specalign {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

// Width of the adduct embedding and of the collision-energy encoding.
inline constexpr Index kMetaDim = 128;
// Upper end of the normalized collision-energy range.
inline constexpr double kCeNormMax = 100.0;

enum class Mode { train, eval };

// Which sides carry a trainable head. The regression losses train one side
// against the raw frozen embedding of the other.
enum class Tower { dual, spectrum_only, molecule_only };

const char* to_string(Tower tower);
Tower tower_from_string(const std::string& name);

struct ModelConfig {
  Index ms_in_dim = 1024;
  Index mol_in_dim = 768;
  Index hidden_layers = 2;
  Index hidden_dim = 2048;
  Index shared_dim = 1024;
  double dropout = 0.2;
  double layernorm_eps = 1e-5;
  bool metadata_enabled = true;
  Tower tower = Tower::dual;
  // Raw collision-energy bounds mapped linearly onto [0, 100].
  double ce_min = 0.0;
  double ce_max = 200.0;
  double init_temperature = 0.07;
  std::uint64_t seed = 0;
  // Adduct strings with a learned embedding, in table order.
  std::vector<std::string> adduct_vocabulary;
  // Free-form label (e.g. the adduct an expert was finetuned on).
  std::string tag;

  void validate() const;
};

struct LinearLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
};

struct LayerNormParams {
  Vector gamma;
  Vector beta;
  double eps = 1e-5;
};

struct HiddenBlock {
  LinearLayer linear;
  LayerNormParams norm;
};

// Linear -> LayerNorm -> ReLU -> Dropout per block, then a final linear map.
struct ProjectionHead {
  std::vector<HiddenBlock> blocks;
  LinearLayer output;
  double dropout = 0.0;

  bool empty() const noexcept { return output.weight.size() == 0; }
  Index in_dim() const;
  Index out_dim() const { return output.weight.rows(); }
};

struct MetadataEncoder {
  std::vector<std::string> vocabulary;
  Matrix adduct_table;  // vocabulary.size() x kMetaDim
  Vector adduct_unknown;
  Vector ce_unknown;
  double ce_min = 0.0;
  double ce_max = 200.0;

  // Row of the adduct table, or nullopt for unknown/missing adducts.
  std::optional<std::size_t> adduct_slot(const std::optional<std::string>& adduct) const;
  // Raw energy -> [0, 100], clipped.
  double normalize_energy(double raw) const;
};

struct AlignmentModel {
  ModelConfig config;
  ProjectionHead head_ms;
  ProjectionHead head_mol;
  MetadataEncoder meta;
  double log_temperature = 0.0;

  double temperature() const;
  Index ms_head_input_dim() const;
  Index shared_dim() const;
};

// Per-parameter gradient buffers, shape-matched to AlignmentModel.
struct GradientSet {
  ProjectionHead head_ms;
  ProjectionHead head_mol;
  Matrix adduct_table;
  Vector adduct_unknown;
  Vector ce_unknown;
  double log_temperature = 0.0;
};

enum class TensorKind { weight, bias, norm, metadata, temperature };

struct TensorView {
  std::string name;
  std::span<double> values;
  TensorKind kind;
};

// All trainable tensors in declaration order: head_ms blocks (W, b, gamma,
// beta)..., head_ms output (W, b), the same for head_mol, adduct table,
// adduct_unknown, ce_unknown, log_temperature. Checkpoints, the optimizer and
// gradient checks all rely on this order.
std::vector<TensorView> tensor_views(AlignmentModel& model);
std::vector<TensorView> tensor_views(GradientSet& grads);
std::size_t parameter_count(const AlignmentModel& model);

AlignmentModel init_model(const ModelConfig& config);
GradientSet zero_gradients(const AlignmentModel& model);

// Cached activations of one head forward pass.
struct BlockTape {
  Matrix input;     // B x in
  Matrix xhat;      // normalized, before affine
  Vector inv_std;   // per row
  Matrix affine;    // after gamma/beta, before ReLU
  Matrix dropout_scale;  // 0 or 1/(1-p) per element; empty when inactive
};

struct HeadTape {
  std::vector<BlockTape> blocks;
  Matrix output_input;
  Mode mode = Mode::eval;
};

struct HeadOutput {
  Matrix output;
  HeadTape tape;
};

HeadOutput head_forward(const ProjectionHead& head, const Matrix& batch, Mode mode, Rng& rng);

std::vector<double> sinusoidal_encode(double energy_normalized);
Vector encode_metadata(const RecordMeta& meta, const MetadataEncoder& enc);

// Forward state of one tower, enough to run backward.
struct TowerTape {
  HeadTape head;
  Matrix raw;   // head output before L2 normalization
  Vector norms;
  bool with_metadata = false;
  Index frozen_dim = 0;
  std::vector<std::optional<std::size_t>> adduct_slots;
  std::vector<bool> ce_missing;
};

struct ModelTape {
  std::optional<TowerTape> spectrum;
  std::optional<TowerTape> molecule;
};

Matrix gather_rows(const EmbeddingMatrix& m, std::span<const std::size_t> rows);
Matrix gather_rows(const EmbeddingMatrix& m, std::span<const std::uint32_t> rows);

// Rows scaled to unit L2 norm; throws DegenerateEmbedding below min_norm.
Matrix l2_normalize_rows(const Matrix& z, Vector* norms = nullptr, double min_norm = 1e-12);

// Spectrum-head input: frozen spectrum row, followed by the metadata
// encoding when enabled.
Matrix spectrum_inputs(const AlignmentModel& model, const PairedDataset& ds,
                       std::span<const std::size_t> records);

Matrix embed_spectrum(const AlignmentModel& model, const PairedDataset& ds,
                      std::span<const std::size_t> records, Mode mode, Rng& rng,
                      TowerTape* tape = nullptr);
Matrix embed_molecule(const AlignmentModel& model, const Matrix& molecule_rows, Mode mode, Rng& rng,
                      TowerTape* tape = nullptr);

Matrix cosine_scores(const Matrix& spectra, const Matrix& molecules);

}  // namespace specalign

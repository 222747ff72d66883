#include "specalign/model.hpp"

#include <algorithm>
#include <cmath>

#include "specalign/errors.hpp"

namespace specalign {

namespace {

LinearLayer init_linear(Index in, Index out, Rng& rng) {
  // Kaiming-uniform over fan-in with the ReLU gain.
  const double bound = std::sqrt(6.0 / static_cast<double>(in));
  LinearLayer l;
  l.weight.resize(out, in);
  for (Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = rng.uniform(-bound, bound);
  l.bias = Vector::Zero(out);
  return l;
}

ProjectionHead init_head(Index in, Index hidden, Index layers, Index out, const ModelConfig& cfg, Rng rng) {
  ProjectionHead head;
  head.dropout = cfg.dropout;
  Index width = in;
  for (Index b = 0; b < layers; ++b) {
    HiddenBlock block;
    block.linear = init_linear(width, hidden, rng);
    block.norm.gamma = Vector::Ones(hidden);
    block.norm.beta = Vector::Zero(hidden);
    block.norm.eps = cfg.layernorm_eps;
    head.blocks.push_back(std::move(block));
    width = hidden;
  }
  head.output = init_linear(width, out, rng);
  return head;
}

Vector normal_vector(Index n, double stddev, Rng& rng) {
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = stddev * rng.normal();
  return v;
}

Matrix zeros_like(const Matrix& m) { return Matrix::Zero(m.rows(), m.cols()); }

ProjectionHead zeros_like(const ProjectionHead& head) {
  ProjectionHead g;
  g.dropout = head.dropout;
  for (const auto& b : head.blocks) {
    HiddenBlock z;
    z.linear.weight = zeros_like(b.linear.weight);
    z.linear.bias = Vector::Zero(b.linear.bias.size());
    z.norm.gamma = Vector::Zero(b.norm.gamma.size());
    z.norm.beta = Vector::Zero(b.norm.beta.size());
    z.norm.eps = b.norm.eps;
    g.blocks.push_back(std::move(z));
  }
  g.output.weight = zeros_like(head.output.weight);
  g.output.bias = Vector::Zero(head.output.bias.size());
  return g;
}

template <class Derived>
std::span<double> as_span(Eigen::PlainObjectBase<Derived>& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}

void append_head(std::vector<TensorView>& out, ProjectionHead& head, const std::string& prefix) {
  for (std::size_t b = 0; b < head.blocks.size(); ++b) {
    auto& blk = head.blocks[b];
    const std::string p = prefix + ".block" + std::to_string(b);
    out.push_back({p + ".weight", as_span(blk.linear.weight), TensorKind::weight});
    out.push_back({p + ".bias", as_span(blk.linear.bias), TensorKind::bias});
    out.push_back({p + ".gamma", as_span(blk.norm.gamma), TensorKind::norm});
    out.push_back({p + ".beta", as_span(blk.norm.beta), TensorKind::norm});
  }
  if (!head.empty()) {
    out.push_back({prefix + ".output.weight", as_span(head.output.weight), TensorKind::weight});
    out.push_back({prefix + ".output.bias", as_span(head.output.bias), TensorKind::bias});
  }
}

void append_metadata(std::vector<TensorView>& out, Matrix& table, Vector& adduct_unknown, Vector& ce_unknown) {
  if (table.size() > 0) out.push_back({"meta.adduct_table", as_span(table), TensorKind::metadata});
  if (adduct_unknown.size() > 0) {
    out.push_back({"meta.adduct_unknown", as_span(adduct_unknown), TensorKind::metadata});
  }
  if (ce_unknown.size() > 0) out.push_back({"meta.ce_unknown", as_span(ce_unknown), TensorKind::metadata});
}

}  // namespace

const char* to_string(Tower tower) {
  switch (tower) {
    case Tower::dual: return "dual";
    case Tower::spectrum_only: return "spectrum_only";
    case Tower::molecule_only: return "molecule_only";
  }
  return "dual";
}

Tower tower_from_string(const std::string& name) {
  if (name == "dual") return Tower::dual;
  if (name == "spectrum_only") return Tower::spectrum_only;
  if (name == "molecule_only") return Tower::molecule_only;
  throw Error(ErrorCode::invalid_config, "unknown tower '" + name + "'");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::invalid_config, what); };
  if (ms_in_dim <= 0 || mol_in_dim <= 0) fail("input dims must be positive");
  if (hidden_layers < 0) fail("hidden_layers must be >= 0");
  if (hidden_layers > 0 && hidden_dim <= 0) fail("hidden_dim must be positive");
  if (shared_dim <= 0) fail("shared_dim must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
  if (!(layernorm_eps > 0.0)) fail("layernorm eps must be positive");
  if (!(ce_max > ce_min)) fail("ce bounds must satisfy min < max");
  if (!(init_temperature > 0.0)) fail("init temperature must be positive");
  if (tower == Tower::spectrum_only && shared_dim != mol_in_dim) {
    fail("spectrum-only tower must project onto the molecule/target dim");
  }
  if (tower == Tower::molecule_only && shared_dim != ms_in_dim) {
    fail("molecule-only tower must project onto the spectrum dim");
  }
  std::vector<std::string> sorted = adduct_vocabulary;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) fail("adduct vocabulary has duplicates");
}

Index ProjectionHead::in_dim() const {
  if (!blocks.empty()) return blocks.front().linear.weight.cols();
  return output.weight.cols();
}

std::optional<std::size_t> MetadataEncoder::adduct_slot(const std::optional<std::string>& adduct) const {
  if (!adduct) return std::nullopt;
  auto it = std::find(vocabulary.begin(), vocabulary.end(), *adduct);
  if (it == vocabulary.end()) return std::nullopt;
  return static_cast<std::size_t>(it - vocabulary.begin());
}

double MetadataEncoder::normalize_energy(double raw) const {
  const double x = (raw - ce_min) / (ce_max - ce_min) * kCeNormMax;
  return std::clamp(x, 0.0, kCeNormMax);
}

double AlignmentModel::temperature() const { return std::exp(log_temperature); }

Index AlignmentModel::ms_head_input_dim() const {
  return config.ms_in_dim + (config.metadata_enabled ? 2 * kMetaDim : 0);
}

Index AlignmentModel::shared_dim() const { return config.shared_dim; }

AlignmentModel init_model(const ModelConfig& config) {
  config.validate();
  AlignmentModel model;
  model.config = config;
  Rng root(config.seed);
  if (config.tower != Tower::molecule_only) {
    model.head_ms = init_head(model.ms_head_input_dim(), config.hidden_dim, config.hidden_layers,
                              config.shared_dim, config, root.derive(1));
  }
  if (config.tower != Tower::spectrum_only) {
    model.head_mol = init_head(config.mol_in_dim, config.hidden_dim, config.hidden_layers, config.shared_dim,
                               config, root.derive(2));
  }
  model.meta.vocabulary = config.adduct_vocabulary;
  model.meta.ce_min = config.ce_min;
  model.meta.ce_max = config.ce_max;
  if (config.metadata_enabled && config.tower != Tower::molecule_only) {
    Rng meta_rng = root.derive(3);
    const Index n = static_cast<Index>(config.adduct_vocabulary.size());
    model.meta.adduct_table.resize(n, kMetaDim);
    for (Index i = 0; i < model.meta.adduct_table.size(); ++i) {
      model.meta.adduct_table.data()[i] = 0.02 * meta_rng.normal();
    }
    model.meta.adduct_unknown = normal_vector(kMetaDim, 0.02, meta_rng);
    model.meta.ce_unknown = normal_vector(kMetaDim, 0.02, meta_rng);
  }
  model.log_temperature = std::log(config.init_temperature);
  return model;
}

GradientSet zero_gradients(const AlignmentModel& model) {
  GradientSet g;
  g.head_ms = zeros_like(model.head_ms);
  g.head_mol = zeros_like(model.head_mol);
  g.adduct_table = zeros_like(model.meta.adduct_table);
  g.adduct_unknown = Vector::Zero(model.meta.adduct_unknown.size());
  g.ce_unknown = Vector::Zero(model.meta.ce_unknown.size());
  g.log_temperature = 0.0;
  return g;
}

std::vector<TensorView> tensor_views(AlignmentModel& model) {
  std::vector<TensorView> out;
  append_head(out, model.head_ms, "head_ms");
  append_head(out, model.head_mol, "head_mol");
  append_metadata(out, model.meta.adduct_table, model.meta.adduct_unknown, model.meta.ce_unknown);
  out.push_back({"log_temperature", {&model.log_temperature, 1}, TensorKind::temperature});
  return out;
}

std::vector<TensorView> tensor_views(GradientSet& grads) {
  std::vector<TensorView> out;
  append_head(out, grads.head_ms, "head_ms");
  append_head(out, grads.head_mol, "head_mol");
  append_metadata(out, grads.adduct_table, grads.adduct_unknown, grads.ce_unknown);
  out.push_back({"log_temperature", {&grads.log_temperature, 1}, TensorKind::temperature});
  return out;
}

std::size_t parameter_count(const AlignmentModel& model) {
  std::size_t n = 0;
  for (const auto& v : tensor_views(const_cast<AlignmentModel&>(model))) n += v.values.size();
  return n;
}

HeadOutput head_forward(const ProjectionHead& head, const Matrix& batch, Mode mode, Rng& rng) {
  if (head.empty()) throw Error(ErrorCode::shape_mismatch, "head has no parameters");
  if (batch.cols() != head.in_dim()) {
    throw Error(ErrorCode::shape_mismatch, "batch has " + std::to_string(batch.cols()) +
                                               " columns, head expects " + std::to_string(head.in_dim()));
  }
  HeadOutput result;
  result.tape.mode = mode;
  const bool drop = mode == Mode::train && head.dropout > 0.0;
  const double keep_scale = 1.0 / (1.0 - head.dropout);

  Matrix x = batch;
  for (const auto& block : head.blocks) {
    BlockTape t;
    t.input = x;
    Matrix h = x * block.linear.weight.transpose();
    h.rowwise() += block.linear.bias.transpose();

    const Index width = h.cols();
    t.inv_std.resize(h.rows());
    t.xhat.resize(h.rows(), width);
    for (Index r = 0; r < h.rows(); ++r) {
      const double mean = h.row(r).mean();
      const double var = (h.row(r).array() - mean).square().mean();
      const double inv = 1.0 / std::sqrt(var + block.norm.eps);
      t.inv_std[r] = inv;
      t.xhat.row(r) = (h.row(r).array() - mean) * inv;
    }
    t.affine = (t.xhat.array().rowwise() * block.norm.gamma.transpose().array()).rowwise() +
               block.norm.beta.transpose().array();
    x = t.affine.cwiseMax(0.0);
    if (drop) {
      t.dropout_scale.resize(x.rows(), x.cols());
      for (Index i = 0; i < x.size(); ++i) {
        t.dropout_scale.data()[i] = rng.bernoulli(head.dropout) ? 0.0 : keep_scale;
      }
      x = x.cwiseProduct(t.dropout_scale);
    }
    result.tape.blocks.push_back(std::move(t));
  }
  result.tape.output_input = x;
  result.output = x * head.output.weight.transpose();
  result.output.rowwise() += head.output.bias.transpose();
  return result;
}

std::vector<double> sinusoidal_encode(double x) {
  if (!std::isfinite(x)) throw Error(ErrorCode::non_finite, "collision energy encoding input");
  std::vector<double> v(kMetaDim);
  for (Index i = 0; i < kMetaDim / 2; ++i) {
    const double freq = std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(kMetaDim));
    v[2 * i] = std::sin(x / freq);
    v[2 * i + 1] = std::cos(x / freq);
  }
  return v;
}

Vector encode_metadata(const RecordMeta& meta, const MetadataEncoder& enc) {
  Vector out(2 * kMetaDim);
  if (auto slot = enc.adduct_slot(meta.adduct)) {
    out.head(kMetaDim) = enc.adduct_table.row(static_cast<Index>(*slot)).transpose();
  } else {
    out.head(kMetaDim) = enc.adduct_unknown;
  }
  if (meta.collision_energy) {
    auto ce = sinusoidal_encode(enc.normalize_energy(*meta.collision_energy));
    out.tail(kMetaDim) = Eigen::Map<const Vector>(ce.data(), kMetaDim);
  } else {
    out.tail(kMetaDim) = enc.ce_unknown;
  }
  return out;
}

Matrix gather_rows(const EmbeddingMatrix& m, std::span<const std::size_t> rows) {
  Matrix out(static_cast<Index>(rows.size()), static_cast<Index>(m.dim()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= m.rows()) throw Error(ErrorCode::index_out_of_range, "row " + std::to_string(rows[i]));
    auto src = m.row(rows[i]);
    for (std::size_t c = 0; c < src.size(); ++c) out(static_cast<Index>(i), static_cast<Index>(c)) = src[c];
  }
  return out;
}

Matrix gather_rows(const EmbeddingMatrix& m, std::span<const std::uint32_t> rows) {
  std::vector<std::size_t> wide(rows.begin(), rows.end());
  return gather_rows(m, std::span<const std::size_t>(wide));
}

Matrix l2_normalize_rows(const Matrix& z, Vector* norms, double min_norm) {
  Vector n = z.rowwise().norm();
  for (Index r = 0; r < n.size(); ++r) {
    if (!(n[r] >= min_norm)) {
      throw Error(ErrorCode::degenerate_embedding, "row " + std::to_string(r) + " has norm " + std::to_string(n[r]));
    }
  }
  Matrix out = z.array().colwise() / n.array();
  if (norms) *norms = std::move(n);
  return out;
}

Matrix spectrum_inputs(const AlignmentModel& model, const PairedDataset& ds, std::span<const std::size_t> records) {
  if (static_cast<Index>(ds.spectra.dim()) != model.config.ms_in_dim) {
    throw Error(ErrorCode::shape_mismatch, "spectrum dim " + std::to_string(ds.spectra.dim()) +
                                               " != model ms_in_dim " + std::to_string(model.config.ms_in_dim));
  }
  Matrix frozen = gather_rows(ds.spectra, records);
  if (!model.config.metadata_enabled || model.config.tower == Tower::molecule_only) return frozen;
  Matrix x(frozen.rows(), frozen.cols() + 2 * kMetaDim);
  x.leftCols(frozen.cols()) = frozen;
  for (std::size_t i = 0; i < records.size(); ++i) {
    x.row(static_cast<Index>(i)).tail(2 * kMetaDim) = encode_metadata(ds.meta[records[i]], model.meta).transpose();
  }
  return x;
}

Matrix embed_spectrum(const AlignmentModel& model, const PairedDataset& ds, std::span<const std::size_t> records,
                      Mode mode, Rng& rng, TowerTape* tape) {
  for (auto r : records) {
    if (r >= ds.size()) throw Error(ErrorCode::index_out_of_range, "record " + std::to_string(r));
  }
  Matrix x = spectrum_inputs(model, ds, records);
  if (model.config.tower == Tower::molecule_only) return l2_normalize_rows(x);

  HeadOutput fwd = head_forward(model.head_ms, x, mode, rng);
  Vector norms;
  Matrix out = l2_normalize_rows(fwd.output, &norms);
  if (tape) {
    tape->with_metadata = model.config.metadata_enabled;
    tape->frozen_dim = model.config.ms_in_dim;
    tape->adduct_slots.clear();
    tape->ce_missing.clear();
    for (auto r : records) {
      tape->adduct_slots.push_back(model.meta.adduct_slot(ds.meta[r].adduct));
      tape->ce_missing.push_back(!ds.meta[r].collision_energy.has_value());
    }
    tape->raw = std::move(fwd.output);
    tape->norms = std::move(norms);
    tape->head = std::move(fwd.tape);
  }
  return out;
}

Matrix embed_molecule(const AlignmentModel& model, const Matrix& molecule_rows, Mode mode, Rng& rng,
                      TowerTape* tape) {
  if (model.config.tower == Tower::spectrum_only) return l2_normalize_rows(molecule_rows);
  HeadOutput fwd = head_forward(model.head_mol, molecule_rows, mode, rng);
  Vector norms;
  Matrix out = l2_normalize_rows(fwd.output, &norms);
  if (tape) {
    tape->with_metadata = false;
    tape->frozen_dim = molecule_rows.cols();
    tape->raw = std::move(fwd.output);
    tape->norms = std::move(norms);
    tape->head = std::move(fwd.tape);
  }
  return out;
}

Matrix cosine_scores(const Matrix& spectra, const Matrix& molecules) {
  if (spectra.cols() != molecules.cols()) {
    throw Error(ErrorCode::shape_mismatch, "score operands have dims " + std::to_string(spectra.cols()) +
                                               " and " + std::to_string(molecules.cols()));
  }
  return spectra * molecules.transpose();
}

}  // namespace specalign

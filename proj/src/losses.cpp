#include <cmath>

#include "specalign/errors.hpp"
#include "specalign/train.hpp"

namespace specalign {

namespace {

void require_temperature(double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw Error(ErrorCode::non_finite, "temperature must be positive and finite");
  }
}

}  // namespace

RegressionLoss loss_regression(const Matrix& pred, const Matrix& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw Error(ErrorCode::shape_mismatch, "prediction and target shapes differ");
  }
  if (pred.rows() == 0) throw Error(ErrorCode::empty_input, "empty regression batch");
  const double inv_b = 1.0 / static_cast<double>(pred.rows());
  RegressionLoss out;
  out.grad_pred.resize(pred.rows(), pred.cols());
  for (Index i = 0; i < pred.rows(); ++i) {
    const double tn = target.row(i).norm();
    if (tn < 1e-12) throw Error(ErrorCode::zero_norm_target, "target row " + std::to_string(i));
    const double pn = pred.row(i).norm();
    if (pn < 1e-12) throw Error(ErrorCode::degenerate_embedding, "prediction row " + std::to_string(i));
    const double cos = pred.row(i).dot(target.row(i)) / (pn * tn);
    out.loss -= cos * inv_b;
    // d cos / d p = t / (|p||t|) - cos * p / |p|^2
    out.grad_pred.row(i) = -inv_b * (target.row(i) / (pn * tn) - cos * pred.row(i) / (pn * pn));
  }
  return out;
}

ContrastiveLoss loss_inbatch(const Matrix& spectra, const Matrix& molecules, double temperature) {
  if (spectra.rows() != molecules.rows() || spectra.cols() != molecules.cols()) {
    throw Error(ErrorCode::shape_mismatch, "in-batch loss needs matched spectrum/molecule batches");
  }
  if (spectra.rows() == 0) throw Error(ErrorCode::empty_input, "empty batch");
  require_temperature(temperature);
  const Index b = spectra.rows();
  const double inv_b = 1.0 / static_cast<double>(b);

  Matrix logits = spectra * molecules.transpose() / temperature;
  Matrix d_logits(b, b);
  ContrastiveLoss out;
  for (Index i = 0; i < b; ++i) {
    const double mx = logits.row(i).maxCoeff();
    const auto shifted = (logits.row(i).array() - mx).exp();
    const double denom = shifted.sum();
    out.loss += (std::log(denom) + mx - logits(i, i)) * inv_b;
    d_logits.row(i) = shifted / denom * inv_b;
    d_logits(i, i) -= inv_b;
  }
  out.grad_spectra = d_logits * molecules / temperature;
  out.grad_molecules = d_logits.transpose() * spectra / temperature;
  // logits = scores * exp(-log_temperature)  =>  d logits / d log_temperature = -logits
  out.grad_log_temperature = -(d_logits.array() * logits.array()).sum();
  return out;
}

ContrastiveLoss loss_candidate(const Matrix& spectra, const CandidateBlocks& blocks, double temperature) {
  const std::size_t b = blocks.blocks();
  if (static_cast<std::size_t>(spectra.rows()) != b || blocks.offsets.size() != b + 1) {
    throw Error(ErrorCode::shape_mismatch, "candidate blocks do not match spectrum batch");
  }
  if (b == 0) throw Error(ErrorCode::empty_input, "empty batch");
  if (blocks.offsets.back() != static_cast<std::size_t>(blocks.embeddings.rows()) ||
      blocks.embeddings.cols() != spectra.cols()) {
    throw Error(ErrorCode::shape_mismatch, "candidate embedding matrix does not match block offsets");
  }
  require_temperature(temperature);
  const double inv_b = 1.0 / static_cast<double>(b);

  ContrastiveLoss out;
  out.grad_spectra = Matrix::Zero(spectra.rows(), spectra.cols());
  out.grad_molecules = Matrix::Zero(blocks.embeddings.rows(), blocks.embeddings.cols());
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t begin = blocks.offsets[i];
    const std::size_t size = blocks.block_size(i);
    if (blocks.offsets[i + 1] < begin || blocks.positive_slot[i] >= size) {
      throw Error(ErrorCode::missing_positive_in_block, "block " + std::to_string(i));
    }
    const auto cand = blocks.embeddings.middleRows(static_cast<Index>(begin), static_cast<Index>(size));
    const Index row = static_cast<Index>(i);
    Vector z = cand * spectra.row(row).transpose() / temperature;
    const double mx = z.maxCoeff();
    Vector p = (z.array() - mx).exp();
    const double denom = p.sum();
    p /= denom;
    const Index pos = static_cast<Index>(blocks.positive_slot[i]);
    out.loss += (std::log(denom) + mx - z[pos]) * inv_b;

    Vector dz = p * inv_b;
    dz[pos] -= inv_b;
    out.grad_spectra.row(row) = dz.transpose() * cand / temperature;
    out.grad_molecules.middleRows(static_cast<Index>(begin), static_cast<Index>(size)) =
        dz * spectra.row(row) / temperature;
    out.grad_log_temperature -= dz.dot(z);
  }
  return out;
}

}  // namespace specalign

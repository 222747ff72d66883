#include "specalign/errors.hpp"
#include "specalign/train.hpp"

namespace specalign {

namespace {

// s = z / |z|  =>  dz = (ds - s (s . ds)) / |z|
Matrix normalize_backward(const Matrix& raw, const Vector& norms, const Matrix& d_unit) {
  Matrix unit = raw.array().colwise() / norms.array();
  Vector proj = (unit.array() * d_unit.array()).rowwise().sum();
  Matrix d = d_unit - (unit.array().colwise() * proj.array()).matrix();
  return d.array().colwise() / norms.array();
}

void tower_backward(const ProjectionHead& head, const TowerTape& tape, const Matrix& d_unit, ProjectionHead& head_grads,
                    GradientSet* meta_grads) {
  if (d_unit.rows() != tape.raw.rows() || d_unit.cols() != tape.raw.cols()) {
    throw Error(ErrorCode::tape_mismatch, "upstream gradient is " + std::to_string(d_unit.rows()) + "x" +
                                              std::to_string(d_unit.cols()) + ", tape holds " +
                                              std::to_string(tape.raw.rows()) + "x" + std::to_string(tape.raw.cols()));
  }
  Matrix d_raw = normalize_backward(tape.raw, tape.norms, d_unit);
  Matrix d_input = head_backward(head, tape.head, d_raw, head_grads);
  if (!tape.with_metadata || meta_grads == nullptr) return;
  if (d_input.cols() != tape.frozen_dim + 2 * kMetaDim ||
      tape.adduct_slots.size() != static_cast<std::size_t>(d_input.rows())) {
    throw Error(ErrorCode::tape_mismatch, "metadata layout does not match tape");
  }
  for (Index r = 0; r < d_input.rows(); ++r) {
    const auto adduct = d_input.row(r).segment(tape.frozen_dim, kMetaDim);
    if (const auto slot = tape.adduct_slots[static_cast<std::size_t>(r)]) {
      meta_grads->adduct_table.row(static_cast<Index>(*slot)) += adduct;
    } else {
      meta_grads->adduct_unknown += adduct.transpose();
    }
    if (tape.ce_missing[static_cast<std::size_t>(r)]) {
      meta_grads->ce_unknown += d_input.row(r).segment(tape.frozen_dim + kMetaDim, kMetaDim).transpose();
    }
  }
}

}  // namespace

Matrix head_backward(const ProjectionHead& head, const HeadTape& tape, const Matrix& d_output, ProjectionHead& grads) {
  if (tape.blocks.size() != head.blocks.size() || grads.blocks.size() != head.blocks.size()) {
    throw Error(ErrorCode::tape_mismatch, "block count differs between head and tape");
  }
  if (d_output.cols() != head.out_dim() || d_output.rows() != tape.output_input.rows()) {
    throw Error(ErrorCode::tape_mismatch, "output gradient shape does not match tape");
  }
  grads.output.weight.noalias() += d_output.transpose() * tape.output_input;
  grads.output.bias += d_output.colwise().sum().transpose();
  Matrix dx = d_output * head.output.weight;

  for (std::size_t k = head.blocks.size(); k-- > 0;) {
    const auto& block = head.blocks[k];
    const auto& t = tape.blocks[k];
    auto& g = grads.blocks[k];
    if (t.dropout_scale.size() > 0) dx = dx.cwiseProduct(t.dropout_scale);
    dx = (t.affine.array() > 0.0).select(dx, 0.0);

    g.norm.gamma += (dx.array() * t.xhat.array()).colwise().sum().transpose().matrix();
    g.norm.beta += dx.colwise().sum().transpose();
    Matrix dxhat = dx.array().rowwise() * block.norm.gamma.transpose().array();

    const double width = static_cast<double>(dxhat.cols());
    Vector sum_d = dxhat.rowwise().sum();
    Vector sum_dx = (dxhat.array() * t.xhat.array()).rowwise().sum();
    Matrix dh(dxhat.rows(), dxhat.cols());
    for (Index r = 0; r < dh.rows(); ++r) {
      dh.row(r) = (t.inv_std[r] / width) *
                  (width * dxhat.row(r).array() - sum_d[r] - t.xhat.row(r).array() * sum_dx[r]).matrix();
    }
    g.linear.weight.noalias() += dh.transpose() * t.input;
    g.linear.bias += dh.colwise().sum().transpose();
    dx = dh * block.linear.weight;
  }
  return dx;
}

GradientSet backward(const AlignmentModel& model, const ModelTape& tape, const UpstreamGrad& upstream) {
  GradientSet grads = zero_gradients(model);
  if (upstream.d_spectrum.size() > 0) {
    if (!tape.spectrum) throw Error(ErrorCode::tape_mismatch, "spectrum gradient without spectrum tape");
    tower_backward(model.head_ms, *tape.spectrum, upstream.d_spectrum, grads.head_ms, &grads);
  }
  if (upstream.d_molecule.size() > 0) {
    if (!tape.molecule) throw Error(ErrorCode::tape_mismatch, "molecule gradient without molecule tape");
    tower_backward(model.head_mol, *tape.molecule, upstream.d_molecule, grads.head_mol, nullptr);
  }
  grads.log_temperature = upstream.d_log_temperature;
  return grads;
}

}  // namespace specalign

#include "prccf/nn/ops.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "prccf/errors.hpp"

namespace prccf::nn {
namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ContractViolation(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                            std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                            std::to_string(b.cols()));
}

using detail::Node;

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) throw ContractViolation("matmul: inner dimension mismatch");
  auto pa = a.node(), pb = b.node();
  return Tensor::make(a.value() * b.value(), {a, b}, [pa, pb](Node& out) {
    if (pa->requires_grad) pa->accumulate(out.grad * pb->value.transpose());
    if (pb->requires_grad) pb->accumulate(pa->value.transpose() * out.grad);
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) throw ContractViolation("matmul_nt: hidden size mismatch");
  auto pa = a.node(), pb = b.node();
  return Tensor::make(a.value() * b.value().transpose(), {a, b}, [pa, pb](Node& out) {
    if (pa->requires_grad) pa->accumulate(out.grad * pb->value);
    if (pb->requires_grad) pb->accumulate(out.grad.transpose() * pa->value);
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto pa = a.node(), pb = b.node();
  return Tensor::make(a.value() + b.value(), {a, b}, [pa, pb](Node& out) {
    pa->accumulate(out.grad);
    pb->accumulate(out.grad);
  });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw ContractViolation("add_row: bad row shape");
  auto pa = a.node(), pr = row.node();
  Matrix v = a.value().rowwise() + row.value().row(0);
  return Tensor::make(std::move(v), {a, row}, [pa, pr](Node& out) {
    pa->accumulate(out.grad);
    if (pr->requires_grad) pr->accumulate(out.grad.colwise().sum());
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  auto pa = a.node(), pb = b.node();
  return Tensor::make(a.value().cwiseProduct(b.value()), {a, b}, [pa, pb](Node& out) {
    if (pa->requires_grad) pa->accumulate(out.grad.cwiseProduct(pb->value));
    if (pb->requires_grad) pb->accumulate(out.grad.cwiseProduct(pa->value));
  });
}

Tensor scale(const Tensor& a, double factor) {
  auto pa = a.node();
  return Tensor::make(a.value() * factor, {a}, [pa, factor](Node& out) { pa->accumulate(out.grad * factor); });
}

Tensor sigmoid(const Tensor& a) {
  auto pa = a.node();
  Matrix y = a.value().unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  return Tensor::make(y, {a}, [pa](Node& out) {
    const Matrix& s = out.value;
    pa->accumulate(out.grad.cwiseProduct(s.cwiseProduct((1.0 - s.array()).matrix())));
  });
}

Tensor tanh(const Tensor& a) {
  auto pa = a.node();
  Matrix y = a.value().array().tanh().matrix();
  return Tensor::make(y, {a}, [pa](Node& out) {
    const Matrix& t = out.value;
    pa->accumulate(out.grad.cwiseProduct((1.0 - t.array().square()).matrix()));
  });
}

Tensor gelu(const Tensor& a) {
  constexpr double c = 0.7978845608028654;  // sqrt(2 / pi)
  constexpr double k = 0.044715;
  auto pa = a.node();
  Matrix y = a.value().unaryExpr([](double x) { return 0.5 * x * (1.0 + std::tanh(c * (x + k * x * x * x))); });
  return Tensor::make(y, {a}, [pa](Node& out) {
    Matrix d = pa->value.unaryExpr([](double x) {
      const double u = c * (x + k * x * x * x);
      const double t = std::tanh(u);
      return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * k * x * x);
    });
    pa->accumulate(out.grad.cwiseProduct(d));
  });
}

Tensor softmax_rows(const Tensor& a, const Matrix* mask) {
  Matrix logits = a.value();
  if (mask) {
    if (mask->rows() != logits.rows() || mask->cols() != logits.cols())
      throw ContractViolation("softmax_rows: mask shape mismatch");
    logits += *mask;
  }
  for (Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    logits.row(r) = (logits.row(r).array() - m).exp().matrix();
    logits.row(r) /= logits.row(r).sum();
  }
  auto pa = a.node();
  return Tensor::make(std::move(logits), {a}, [pa](Node& out) {
    const Matrix& y = out.value;
    Matrix gy = out.grad.cwiseProduct(y);
    Eigen::VectorXd dots = gy.rowwise().sum();
    Matrix dx = gy - (y.array().colwise() * dots.array()).matrix();
    pa->accumulate(dx);
  });
}

Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps) {
  const Index n = a.cols();
  if (gain.rows() != 1 || gain.cols() != n || bias.rows() != 1 || bias.cols() != n)
    throw ContractViolation("layer_norm: gain/bias shape mismatch");
  Matrix xhat(a.rows(), n);
  Eigen::VectorXd inv_std(a.rows());
  for (Index r = 0; r < a.rows(); ++r) {
    const double mean = a.value().row(r).mean();
    const double var = (a.value().row(r).array() - mean).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (a.value().row(r).array() - mean) * inv_std(r);
  }
  Matrix y = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
  y.rowwise() += bias.value().row(0);
  auto pa = a.node(), pg = gain.node(), pb = bias.node();
  return Tensor::make(std::move(y), {a, gain, bias}, [pa, pg, pb, xhat, inv_std](Node& out) {
    const Matrix& dy = out.grad;
    if (pg->requires_grad) pg->accumulate(dy.cwiseProduct(xhat).colwise().sum());
    if (pb->requires_grad) pb->accumulate(dy.colwise().sum());
    if (pa->requires_grad) {
      Matrix dxhat = (dy.array().rowwise() * pg->value.row(0).array()).matrix();
      Matrix dx(dy.rows(), dy.cols());
      for (Index r = 0; r < dy.rows(); ++r) {
        const double m1 = dxhat.row(r).mean();
        const double m2 = dxhat.row(r).cwiseProduct(xhat.row(r)).mean();
        dx.row(r) = (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2) * inv_std(r);
      }
      pa->accumulate(dx);
    }
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractViolation("concat_rows: no parts");
  Index rows = 0;
  const Index cols = parts[0].cols();
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ContractViolation("concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix v(rows, cols);
  std::vector<std::shared_ptr<Node>> nodes;
  Index at = 0;
  for (const auto& p : parts) {
    v.middleRows(at, p.rows()) = p.value();
    at += p.rows();
    nodes.push_back(p.node());
  }
  return Tensor::make(std::move(v), std::vector<Tensor>(parts.begin(), parts.end()), [nodes](Node& out) {
    Index at = 0;
    for (const auto& n : nodes) {
      const Index r = n->value.rows();
      if (n->requires_grad) n->accumulate(out.grad.middleRows(at, r));
      at += r;
    }
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractViolation("concat_cols: no parts");
  Index cols = 0;
  const Index rows = parts[0].rows();
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ContractViolation("concat_cols: row mismatch");
    cols += p.cols();
  }
  Matrix v(rows, cols);
  std::vector<std::shared_ptr<Node>> nodes;
  Index at = 0;
  for (const auto& p : parts) {
    v.middleCols(at, p.cols()) = p.value();
    at += p.cols();
    nodes.push_back(p.node());
  }
  return Tensor::make(std::move(v), std::vector<Tensor>(parts.begin(), parts.end()), [nodes](Node& out) {
    Index at = 0;
    for (const auto& n : nodes) {
      const Index c = n->value.cols();
      if (n->requires_grad) n->accumulate(out.grad.middleCols(at, c));
      at += c;
    }
  });
}

Tensor slice_rows(const Tensor& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) throw ContractViolation("slice_rows: out of range");
  auto pa = a.node();
  return Tensor::make(a.value().middleRows(start, count), {a}, [pa, start, count](Node& out) {
    Matrix g = Matrix::Zero(pa->value.rows(), pa->value.cols());
    g.middleRows(start, count) = out.grad;
    pa->accumulate(g);
  });
}

Tensor slice_cols(const Tensor& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw ContractViolation("slice_cols: out of range");
  auto pa = a.node();
  return Tensor::make(a.value().middleCols(start, count), {a}, [pa, start, count](Node& out) {
    Matrix g = Matrix::Zero(pa->value.rows(), pa->value.cols());
    g.middleCols(start, count) = out.grad;
    pa->accumulate(g);
  });
}

Tensor repeat_row(const Tensor& row, Index n) {
  if (row.rows() != 1) throw ContractViolation("repeat_row: input must be a single row");
  auto pr = row.node();
  Matrix v = row.value().replicate(n, 1);
  return Tensor::make(std::move(v), {row}, [pr](Node& out) { pr->accumulate(out.grad.colwise().sum()); });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  Matrix v(static_cast<Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows()) throw ContractViolation("embedding: id out of range");
    v.row(static_cast<Index>(i)) = table.value().row(ids[i]);
  }
  auto pt = table.node();
  std::vector<int> idx(ids.begin(), ids.end());
  return Tensor::make(std::move(v), {table}, [pt, idx](Node& out) {
    Matrix g = Matrix::Zero(pt->value.rows(), pt->value.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += out.grad.row(static_cast<Index>(i));
    pt->accumulate(g);
  });
}

Tensor weighted_sum(std::span<const Tensor> xs, const Tensor& weights) {
  if (xs.empty() || weights.rows() != 1 || weights.cols() != static_cast<Index>(xs.size()))
    throw ContractViolation("weighted_sum: need one weight per input");
  Matrix v = Matrix::Zero(xs[0].rows(), xs[0].cols());
  for (std::size_t k = 0; k < xs.size(); ++k) {
    require_same_shape(xs[0], xs[k], "weighted_sum");
    v += weights.value()(0, static_cast<Index>(k)) * xs[k].value();
  }
  std::vector<Tensor> parents(xs.begin(), xs.end());
  parents.push_back(weights);
  std::vector<std::shared_ptr<Node>> nodes;
  for (const auto& x : xs) nodes.push_back(x.node());
  auto pw = weights.node();
  return Tensor::make(std::move(v), std::move(parents), [nodes, pw](Node& out) {
    Matrix gw(1, static_cast<Index>(nodes.size()));
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      const auto kk = static_cast<Index>(k);
      if (nodes[k]->requires_grad) nodes[k]->accumulate(pw->value(0, kk) * out.grad);
      gw(0, kk) = out.grad.cwiseProduct(nodes[k]->value).sum();
    }
    pw->accumulate(gw);
  });
}

Tensor masked_softmax(const Tensor& w, std::span<const bool> active) {
  if (w.rows() != 1 || w.cols() != static_cast<Index>(active.size()))
    throw ContractViolation("masked_softmax: mask length mismatch");
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < active.size(); ++k)
    if (active[k]) m = std::max(m, w.value()(0, static_cast<Index>(k)));
  if (!std::isfinite(m)) throw ContractViolation("masked_softmax: no active entries");
  Matrix y = Matrix::Zero(1, w.cols());
  double z = 0.0;
  for (std::size_t k = 0; k < active.size(); ++k)
    if (active[k]) z += (y(0, static_cast<Index>(k)) = std::exp(w.value()(0, static_cast<Index>(k)) - m));
  y /= z;
  auto pw = w.node();
  return Tensor::make(std::move(y), {w}, [pw](Node& out) {
    const Matrix& s = out.value;
    const double dot = out.grad.cwiseProduct(s).sum();
    pw->accumulate(s.cwiseProduct((out.grad.array() - dot).matrix()));
  });
}

Tensor sum(const Tensor& a) {
  auto pa = a.node();
  Matrix v(1, 1);
  v(0, 0) = a.value().sum();
  return Tensor::make(std::move(v), {a}, [pa](Node& out) {
    pa->accumulate(Matrix::Constant(pa->value.rows(), pa->value.cols(), out.grad(0, 0)));
  });
}

Tensor nll_loss(const Tensor& logits, std::span<const int> targets) {
  if (logits.rows() != static_cast<Index>(targets.size()) || targets.empty())
    throw ContractViolation("nll_loss: one target per row required");
  const Index n = logits.rows();
  Matrix probs(logits.rows(), logits.cols());
  double total = 0.0;
  for (Index r = 0; r < n; ++r) {
    const auto t = targets[static_cast<std::size_t>(r)];
    if (t < 0 || t >= logits.cols()) throw ContractViolation("nll_loss: target out of range");
    const double m = logits.value().row(r).maxCoeff();
    probs.row(r) = (logits.value().row(r).array() - m).exp().matrix();
    const double z = probs.row(r).sum();
    probs.row(r) /= z;
    total += -(logits.value()(r, t) - m - std::log(z));
  }
  Matrix v(1, 1);
  v(0, 0) = total / static_cast<double>(n);
  auto pl = logits.node();
  std::vector<int> tg(targets.begin(), targets.end());
  return Tensor::make(std::move(v), {logits}, [pl, probs, tg, n](Node& out) {
    Matrix g = probs;
    for (Index r = 0; r < n; ++r) g(r, tg[static_cast<std::size_t>(r)]) -= 1.0;
    pl->accumulate(g * (out.grad(0, 0) / static_cast<double>(n)));
  });
}

std::vector<double> token_nll(const Matrix& logits, std::span<const int> targets) {
  std::vector<double> out;
  out.reserve(targets.size());
  for (Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    const double lse = m + std::log((logits.row(r).array() - m).exp().sum());
    out.push_back(lse - logits(r, targets[static_cast<std::size_t>(r)]));
  }
  return out;
}

Matrix additive_mask(const Eigen::Matrix<unsigned char, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& keep) {
  return keep.cast<double>().unaryExpr([](double k) { return k != 0.0 ? 0.0 : -1e9; });
}

Matrix causal_additive_mask(Index n) {
  Matrix m = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j) m(i, j) = -1e9;
  return m;
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace prccf::nn

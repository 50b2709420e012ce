#include "spontts/autodiff.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "spontts/errors.h"
#include "spontts/rng.h"

namespace spontts {
namespace ad {

namespace {

void Require(bool cond, const char* what) {
  if (!cond) throw std::invalid_argument(what);
}

double StableSigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double StableSoftplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace

// ---------------------------------------------------------------------------
// ParameterStore

Parameter* ParameterStore::Create(const std::string& name, Matrix init) {
  if (Find(name) != nullptr) {
    throw std::invalid_argument("duplicate parameter name: " + name);
  }
  params_.push_back(std::make_unique<Parameter>(name, std::move(init)));
  return params_.back().get();
}

Parameter* ParameterStore::CreateUniform(const std::string& name, int rows,
                                         int cols, Rng* rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix init(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) init(i, j) = rng->Uniform(-limit, limit);
  }
  return Create(name, std::move(init));
}

Parameter* ParameterStore::CreateHeUniform(const std::string& name, int rows,
                                           int cols, Rng* rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows));
  Matrix init(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) init(i, j) = rng->Uniform(-limit, limit);
  }
  return Create(name, std::move(init));
}

Parameter* ParameterStore::CreateZeros(const std::string& name, int rows,
                                       int cols) {
  return Create(name, Matrix::Zero(rows, cols));
}

Parameter* ParameterStore::Find(const std::string& name) const {
  for (const auto& p : params_) {
    if (p->name() == name) return p.get();
  }
  return nullptr;
}

std::vector<Parameter*> ParameterStore::WithPrefix(
    const std::string& prefix) const {
  std::vector<Parameter*> out;
  for (const auto& p : params_) {
    if (p->name().compare(0, prefix.size(), prefix) == 0) out.push_back(p.get());
  }
  return out;
}

void ParameterStore::ZeroGrad() {
  for (auto& p : params_) p->ZeroGrad();
}

// ---------------------------------------------------------------------------
// Tape

const Matrix& Var::value() const { return tape->value(id); }

Var Tape::Constant(Matrix value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::Param(Parameter* param) {
  auto it = param_nodes_.find(param);
  if (it != param_nodes_.end()) return Var{this, it->second};
  Node node;
  node.value = param->value;
  node.param = param;
  node.needs_grad = grad_enabled_;
  nodes_.push_back(std::move(node));
  const int id = static_cast<int>(nodes_.size()) - 1;
  param_nodes_.emplace(param, id);
  return Var{this, id};
}

bool Tape::AnyNeedsGrad(const Var* begin, const Var* end) const {
  for (const Var* v = begin; v != end; ++v) {
    if (v->tape != this) throw std::invalid_argument("variable from another tape");
    if (nodes_[v->id].needs_grad) return true;
  }
  return false;
}

Var Tape::Record(Matrix value, std::initializer_list<Var> inputs,
                 BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  node.needs_grad = AnyNeedsGrad(inputs.begin(), inputs.end());
  if (node.needs_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::Record(Matrix value, const std::vector<Var>& inputs,
                 BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  node.needs_grad =
      AnyNeedsGrad(inputs.data(), inputs.data() + inputs.size());
  if (node.needs_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Matrix& Tape::MutableGrad(int id) {
  Node& node = nodes_[id];
  if (node.grad.size() == 0) {
    node.grad = Matrix::Zero(node.value.rows(), node.value.cols());
  }
  return node.grad;
}

void Tape::AccumulateGrad(int id, const Matrix& g) {
  if (!nodes_[id].needs_grad) return;
  MutableGrad(id) += g;
}

void Tape::Backward(Var loss) {
  Require(loss.tape == this, "loss from another tape");
  Require(value(loss.id).size() == 1, "Backward needs a 1x1 loss");
  if (!nodes_[loss.id].needs_grad) return;
  MutableGrad(loss.id).setConstant(1.0);
  for (int id = loss.id; id >= 0; --id) {
    Node& node = nodes_[id];
    if (!node.needs_grad || node.grad.size() == 0) continue;
    if (node.param != nullptr) {
      node.param->grad += node.grad;
    } else if (node.backward) {
      node.backward(*this, node.grad);
    }
  }
}

// ---------------------------------------------------------------------------
// Elementwise and linear algebra

Var MatMul(Var a, Var b) {
  Require(a.cols() == b.rows(), "MatMul shape mismatch");
  Tape& t = *a.tape;
  return t.Record(a.value() * b.value(), {a, b},
                  [a, b](Tape& t, const Matrix& g) {
                    if (t.needs_grad(a.id))
                      t.MutableGrad(a.id).noalias() += g * t.value(b.id).transpose();
                    if (t.needs_grad(b.id))
                      t.MutableGrad(b.id).noalias() += t.value(a.id).transpose() * g;
                  });
}

Var MatMulNT(Var a, Var b) {
  Require(a.cols() == b.cols(), "MatMulNT shape mismatch");
  Tape& t = *a.tape;
  return t.Record(a.value() * b.value().transpose(), {a, b},
                  [a, b](Tape& t, const Matrix& g) {
                    if (t.needs_grad(a.id))
                      t.MutableGrad(a.id).noalias() += g * t.value(b.id);
                    if (t.needs_grad(b.id))
                      t.MutableGrad(b.id).noalias() += g.transpose() * t.value(a.id);
                  });
}

Var Add(Var a, Var b) {
  Require(a.rows() == b.rows() && a.cols() == b.cols(), "Add shape mismatch");
  Tape& t = *a.tape;
  return t.Record(a.value() + b.value(), {a, b},
                  [a, b](Tape& t, const Matrix& g) {
                    t.AccumulateGrad(a.id, g);
                    t.AccumulateGrad(b.id, g);
                  });
}

Var Sub(Var a, Var b) {
  Require(a.rows() == b.rows() && a.cols() == b.cols(), "Sub shape mismatch");
  Tape& t = *a.tape;
  return t.Record(a.value() - b.value(), {a, b},
                  [a, b](Tape& t, const Matrix& g) {
                    t.AccumulateGrad(a.id, g);
                    t.AccumulateGrad(b.id, -g);
                  });
}

Var Mul(Var a, Var b) {
  Require(a.rows() == b.rows() && a.cols() == b.cols(), "Mul shape mismatch");
  Tape& t = *a.tape;
  return t.Record(a.value().cwiseProduct(b.value()), {a, b},
                  [a, b](Tape& t, const Matrix& g) {
                    if (t.needs_grad(a.id))
                      t.MutableGrad(a.id) += g.cwiseProduct(t.value(b.id));
                    if (t.needs_grad(b.id))
                      t.MutableGrad(b.id) += g.cwiseProduct(t.value(a.id));
                  });
}

Var Scale(Var a, double s) {
  Tape& t = *a.tape;
  return t.Record(a.value() * s, {a}, [a, s](Tape& t, const Matrix& g) {
    t.AccumulateGrad(a.id, g * s);
  });
}

Var AddScalar(Var a, double s) {
  Tape& t = *a.tape;
  return t.Record(a.value().array() + s, {a},
                  [a](Tape& t, const Matrix& g) { t.AccumulateGrad(a.id, g); });
}

Var AddRow(Var a, Var row) {
  Require(row.rows() == 1 && row.cols() == a.cols(), "AddRow shape mismatch");
  Tape& t = *a.tape;
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  return t.Record(std::move(out), {a, row},
                  [a, row](Tape& t, const Matrix& g) {
                    t.AccumulateGrad(a.id, g);
                    if (t.needs_grad(row.id))
                      t.MutableGrad(row.id) += g.colwise().sum();
                  });
}

Var MulColumn(Var a, Var column) {
  Require(column.cols() == 1 && column.rows() == a.rows(),
          "MulColumn shape mismatch");
  Tape& t = *a.tape;
  Matrix out = a.value().array().colwise() * column.value().col(0).array();
  return t.Record(std::move(out), {a, column},
                  [a, column](Tape& t, const Matrix& g) {
                    if (t.needs_grad(a.id)) {
                      t.MutableGrad(a.id).array() +=
                          g.array().colwise() * t.value(column.id).col(0).array();
                    }
                    if (t.needs_grad(column.id)) {
                      t.MutableGrad(column.id) +=
                          g.cwiseProduct(t.value(a.id)).rowwise().sum();
                    }
                  });
}

Var Tanh(Var a) {
  Tape& t = *a.tape;
  Matrix out = a.value().array().tanh();
  return t.Record(out, {a}, [a, out](Tape& t, const Matrix& g) {
    t.AccumulateGrad(a.id, g.array() * (1.0 - out.array().square()));
  });
}

Var Sigmoid(Var a) {
  Tape& t = *a.tape;
  // exp(-x) overflows to inf for very negative x, which still yields 0.
  Matrix out = (1.0 + (-a.value().array()).exp()).inverse().matrix();
  return t.Record(out, {a}, [a, out](Tape& t, const Matrix& g) {
    t.AccumulateGrad(a.id, g.array() * out.array() * (1.0 - out.array()));
  });
}

Var Relu(Var a) {
  Tape& t = *a.tape;
  return t.Record(a.value().cwiseMax(0.0), {a}, [a](Tape& t, const Matrix& g) {
    t.AccumulateGrad(
        a.id, g.cwiseProduct((t.value(a.id).array() > 0.0).cast<double>().matrix()));
  });
}

Var Softplus(Var a) {
  Tape& t = *a.tape;
  return t.Record(a.value().unaryExpr(&StableSoftplus), {a},
                  [a](Tape& t, const Matrix& g) {
                    t.AccumulateGrad(
                        a.id, g.cwiseProduct(t.value(a.id).unaryExpr(&StableSigmoid)));
                  });
}

Var Exp(Var a) {
  Tape& t = *a.tape;
  Matrix out = a.value().array().exp();
  return t.Record(out, {a}, [a, out](Tape& t, const Matrix& g) {
    t.AccumulateGrad(a.id, g.cwiseProduct(out));
  });
}

Var Square(Var a) {
  Tape& t = *a.tape;
  return t.Record(a.value().array().square(), {a},
                  [a](Tape& t, const Matrix& g) {
                    t.AccumulateGrad(a.id, 2.0 * g.cwiseProduct(t.value(a.id)));
                  });
}

Var Transpose(Var a) {
  Tape& t = *a.tape;
  return t.Record(a.value().transpose(), {a}, [a](Tape& t, const Matrix& g) {
    t.AccumulateGrad(a.id, g.transpose());
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

Var ConcatCols(const std::vector<Var>& parts) {
  Require(!parts.empty(), "ConcatCols needs inputs");
  const int rows = parts[0].rows();
  int cols = 0;
  for (const Var& p : parts) {
    Require(p.rows() == rows, "ConcatCols row mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  int offset = 0;
  for (const Var& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
  }
  return parts[0].tape->Record(std::move(out), parts,
                               [parts](Tape& t, const Matrix& g) {
                                 int off = 0;
                                 for (const Var& p : parts) {
                                   const int c = p.cols();
                                   if (t.needs_grad(p.id))
                                     t.MutableGrad(p.id) += g.middleCols(off, c);
                                   off += c;
                                 }
                               });
}

Var ConcatRows(const std::vector<Var>& parts) {
  Require(!parts.empty(), "ConcatRows needs inputs");
  const int cols = parts[0].cols();
  int rows = 0;
  for (const Var& p : parts) {
    Require(p.cols() == cols, "ConcatRows column mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  int offset = 0;
  for (const Var& p : parts) {
    out.middleRows(offset, p.rows()) = p.value();
    offset += p.rows();
  }
  return parts[0].tape->Record(std::move(out), parts,
                               [parts](Tape& t, const Matrix& g) {
                                 int off = 0;
                                 for (const Var& p : parts) {
                                   const int r = p.rows();
                                   if (t.needs_grad(p.id))
                                     t.MutableGrad(p.id) += g.middleRows(off, r);
                                   off += r;
                                 }
                               });
}

Var SliceCols(Var a, int start, int count) {
  Require(start >= 0 && count >= 0 && start + count <= a.cols(),
          "SliceCols out of range");
  Tape& t = *a.tape;
  return t.Record(a.value().middleCols(start, count), {a},
                  [a, start, count](Tape& t, const Matrix& g) {
                    if (t.needs_grad(a.id))
                      t.MutableGrad(a.id).middleCols(start, count) += g;
                  });
}

Var SliceRows(Var a, int start, int count) {
  Require(start >= 0 && count >= 0 && start + count <= a.rows(),
          "SliceRows out of range");
  Tape& t = *a.tape;
  return t.Record(a.value().middleRows(start, count), {a},
                  [a, start, count](Tape& t, const Matrix& g) {
                    if (t.needs_grad(a.id))
                      t.MutableGrad(a.id).middleRows(start, count) += g;
                  });
}

Var GatherRows(Var table, const std::vector<int>& ids) {
  Tape& t = *table.tape;
  const Matrix& tv = table.value();
  Matrix out(static_cast<int>(ids.size()), tv.cols());
  for (size_t i = 0; i < ids.size(); ++i) {
    Require(ids[i] >= 0 && ids[i] < tv.rows(), "GatherRows index out of range");
    out.row(static_cast<int>(i)) = tv.row(ids[i]);
  }
  return t.Record(std::move(out), {table},
                  [table, ids](Tape& t, const Matrix& g) {
                    if (!t.needs_grad(table.id)) return;
                    Matrix& tg = t.MutableGrad(table.id);
                    for (size_t i = 0; i < ids.size(); ++i)
                      tg.row(ids[i]) += g.row(static_cast<int>(i));
                  });
}

Var SoftmaxRows(Var a) {
  Tape& t = *a.tape;
  Matrix out = a.value();
  for (int i = 0; i < out.rows(); ++i) {
    const double mx = out.row(i).maxCoeff();
    out.row(i) = (out.row(i).array() - mx).exp();
    out.row(i) /= out.row(i).sum();
  }
  return t.Record(out, {a}, [a, out](Tape& t, const Matrix& g) {
    Matrix ga(out.rows(), out.cols());
    for (int i = 0; i < out.rows(); ++i) {
      const double dot = g.row(i).dot(out.row(i));
      ga.row(i) = out.row(i).array() * (g.row(i).array() - dot);
    }
    t.AccumulateGrad(a.id, ga);
  });
}

// ---------------------------------------------------------------------------
// Reductions

Var Sum(Var a) {
  Tape& t = *a.tape;
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return t.Record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    if (t.needs_grad(a.id)) t.MutableGrad(a.id).array() += g(0, 0);
  });
}

Var Mean(Var a) {
  Require(a.value().size() > 0, "Mean of empty matrix");
  const double n = static_cast<double>(a.value().size());
  return Scale(Sum(a), 1.0 / n);
}

Var MeanRows(Var a) {
  Require(a.rows() > 0, "MeanRows of empty matrix");
  Tape& t = *a.tape;
  const double n = a.rows();
  return t.Record(a.value().colwise().mean(), {a},
                  [a, n](Tape& t, const Matrix& g) {
                    if (t.needs_grad(a.id))
                      t.MutableGrad(a.id).rowwise() += g.row(0) / n;
                  });
}

Var GradientReversal(Var a, double scale) {
  Tape& t = *a.tape;
  return t.Record(a.value(), {a}, [a, scale](Tape& t, const Matrix& g) {
    t.AccumulateGrad(a.id, -scale * g);
  });
}

Var StopGradient(Var a) { return a.tape->Constant(a.value()); }

// ---------------------------------------------------------------------------
// Losses

Var MseLoss(Var prediction, Var target) {
  Require(prediction.rows() == target.rows() &&
              prediction.cols() == target.cols(),
          "MseLoss shape mismatch");
  Require(prediction.value().size() > 0, "MseLoss of empty input");
  Tape& t = *prediction.tape;
  const Matrix diff = prediction.value() - target.value();
  const double n = static_cast<double>(diff.size());
  Matrix out(1, 1);
  out(0, 0) = diff.squaredNorm() / n;
  return t.Record(std::move(out), {prediction, target},
                  [prediction, target, diff, n](Tape& t, const Matrix& g) {
                    const Matrix d = (2.0 * g(0, 0) / n) * diff;
                    t.AccumulateGrad(prediction.id, d);
                    t.AccumulateGrad(target.id, -d);
                  });
}

Var CrossEntropy(Var logits, const std::vector<int>& labels,
                 const std::vector<double>& class_weights) {
  const int m = logits.rows();
  const int c = logits.cols();
  Require(static_cast<int>(labels.size()) == m, "CrossEntropy label count");
  Require(class_weights.empty() || static_cast<int>(class_weights.size()) == c,
          "CrossEntropy weight count");
  Tape& t = *logits.tape;
  Matrix probs = logits.value();
  double loss = 0.0;
  double total_weight = 0.0;
  for (int i = 0; i < m; ++i) {
    Require(labels[i] >= 0 && labels[i] < c, "CrossEntropy label out of range");
    const double mx = probs.row(i).maxCoeff();
    probs.row(i) = (probs.row(i).array() - mx).exp();
    const double z = probs.row(i).sum();
    probs.row(i) /= z;
    const double w = class_weights.empty() ? 1.0 : class_weights[labels[i]];
    const double logp = logits.value()(i, labels[i]) - mx - std::log(z);
    loss -= w * logp;
    total_weight += w;
  }
  Require(total_weight > 0.0, "CrossEntropy total weight must be positive");
  Matrix out(1, 1);
  out(0, 0) = loss / total_weight;
  return t.Record(
      std::move(out), {logits},
      [logits, labels, class_weights, probs, total_weight](Tape& t,
                                                          const Matrix& g) {
        Matrix d = probs;
        for (int i = 0; i < d.rows(); ++i) {
          const double w = class_weights.empty() ? 1.0 : class_weights[labels[i]];
          d(i, labels[i]) -= 1.0;
          d.row(i) *= w;
        }
        t.AccumulateGrad(logits.id, d * (g(0, 0) / total_weight));
      });
}

Var BinaryCrossEntropyWithLogits(Var logits, const Matrix& targets) {
  Require(logits.rows() == targets.rows() && logits.cols() == targets.cols(),
          "BCE shape mismatch");
  Tape& t = *logits.tape;
  const Matrix& x = logits.value();
  const double n = static_cast<double>(x.size());
  double loss = 0.0;
  for (int i = 0; i < x.rows(); ++i) {
    for (int j = 0; j < x.cols(); ++j) {
      const double v = x(i, j);
      loss += std::max(v, 0.0) - v * targets(i, j) +
              std::log1p(std::exp(-std::abs(v)));
    }
  }
  Matrix out(1, 1);
  out(0, 0) = loss / n;
  return t.Record(std::move(out), {logits},
                  [logits, targets, n](Tape& t, const Matrix& g) {
                    Matrix d = t.value(logits.id).unaryExpr(&StableSigmoid) - targets;
                    t.AccumulateGrad(logits.id, d * (g(0, 0) / n));
                  });
}

// ---------------------------------------------------------------------------
// Convolutions

Var Conv1d(Var x, Var weight, Var bias, int kernel) {
  const int steps = x.rows();
  const int cin = x.cols();
  Require(kernel >= 1, "Conv1d kernel must be positive");
  Require(weight.rows() == kernel * cin, "Conv1d weight rows");
  Require(bias.rows() == 1 && bias.cols() == weight.cols(), "Conv1d bias shape");
  const int left = kernel / 2;
  Matrix cols = Matrix::Zero(steps, kernel * cin);
  const Matrix& xv = x.value();
  for (int t = 0; t < steps; ++t) {
    for (int k = 0; k < kernel; ++k) {
      const int src = t - left + k;
      if (src >= 0 && src < steps) cols.block(t, k * cin, 1, cin) = xv.row(src);
    }
  }
  Matrix out = cols * weight.value();
  out.rowwise() += bias.value().row(0);
  Tape& tape = *x.tape;
  return tape.Record(
      std::move(out), {x, weight, bias},
      [x, weight, bias, cols, kernel, left, cin, steps](Tape& t, const Matrix& g) {
        if (t.needs_grad(weight.id))
          t.MutableGrad(weight.id).noalias() += cols.transpose() * g;
        if (t.needs_grad(bias.id)) t.MutableGrad(bias.id) += g.colwise().sum();
        if (t.needs_grad(x.id)) {
          const Matrix dcols = g * t.value(weight.id).transpose();
          Matrix& dx = t.MutableGrad(x.id);
          for (int s = 0; s < steps; ++s) {
            for (int k = 0; k < kernel; ++k) {
              const int src = s - left + k;
              if (src >= 0 && src < steps)
                dx.row(src) += dcols.block(s, k * cin, 1, cin);
            }
          }
        }
      });
}

Var MaxPool1dPair(Var x) {
  const Matrix& xv = x.value();
  Matrix out = xv;
  Eigen::MatrixXi from = Eigen::MatrixXi::Zero(xv.rows(), xv.cols());
  for (int t = 0; t < xv.rows(); ++t) {
    for (int c = 0; c < xv.cols(); ++c) {
      from(t, c) = t;
      if (t > 0 && xv(t - 1, c) > xv(t, c)) {
        out(t, c) = xv(t - 1, c);
        from(t, c) = t - 1;
      }
    }
  }
  return x.tape->Record(std::move(out), {x}, [x, from](Tape& t, const Matrix& g) {
    if (!t.needs_grad(x.id)) return;
    Matrix& dx = t.MutableGrad(x.id);
    for (int r = 0; r < g.rows(); ++r)
      for (int c = 0; c < g.cols(); ++c) dx(from(r, c), c) += g(r, c);
  });
}

Var Conv2dStride2(Var x, Var weight, Var bias, int in_channels, int freq) {
  const int steps = x.rows();
  Require(x.cols() == in_channels * freq, "Conv2d input layout");
  Require(weight.rows() == in_channels * 9, "Conv2d weight rows");
  const int cout = weight.cols();
  Require(bias.rows() == 1 && bias.cols() == cout, "Conv2d bias shape");
  const int out_steps = (steps + 1) / 2;
  const int out_freq = (freq + 1) / 2;
  const Matrix& xv = x.value();
  Matrix patches = Matrix::Zero(out_steps * out_freq, in_channels * 9);
  for (int to = 0; to < out_steps; ++to) {
    for (int fo = 0; fo < out_freq; ++fo) {
      const int row = to * out_freq + fo;
      for (int ci = 0; ci < in_channels; ++ci) {
        for (int dt = 0; dt < 3; ++dt) {
          const int ti = 2 * to + dt - 1;
          if (ti < 0 || ti >= steps) continue;
          for (int df = 0; df < 3; ++df) {
            const int fi = 2 * fo + df - 1;
            if (fi < 0 || fi >= freq) continue;
            patches(row, ci * 9 + dt * 3 + df) = xv(ti, ci * freq + fi);
          }
        }
      }
    }
  }
  Matrix flat = patches * weight.value();
  flat.rowwise() += bias.value().row(0);
  Matrix out(out_steps, cout * out_freq);
  for (int to = 0; to < out_steps; ++to)
    for (int fo = 0; fo < out_freq; ++fo)
      for (int co = 0; co < cout; ++co)
        out(to, co * out_freq + fo) = flat(to * out_freq + fo, co);
  return x.tape->Record(
      std::move(out), {x, weight, bias},
      [x, weight, bias, patches, in_channels, freq, steps, out_steps, out_freq,
       cout](Tape& t, const Matrix& g) {
        Matrix gflat(out_steps * out_freq, cout);
        for (int to = 0; to < out_steps; ++to)
          for (int fo = 0; fo < out_freq; ++fo)
            for (int co = 0; co < cout; ++co)
              gflat(to * out_freq + fo, co) = g(to, co * out_freq + fo);
        if (t.needs_grad(weight.id))
          t.MutableGrad(weight.id).noalias() += patches.transpose() * gflat;
        if (t.needs_grad(bias.id)) t.MutableGrad(bias.id) += gflat.colwise().sum();
        if (!t.needs_grad(x.id)) return;
        const Matrix dpatches = gflat * t.value(weight.id).transpose();
        Matrix& dx = t.MutableGrad(x.id);
        for (int to = 0; to < out_steps; ++to) {
          for (int fo = 0; fo < out_freq; ++fo) {
            const int row = to * out_freq + fo;
            for (int ci = 0; ci < in_channels; ++ci) {
              for (int dt = 0; dt < 3; ++dt) {
                const int ti = 2 * to + dt - 1;
                if (ti < 0 || ti >= steps) continue;
                for (int df = 0; df < 3; ++df) {
                  const int fi = 2 * fo + df - 1;
                  if (fi < 0 || fi >= freq) continue;
                  dx(ti, ci * freq + fi) += dpatches(row, ci * 9 + dt * 3 + df);
                }
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Attention

Var GaussianMixtureWeights(Var mixture, Var means, Var sigmas, int n,
                           double floor) {
  const int k = mixture.cols();
  Require(mixture.rows() == 1 && means.rows() == 1 && sigmas.rows() == 1 &&
              means.cols() == k && sigmas.cols() == k,
          "GaussianMixtureWeights expects [1 x K] inputs");
  Require(n >= 1, "GaussianMixtureWeights needs n >= 1");
  const RowVector w = mixture.value().row(0);
  const RowVector mu = means.value().row(0);
  const RowVector sigma = sigmas.value().row(0);
  if (!w.allFinite() || !mu.allFinite() || !sigma.allFinite()) {
    throw NumericalError("non-finite attention mixture parameters");
  }
  Matrix kernels(k, n);
  for (int c = 0; c < k; ++c) {
    Require(sigma(c) > 0.0, "GaussianMixtureWeights sigma must be positive");
    for (int j = 0; j < n; ++j) {
      const double z = (j - mu(c)) / sigma(c);
      kernels(c, j) = std::exp(-0.5 * z * z);
    }
  }
  RowVector raw = w * kernels;
  raw.array() += floor;
  const double total = raw.sum();
  Matrix out = raw / total;
  return mixture.tape->Record(
      out, {mixture, means, sigmas},
      [mixture, means, sigmas, w, mu, sigma, kernels, out, total, n, k](
          Tape& t, const Matrix& g) {
        const double dot = g.row(0).dot(out.row(0));
        const RowVector draw = (g.row(0).array() - dot) / total;
        Matrix dw(1, k), dmu(1, k), dsigma(1, k);
        for (int c = 0; c < k; ++c) {
          double sw = 0.0, smu = 0.0, ssig = 0.0;
          for (int j = 0; j < n; ++j) {
            const double diff = j - mu(c);
            const double base = draw(j) * kernels(c, j);
            sw += base;
            smu += base * w(c) * diff / (sigma(c) * sigma(c));
            ssig += base * w(c) * diff * diff / (sigma(c) * sigma(c) * sigma(c));
          }
          dw(0, c) = sw;
          dmu(0, c) = smu;
          dsigma(0, c) = ssig;
        }
        t.AccumulateGrad(mixture.id, dw);
        t.AccumulateGrad(means.id, dmu);
        t.AccumulateGrad(sigmas.id, dsigma);
      });
}

}  // namespace ad
}  // namespace spontts

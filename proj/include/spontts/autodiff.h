#ifndef SPONTTS_AUTODIFF_H_
#define SPONTTS_AUTODIFF_H_

// Minimal reverse-mode automatic differentiation over dense Eigen matrices.
//
// A Tape records every operation of one forward pass. Values are row-major in
// meaning: sequences are [time x features] and single vectors are [1 x n].
// Gradients are only tracked for nodes that (transitively) depend on a
// Parameter, so inference-only graphs cost no backward bookkeeping.

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace spontts {

class Rng;

namespace ad {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

class Parameter {
 public:
  Parameter(std::string name, Matrix value)
      : name_(std::move(name)),
        value(std::move(value)),
        grad(Matrix::Zero(this->value.rows(), this->value.cols())) {}

  const std::string& name() const { return name_; }
  void ZeroGrad() { grad.setZero(); }

 private:
  std::string name_;

 public:
  Matrix value;
  Matrix grad;
};

// Owns named parameters in creation order. Addresses are stable for the
// lifetime of the store.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;

  Parameter* Create(const std::string& name, Matrix init);
  // Glorot-uniform weights.
  Parameter* CreateUniform(const std::string& name, int rows, int cols,
                           Rng* rng);
  // Fan-in scaled uniform for weights feeding a ReLU; rows are the fan-in.
  Parameter* CreateHeUniform(const std::string& name, int rows, int cols, Rng* rng);
  Parameter* CreateZeros(const std::string& name, int rows, int cols);

  Parameter* Find(const std::string& name) const;
  std::vector<Parameter*> WithPrefix(const std::string& prefix) const;
  const std::vector<std::unique_ptr<Parameter>>& all() const { return params_; }
  size_t size() const { return params_.size(); }
  void ZeroGrad();

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

class Tape;

// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Matrix& value() const;
  int rows() const { return static_cast<int>(value().rows()); }
  int cols() const { return static_cast<int>(value().cols()); }
  double scalar() const { return value()(0, 0); }
  bool valid() const { return tape != nullptr; }
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Matrix&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var Constant(Matrix value);
  // Repeated calls for the same parameter return the same node.
  Var Param(Parameter* param);

  // With gradients disabled, parameters enter as constants and no backward
  // closures are kept. Must be set before the first Param call.
  void set_grad_enabled(bool enabled) { grad_enabled_ = enabled; }

  // Adds a node computed from `inputs`. `backward` receives the output
  // gradient and must accumulate into the inputs via AccumulateGrad.
  Var Record(Matrix value, std::initializer_list<Var> inputs,
             BackwardFn backward);
  Var Record(Matrix value, const std::vector<Var>& inputs, BackwardFn backward);

  // Back-propagates from a 1x1 node and adds parameter gradients into
  // Parameter::grad.
  void Backward(Var loss);

  const Matrix& value(int id) const { return nodes_[id].value; }
  const Matrix& grad(int id) const { return nodes_[id].grad; }
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }
  void AccumulateGrad(int id, const Matrix& g);
  Matrix& MutableGrad(int id);

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool needs_grad = false;
  };
  bool AnyNeedsGrad(const Var* begin, const Var* end) const;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int> param_nodes_;
  bool grad_enabled_ = true;
};

// Elementwise and linear algebra.
Var MatMul(Var a, Var b);
// a * b^T
Var MatMulNT(Var a, Var b);
Var Add(Var a, Var b);
Var Sub(Var a, Var b);
Var Mul(Var a, Var b);
Var Scale(Var a, double s);
Var AddScalar(Var a, double s);
// a [n x m] + row [1 x m] broadcast over rows.
Var AddRow(Var a, Var row);
// a [n x m] * column [n x 1] broadcast over columns.
Var MulColumn(Var a, Var column);
Var Tanh(Var a);
Var Sigmoid(Var a);
Var Relu(Var a);
Var Softplus(Var a);
Var Exp(Var a);
Var Square(Var a);
Var Transpose(Var a);

// Shape manipulation.
Var ConcatCols(const std::vector<Var>& parts);
Var ConcatRows(const std::vector<Var>& parts);
Var SliceCols(Var a, int start, int count);
Var SliceRows(Var a, int start, int count);
Var GatherRows(Var table, const std::vector<int>& ids);

// Row-wise softmax.
Var SoftmaxRows(Var a);

// Reductions to 1x1.
Var Sum(Var a);
Var Mean(Var a);
// Column means, [n x m] -> [1 x m].
Var MeanRows(Var a);

// Identity forward; backward multiplies the gradient by -scale.
Var GradientReversal(Var a, double scale);
// Identity forward; no gradient flows back.
Var StopGradient(Var a);

// Mean of squared differences over all entries.
Var MseLoss(Var prediction, Var target);
// Mean cross-entropy of row-wise logits against integer labels. Optional
// per-class weights produce a weighted mean (sum w_y * ce / sum w_y).
Var CrossEntropy(Var logits, const std::vector<int>& labels,
                 const std::vector<double>& class_weights = {});
// Mean binary cross-entropy of logits against {0,1} targets.
Var BinaryCrossEntropyWithLogits(Var logits, const Matrix& targets);

// Same-padded 1-D convolution over time. x: [T x Cin], weight:
// [(kernel * Cin) x Cout], bias: [1 x Cout]. For even kernels the extra tap
// is on the left.
Var Conv1d(Var x, Var weight, Var bias, int kernel);
// Max over a trailing window of two frames (stride 1, length preserved).
Var MaxPool1dPair(Var x);

// 3x3 2-D convolution with stride 2 on both axes and zero padding 1.
// x: [T x (Cin * F)] laid out channel-major inside each row; weight:
// [(Cin * 9) x Cout]; output [ceil(T/2) x (Cout * ceil(F/2))].
Var Conv2dStride2(Var x, Var weight, Var bias, int in_channels, int freq);

// Mixture-of-Gaussians alignment over positions 0..n-1:
//   a_j = sum_k w_k exp(-(j - mu_k)^2 / (2 sigma_k^2)),
// then a += floor and renormalised to sum to one. Inputs are [1 x K].
Var GaussianMixtureWeights(Var mixture, Var means, Var sigmas, int n,
                           double floor = 1e-8);

}  // namespace ad
}  // namespace spontts

#endif  // SPONTTS_AUTODIFF_H_

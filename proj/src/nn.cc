#include "spontts/nn.h"

#include <stdexcept>

#include "spontts/rng.h"

namespace spontts {
namespace nn {

using ad::Matrix;

Var Activate(Var x, Activation act) {
  switch (act) {
    case Activation::kRelu:
      return ad::Relu(x);
    case Activation::kTanh:
      return ad::Tanh(x);
    case Activation::kNone:
      break;
  }
  return x;
}

Linear::Linear(ParameterStore* store, const std::string& name, int in_dim,
               int out_dim, Rng* rng, bool use_bias)
    : in_dim_(in_dim), out_dim_(out_dim) {
  weight_ = store->CreateUniform(name + ".weight", in_dim, out_dim, rng);
  if (use_bias) bias_ = store->CreateZeros(name + ".bias", 1, out_dim);
}

Var Linear::Forward(Tape& tape, Var x) const {
  if (x.cols() != in_dim_) {
    throw std::invalid_argument("Linear " + weight_->name() + ": expected " +
                                std::to_string(in_dim_) + " input columns, got " +
                                std::to_string(x.cols()));
  }
  Var y = ad::MatMul(x, tape.Param(weight_));
  if (bias_ != nullptr) y = ad::AddRow(y, tape.Param(bias_));
  return y;
}

Mlp::Mlp(ParameterStore* store, const std::string& name,
         const std::vector<int>& dims, Activation hidden, Activation output,
         Rng* rng)
    : hidden_(hidden), output_(output) {
  if (dims.size() < 2) throw std::invalid_argument("Mlp needs >= 2 dims");
  for (size_t i = 0; i + 1 < dims.size(); ++i) {
    layers_.emplace_back(store, name + ".fc" + std::to_string(i), dims[i],
                         dims[i + 1], rng);
  }
}

Var Mlp::Forward(Tape& tape, Var x) const {
  for (size_t i = 0; i < layers_.size(); ++i) {
    x = layers_[i].Forward(tape, x);
    x = Activate(x, i + 1 == layers_.size() ? output_ : hidden_);
  }
  return x;
}

// ---------------------------------------------------------------------------

Gru::Gru(ParameterStore* store, const std::string& name, int in_dim,
         int hidden_dim, Rng* rng)
    : in_dim_(in_dim), hidden_dim_(hidden_dim) {
  input_weight_ =
      store->CreateUniform(name + ".w_input", in_dim, 3 * hidden_dim, rng);
  recurrent_weight_ =
      store->CreateUniform(name + ".w_recurrent", hidden_dim, 3 * hidden_dim, rng);
  bias_ = store->CreateZeros(name + ".bias", 1, 3 * hidden_dim);
}

Var Gru::Cell(Tape& /*tape*/, Var projected, Var h, Var recurrent) const {
  const int hd = hidden_dim_;
  Var hu = ad::MatMul(h, recurrent);
  Var z = ad::Sigmoid(
      ad::Add(ad::SliceCols(projected, 0, hd), ad::SliceCols(hu, 0, hd)));
  Var r = ad::Sigmoid(
      ad::Add(ad::SliceCols(projected, hd, hd), ad::SliceCols(hu, hd, hd)));
  Var n = ad::Tanh(ad::Add(ad::SliceCols(projected, 2 * hd, hd),
                           ad::Mul(r, ad::SliceCols(hu, 2 * hd, hd))));
  // h' = (1 - z) n + z h = n + z (h - n)
  return ad::Add(n, ad::Mul(z, ad::Sub(h, n)));
}

Var Gru::Forward(Tape& tape, Var x, bool reverse) const {
  const int steps = x.rows();
  Var projected =
      ad::AddRow(ad::MatMul(x, tape.Param(input_weight_)), tape.Param(bias_));
  Var recurrent = tape.Param(recurrent_weight_);
  Var h = tape.Constant(Matrix::Zero(1, hidden_dim_));
  std::vector<Var> states(steps);
  for (int i = 0; i < steps; ++i) {
    const int t = reverse ? steps - 1 - i : i;
    h = Cell(tape, ad::SliceRows(projected, t, 1), h, recurrent);
    states[t] = h;
  }
  return ad::ConcatRows(states);
}

Var Gru::Step(Tape& tape, Var x, Var h) const {
  Var projected =
      ad::AddRow(ad::MatMul(x, tape.Param(input_weight_)), tape.Param(bias_));
  return Cell(tape, projected, h, tape.Param(recurrent_weight_));
}

// ---------------------------------------------------------------------------

Lstm::Lstm(ParameterStore* store, const std::string& name, int in_dim,
           int hidden_dim, Rng* rng)
    : in_dim_(in_dim), hidden_dim_(hidden_dim) {
  input_weight_ =
      store->CreateUniform(name + ".w_input", in_dim, 4 * hidden_dim, rng);
  recurrent_weight_ =
      store->CreateUniform(name + ".w_recurrent", hidden_dim, 4 * hidden_dim, rng);
  Matrix bias = Matrix::Zero(1, 4 * hidden_dim);
  bias.middleCols(hidden_dim, hidden_dim).setOnes();  // forget gate
  bias_ = store->Create(name + ".bias", bias);
}

Var Lstm::Forward(Tape& tape, Var x, bool reverse) const {
  const int steps = x.rows();
  const int hd = hidden_dim_;
  Var projected =
      ad::AddRow(ad::MatMul(x, tape.Param(input_weight_)), tape.Param(bias_));
  Var recurrent = tape.Param(recurrent_weight_);
  Var h = tape.Constant(Matrix::Zero(1, hd));
  Var c = tape.Constant(Matrix::Zero(1, hd));
  std::vector<Var> states(steps);
  for (int i = 0; i < steps; ++i) {
    const int t = reverse ? steps - 1 - i : i;
    Var gates = ad::Add(ad::SliceRows(projected, t, 1), ad::MatMul(h, recurrent));
    Var in = ad::Sigmoid(ad::SliceCols(gates, 0, hd));
    Var forget = ad::Sigmoid(ad::SliceCols(gates, hd, hd));
    Var cand = ad::Tanh(ad::SliceCols(gates, 2 * hd, hd));
    Var out = ad::Sigmoid(ad::SliceCols(gates, 3 * hd, hd));
    c = ad::Add(ad::Mul(forget, c), ad::Mul(in, cand));
    h = ad::Mul(out, ad::Tanh(c));
    states[t] = h;
  }
  return ad::ConcatRows(states);
}

// ---------------------------------------------------------------------------

Highway::Highway(ParameterStore* store, const std::string& name, int dim,
                 Rng* rng)
    : transform_(store, name + ".transform", dim, dim, rng),
      gate_(store, name + ".gate", dim, dim, rng) {
  gate_.bias()->value.setConstant(-1.0);
}

Var Highway::Forward(Tape& tape, Var x) const {
  Var h = ad::Relu(transform_.Forward(tape, x));
  Var g = ad::Sigmoid(gate_.Forward(tape, x));
  return ad::Add(x, ad::Mul(g, ad::Sub(h, x)));
}

// ---------------------------------------------------------------------------

Cbhg::ConvLayer Cbhg::MakeConv(ParameterStore* store, const std::string& name,
                               int kernel, int in_dim, int out_dim, Rng* rng) {
  ConvLayer layer;
  layer.kernel = kernel;
  layer.weight = store->CreateUniform(name + ".weight", kernel * in_dim, out_dim, rng);
  layer.bias = store->CreateZeros(name + ".bias", 1, out_dim);
  return layer;
}

Var Cbhg::ApplyConv(Tape& tape, const ConvLayer& conv, Var x) const {
  return ad::Conv1d(x, tape.Param(conv.weight), tape.Param(conv.bias),
                    conv.kernel);
}

Cbhg::Cbhg(ParameterStore* store, const std::string& name,
           const CbhgConfig& cfg, Rng* rng)
    : cfg_(cfg) {
  input_proj_ = Linear(store, name + ".input_proj", cfg.in_dim, cfg.proj_dim, rng);
  for (int k = 1; k <= cfg.bank_kernels; ++k) {
    bank_.push_back(MakeConv(store, name + ".bank" + std::to_string(k), k,
                             cfg.proj_dim, cfg.bank_channels, rng));
  }
  const int bank_out = cfg.bank_kernels * cfg.bank_channels;
  proj1_ = MakeConv(store, name + ".proj1", 3, bank_out, cfg.proj_dim, rng);
  proj2_ = MakeConv(store, name + ".proj2", 3, cfg.proj_dim, cfg.proj_dim, rng);
  for (int i = 0; i < cfg.highway_layers; ++i) {
    highways_.emplace_back(store, name + ".highway" + std::to_string(i),
                           cfg.proj_dim, rng);
  }
  rnn_ = Bidirectional<Gru>(store, name + ".rnn", cfg.proj_dim, cfg.rnn_hidden,
                            rng);
}

Var Cbhg::Forward(Tape& tape, Var x) const {
  Var base = input_proj_.Forward(tape, x);
  std::vector<Var> bank_out;
  bank_out.reserve(bank_.size());
  for (const ConvLayer& conv : bank_) {
    bank_out.push_back(ad::Relu(ApplyConv(tape, conv, base)));
  }
  Var y = ad::MaxPool1dPair(ad::ConcatCols(bank_out));
  y = ad::Relu(ApplyConv(tape, proj1_, y));
  y = ApplyConv(tape, proj2_, y);
  y = ad::Add(y, base);
  for (const Highway& hw : highways_) y = hw.Forward(tape, y);
  return rnn_.Forward(tape, y);
}

}  // namespace nn
}  // namespace spontts

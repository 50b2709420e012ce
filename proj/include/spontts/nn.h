#ifndef SPONTTS_NN_H_
#define SPONTTS_NN_H_

#include <string>
#include <vector>

#include "spontts/autodiff.h"

namespace spontts {

class Rng;

namespace nn {

using ad::Parameter;
using ad::ParameterStore;
using ad::Tape;
using ad::Var;

enum class Activation { kNone, kRelu, kTanh };

Var Activate(Var x, Activation act);

// y = x W + b, x: [n x in].
class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore* store, const std::string& name, int in_dim,
         int out_dim, Rng* rng, bool use_bias = true);

  Var Forward(Tape& tape, Var x) const;
  int in_dim() const { return in_dim_; }
  int out_dim() const { return out_dim_; }
  Parameter* weight() const { return weight_; }
  Parameter* bias() const { return bias_; }

 private:
  int in_dim_ = 0;
  int out_dim_ = 0;
  Parameter* weight_ = nullptr;
  Parameter* bias_ = nullptr;
};

// Stack of Linear layers; `hidden` is applied after every layer except the
// last, `output` after the last.
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParameterStore* store, const std::string& name,
      const std::vector<int>& dims, Activation hidden, Activation output,
      Rng* rng);

  Var Forward(Tape& tape, Var x) const;
  const std::vector<Linear>& layers() const { return layers_; }

 private:
  std::vector<Linear> layers_;
  Activation hidden_ = Activation::kRelu;
  Activation output_ = Activation::kNone;
};

class Gru {
 public:
  Gru() = default;
  Gru(ParameterStore* store, const std::string& name, int in_dim,
      int hidden_dim, Rng* rng);

  // x [T x in] -> hidden states [T x H], starting from zeros.
  Var Forward(Tape& tape, Var x, bool reverse = false) const;
  // One step from an input row [1 x in].
  Var Step(Tape& tape, Var x, Var h) const;
  int hidden_dim() const { return hidden_dim_; }

 private:
  Var Cell(Tape& tape, Var projected, Var h, Var recurrent) const;

  int in_dim_ = 0;
  int hidden_dim_ = 0;
  Parameter* input_weight_ = nullptr;
  Parameter* recurrent_weight_ = nullptr;
  Parameter* bias_ = nullptr;
};

class Lstm {
 public:
  Lstm() = default;
  Lstm(ParameterStore* store, const std::string& name, int in_dim,
       int hidden_dim, Rng* rng);

  Var Forward(Tape& tape, Var x, bool reverse = false) const;
  int hidden_dim() const { return hidden_dim_; }

 private:
  int in_dim_ = 0;
  int hidden_dim_ = 0;
  Parameter* input_weight_ = nullptr;
  Parameter* recurrent_weight_ = nullptr;
  Parameter* bias_ = nullptr;
};

// Runs a cell forwards and backwards and concatenates the states per frame.
template <typename Cell>
class Bidirectional {
 public:
  Bidirectional() = default;
  Bidirectional(ParameterStore* store, const std::string& name, int in_dim,
                int hidden_dim, Rng* rng)
      : forward_(store, name + ".fw", in_dim, hidden_dim, rng),
        backward_(store, name + ".bw", in_dim, hidden_dim, rng) {}

  Var Forward(Tape& tape, Var x) const {
    return ad::ConcatCols(
        {forward_.Forward(tape, x, false), backward_.Forward(tape, x, true)});
  }
  int out_dim() const { return 2 * forward_.hidden_dim(); }

 private:
  Cell forward_;
  Cell backward_;
};

class Highway {
 public:
  Highway() = default;
  Highway(ParameterStore* store, const std::string& name, int dim, Rng* rng);
  Var Forward(Tape& tape, Var x) const;

 private:
  Linear transform_;
  Linear gate_;
};

struct CbhgConfig {
  int in_dim = 0;
  int bank_kernels = 4;   // kernel widths 1..bank_kernels
  int bank_channels = 16;
  int proj_dim = 64;
  int highway_layers = 2;
  int rnn_hidden = 32;    // per direction
};

// Convolution bank, max-pool, projections with a residual, highway stack and
// a bidirectional GRU. Output [N x 2 * rnn_hidden].
class Cbhg {
 public:
  Cbhg() = default;
  Cbhg(ParameterStore* store, const std::string& name, const CbhgConfig& cfg,
       Rng* rng);

  Var Forward(Tape& tape, Var x) const;
  int out_dim() const { return 2 * cfg_.rnn_hidden; }

 private:
  struct ConvLayer {
    int kernel = 1;
    Parameter* weight = nullptr;
    Parameter* bias = nullptr;
  };
  ConvLayer MakeConv(ParameterStore* store, const std::string& name, int kernel,
                     int in_dim, int out_dim, Rng* rng);
  Var ApplyConv(Tape& tape, const ConvLayer& conv, Var x) const;

  CbhgConfig cfg_;
  Linear input_proj_;
  std::vector<ConvLayer> bank_;
  ConvLayer proj1_;
  ConvLayer proj2_;
  std::vector<Highway> highways_;
  Bidirectional<Gru> rnn_;
};

}  // namespace nn
}  // namespace spontts

#endif  // SPONTTS_NN_H_

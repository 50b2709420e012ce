#include "spontts/context.h"

#include <cmath>

#include "spontts/errors.h"
#include "spontts/rng.h"

namespace spontts {

using ad::Matrix;
using ad::Tape;
using ad::Var;

int ContextConfig::ConvOutputDim() const {
  int freq = mel_dim;
  for (size_t i = 0; i < conv_channels.size(); ++i) freq = (freq + 1) / 2;
  return conv_channels.empty() ? mel_dim : conv_channels.back() * freq;
}

nlohmann::json ContextConfig::ToJson() const {
  return {{"mel_dim", mel_dim},
          {"conv_channels", conv_channels},
          {"reference_dim", reference_dim},
          {"num_tokens", num_tokens},
          {"num_heads", num_heads},
          {"embed_dim", embed_dim},
          {"classifier_hidden", classifier_hidden},
          {"num_speakers", num_speakers},
          {"next_layers", next_layers},
          {"next_hidden", next_hidden}};
}

ContextConfig ContextConfig::FromJson(const nlohmann::json& j) {
  ContextConfig c;
  c.mel_dim = j.value("mel_dim", c.mel_dim);
  c.conv_channels = j.value("conv_channels", c.conv_channels);
  c.reference_dim = j.value("reference_dim", c.reference_dim);
  c.num_tokens = j.value("num_tokens", c.num_tokens);
  c.num_heads = j.value("num_heads", c.num_heads);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.classifier_hidden = j.value("classifier_hidden", c.classifier_hidden);
  c.num_speakers = j.value("num_speakers", c.num_speakers);
  c.next_layers = j.value("next_layers", c.next_layers);
  c.next_hidden = j.value("next_hidden", c.next_hidden);
  c.Validate();
  return c;
}

void ContextConfig::Validate() const {
  if (num_tokens != 10) throw ValidationError("the style token layer has 10 tokens");
  if (num_heads < 1 || embed_dim % num_heads != 0) {
    throw ValidationError("embed_dim must be divisible by num_heads");
  }
  if (next_layers < 1) throw ValidationError("next predictor needs at least one layer");
  if (mel_dim < 1 || reference_dim < 1 || num_speakers < 1 || classifier_hidden < 1 ||
      next_hidden < 1) {
    throw ValidationError("invalid context config");
  }
  for (int c : conv_channels) {
    if (c < 1) throw ValidationError("conv channel counts must be positive");
  }
}

ContextEncoder::ContextEncoder(const ContextConfig& cfg, ad::ParameterStore* store,
                               const std::string& prefix, Rng* rng)
    : cfg_(cfg), prefix_(prefix) {
  cfg_.Validate();
  int channels = 1;
  int freq = cfg.mel_dim;
  for (size_t i = 0; i < cfg.conv_channels.size(); ++i) {
    const std::string name = prefix + ".reference.conv" + std::to_string(i);
    Conv conv;
    conv.weight = store->CreateHeUniform(name + ".weight", channels * 9,
                                       cfg.conv_channels[i], rng);
    conv.bias = store->CreateZeros(name + ".bias", 1, cfg.conv_channels[i]);
    conv.in_channels = channels;
    conv.freq = freq;
    convs_.push_back(conv);
    channels = cfg.conv_channels[i];
    freq = (freq + 1) / 2;
  }
  rnn_ = nn::Gru(store, prefix + ".reference.gru", cfg.ConvOutputDim(),
                 cfg.reference_dim, rng);

  Matrix tokens(cfg.num_tokens, cfg.embed_dim);
  for (int i = 0; i < tokens.size(); ++i) tokens.data()[i] = 0.5 * rng->Normal();
  tokens_ = store->Create(prefix + ".gst.tokens", tokens);
  query_ = nn::Linear(store, prefix + ".gst.query", cfg.reference_dim, cfg.embed_dim, rng);
  key_ = nn::Linear(store, prefix + ".gst.key", cfg.embed_dim, cfg.embed_dim, rng);
  value_ = nn::Linear(store, prefix + ".gst.value", cfg.embed_dim, cfg.embed_dim, rng);
  output_ = nn::Linear(store, prefix + ".gst.output", cfg.embed_dim, cfg.embed_dim, rng);
  classifier_ = nn::Mlp(store, prefix + ".speaker_classifier",
                        {cfg.reference_dim, cfg.classifier_hidden,
                         cfg.classifier_hidden, cfg.num_speakers},
                        nn::Activation::kTanh, nn::Activation::kNone, rng);
}

Var ContextEncoder::Reference(Tape& tape, Var mel) const {
  if (mel.cols() != cfg_.mel_dim) {
    throw ValidationError("mel width " + std::to_string(mel.cols()) +
                          " != " + std::to_string(cfg_.mel_dim));
  }
  if (mel.rows() < 1) throw ValidationError("mel must have at least one frame");
  Var x = mel;
  for (const Conv& conv : convs_) {
    x = ad::Relu(ad::Conv2dStride2(x, tape.Param(conv.weight), tape.Param(conv.bias),
                                   conv.in_channels, conv.freq));
  }
  Var states = rnn_.Forward(tape, x);
  return ad::SliceRows(states, states.rows() - 1, 1);
}

StyleOutput ContextEncoder::Style(Tape& tape, Var reference,
                                  const Eigen::MatrixXd* forced_weights) const {
  if (reference.cols() != cfg_.reference_dim || reference.rows() != 1) {
    throw ValidationError("reference vector has the wrong shape");
  }
  const int heads = cfg_.num_heads;
  const int head_dim = cfg_.embed_dim / heads;
  Var tokens = ad::Tanh(tape.Param(tokens_));
  Var query = query_.Forward(tape, reference);
  Var keys = key_.Forward(tape, tokens);
  Var values = value_.Forward(tape, tokens);
  std::vector<Var> head_out;
  std::vector<Var> head_weights;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  for (int h = 0; h < heads; ++h) {
    Var w;
    if (forced_weights != nullptr) {
      if (forced_weights->cols() != cfg_.num_tokens ||
          (forced_weights->rows() != 1 && forced_weights->rows() != heads)) {
        throw ValidationError("forced style weights have the wrong shape");
      }
      w = tape.Constant(forced_weights->row(forced_weights->rows() == 1 ? 0 : h));
    } else {
      Var scores = ad::MatMulNT(ad::SliceCols(query, h * head_dim, head_dim),
                                ad::SliceCols(keys, h * head_dim, head_dim));
      w = ad::SoftmaxRows(ad::Scale(scores, scale));
    }
    head_weights.push_back(w);
    head_out.push_back(ad::MatMul(w, ad::SliceCols(values, h * head_dim, head_dim)));
  }
  StyleOutput out;
  out.weights = ad::ConcatRows(head_weights);
  out.embedding = output_.Forward(tape, ad::ConcatCols(head_out));
  return out;
}

Var ContextEncoder::Embed(Tape& tape, Var mel) const {
  return Style(tape, Reference(tape, mel)).embedding;
}

Var ContextEncoder::SpeakerLogits(Tape& tape, Var reference, double grl_scale,
                                  bool reverse) const {
  if (grl_scale < 0.0) throw ValidationError("GRL scale must be >= 0");
  Var input = reverse ? ad::GradientReversal(reference, grl_scale) : reference;
  return classifier_.Forward(tape, input);
}

void ContextEncoder::InitializeFromData(const std::vector<const Eigen::MatrixXd*>& mels) {
  if (mels.empty()) return;
  std::vector<Matrix> inputs;
  for (const Eigen::MatrixXd* m : mels) inputs.push_back(*m);
  for (const Conv& conv : convs_) {
    const int cout = static_cast<int>(conv.weight->value.cols());
    const int out_freq = (conv.freq + 1) / 2;
    Eigen::ArrayXd sum = Eigen::ArrayXd::Zero(cout);
    Eigen::ArrayXd sq = Eigen::ArrayXd::Zero(cout);
    double count = 0.0;
    std::vector<Matrix> pre;
    for (const Matrix& x : inputs) {
      Tape tape;
      Matrix y = ad::Conv2dStride2(tape.Constant(x), tape.Constant(conv.weight->value),
                                   tape.Constant(conv.bias->value), conv.in_channels,
                                   conv.freq)
                     .value();
      for (int c = 0; c < cout; ++c) {
        auto block = y.middleCols(c * out_freq, out_freq).array();
        sum(c) += block.sum();
        sq(c) += block.square().sum();
      }
      count += static_cast<double>(y.rows() * out_freq);
      pre.push_back(std::move(y));
    }
    Eigen::ArrayXd mean = sum / count;
    Eigen::ArrayXd std = (sq / count - mean.square()).max(1e-12).sqrt();
    for (int c = 0; c < cout; ++c) {
      conv.weight->value.col(c) /= std(c);
      conv.bias->value(0, c) = (conv.bias->value(0, c) - mean(c)) / std(c);
    }
    inputs.clear();
    for (Matrix& y : pre) {
      for (int c = 0; c < cout; ++c) {
        y.middleCols(c * out_freq, out_freq) =
            ((y.middleCols(c * out_freq, out_freq).array() - mean(c)) / std(c))
                .max(0.0)
                .matrix();
      }
      inputs.push_back(std::move(y));
    }
  }
}

Eigen::MatrixXd ContextEncoder::TokenOutput(int k) const {
  Tape tape;
  if (k < 0 || k >= cfg_.num_tokens) throw ValidationError("token index out of range");
  Var tokens = ad::Tanh(tape.Param(tokens_));
  Var values = value_.Forward(tape, ad::SliceRows(tokens, k, 1));
  return output_.Forward(tape, values).value();
}

Var SpeakerLoss(Var logits, int speaker_id) {
  if (speaker_id < 0 || speaker_id >= logits.cols()) {
    throw ValidationError("speaker id " + std::to_string(speaker_id) +
                          " out of range for " + std::to_string(logits.cols()) +
                          " speakers");
  }
  return ad::CrossEntropy(logits, {speaker_id});
}

NextPredictor::NextPredictor(const ContextConfig& cfg, ad::ParameterStore* store,
                             const std::string& prefix, Rng* rng)
    : dim_(cfg.embed_dim) {
  std::vector<int> dims = {cfg.embed_dim};
  for (int i = 0; i + 1 < cfg.next_layers; ++i) dims.push_back(cfg.next_hidden);
  dims.push_back(cfg.embed_dim);
  mlp_ = nn::Mlp(store, prefix, dims, nn::Activation::kTanh, nn::Activation::kNone, rng);
  mlp_.layers().back().weight()->value *= 0.1;
  skip_ = store->CreateZeros(prefix + ".skip", 1, cfg.embed_dim);
}

Var NextPredictor::Forward(Tape& tape, Var e_prev) const {
  if (e_prev.cols() != dim_ || e_prev.rows() != 1) {
    throw ValidationError("next predictor expects a [1 x " + std::to_string(dim_) +
                          "] embedding");
  }
  return ad::Add(ad::Mul(tape.Param(skip_), e_prev), mlp_.Forward(tape, e_prev));
}

void NextPredictor::SetIdentity() {
  const nn::Linear& last = mlp_.layers().back();
  last.weight()->value.setZero();
  if (last.bias() != nullptr) last.bias()->value.setZero();
  skip_->value.setOnes();
}

Var EmbeddingLoss(Var predicted, Var target) {
  if (predicted.rows() != target.rows() || predicted.cols() != target.cols()) {
    throw ValidationError("embedding loss length mismatch");
  }
  return ad::MseLoss(predicted, ad::StopGradient(target));
}

double EmbeddingLoss(const Eigen::RowVectorXd& predicted,
                     const Eigen::RowVectorXd& target) {
  if (predicted.size() != target.size()) {
    throw ValidationError("embedding loss length mismatch");
  }
  return (predicted - target).squaredNorm() / static_cast<double>(target.size());
}

}  // namespace spontts

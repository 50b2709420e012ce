#include "spontts/acoustic.h"

#include <cmath>

#include "spontts/errors.h"
#include "spontts/rng.h"

namespace spontts {

using ad::Matrix;
using ad::Tape;
using ad::Var;

nlohmann::json AcousticConfig::ToJson() const {
  return {{"num_phonemes", num_phonemes},
          {"num_tones", num_tones},
          {"phoneme_embed_dim", phoneme_embed_dim},
          {"tone_embed_dim", tone_embed_dim},
          {"text_dim", text_dim},
          {"semantic_in_dim", semantic_in_dim},
          {"semantic_dim", semantic_dim},
          {"num_speakers", num_speakers},
          {"speaker_dim", speaker_dim},
          {"context_dim", context_dim},
          {"mel_dim", mel_dim},
          {"reduction", reduction},
          {"prenet_dims", prenet_dims},
          {"prenet_dropout", prenet_dropout},
          {"attention_rnn_dim", attention_rnn_dim},
          {"decoder_rnn_dim", decoder_rnn_dim},
          {"gmm_components", gmm_components}};
}

AcousticConfig AcousticConfig::FromJson(const nlohmann::json& j) {
  AcousticConfig c;
  c.num_phonemes = j.value("num_phonemes", c.num_phonemes);
  c.num_tones = j.value("num_tones", c.num_tones);
  c.phoneme_embed_dim = j.value("phoneme_embed_dim", c.phoneme_embed_dim);
  c.tone_embed_dim = j.value("tone_embed_dim", c.tone_embed_dim);
  c.text_dim = j.value("text_dim", c.text_dim);
  c.semantic_in_dim = j.value("semantic_in_dim", c.semantic_in_dim);
  c.semantic_dim = j.value("semantic_dim", c.semantic_dim);
  c.num_speakers = j.value("num_speakers", c.num_speakers);
  c.speaker_dim = j.value("speaker_dim", c.speaker_dim);
  c.context_dim = j.value("context_dim", c.context_dim);
  c.mel_dim = j.value("mel_dim", c.mel_dim);
  c.reduction = j.value("reduction", c.reduction);
  c.prenet_dims = j.value("prenet_dims", c.prenet_dims);
  c.prenet_dropout = j.value("prenet_dropout", c.prenet_dropout);
  c.attention_rnn_dim = j.value("attention_rnn_dim", c.attention_rnn_dim);
  c.decoder_rnn_dim = j.value("decoder_rnn_dim", c.decoder_rnn_dim);
  c.gmm_components = j.value("gmm_components", c.gmm_components);
  c.Validate();
  return c;
}

void AcousticConfig::Validate() const {
  if (reduction < 1) throw ValidationError("reduction factor must be >= 1");
  if (text_dim % 2 != 0 || semantic_dim % 2 != 0) {
    throw ValidationError("encoder widths must be even (bidirectional halves)");
  }
  if (num_phonemes < 1 || num_tones < 1 || num_speakers < 1 || mel_dim < 1 ||
      gmm_components < 1 || prenet_dims.empty() || context_dim < 1 ||
      speaker_dim < 1 || semantic_in_dim < 1) {
    throw ValidationError("invalid acoustic config");
  }
  if (prenet_dropout < 0.0 || prenet_dropout >= 1.0) {
    throw ValidationError("prenet dropout must lie in [0, 1)");
  }
}

// ---------------------------------------------------------------------------

AttentionStepResult AttentionFromRaw(Var raw, const AttentionState& state,
                                     int memory_length) {
  const int k = state.means.cols();
  if (raw.cols() != 3 * k || raw.rows() != 1) {
    throw std::invalid_argument("attention parameters must be [1 x 3K]");
  }
  AttentionStepResult out;
  out.mixture = ad::SoftmaxRows(ad::SliceCols(raw, 0, k));
  out.means = ad::Add(state.means, ad::Softplus(ad::SliceCols(raw, k, k)));
  out.sigmas = ad::AddScalar(ad::Softplus(ad::SliceCols(raw, 2 * k, k)), kSigmaFloor);
  out.weights = ad::GaussianMixtureWeights(out.mixture, out.means, out.sigmas,
                                           memory_length, kAlignmentFloor);
  return out;
}

// ---------------------------------------------------------------------------

AcousticModel::AcousticModel(const AcousticConfig& cfg, ad::ParameterStore* store,
                             Rng* rng)
    : cfg_(cfg) {
  cfg_.Validate();
  phoneme_table_ = store->CreateUniform("text_encoder.phoneme_table",
                                        cfg.num_phonemes, cfg.phoneme_embed_dim, rng);
  tone_table_ = store->CreateUniform("text_encoder.tone_table", cfg.num_tones,
                                     cfg.tone_embed_dim, rng);
  nn::CbhgConfig text;
  text.in_dim = cfg.phoneme_embed_dim + cfg.tone_embed_dim + 4 + 2;
  text.bank_kernels = 4;
  text.bank_channels = 16;
  text.proj_dim = cfg.text_dim;
  text.highway_layers = 2;
  text.rnn_hidden = cfg.text_dim / 2;
  text_encoder_ = nn::Cbhg(store, "text_encoder.cbhg", text, rng);

  nn::CbhgConfig sem;
  sem.in_dim = cfg.semantic_in_dim;
  sem.bank_kernels = 4;
  sem.bank_channels = 8;
  sem.proj_dim = cfg.semantic_dim;
  sem.highway_layers = 1;
  sem.rnn_hidden = cfg.semantic_dim / 2;
  semantic_encoder_ = nn::Cbhg(store, "semantic_encoder.cbhg", sem, rng);

  Matrix speakers(cfg.num_speakers, cfg.speaker_dim);
  for (int i = 0; i < speakers.size(); ++i) speakers.data()[i] = 0.3 * rng->Normal();
  speaker_table_ = store->Create("speaker_table", speakers);

  std::vector<int> prenet_dims = {cfg.mel_dim};
  prenet_dims.insert(prenet_dims.end(), cfg.prenet_dims.begin(), cfg.prenet_dims.end());
  prenet_ = nn::Mlp(store, "decoder.prenet", prenet_dims, nn::Activation::kRelu,
                    nn::Activation::kRelu, rng);
  const int cond = cfg.speaker_dim + cfg.context_dim;
  attention_rnn_ = nn::Gru(store, "decoder.attention_rnn",
                           cfg.prenet_dims.back() + cfg.memory_dim() + cond,
                           cfg.attention_rnn_dim, rng);
  attention_params_ = nn::Linear(store, "decoder.attention_params",
                                 cfg.attention_rnn_dim, 3 * cfg.gmm_components, rng);
  // Start with a slow, narrow-ish alignment: advance ~ softplus(-1) per step.
  attention_params_.weight()->value *= 0.1;
  for (int c = 0; c < cfg.gmm_components; ++c) {
    attention_params_.bias()->value(0, cfg.gmm_components + c) = -1.0;
    attention_params_.bias()->value(0, 2 * cfg.gmm_components + c) = 0.5;
  }
  decoder_rnn_ = nn::Gru(store, "decoder.decoder_rnn",
                         cfg.attention_rnn_dim + cfg.memory_dim() + cond,
                         cfg.decoder_rnn_dim, rng);
  frame_proj_ = nn::Linear(store, "decoder.frame_proj",
                           cfg.decoder_rnn_dim + cfg.memory_dim(),
                           cfg.mel_dim * cfg.reduction, rng);
  stop_proj_ = nn::Linear(store, "decoder.stop_proj",
                          cfg.decoder_rnn_dim + cfg.memory_dim(), cfg.reduction, rng);
}

Var AcousticModel::EncodeText(Tape& tape,
                              std::span<const LinguisticFrame> frames) const {
  if (frames.empty()) throw ValidationError("cannot encode an empty frame sequence");
  const int n = static_cast<int>(frames.size());
  std::vector<int> phonemes(n), tones(n);
  Matrix extra = Matrix::Zero(n, 6);
  for (int i = 0; i < n; ++i) {
    const LinguisticFrame& f = frames[i];
    if (f.phoneme_id < 0 || f.phoneme_id >= cfg_.num_phonemes) {
      throw ValidationError("unknown phoneme id " + std::to_string(f.phoneme_id));
    }
    if (f.tone_id < 0 || f.tone_id >= cfg_.num_tones) {
      throw ValidationError("unknown tone id " + std::to_string(f.tone_id));
    }
    if (f.prosody_level < 0 || f.prosody_level > 3) {
      throw ValidationError("prosody level out of range");
    }
    phonemes[i] = f.phoneme_id;
    tones[i] = f.tone_id;
    extra(i, f.prosody_level) = 1.0;
    extra(i, 4) = f.pl_flag;
    extra(i, 5) = f.fp_flag;
  }
  Var input = ad::ConcatCols({ad::GatherRows(tape.Param(phoneme_table_), phonemes),
                              ad::GatherRows(tape.Param(tone_table_), tones),
                              tape.Constant(std::move(extra))});
  return text_encoder_.Forward(tape, input);
}

Var AcousticModel::EncodeSemantic(Tape& tape, const Eigen::MatrixXd& semantic) const {
  if (semantic.rows() == 0) throw ValidationError("cannot encode an empty semantic sequence");
  if (semantic.cols() != cfg_.semantic_in_dim) {
    throw ValidationError("semantic input width " + std::to_string(semantic.cols()) +
                          " != " + std::to_string(cfg_.semantic_in_dim));
  }
  return semantic_encoder_.Forward(tape, tape.Constant(semantic));
}

Var AcousticModel::SpeakerEmbedding(Tape& tape, int speaker_id) const {
  if (speaker_id < 0 || speaker_id >= cfg_.num_speakers) {
    throw ValidationError("speaker id " + std::to_string(speaker_id) + " out of range");
  }
  return ad::GatherRows(tape.Param(speaker_table_), {speaker_id});
}

DecodeResult AcousticModel::Decode(Tape& tape, Var text, Var speaker, Var context,
                                   Var semantic, const DecodeOptions& options) const {
  if (text.rows() != semantic.rows()) {
    throw ValidationError("text and semantic encodings are misaligned (" +
                          std::to_string(text.rows()) + " vs " +
                          std::to_string(semantic.rows()) + " rows)");
  }
  if (context.cols() != cfg_.context_dim || context.rows() != 1) {
    throw ValidationError("context embedding must be [1 x " +
                          std::to_string(cfg_.context_dim) + "]");
  }
  if (speaker.cols() != cfg_.speaker_dim || speaker.rows() != 1) {
    throw ValidationError("speaker embedding has the wrong shape");
  }
  const Mel* teacher = options.teacher;
  if (teacher != nullptr && teacher->dim() != cfg_.mel_dim) {
    throw ValidationError("teacher mel width does not match the model");
  }
  const int r = cfg_.reduction;
  const int n = text.rows();
  const int steps = teacher != nullptr
                        ? (teacher->frames() + r - 1) / r +
                              std::max(options.teacher_padding_steps, 0)
                        : (std::max(options.max_frames, 1) + r - 1) / r;

  Var memory = ad::ConcatCols({text, semantic});
  Var conditioning = ad::ConcatCols({speaker, context});
  Var h_att = tape.Constant(Matrix::Zero(1, cfg_.attention_rnn_dim));
  Var h_dec = tape.Constant(Matrix::Zero(1, cfg_.decoder_rnn_dim));
  Var attended = tape.Constant(Matrix::Zero(1, cfg_.memory_dim()));
  AttentionState state{tape.Constant(Matrix::Zero(1, cfg_.gmm_components))};
  Var prev_frame = tape.Constant(Matrix::Zero(1, cfg_.mel_dim));

  std::vector<Var> frames;
  std::vector<Var> stops;
  DecodeResult result;
  bool stopped = false;
  int kept_frames = 0;
  for (int step = 0; step < steps && !stopped; ++step) {
    Var pre = prenet_.Forward(tape, prev_frame);
    if (options.dropout_rng != nullptr && cfg_.prenet_dropout > 0.0) {
      Matrix mask(1, pre.cols());
      const double keep = 1.0 - cfg_.prenet_dropout;
      for (int i = 0; i < mask.cols(); ++i) {
        mask(0, i) = options.dropout_rng->Bernoulli(keep) ? 1.0 / keep : 0.0;
      }
      pre = ad::Mul(pre, tape.Constant(std::move(mask)));
    }
    h_att = attention_rnn_.Step(tape, ad::ConcatCols({pre, attended, conditioning}), h_att);
    AttentionStepResult att =
        AttentionFromRaw(attention_params_.Forward(tape, h_att), state, n);
    state.means = att.means;
    attended = ad::MatMul(att.weights, memory);
    h_dec = decoder_rnn_.Step(tape, ad::ConcatCols({h_att, attended, conditioning}), h_dec);
    Var features = ad::ConcatCols({h_dec, attended});
    Var out = frame_proj_.Forward(tape, features);
    Var stop = stop_proj_.Forward(tape, features);
    if (options.record_alignment) {
      result.alignments.push_back(att.weights.value().row(0));
      result.attention_means.push_back(att.means.value().row(0));
    }
    for (int j = 0; j < r; ++j) {
      frames.push_back(ad::SliceCols(out, j * cfg_.mel_dim, cfg_.mel_dim));
      stops.push_back(ad::SliceCols(stop, j, 1));
    }
    if (teacher != nullptr) {
      const int src = std::min(step * r + r - 1, teacher->frames() - 1);
      prev_frame = tape.Constant(teacher->data.row(src));
      kept_frames += r;
    } else {
      for (int j = 0; j < r; ++j) {
        ++kept_frames;
        if (stop.value()(0, j) > 0.0) {  // sigmoid > 0.5
          stopped = true;
          break;
        }
      }
      prev_frame = frames.back();
    }
  }
  if (teacher == nullptr && !stopped) {
    result.overflow = true;
    kept_frames = std::min(kept_frames, std::max(options.max_frames, 1));
  }
  frames.resize(kept_frames);
  stops.resize(kept_frames);
  result.mel = ad::ConcatRows(frames);
  result.stop_logits = ad::ConcatRows(stops);
  return result;
}

// ---------------------------------------------------------------------------

double ReconstructionLoss(const Mel& predicted, const Mel& target) {
  if (predicted.frames() != target.frames() || predicted.dim() != target.dim()) {
    throw ValidationError("reconstruction loss shape mismatch");
  }
  return (predicted.data - target.data).squaredNorm() /
         static_cast<double>(target.data.size());
}

Var ReconstructionLoss(Var predicted, Var target) {
  if (predicted.rows() != target.rows() || predicted.cols() != target.cols()) {
    throw ValidationError("reconstruction loss shape mismatch");
  }
  return ad::MseLoss(predicted, target);
}

Eigen::MatrixXd StopTargets(int target_frames, int output_frames) {
  Eigen::MatrixXd targets = Eigen::MatrixXd::Zero(output_frames, 1);
  for (int f = std::max(target_frames - 1, 0); f < output_frames; ++f) targets(f, 0) = 1.0;
  return targets;
}

int FramesUntilStop(const Eigen::MatrixXd& stop_logits) {
  for (int f = 0; f < stop_logits.rows(); ++f) {
    if (stop_logits(f, 0) > 0.0) return f + 1;
  }
  return static_cast<int>(stop_logits.rows());
}

}  // namespace spontts

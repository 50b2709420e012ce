#include "spontts/training.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "spontts/errors.h"
#include "spontts/io.h"
#include "spontts/rng.h"

namespace spontts {

using ad::Matrix;
using ad::Tape;
using ad::Var;

nlohmann::json LossBreakdown::ToJson() const {
  return {{"l_rcon", l_rcon},   {"l_speaker_ce", l_speaker_ce},
          {"l_embedding", l_embedding}, {"l_stop", l_stop},
          {"total", total},     {"lambda", lambda},
          {"beta", beta}};
}

LossBreakdown TotalLoss(const LossParts& parts, double lambda, double beta) {
  const double values[] = {parts.rcon, parts.speaker_ce, parts.embedding, parts.stop,
                           lambda, beta};
  const char* names[] = {"l_rcon", "l_speaker_ce", "l_embedding", "l_stop", "lambda",
                         "beta"};
  for (int i = 0; i < 6; ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericalError(std::string("non-finite ") + names[i]);
    }
    if (values[i] < 0.0) throw ValidationError(std::string(names[i]) + " is negative");
  }
  LossBreakdown b;
  b.l_rcon = parts.rcon;
  b.l_speaker_ce = parts.speaker_ce;
  b.l_embedding = parts.embedding;
  b.l_stop = parts.stop;
  b.lambda = lambda;
  b.beta = beta;
  b.total = parts.rcon + lambda * parts.speaker_ce + beta * parts.embedding + parts.stop;
  return b;
}

const char* StageName(Stage stage) {
  return stage == Stage::kPretrain ? "pretrain" : "finetune";
}

Stage ParseStage(const std::string& name) {
  if (name == "pretrain") return Stage::kPretrain;
  if (name == "finetune") return Stage::kFinetune;
  throw ValidationError("unknown stage '" + name + "'");
}

nlohmann::json TrainConfig::ToJson() const {
  return {{"lambda", lambda},
          {"beta", beta},
          {"learning_rate", learning_rate},
          {"clip_norm", clip_norm},
          {"batch_size", batch_size},
          {"pretrain_epochs", pretrain_epochs},
          {"epochs", epochs},
          {"seed", seed},
          {"grl_warmup_fraction", grl_warmup_fraction},
          {"stage", StageName(stage)},
          {"use_grl", use_grl},
          {"classifier_lr_scale", classifier_lr_scale}};
}

TrainConfig TrainConfig::FromJson(const nlohmann::json& j) {
  TrainConfig c;
  c.lambda = j.value("lambda", c.lambda);
  c.beta = j.value("beta", c.beta);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.pretrain_epochs = j.value("pretrain_epochs", c.pretrain_epochs);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  c.grl_warmup_fraction = j.value("grl_warmup_fraction", c.grl_warmup_fraction);
  c.stage = ParseStage(j.value("stage", std::string(StageName(c.stage))));
  c.use_grl = j.value("use_grl", c.use_grl);
  c.classifier_lr_scale = j.value("classifier_lr_scale", c.classifier_lr_scale);
  c.Validate();
  return c;
}

void TrainConfig::Validate() const {
  if (!(lambda >= 0.0) || !(beta >= 0.0)) throw ValidationError("lambda and beta must be >= 0");
  if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be > 0");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (epochs < 0 || pretrain_epochs < 0) throw ValidationError("epochs must be >= 0");
  if (!(classifier_lr_scale > 0.0)) throw ValidationError("classifier_lr_scale must be > 0");
  if (grl_warmup_fraction < 0.0 || grl_warmup_fraction > 1.0) {
    throw ValidationError("grl_warmup_fraction must lie in [0, 1]");
  }
}

nlohmann::json TtsModelConfig::ToJson() const {
  return {{"acoustic", acoustic.ToJson()},
          {"context", context.ToJson()},
          {"init_seed", init_seed}};
}

TtsModelConfig TtsModelConfig::FromJson(const nlohmann::json& j) {
  TtsModelConfig c;
  if (j.contains("acoustic")) c.acoustic = AcousticConfig::FromJson(j["acoustic"]);
  if (j.contains("context")) c.context = ContextConfig::FromJson(j["context"]);
  c.init_seed = j.value("init_seed", c.init_seed);
  return c;
}

// ---------------------------------------------------------------------------

TtsSystem::TtsSystem(const TtsModelConfig& cfg) : cfg_(cfg) {
  if (cfg.acoustic.context_dim != cfg.context.embed_dim) {
    throw ValidationError("acoustic context_dim must equal context embed_dim");
  }
  if (cfg.acoustic.mel_dim != cfg.context.mel_dim) {
    throw ValidationError("acoustic and context mel widths differ");
  }
  if (cfg.acoustic.num_speakers != cfg.context.num_speakers) {
    throw ValidationError("acoustic and context speaker counts differ");
  }
  Rng rng(cfg.init_seed);
  acoustic_ = std::make_unique<AcousticModel>(cfg.acoustic, &store_, &rng);
  f_p_ = ContextEncoder(cfg.context, &store_, "f_p", &rng);
  f_c_ = ContextEncoder(cfg.context, &store_, "f_c", &rng);
  next_ = NextPredictor(cfg.context, &store_, "next", &rng);
}

void TtsSystem::InitializeContextFromData(const std::vector<const Eigen::MatrixXd*>& mels) {
  f_p_.InitializeFromData(mels);
  f_c_.InitializeFromData(mels);
}

Eigen::RowVectorXd TtsSystem::PreviousEmbedding(const Mel& mel) const {
  Tape tape;
  tape.set_grad_enabled(false);
  return f_p_.Embed(tape, tape.Constant(mel.data)).value().row(0);
}

Checkpoint TtsSystem::ToCheckpoint() const {
  Checkpoint ckpt;
  ckpt.meta["kind"] = "tts";
  ckpt.meta["model"] = cfg_.ToJson();
  AddParameters(store_, &ckpt);
  return ckpt;
}

std::unique_ptr<TtsSystem> TtsSystem::FromCheckpoint(const Checkpoint& ckpt) {
  if (ckpt.meta.value("kind", "") != "tts") {
    throw ValidationError("checkpoint is not an acoustic model checkpoint");
  }
  auto system = std::make_unique<TtsSystem>(TtsModelConfig::FromJson(ckpt.meta["model"]));
  LoadParameters(ckpt, &system->store_);
  return system;
}

// ---------------------------------------------------------------------------

PreparedUtterance Prepare(const Utterance& utt, const Lexicon& lexicon,
                          const EmbeddingProvider& provider, bool strip_tags) {
  PreparedUtterance p;
  p.utt_id = utt.utt_id;
  p.speaker_id = utt.speaker_id;
  std::vector<TextToken> tokens = utt.tokens;
  if (strip_tags) {
    for (TextToken& t : tokens) t.tag = BehaviorTag::kNone;
  }
  p.frames = ExpandTags(tokens, lexicon);
  p.semantic = UpsampleSemantic(tokens, provider, lexicon);
  p.mel = utt.mel;
  return p;
}

std::vector<PreparedPair> PreparePairs(std::span<const ConversationPair> pairs,
                                       const Lexicon& lexicon,
                                       const EmbeddingProvider& provider) {
  std::vector<PreparedPair> out;
  out.reserve(pairs.size());
  for (const ConversationPair& pair : pairs) {
    if (!pair.previous.mel || !pair.current.mel) {
      throw ValidationError("pair " + pair.current.utt_id + " is missing a mel");
    }
    out.push_back({Prepare(pair.previous, lexicon, provider),
                   Prepare(pair.current, lexicon, provider)});
  }
  return out;
}

TeacherForcedOutput TeacherForced(Tape& tape, const TtsSystem& system,
                                  const PreparedUtterance& utt, Var context,
                                  Rng* dropout_rng) {
  if (!utt.mel) throw ValidationError("utterance " + utt.utt_id + " has no mel");
  const AcousticModel& model = system.acoustic();
  Var text = model.EncodeText(tape, utt.frames);
  Var semantic = model.EncodeSemantic(tape, utt.semantic);
  Var speaker = model.SpeakerEmbedding(tape, utt.speaker_id);
  DecodeOptions options;
  options.teacher = &*utt.mel;
  options.dropout_rng = dropout_rng;
  options.teacher_padding_steps = kStopPaddingSteps;
  DecodeResult decoded = model.Decode(tape, text, speaker, context, semantic, options);
  const int frames = utt.mel->frames();
  TeacherForcedOutput out;
  out.mel = ad::SliceRows(decoded.mel, 0, frames);
  out.rcon = ReconstructionLoss(out.mel, tape.Constant(utt.mel->data));
  out.stop = ad::BinaryCrossEntropyWithLogits(
      decoded.stop_logits, StopTargets(frames, decoded.stop_logits.rows()));
  return out;
}

namespace {

void CheckFinite(const LossParts& parts, const std::string& where) {
  if (std::isfinite(parts.rcon) && std::isfinite(parts.speaker_ce) &&
      std::isfinite(parts.embedding) && std::isfinite(parts.stop)) {
    return;
  }
  std::ostringstream msg;
  msg << "non-finite loss at " << where << ": l_rcon=" << parts.rcon
      << " l_speaker_ce=" << parts.speaker_ce << " l_embedding=" << parts.embedding
      << " l_stop=" << parts.stop;
  throw NumericalError(msg.str());
}

LossBreakdown Average(const std::vector<LossBreakdown>& items) {
  LossParts mean;
  for (const LossBreakdown& b : items) {
    mean.rcon += b.l_rcon;
    mean.speaker_ce += b.l_speaker_ce;
    mean.embedding += b.l_embedding;
    mean.stop += b.l_stop;
  }
  const double n = static_cast<double>(items.size());
  mean.rcon /= n;
  mean.speaker_ce /= n;
  mean.embedding /= n;
  mean.stop /= n;
  return TotalLoss(mean, items.front().lambda, items.front().beta);
}

}  // namespace

LossBreakdown AccumulatePair(TtsSystem& system, const PreparedPair& pair,
                             const TrainConfig& cfg, double grl_scale, Rng* dropout_rng,
                             double scale) {
  const PreparedUtterance& prev = pair.previous;
  const PreparedUtterance& cur = pair.current;
  if (!prev.mel || !cur.mel) throw ValidationError("pair " + cur.utt_id + " is missing a mel");
  Tape tape;
  Var r_p = system.f_p().Reference(tape, tape.Constant(prev.mel->data));
  Var e_prev = system.f_p().Style(tape, r_p).embedding;
  Var ce_p = SpeakerLoss(system.f_p().SpeakerLogits(tape, r_p, grl_scale, cfg.use_grl),
                         prev.speaker_id);
  Var r_c = system.f_c().Reference(tape, tape.Constant(cur.mel->data));
  Var e_n = system.f_c().Style(tape, r_c).embedding;
  Var ce_c = SpeakerLoss(system.f_c().SpeakerLogits(tape, r_c, grl_scale, cfg.use_grl),
                         cur.speaker_id);
  Var e_hat = system.next().Forward(tape, e_prev);
  Var l_emb = EmbeddingLoss(e_hat, e_n);
  TeacherForcedOutput tf = TeacherForced(tape, system, cur, e_prev, dropout_rng);
  Var ce = ad::Scale(ad::Add(ce_p, ce_c), 0.5);

  LossParts parts{tf.rcon.scalar(), ce.scalar(), l_emb.scalar(), tf.stop.scalar()};
  CheckFinite(parts, "pair " + prev.utt_id + " -> " + cur.utt_id);
  LossBreakdown b = TotalLoss(parts, cfg.lambda, cfg.beta);
  Var total = ad::Add(ad::Add(tf.rcon, ad::Scale(ce, cfg.lambda)),
                      ad::Add(ad::Scale(l_emb, cfg.beta), tf.stop));
  tape.Backward(ad::Scale(total, scale));
  return b;
}

LossBreakdown AccumulateUtterance(TtsSystem& system, const PreparedUtterance& utt,
                                  Rng* dropout_rng, double scale) {
  Tape tape;
  Var zero = tape.Constant(Matrix::Zero(1, system.config().acoustic.context_dim));
  TeacherForcedOutput tf = TeacherForced(tape, system, utt, zero, dropout_rng);
  LossParts parts{tf.rcon.scalar(), 0.0, 0.0, tf.stop.scalar()};
  CheckFinite(parts, "utterance " + utt.utt_id);
  LossBreakdown b = TotalLoss(parts, 0.0, 0.0);
  tape.Backward(ad::Scale(ad::Add(tf.rcon, tf.stop), scale));
  return b;
}

double GrlScale(int64_t step, int64_t total_steps, double warmup_fraction) {
  const double warmup = warmup_fraction * static_cast<double>(total_steps);
  if (warmup <= 0.0) return 1.0;
  return std::min(1.0, static_cast<double>(step) / warmup);
}

// ---------------------------------------------------------------------------

Trainer::Trainer(TtsSystem* system, const TrainConfig& cfg)
    : system_(system),
      cfg_(cfg),
      adam_(&system->store(), AdamConfig{cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.clip_norm}) {
  cfg_.Validate();
  adam_.SetLearningRateScale("f_p.speaker_classifier", cfg_.classifier_lr_scale);
  adam_.SetLearningRateScale("f_c.speaker_classifier", cfg_.classifier_lr_scale);
}

LossBreakdown Trainer::Step(std::span<const PreparedPair> batch, int64_t total_steps) {
  if (batch.empty()) throw ValidationError("empty training batch");
  system_->store().ZeroGrad();
  Rng dropout(HashCombine(cfg_.seed, 0xD20F0000ULL + static_cast<uint64_t>(steps())));
  const double grl = GrlScale(steps(), total_steps, cfg_.grl_warmup_fraction);
  std::vector<LossBreakdown> parts;
  for (const PreparedPair& pair : batch) {
    parts.push_back(AccumulatePair(*system_, pair, cfg_, grl, &dropout,
                                   1.0 / static_cast<double>(batch.size())));
  }
  last_grad_norm_ = adam_.Step();
  if (!std::isfinite(last_grad_norm_)) {
    throw NumericalError("non-finite gradient norm at step " + std::to_string(steps()));
  }
  return Average(parts);
}

LossBreakdown Trainer::PretrainStep(std::span<const PreparedUtterance> batch) {
  if (batch.empty()) throw ValidationError("empty training batch");
  system_->store().ZeroGrad();
  Rng dropout(HashCombine(cfg_.seed, 0xD20F0000ULL + static_cast<uint64_t>(steps())));
  std::vector<LossBreakdown> parts;
  for (const PreparedUtterance& utt : batch) {
    parts.push_back(AccumulateUtterance(*system_, utt, &dropout,
                                        1.0 / static_cast<double>(batch.size())));
  }
  last_grad_norm_ = adam_.Step();
  if (!std::isfinite(last_grad_norm_)) {
    throw NumericalError("non-finite gradient norm at step " + std::to_string(steps()));
  }
  return Average(parts);
}

void Trainer::InitializeContext(std::span<const PreparedPair> pairs) {
  if (steps() != 0) throw ValidationError("context initialization after training started");
  std::vector<const Eigen::MatrixXd*> mels;
  for (const PreparedPair& pair : pairs) {
    mels.push_back(&pair.previous.mel->data);
    mels.push_back(&pair.current.mel->data);
  }
  system_->InitializeContextFromData(mels);
}

Checkpoint Trainer::ToCheckpoint() const {
  Checkpoint ckpt = system_->ToCheckpoint();
  ckpt.meta["train"] = cfg_.ToJson();
  AddOptimizerState(const_cast<Adam&>(adam_), system_->store(), &ckpt);
  return ckpt;
}

void Trainer::Restore(const Checkpoint& ckpt) {
  LoadParameters(ckpt, &system_->store());
  if (!LoadOptimizerState(ckpt, system_->store(), &adam_)) {
    throw ValidationError("checkpoint carries no optimizer state");
  }
}

std::vector<int> EpochOrder(int count, uint64_t seed, int epoch) {
  std::vector<int> order(count);
  for (int i = 0; i < count; ++i) order[i] = i;
  Rng rng(HashCombine(seed, 0xE90C0000ULL + static_cast<uint64_t>(epoch)));
  rng.Shuffle(order);
  return order;
}

// ---------------------------------------------------------------------------

double EvaluateRcon(const TtsSystem& system, std::span<const PreparedPair> pairs,
                    bool zero_context) {
  if (pairs.empty()) throw ValidationError("no pairs to evaluate");
  double sum = 0.0;
  for (const PreparedPair& pair : pairs) {
    Tape tape;
    tape.set_grad_enabled(false);
    Var context = zero_context
                      ? tape.Constant(Matrix::Zero(1, system.config().acoustic.context_dim))
                      : system.f_p().Embed(tape, tape.Constant(pair.previous.mel->data));
    sum += TeacherForced(tape, system, pair.current, context, nullptr).rcon.scalar();
  }
  return sum / static_cast<double>(pairs.size());
}

double EvaluateRcon(const TtsSystem& system, std::span<const PreparedUtterance> utts) {
  if (utts.empty()) throw ValidationError("no utterances to evaluate");
  double sum = 0.0;
  for (const PreparedUtterance& utt : utts) {
    Tape tape;
    tape.set_grad_enabled(false);
    Var zero = tape.Constant(Matrix::Zero(1, system.config().acoustic.context_dim));
    sum += TeacherForced(tape, system, utt, zero, nullptr).rcon.scalar();
  }
  return sum / static_cast<double>(utts.size());
}

double EvaluateEmbedding(const TtsSystem& system, std::span<const PreparedPair> pairs) {
  if (pairs.empty()) throw ValidationError("no pairs to evaluate");
  double sum = 0.0;
  for (const PreparedPair& pair : pairs) {
    Tape tape;
    tape.set_grad_enabled(false);
    Var e_prev = system.f_p().Embed(tape, tape.Constant(pair.previous.mel->data));
    Var e_n = system.f_c().Embed(tape, tape.Constant(pair.current.mel->data));
    sum += EmbeddingLoss(system.next().Forward(tape, e_prev), e_n).scalar();
  }
  return sum / static_cast<double>(pairs.size());
}

namespace {

template <typename Item, typename StepFn>
std::vector<double> RunEpochs(Trainer& trainer, std::span<const Item> train, int epochs,
                              int batch_size, uint64_t seed, const char* stage,
                              const StepFn& step, const std::function<double()>& eval,
                              const LogFn& log) {
  if (train.empty()) throw ValidationError(std::string("no data for the ") + stage + " stage");
  const int n = static_cast<int>(train.size());
  const int per_epoch = (n + batch_size - 1) / batch_size;
  std::vector<double> evals;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::vector<int> order = EpochOrder(n, seed, epoch);
    for (int b = 0; b < per_epoch; ++b) {
      const int64_t global = static_cast<int64_t>(epoch) * per_epoch + b;
      if (global < trainer.steps()) continue;  // already done before a resume
      std::vector<Item> batch;
      for (int i = b * batch_size; i < std::min(n, (b + 1) * batch_size); ++i) {
        batch.push_back(train[order[i]]);
      }
      LossBreakdown loss = step(std::span<const Item>(batch),
                                static_cast<int64_t>(epochs) * per_epoch);
      if (log) {
        nlohmann::json line = loss.ToJson();
        line["stage"] = stage;
        line["epoch"] = epoch;
        line["step"] = trainer.steps();
        line["grad_norm"] = trainer.last_grad_norm();
        log(line);
      }
    }
    const double value = eval();
    evals.push_back(value);
    if (log) log({{"stage", stage}, {"epoch", epoch}, {"eval_rcon", value}});
  }
  return evals;
}

}  // namespace

std::vector<double> TrainFinetune(Trainer& trainer, std::span<const PreparedPair> train,
                                  std::span<const PreparedPair> validation, int epochs,
                                  const LogFn& log) {
  if (trainer.steps() == 0 && !train.empty()) trainer.InitializeContext(train);
  auto step = [&](std::span<const PreparedPair> batch, int64_t total) {
    return trainer.Step(batch, total);
  };
  return RunEpochs<PreparedPair>(
      trainer, train, epochs, trainer.config().batch_size, trainer.config().seed,
      "finetune", step,
      [&]() {
        return EvaluateRcon(trainer.system(), validation.empty() ? train : validation);
      },
      log);
}

std::vector<double> TrainPretrain(Trainer& trainer,
                                  std::span<const PreparedUtterance> train, int epochs,
                                  const LogFn& log) {
  auto step = [&](std::span<const PreparedUtterance> batch, int64_t) {
    return trainer.PretrainStep(batch);
  };
  return RunEpochs<PreparedUtterance>(
      trainer, train, epochs, trainer.config().batch_size, trainer.config().seed,
      "pretrain", step, [&]() { return EvaluateRcon(trainer.system(), train); }, log);
}

ScheduleResult RunSchedule(const TtsModelConfig& model_cfg, const TrainConfig& cfg,
                           std::span<const PreparedUtterance> pretrain,
                           std::span<const PreparedPair> train,
                           std::span<const PreparedPair> validation,
                           const std::string& out_dir, const LogFn& log) {
  cfg.Validate();
  ScheduleResult result;
  TtsSystem system(model_cfg);
  TrainConfig pre_cfg = cfg;
  pre_cfg.stage = Stage::kPretrain;
  Trainer pre(&system, pre_cfg);
  if (cfg.pretrain_epochs > 0) {
    result.pretrain_eval = TrainPretrain(pre, pretrain, cfg.pretrain_epochs, log);
  }
  result.pretrain = pre.ToCheckpoint();
  if (!out_dir.empty()) WriteCheckpoint(out_dir + "/pretrain.ckpt", result.pretrain);
  if (cfg.epochs == 0) {
    result.final = result.pretrain;
  } else {
    TrainConfig ft_cfg = cfg;
    ft_cfg.stage = Stage::kFinetune;
    Trainer ft(&system, ft_cfg);
    result.finetune_eval = TrainFinetune(ft, train, validation, cfg.epochs, log);
    result.final = ft.ToCheckpoint();
  }
  if (!out_dir.empty()) WriteCheckpoint(out_dir + "/final.ckpt", result.final);
  return result;
}

Checkpoint RunFinetuneFrom(const std::string& pretrain_path, const TrainConfig& cfg,
                           std::span<const PreparedPair> train,
                           std::span<const PreparedPair> validation,
                           std::vector<double>* eval, const LogFn& log) {
  if (!std::filesystem::exists(pretrain_path)) {
    throw ValidationError("pretrain checkpoint not found: " + pretrain_path);
  }
  Checkpoint pre = ReadCheckpoint(pretrain_path);
  std::unique_ptr<TtsSystem> system = TtsSystem::FromCheckpoint(pre);
  TrainConfig ft_cfg = cfg;
  ft_cfg.stage = Stage::kFinetune;
  Trainer ft(system.get(), ft_cfg);
  std::vector<double> values = TrainFinetune(ft, train, validation, cfg.epochs, log);
  if (eval != nullptr) *eval = values;
  return ft.ToCheckpoint();
}

}  // namespace spontts

#include "spontts/tagger.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "spontts/errors.h"
#include "spontts/optimizer.h"
#include "spontts/rng.h"

namespace spontts {

nlohmann::json TaggerConfig::ToJson() const {
  return {{"sem_dim", sem_dim},       {"fc_dim", fc_dim},
          {"lstm_hidden", lstm_hidden}, {"epochs", epochs},
          {"batch_size", batch_size}, {"learning_rate", learning_rate},
          {"class_weighting", class_weighting}, {"seed", seed}};
}

TaggerConfig TaggerConfig::FromJson(const nlohmann::json& j) {
  TaggerConfig c;
  c.sem_dim = j.value("sem_dim", c.sem_dim);
  c.fc_dim = j.value("fc_dim", c.fc_dim);
  c.lstm_hidden = j.value("lstm_hidden", c.lstm_hidden);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.class_weighting = j.value("class_weighting", c.class_weighting);
  c.seed = j.value("seed", c.seed);
  if (c.sem_dim < 1 || c.fc_dim < 1 || c.lstm_hidden < 1 || c.epochs < 0 ||
      c.batch_size < 1 || !(c.learning_rate > 0)) {
    throw ValidationError("invalid tagger config");
  }
  return c;
}

TaggerModel::TaggerModel(const TaggerConfig& cfg) : cfg_(cfg) {
  Rng rng(HashCombine(cfg.seed, 0x7A66E5));
  const int in = InputDim(cfg.sem_dim);
  front_ = nn::Mlp(&store_, "tagger.fc", {in, cfg.fc_dim, cfg.fc_dim, cfg.fc_dim},
                   nn::Activation::kRelu, nn::Activation::kRelu, &rng);
  lstm1_ = nn::Bidirectional<nn::Lstm>(&store_, "tagger.blstm1", cfg.fc_dim,
                                       cfg.lstm_hidden, &rng);
  lstm2_ = nn::Bidirectional<nn::Lstm>(&store_, "tagger.blstm2", lstm1_.out_dim(),
                                       cfg.lstm_hidden, &rng);
  output_ = nn::Linear(&store_, "tagger.out", lstm2_.out_dim(), kNumBehaviorTags, &rng);
}

Eigen::MatrixXd TaggerModel::Features(std::span<const TextToken> tokens,
                                      const EmbeddingProvider& provider) const {
  if (provider.dim() != cfg_.sem_dim) {
    throw ValidationError("embedding width " + std::to_string(provider.dim()) +
                          " does not match tagger input width " +
                          std::to_string(cfg_.sem_dim));
  }
  const int m = static_cast<int>(tokens.size());
  Eigen::MatrixXd features = Eigen::MatrixXd::Zero(m, InputDim(cfg_.sem_dim));
  features.leftCols(cfg_.sem_dim) = provider.Embed(tokens);
  for (int i = 0; i < m; ++i) {
    features(i, cfg_.sem_dim) = tokens[i].word_boundary ? 1.0 : 0.0;
    const int level = std::clamp(tokens[i].prosody_level, 0, 3);
    features(i, cfg_.sem_dim + 1 + level) = 1.0;
  }
  return features;
}

ad::Var TaggerModel::Logits(ad::Tape& tape, const Eigen::MatrixXd& features) const {
  ad::Var x = front_.Forward(tape, tape.Constant(features));
  x = lstm1_.Forward(tape, x);
  x = lstm2_.Forward(tape, x);
  return output_.Forward(tape, x);
}

TagDistribution TaggerModel::Predict(std::span<const TextToken> tokens,
                                     const EmbeddingProvider& provider) const {
  if (tokens.empty()) throw ValidationError("cannot tag an empty sentence");
  ad::Tape tape;
  TagDistribution dist;
  dist.probs = ad::SoftmaxRows(Logits(tape, Features(tokens, provider))).value();
  return dist;
}

Checkpoint TaggerModel::ToCheckpoint() const {
  Checkpoint ckpt;
  ckpt.meta["kind"] = "tagger";
  ckpt.meta["config"] = cfg_.ToJson();
  ckpt.meta["epoch_losses"] = epoch_losses;
  AddParameters(store_, &ckpt);
  return ckpt;
}

std::unique_ptr<TaggerModel> TaggerModel::FromCheckpoint(const Checkpoint& ckpt) {
  if (ckpt.meta.value("kind", "") != "tagger") {
    throw ValidationError("checkpoint is not a tagger checkpoint");
  }
  auto model = std::make_unique<TaggerModel>(TaggerConfig::FromJson(ckpt.meta["config"]));
  LoadParameters(ckpt, &model->store_);
  model->epoch_losses = ckpt.meta.value("epoch_losses", std::vector<double>{});
  return model;
}

// ---------------------------------------------------------------------------

std::vector<BehaviorTag> ArgmaxTags(const TagDistribution& dist) {
  std::vector<BehaviorTag> out;
  out.reserve(dist.tokens());
  for (int i = 0; i < dist.tokens(); ++i) {
    int best = 0;
    for (int c = 1; c < kNumBehaviorTags; ++c) {
      if (dist.probs(i, c) > dist.probs(i, best)) best = c;
    }
    out.push_back(TagFromIndex(best));
  }
  return out;
}

std::vector<BehaviorTag> SelectBehaviors(const TagDistribution& dist, double p) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw ValidationError("behavior frequency must lie in [0, 1]");
  }
  const int m = dist.tokens();
  const int n = static_cast<int>(std::floor(p * m));
  std::vector<double> score(m);
  std::vector<BehaviorTag> label(m);
  for (int i = 0; i < m; ++i) {
    int best = 1;
    for (int c = 2; c < kNumBehaviorTags; ++c) {
      if (dist.probs(i, c) > dist.probs(i, best)) best = c;
    }
    score[i] = dist.probs(i, best);
    label[i] = TagFromIndex(best);
  }
  std::vector<int> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return score[a] > score[b]; });
  std::vector<BehaviorTag> out(m, BehaviorTag::kNone);
  for (int rank = 0; rank < n; ++rank) out[order[rank]] = label[order[rank]];
  return out;
}

TagMetrics EvaluateTags(const std::vector<std::vector<BehaviorTag>>& pred,
                        const std::vector<std::vector<BehaviorTag>>& gold) {
  if (pred.size() != gold.size()) {
    throw ValidationError("prediction and gold sentence counts differ");
  }
  TagMetrics metrics;
  int correct = 0;
  for (size_t s = 0; s < pred.size(); ++s) {
    if (pred[s].size() != gold[s].size()) {
      throw ValidationError("sentence " + std::to_string(s) +
                            ": prediction and gold lengths differ");
    }
    for (size_t i = 0; i < pred[s].size(); ++i) {
      const int p = TagIndex(pred[s][i]);
      const int g = TagIndex(gold[s][i]);
      ++metrics.per_class[p].predicted;
      ++metrics.per_class[g].support;
      if (p == g) {
        ++metrics.per_class[p].true_positive;
        ++correct;
      }
      ++metrics.tokens;
    }
  }
  for (ClassMetrics& c : metrics.per_class) {
    c.precision = c.predicted > 0 ? static_cast<double>(c.true_positive) / c.predicted : 0.0;
    c.recall = c.support > 0 ? static_cast<double>(c.true_positive) / c.support : 0.0;
    const double pr = c.precision + c.recall;
    c.f1 = pr > 0.0 ? 2.0 * c.precision * c.recall / pr : 0.0;
  }
  metrics.accuracy =
      metrics.tokens > 0 ? static_cast<double>(correct) / metrics.tokens : 0.0;
  return metrics;
}

std::vector<double> InverseFrequencyWeights(
    const std::vector<std::vector<TextToken>>& sentences) {
  std::array<double, kNumBehaviorTags> counts{};
  double total = 0.0;
  for (const auto& s : sentences) {
    for (const TextToken& t : s) {
      counts[TagIndex(t.tag)] += 1.0;
      total += 1.0;
    }
  }
  int present = 0;
  for (double c : counts) present += c > 0 ? 1 : 0;
  std::vector<double> weights(kNumBehaviorTags, 1.0);
  for (int c = 0; c < kNumBehaviorTags; ++c) {
    if (counts[c] > 0) weights[c] = total / (present * counts[c]);
  }
  return weights;
}

std::unique_ptr<TaggerModel> TrainTagger(
    const std::vector<std::vector<TextToken>>& sentences,
    const EmbeddingProvider& provider, const TaggerConfig& cfg) {
  std::vector<size_t> usable;
  for (size_t i = 0; i < sentences.size(); ++i) {
    if (!sentences[i].empty()) usable.push_back(i);
  }
  if (usable.empty()) throw ValidationError("tagger training corpus is empty");

  auto model = std::make_unique<TaggerModel>(cfg);
  const std::vector<double> weights = cfg.class_weighting
                                          ? InverseFrequencyWeights(sentences)
                                          : std::vector<double>{};
  std::vector<Eigen::MatrixXd> features;
  std::vector<std::vector<int>> labels;
  for (size_t i : usable) {
    features.push_back(model->Features(sentences[i], provider));
    std::vector<int> y;
    for (const TextToken& t : sentences[i]) y.push_back(TagIndex(t.tag));
    labels.push_back(std::move(y));
  }

  AdamConfig acfg;
  acfg.learning_rate = cfg.learning_rate;
  Adam adam(&model->params(), acfg);
  Rng rng(HashCombine(cfg.seed, 0x5A1F));
  std::vector<size_t> order(features.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.Shuffle(order);
    double epoch_loss = 0.0;
    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const size_t end = std::min(order.size(), start + cfg.batch_size);
      model->params().ZeroGrad();
      for (size_t k = start; k < end; ++k) {
        ad::Tape tape;
        ad::Var loss = ad::CrossEntropy(model->Logits(tape, features[order[k]]),
                                        labels[order[k]], weights);
        if (!std::isfinite(loss.scalar())) {
          throw NumericalError("tagger loss became non-finite in epoch " +
                               std::to_string(epoch));
        }
        epoch_loss += loss.scalar();
        tape.Backward(ad::Scale(loss, 1.0 / static_cast<double>(end - start)));
      }
      adam.Step();
    }
    model->epoch_losses.push_back(epoch_loss / static_cast<double>(order.size()));
  }
  return model;
}

}  // namespace spontts

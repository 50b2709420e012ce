#include "spontts/synthesis.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "spontts/errors.h"
#include "spontts/io.h"
#include "spontts/nn.h"
#include "spontts/optimizer.h"
#include "spontts/rng.h"

namespace spontts {

using ad::Matrix;
using ad::Tape;
using ad::Var;

void ValidateScript(const std::vector<ScriptTurn>& turns) {
  if (turns.empty()) throw ValidationError("script has no turns");
  for (size_t i = 0; i < turns.size(); ++i) {
    if (turns[i].speaker_id != 0 && turns[i].speaker_id != 1) {
      throw ValidationError("script turn " + std::to_string(i + 1) +
                            ": speaker must be 0 or 1");
    }
    if (i > 0 && turns[i].speaker_id == turns[i - 1].speaker_id) {
      throw ValidationError("script turn " + std::to_string(i + 1) +
                            ": speakers must alternate");
    }
    ValidateTokens(turns[i].tokens, "script turn " + std::to_string(i + 1));
  }
}

SynthesizedTurn SynthUtterance(const TtsSystem& system, const EmbeddingProvider& provider,
                               const Lexicon& lexicon, int speaker_id,
                               const std::vector<TextToken>& tokens,
                               const Eigen::RowVectorXd& context, int max_frames) {
  const AcousticModel& model = system.acoustic();
  Tape tape;
  tape.set_grad_enabled(false);
  std::vector<LinguisticFrame> frames = ExpandTags(tokens, lexicon);
  Var text = model.EncodeText(tape, frames);
  Var semantic = model.EncodeSemantic(tape, UpsampleSemantic(tokens, provider, lexicon));
  Var speaker = model.SpeakerEmbedding(tape, speaker_id);
  DecodeOptions options;
  options.max_frames = max_frames;
  DecodeResult decoded = model.Decode(tape, text, speaker, tape.Constant(context),
                                      semantic, options);
  SynthesizedTurn turn;
  turn.mel.data = RoundToFloat(decoded.mel.value());
  turn.context = context;
  turn.overflow = decoded.overflow;
  for (const TextToken& t : tokens) turn.tags.push_back(t.tag);
  return turn;
}

std::vector<SynthesizedTurn> SynthConversation(const TtsSystem& system,
                                               const TaggerModel* tagger,
                                               const EmbeddingProvider& provider,
                                               const Lexicon& lexicon,
                                               const SynthesisRequest& request) {
  ValidateScript(request.turns);
  if (!(request.p >= 0.0 && request.p <= 1.0)) {
    throw ValidationError("behavior frequency p must lie in [0, 1]");
  }
  if (!request.use_script_tags && tagger == nullptr) {
    throw ValidationError("a tagger is required unless script tags are used");
  }
  std::vector<SynthesizedTurn> out;
  Eigen::RowVectorXd context =
      Eigen::RowVectorXd::Zero(system.config().acoustic.context_dim);
  for (const ScriptTurn& turn : request.turns) {
    std::vector<TextToken> tokens = turn.tokens;
    if (!request.use_script_tags) {
      std::vector<BehaviorTag> tags =
          SelectBehaviors(tagger->Predict(tokens, provider), request.p);
      for (size_t i = 0; i < tokens.size(); ++i) tokens[i].tag = tags[i];
    }
    out.push_back(SynthUtterance(system, provider, lexicon, turn.speaker_id, tokens,
                                 context, request.max_frames));
    context = system.PreviousEmbedding(out.back().mel);
  }
  return out;
}

std::vector<ScriptTurn> ScriptFromJson(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("turns") || !j["turns"].is_array()) {
    throw ValidationError("script must be an object with a \"turns\" array");
  }
  std::vector<ScriptTurn> turns;
  try {
    for (const nlohmann::json& t : j["turns"]) {
      ScriptTurn turn;
      turn.speaker_id = t.at("speaker_id").get<int>();
      for (const nlohmann::json& tok : t.at("tokens")) {
        TextToken token;
        token.char_id = tok.at("char_id").get<int>();
        token.word_boundary = tok.value("word_boundary", false);
        token.prosody_level = tok.at("prosody_level").get<int>();
        token.tag = ParseTag(tok.value("tag", std::string("NONE")));
        turn.tokens.push_back(token);
      }
      turns.push_back(std::move(turn));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed script: ") + e.what());
  }
  ValidateScript(turns);
  return turns;
}

nlohmann::json ScriptToJson(const std::vector<ScriptTurn>& turns) {
  nlohmann::json arr = nlohmann::json::array();
  for (const ScriptTurn& turn : turns) {
    nlohmann::json tokens = nlohmann::json::array();
    for (const TextToken& t : turn.tokens) {
      tokens.push_back({{"char_id", t.char_id},
                        {"word_boundary", t.word_boundary},
                        {"prosody_level", t.prosody_level},
                        {"tag", std::string(TagName(t.tag))}});
    }
    arr.push_back({{"speaker_id", turn.speaker_id}, {"tokens", tokens}});
  }
  return {{"turns", arr}};
}

std::vector<ScriptTurn> ScriptFromConversation(const Conversation& conv) {
  std::vector<ScriptTurn> turns;
  for (const Utterance& u : conv.utterances) turns.push_back({u.speaker_id, u.tokens});
  return turns;
}

nlohmann::json DurationReport::ToJson() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const DurationRow& r : rows) {
    arr.push_back({{"p", r.p},
                   {"mean_frames", r.mean_frames},
                   {"samples", r.samples},
                   {"overflows", r.overflows}});
  }
  return {{"rows", arr}};
}

DurationReport DurationCurve(const TtsSystem& system, const TaggerModel& tagger,
                             const EmbeddingProvider& provider, const Lexicon& lexicon,
                             const std::vector<std::vector<ScriptTurn>>& scripts,
                             const std::vector<double>& p_grid, int max_frames) {
  if (p_grid.empty()) throw ValidationError("duration curve needs a non-empty p grid");
  if (scripts.empty()) throw ValidationError("duration curve needs at least one script");
  for (size_t i = 1; i < p_grid.size(); ++i) {
    if (!(p_grid[i] > p_grid[i - 1])) throw ValidationError("p grid must be ascending");
  }
  DurationReport report;
  for (double p : p_grid) {
    DurationRow row;
    row.p = p;
    double total = 0.0;
    for (const std::vector<ScriptTurn>& script : scripts) {
      SynthesisRequest request;
      request.turns = script;
      request.p = p;
      request.max_frames = max_frames;
      for (const SynthesizedTurn& turn :
           SynthConversation(system, &tagger, provider, lexicon, request)) {
        total += turn.mel.frames();
        ++row.samples;
        row.overflows += turn.overflow ? 1 : 0;
      }
    }
    row.mean_frames = total / row.samples;
    report.rows.push_back(row);
  }
  return report;
}

double ProbeSpeaker(const Eigen::MatrixXd& embeddings, const std::vector<int>& labels,
                    uint64_t seed, int epochs) {
  const int n = static_cast<int>(embeddings.rows());
  if (n != static_cast<int>(labels.size())) {
    throw ValidationError("probe: embedding and label counts differ");
  }
  int classes = 0;
  for (int y : labels) {
    if (y < 0) throw ValidationError("probe: negative label");
    classes = std::max(classes, y + 1);
  }
  std::vector<int> counts(classes, 0);
  for (int y : labels) ++counts[y];
  if (std::count_if(counts.begin(), counts.end(), [](int c) { return c > 0; }) < 2) {
    throw ValidationError("probe: needs at least two classes");
  }
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.Shuffle(order);
  const int train = std::max(1, static_cast<int>(std::lround(0.7 * n)));
  if (train >= n) throw ValidationError("probe: too few samples for a 70/30 split");

  Matrix x_train(train, embeddings.cols());
  std::vector<int> y_train;
  for (int i = 0; i < train; ++i) {
    x_train.row(i) = embeddings.row(order[i]);
    y_train.push_back(labels[order[i]]);
  }
  const Eigen::RowVectorXd mean = x_train.colwise().mean();
  const Eigen::RowVectorXd std =
      ((x_train.rowwise() - mean).array().square().colwise().mean().sqrt() + 1e-8).matrix();
  auto standardize = [&](const Matrix& m) -> Matrix {
    return ((m.rowwise() - mean).array().rowwise() / std.array()).matrix();
  };
  x_train = standardize(x_train);

  ad::ParameterStore store;
  nn::Mlp probe(&store, "probe", {static_cast<int>(embeddings.cols()), 32, classes},
                nn::Activation::kRelu, nn::Activation::kNone, &rng);
  Adam adam(&store, AdamConfig{1e-2, 0.9, 0.999, 1e-8, 0.0});
  for (int e = 0; e < epochs; ++e) {
    store.ZeroGrad();
    Tape tape;
    tape.Backward(ad::CrossEntropy(probe.Forward(tape, tape.Constant(x_train)), y_train));
    adam.Step();
  }
  Matrix x_test(n - train, embeddings.cols());
  for (int i = train; i < n; ++i) x_test.row(i - train) = embeddings.row(order[i]);
  Tape tape;
  tape.set_grad_enabled(false);
  const Matrix logits = probe.Forward(tape, tape.Constant(standardize(x_test))).value();
  int correct = 0;
  for (int i = 0; i < logits.rows(); ++i) {
    Eigen::Index best;
    logits.row(i).maxCoeff(&best);
    correct += static_cast<int>(best) == labels[order[train + i]] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(logits.rows());
}

namespace {

std::vector<double> Ranks(const std::vector<double>& v) {
  std::vector<int> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (size_t i = 0; i < idx.size();) {
    size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double SpearmanCorrelation(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw ValidationError("Spearman correlation needs two equal-length series (n >= 2)");
  }
  const std::vector<double> ra = Ranks(a);
  const std::vector<double> rb = Ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

}  // namespace spontts

#include <cmath>

#include "doctest.h"
#include "spontts/errors.h"
#include "spontts/io.h"
#include "spontts/rng.h"
#include "spontts/synthesis.h"
#include "spontts/synthetic.h"

using namespace spontts;

namespace {

struct World {
  TtsSystem system{TtsModelConfig{}};
  TaggerModel tagger{TaggerConfig{}};
  HashEmbeddingProvider provider;
  std::vector<Conversation> conversations;

  World() {
    SynthConfig cfg;
    cfg.conversations = 3;
    conversations = GenerateSyntheticCorpus(cfg, 5, Lexicon::Default()).conversations;
  }

  SynthesisRequest Request(int turns, double p) const {
    SynthesisRequest req;
    req.turns = ScriptFromConversation(conversations[0]);
    req.turns.resize(turns);
    req.p = p;
    req.max_frames = 24;
    return req;
  }

  std::vector<SynthesizedTurn> Synth(const SynthesisRequest& req) const {
    return SynthConversation(system, &tagger, provider, Lexicon::Default(), req);
  }
};

World& SharedWorld() {
  static World w;
  return w;
}

int Tagged(const std::vector<BehaviorTag>& tags) {
  int n = 0;
  for (BehaviorTag t : tags) n += t != BehaviorTag::kNone;
  return n;
}

}  // namespace

TEST_CASE("the first turn is decoded with a zero context") {
  World& w = SharedWorld();
  const auto turns = w.Synth(w.Request(1, 0.3));
  REQUIRE(turns.size() == 1);
  CHECK(turns[0].context.size() == 64);
  CHECK(turns[0].context.isZero(0.0));
  CHECK(turns[0].mel.frames() > 0);
  CHECK(turns[0].mel.frames() <= 24);
}

TEST_CASE("turn two is conditioned on f_p of the synthesized turn one") {
  World& w = SharedWorld();
  const SynthesisRequest req = w.Request(2, 0.5);
  const auto turns = w.Synth(req);
  REQUIRE(turns.size() == 2);
  const Eigen::RowVectorXd replay = w.system.PreviousEmbedding(turns[0].mel);
  CHECK(turns[1].context == replay);
  CHECK(turns[0].mel.data == RoundToFloat(turns[0].mel.data));

  std::vector<TextToken> tokens = req.turns[1].tokens;
  for (size_t i = 0; i < tokens.size(); ++i) tokens[i].tag = turns[1].tags[i];
  const SynthesizedTurn again = SynthUtterance(w.system, w.provider, Lexicon::Default(),
                                               req.turns[1].speaker_id, tokens, replay, 24);
  CHECK(again.mel == turns[1].mel);
}

TEST_CASE("p = 0 emits no behavior tags") {
  World& w = SharedWorld();
  for (const auto& t : w.Synth(w.Request(3, 0.0))) CHECK(Tagged(t.tags) == 0);
}

TEST_CASE("each turn carries exactly floor(p * M) behavior tags") {
  World& w = SharedWorld();
  for (double p : {0.1, 0.35, 0.5, 0.77, 1.0}) {
    const SynthesisRequest req = w.Request(4, p);
    const auto turns = w.Synth(req);
    for (size_t i = 0; i < turns.size(); ++i) {
      const int m = static_cast<int>(req.turns[i].tokens.size());
      CHECK(Tagged(turns[i].tags) == static_cast<int>(std::floor(p * m)));
    }
  }
}

TEST_CASE("p = 0 matches the untagged baseline") {
  World& w = SharedWorld();
  SynthesisRequest req = w.Request(3, 0.0);
  const auto tagged = w.Synth(req);
  for (ScriptTurn& t : req.turns) {
    for (TextToken& tok : t.tokens) tok.tag = BehaviorTag::kNone;
  }
  req.use_script_tags = true;
  const auto plain = SynthConversation(w.system, nullptr, w.provider, Lexicon::Default(), req);
  for (size_t i = 0; i < plain.size(); ++i) CHECK(plain[i].mel == tagged[i].mel);
}

TEST_CASE("synthesis input validation") {
  World& w = SharedWorld();
  SynthesisRequest req = w.Request(2, 0.5);
  req.p = 1.5;
  CHECK_THROWS_AS(w.Synth(req), ValidationError);
  req.p = 0.5;
  req.turns[1].speaker_id = req.turns[0].speaker_id;
  CHECK_THROWS_AS(w.Synth(req), ValidationError);
  req = w.Request(2, 0.5);
  CHECK_THROWS_AS(SynthConversation(w.system, nullptr, w.provider, Lexicon::Default(), req),
                  ValidationError);
  req.turns.clear();
  CHECK_THROWS_AS(w.Synth(req), ValidationError);
}

TEST_CASE("script JSON round trip") {
  World& w = SharedWorld();
  const auto script = ScriptFromConversation(w.conversations[1]);
  const auto back = ScriptFromJson(ScriptToJson(script));
  REQUIRE(back.size() == script.size());
  for (size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].speaker_id == script[i].speaker_id);
    CHECK(back[i].tokens == script[i].tokens);
  }
  CHECK_THROWS_AS(ScriptFromJson(nlohmann::json::array()), ValidationError);
  CHECK_THROWS_AS(ScriptFromJson(nlohmann::json{{"turns", {{{"speaker_id", 0}}}}}),
                  ValidationError);
}

TEST_CASE("duration curve has one row per grid point") {
  World& w = SharedWorld();
  std::vector<std::vector<ScriptTurn>> scripts = {w.Request(2, 0).turns};
  std::vector<double> grid;
  for (int i = 1; i <= 10; ++i) grid.push_back(i / 10.0);
  const DurationReport report =
      DurationCurve(w.system, w.tagger, w.provider, Lexicon::Default(), scripts, grid, 8);
  REQUIRE(report.rows.size() == 10);
  for (size_t i = 0; i < grid.size(); ++i) {
    CHECK(report.rows[i].p == grid[i]);
    CHECK(report.rows[i].samples == 2);
    CHECK(report.rows[i].mean_frames > 0.0);
    CHECK(report.rows[i].mean_frames <= 8.0);
  }
  CHECK(report.ToJson()["rows"].size() == 10);
  CHECK_THROWS_AS(
      DurationCurve(w.system, w.tagger, w.provider, Lexicon::Default(), scripts, {}, 8),
      ValidationError);
  CHECK_THROWS_AS(DurationCurve(w.system, w.tagger, w.provider, Lexicon::Default(), scripts,
                                {0.5, 0.2}, 8),
                  ValidationError);
}

TEST_CASE("probe separates one-hot speaker embeddings perfectly") {
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(60, 2);
  std::vector<int> labels;
  for (int i = 0; i < 60; ++i) {
    labels.push_back(i % 2);
    x(i, i % 2) = 1.0;
  }
  CHECK(ProbeSpeaker(x, labels, 1) == 1.0);
  CHECK(ProbeSpeaker(x, labels, 1) == ProbeSpeaker(x, labels, 1));
}

TEST_CASE("probe on noise stays at chance") {
  double total = 0.0;
  const int seeds = 6;
  for (int s = 0; s < seeds; ++s) {
    Rng rng(300 + s);
    Eigen::MatrixXd x(200, 16);
    std::vector<int> labels;
    for (int i = 0; i < x.rows(); ++i) {
      labels.push_back(static_cast<int>(rng.Below(2)));
      for (int j = 0; j < x.cols(); ++j) x(i, j) = rng.Normal();
    }
    total += ProbeSpeaker(x, labels, s);
  }
  CHECK(std::abs(total / seeds - 0.5) <= 0.1);
}

TEST_CASE("probe rejects single-class input") {
  Eigen::MatrixXd x = Eigen::MatrixXd::Ones(40, 3);
  CHECK_THROWS_AS(ProbeSpeaker(x, std::vector<int>(40, 1), 1), ValidationError);
  CHECK_THROWS_AS(ProbeSpeaker(x, std::vector<int>(39, 1), 1), ValidationError);
}

TEST_CASE("spearman correlation") {
  CHECK(SpearmanCorrelation({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
  CHECK(SpearmanCorrelation({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
  // Monotone but nonlinear still ranks perfectly.
  CHECK(SpearmanCorrelation({1, 2, 3, 4, 5}, {1, 8, 27, 64, 125}) == doctest::Approx(1.0));
  // Average ranks for ties: ranks b = (1.5, 1.5, 3, 4), Pearson with (1, 2, 3, 4).
  CHECK(SpearmanCorrelation({1, 2, 3, 4}, {5, 5, 6, 7}) ==
        doctest::Approx(0.9486832980505138).epsilon(1e-12));
  CHECK_THROWS_AS(SpearmanCorrelation({1, 2}, {1}), ValidationError);
}

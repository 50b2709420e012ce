#include <cmath>

#include "doctest.h"
#include "gradient_check.h"
#include "spontts/acoustic.h"
#include "spontts/errors.h"
#include "spontts/rng.h"
#include "spontts/synthetic.h"

using namespace spontts;
using ad::Tape;
using ad::Var;

namespace {

struct Fixture {
  AcousticConfig cfg;
  ad::ParameterStore store;
  Rng rng{11};
  AcousticModel model{cfg, &store, &rng};
};

std::vector<LinguisticFrame> Frames(int n, uint64_t seed) {
  Rng rng(seed);
  std::vector<LinguisticFrame> frames(n);
  for (LinguisticFrame& f : frames) {
    f.phoneme_id = static_cast<int>(rng.Below(8));
    f.tone_id = static_cast<int>(rng.Below(5));
    f.prosody_level = static_cast<int>(rng.Below(4));
  }
  return frames;
}

Eigen::MatrixXd Random(int rows, int cols, uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.Normal();
  return m;
}

}  // namespace

TEST_CASE("encode_text keeps one row per frame and is deterministic") {
  Fixture f;
  const auto frames = Frames(7, 1);
  Tape t1, t2;
  const Var a = f.model.EncodeText(t1, frames);
  const Var b = f.model.EncodeText(t2, frames);
  CHECK(a.rows() == 7);
  CHECK(a.cols() == f.cfg.text_dim);
  CHECK(a.value() == b.value());
}

TEST_CASE("encode_text sees bidirectional context") {
  Fixture f;
  auto frames = Frames(7, 2);
  frames[1].phoneme_id = 1;
  frames[5].phoneme_id = 6;
  Tape t1, t2;
  const Eigen::MatrixXd a = f.model.EncodeText(t1, frames).value();
  std::swap(frames[1], frames[5]);
  const Eigen::MatrixXd b = f.model.EncodeText(t2, frames).value();
  // Row 0 is not swapped itself, so any change comes through context.
  CHECK((a.row(0) - b.row(0)).norm() > 1e-9);
}

TEST_CASE("encode_text rejects unknown ids") {
  Fixture f;
  auto frames = Frames(3, 3);
  Tape tape;
  frames[1].phoneme_id = 8;
  CHECK_THROWS_AS(f.model.EncodeText(tape, frames), ValidationError);
  frames[1].phoneme_id = 0;
  frames[2].tone_id = -1;
  CHECK_THROWS_AS(f.model.EncodeText(tape, frames), ValidationError);
  CHECK_THROWS_AS(f.model.EncodeText(tape, std::vector<LinguisticFrame>{}), ValidationError);
}

TEST_CASE("encode_semantic is aligned and finite on zeros") {
  Fixture f;
  Tape tape;
  const Var b = f.model.EncodeSemantic(tape, Eigen::MatrixXd::Zero(5, f.cfg.semantic_in_dim));
  CHECK(b.rows() == 5);
  CHECK(b.cols() == f.cfg.semantic_dim);
  CHECK(b.value().allFinite());
  CHECK(f.cfg.memory_dim() == 96);
}

TEST_CASE("attention advance for zero raw input is ln 2") {
  Tape tape;
  const int k = 3;
  Eigen::MatrixXd raw = Eigen::MatrixXd::Zero(1, 3 * k);
  AttentionState state{tape.Constant(Eigen::MatrixXd::Constant(1, k, 2.0))};
  const AttentionStepResult r = AttentionFromRaw(tape.Constant(raw), state, 10);
  for (int i = 0; i < k; ++i) CHECK(r.means.value()(0, i) == doctest::Approx(2.0 + std::log(2.0)));
  CHECK(r.weights.value().sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.mixture.value().sum() == doctest::Approx(1.0));
}

TEST_CASE("single dominant component with tight width peaks at its mean") {
  Tape tape;
  const int k = 3;
  Eigen::MatrixXd raw = Eigen::MatrixXd::Zero(1, 3 * k);
  raw(0, 0) = 50.0;  // mixture logit: component 0 dominates
  raw(0, k) = -40.0;  // advance ~ 0
  raw(0, 2 * k) = -5.0;  // width softplus(-5) + floor
  AttentionState state{tape.Constant(Eigen::MatrixXd::Constant(1, k, 3.0))};
  const AttentionStepResult r = AttentionFromRaw(tape.Constant(raw), state, 8);
  Eigen::Index argmax;
  r.weights.value().row(0).maxCoeff(&argmax);
  CHECK(argmax == 3);
  CHECK(r.sigmas.value()(0, 0) > kSigmaFloor);
}

TEST_CASE("attention means never decrease and weights normalize") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    Tape tape;
    const int n = 1 + static_cast<int>(rng.Below(30));
    AttentionState state{tape.Constant(Eigen::MatrixXd::Zero(1, 3))};
    for (int step = 0; step < 20; ++step) {
      Eigen::MatrixXd raw(1, 9);
      for (int i = 0; i < 9; ++i) raw(0, i) = rng.Uniform(-20.0, 20.0);
      const AttentionStepResult r = AttentionFromRaw(tape.Constant(raw), state, n);
      CHECK((r.means.value().array() >= state.means.value().array()).all());
      CHECK(std::abs(r.weights.value().sum() - 1.0) < 1e-6);
      CHECK((r.weights.value().array() >= 0.0).all());
      state.means = r.means;
    }
  }
}

TEST_CASE("teacher-forced decode emits ceil(T/r)*r frames") {
  Fixture f;
  const auto frames = Frames(6, 4);
  for (int t : {20, 21, 1}) {
    Tape tape;
    Mel teacher{Random(t, f.cfg.mel_dim, 9)};
    const Var text = f.model.EncodeText(tape, frames);
    const Var sem = f.model.EncodeSemantic(tape, Random(6, f.cfg.semantic_in_dim, 1));
    const Var spk = f.model.SpeakerEmbedding(tape, 1);
    const Var ctx = tape.Constant(Eigen::MatrixXd::Zero(1, f.cfg.context_dim));
    DecodeOptions opt;
    opt.teacher = &teacher;
    const DecodeResult r = f.model.Decode(tape, text, spk, ctx, sem, opt);
    const int expect = (t + f.cfg.reduction - 1) / f.cfg.reduction * f.cfg.reduction;
    CHECK(r.mel.rows() == expect);
    CHECK(r.mel.cols() == f.cfg.mel_dim);
    CHECK(r.stop_logits.rows() == expect);
    CHECK(r.mel.value().allFinite());
  }
}

TEST_CASE("decode output depends on the previous-utterance embedding") {
  Fixture f;
  const auto frames = Frames(6, 4);
  Mel teacher{Random(12, f.cfg.mel_dim, 3)};
  auto run = [&](const Eigen::MatrixXd& context) {
    Tape tape;
    DecodeOptions opt;
    opt.teacher = &teacher;
    return f.model
        .Decode(tape, f.model.EncodeText(tape, frames),
                f.model.SpeakerEmbedding(tape, 0), tape.Constant(context),
                f.model.EncodeSemantic(tape, Random(6, 32, 2)), opt)
        .mel.value();
  };
  const Eigen::MatrixXd zero = run(Eigen::MatrixXd::Zero(1, 64));
  const Eigen::MatrixXd other = run(Random(1, 64, 8));
  CHECK(zero.allFinite());
  CHECK((zero - other).norm() > 1e-6);
}

TEST_CASE("free-running decode respects max_frames and flags overflow") {
  Fixture f;
  const auto frames = Frames(4, 6);
  Tape tape;
  tape.set_grad_enabled(false);
  DecodeOptions opt;
  opt.max_frames = 10;
  const DecodeResult r =
      f.model.Decode(tape, f.model.EncodeText(tape, frames), f.model.SpeakerEmbedding(tape, 0),
                     tape.Constant(Eigen::MatrixXd::Zero(1, 64)),
                     f.model.EncodeSemantic(tape, Random(4, 32, 2)), opt);
  CHECK(r.mel.rows() <= 10);
  if (r.overflow) CHECK(r.mel.rows() == 10);
}

TEST_CASE("speaker embedding rejects out-of-range ids") {
  Fixture f;
  Tape tape;
  CHECK(f.model.SpeakerEmbedding(tape, 1).cols() == f.cfg.speaker_dim);
  CHECK_THROWS_AS(f.model.SpeakerEmbedding(tape, 2), ValidationError);
  CHECK_THROWS_AS(f.model.SpeakerEmbedding(tape, -1), ValidationError);
}

TEST_CASE("reconstruction loss examples") {
  const Eigen::MatrixXd m = Random(5, 16, 1);
  CHECK(ReconstructionLoss(Mel{m}, Mel{m}) == 0.0);
  CHECK(ReconstructionLoss(Mel{m.array() + 1.0}, Mel{m}) == doctest::Approx(1.0).epsilon(1e-12));
  const Eigen::MatrixXd o = Random(5, 16, 2);
  CHECK(ReconstructionLoss(Mel{m}, Mel{o}) == ReconstructionLoss(Mel{o}, Mel{m}));
  CHECK_THROWS_AS(ReconstructionLoss(Mel{m}, Mel{Random(4, 16, 3)}), ValidationError);
}

TEST_CASE("reconstruction loss gradient matches finite differences") {
  ad::ParameterStore store;
  ad::Parameter* pred = store.Create("pred", Random(3, 3, 4));
  const Eigen::MatrixXd target = Random(3, 3, 5);
  const auto cmp = testing::CompareGradients({pred}, [&](Tape& tape) {
    return ReconstructionLoss(tape.Param(pred), tape.Constant(target));
  });
  CHECK(cmp.relative_error < 1e-4);
  CHECK(cmp.analytic_norm > 0.0);
}

TEST_CASE("stop targets and frames-until-stop") {
  const Eigen::MatrixXd targets = StopTargets(5, 8);
  CHECK(targets.rows() == 8);
  for (int i = 0; i < 8; ++i) CHECK(targets(i, 0) == (i >= 4 ? 1.0 : 0.0));
  Eigen::MatrixXd logits = Eigen::MatrixXd::Constant(6, 1, -3.0);
  CHECK(FramesUntilStop(logits) == 6);
  logits(3, 0) = 0.5;
  logits(5, 0) = 2.0;
  CHECK(FramesUntilStop(logits) == 4);
}

TEST_CASE("every parameter group receives gradient") {
  Fixture f;
  const auto frames = Frames(6, 7);
  Mel teacher{Random(14, f.cfg.mel_dim, 3, 0.5)};
  Tape tape;
  DecodeOptions opt;
  opt.teacher = &teacher;
  const DecodeResult r =
      f.model.Decode(tape, f.model.EncodeText(tape, frames), f.model.SpeakerEmbedding(tape, 1),
                     tape.Constant(Random(1, 64, 5)),
                     f.model.EncodeSemantic(tape, Random(6, 32, 6)), opt);
  const Var loss = ReconstructionLoss(ad::SliceRows(r.mel, 0, 14), tape.Constant(teacher.data));
  f.store.ZeroGrad();
  tape.Backward(loss);
  for (const char* prefix : {"text_encoder.", "semantic_encoder.", "speaker_table", "decoder."}) {
    double norm = 0.0;
    for (ad::Parameter* p : f.store.WithPrefix(prefix)) norm += p->grad.squaredNorm();
    INFO(prefix);
    CHECK(norm > 0.0);
  }
}

TEST_CASE("config JSON round trip and validation") {
  AcousticConfig cfg;
  cfg.reduction = 3;
  cfg.prenet_dims = {48, 24};
  const AcousticConfig back = AcousticConfig::FromJson(cfg.ToJson());
  CHECK(back.ToJson() == cfg.ToJson());
  cfg.reduction = 0;
  CHECK_THROWS_AS(cfg.Validate(), ValidationError);
}

#include <cmath>

#include "doctest.h"
#include "gradient_check.h"
#include "spontts/context.h"
#include "spontts/errors.h"
#include "spontts/rng.h"

using namespace spontts;
using ad::Tape;
using ad::Var;

namespace {

Eigen::MatrixXd Random(int rows, int cols, uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.Normal();
  return m;
}

struct Fixture {
  ContextConfig cfg;
  ad::ParameterStore store;
  Rng rng;
  ContextEncoder enc;
  explicit Fixture(uint64_t seed = 3) : rng(seed), enc(cfg, &store, "f_p", &rng) {}
};

// Gradient of the speaker loss w.r.t. every parameter under the given wiring.
std::vector<Eigen::MatrixXd> ClassifierGradients(Fixture& f, const Eigen::MatrixXd& mel,
                                                 int speaker, double scale, bool reverse) {
  f.store.ZeroGrad();
  Tape tape;
  const Var r = f.enc.Reference(tape, tape.Constant(mel));
  tape.Backward(SpeakerLoss(f.enc.SpeakerLogits(tape, r, scale, reverse), speaker));
  std::vector<Eigen::MatrixXd> out;
  for (const auto& p : f.store.all()) out.push_back(p->grad);
  return out;
}

}  // namespace

TEST_CASE("embedding length does not depend on mel length") {
  Fixture f;
  for (int t : {1, 4, 40, 400}) {
    Tape tape;
    const Var r = f.enc.Reference(tape, tape.Constant(Random(t, 16, t)));
    const Var e = f.enc.Embed(tape, tape.Constant(Random(t, 16, t)));
    CHECK(r.rows() == 1);
    CHECK(r.cols() == f.cfg.reference_dim);
    CHECK(e.rows() == 1);
    CHECK(e.cols() == f.cfg.embed_dim);
    CHECK(e.value().allFinite());
  }
}

TEST_CASE("zero mel gives a finite, deterministic embedding") {
  Fixture f;
  Tape t1, t2;
  const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(20, 16);
  const Eigen::MatrixXd a = f.enc.Embed(t1, t1.Constant(zero)).value();
  const Eigen::MatrixXd b = f.enc.Embed(t2, t2.Constant(zero)).value();
  CHECK(a.allFinite());
  CHECK(a == b);
}

TEST_CASE("style attention rows are simplices") {
  Fixture f;
  Rng rng(17);
  for (int i = 0; i < 1000; ++i) {
    Tape tape;
    Eigen::MatrixXd r(1, f.cfg.reference_dim);
    const double scale = rng.Uniform(0.0, 20.0);
    for (int j = 0; j < r.cols(); ++j) r(0, j) = scale * rng.Normal();
    const StyleOutput s = f.enc.Style(tape, tape.Constant(r));
    CHECK(s.weights.rows() == f.cfg.num_heads);
    CHECK(s.weights.cols() == 10);
    CHECK((s.weights.value().array() >= 0.0).all());
    for (int h = 0; h < s.weights.rows(); ++h) {
      CHECK(std::abs(s.weights.value().row(h).sum() - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("one-hot style weights reproduce the token value projection") {
  Fixture f;
  Tape tape;
  const Var r = tape.Constant(Random(1, f.cfg.reference_dim, 4));
  for (int k : {0, 4, 9}) {
    Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(1, 10);
    onehot(0, k) = 1.0;
    const StyleOutput s = f.enc.Style(tape, r, &onehot);
    CHECK((s.embedding.value() - f.enc.TokenOutput(k)).cwiseAbs().maxCoeff() < 1e-12);
  }
  Eigen::MatrixXd bad = Eigen::MatrixXd::Zero(2, 10);
  CHECK_THROWS_AS(f.enc.Style(tape, r, &bad), ValidationError);
}

TEST_CASE("gradient reversal examples") {
  ad::ParameterStore store;
  ad::Parameter* x = store.Create("x", (Eigen::MatrixXd(1, 2) << 1.0, 2.0).finished());
  {
    Tape tape;
    const Var y = ad::GradientReversal(tape.Param(x), 1.0);
    CHECK(y.value() == x->value);
    const Eigen::MatrixXd g = (Eigen::MatrixXd(1, 2) << 0.5, -1.0).finished();
    tape.Backward(ad::Sum(ad::Mul(y, tape.Constant(g))));
    CHECK(x->grad(0, 0) == -0.5);
    CHECK(x->grad(0, 1) == 1.0);
  }
  ad::Parameter* z = store.Create("z", Eigen::MatrixXd::Constant(1, 1, 3.0));
  Tape tape;
  tape.Backward(ad::Scale(ad::GradientReversal(tape.Param(z), 0.5), 2.0));
  CHECK(z->grad(0, 0) == -1.0);
}

TEST_CASE("speaker loss examples") {
  Tape tape;
  CHECK(SpeakerLoss(tape.Constant(Eigen::MatrixXd::Zero(1, 2)), 1).scalar() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(SpeakerLoss(tape.Constant((Eigen::MatrixXd(1, 2) << 40.0, -40.0).finished()), 0)
            .scalar() < 1e-12);
  CHECK_THROWS_AS(SpeakerLoss(tape.Constant(Eigen::MatrixXd::Zero(1, 2)), 2), ValidationError);
  CHECK_THROWS_AS(SpeakerLoss(tape.Constant(Eigen::MatrixXd::Zero(1, 2)), -1), ValidationError);
}

TEST_CASE("reversed classifier gradient is -scale times the plain one") {
  Rng rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    Fixture f(100 + trial);
    const Eigen::MatrixXd mel = Random(8 + trial * 3, 16, trial);
    const int speaker = trial % 2;
    const double scale = rng.Uniform(0.0, 2.0);
    const auto reversed = ClassifierGradients(f, mel, speaker, scale, true);
    const auto plain = ClassifierGradients(f, mel, speaker, scale, false);
    double upstream = 0.0;
    for (size_t i = 0; i < f.store.size(); ++i) {
      const std::string& name = f.store.all()[i]->name();
      if (name.find(".reference.") != std::string::npos) {
        CHECK((reversed[i] + scale * plain[i]).cwiseAbs().maxCoeff() < 1e-6);
        upstream += plain[i].squaredNorm();
      } else {
        CHECK((reversed[i] - plain[i]).cwiseAbs().maxCoeff() < 1e-12);
      }
    }
    CHECK(upstream > 0.0);
  }
}

TEST_CASE("negative GRL scale is rejected") {
  Fixture f;
  Tape tape;
  const Var r = tape.Constant(Random(1, 32, 1));
  CHECK_THROWS_AS(f.enc.SpeakerLogits(tape, r, -0.1), ValidationError);
}

TEST_CASE("next predictor identity and gradient flow") {
  ContextConfig cfg;
  ad::ParameterStore store;
  Rng rng(5);
  NextPredictor next(cfg, &store, "next", &rng);
  const Eigen::MatrixXd e = Random(1, 64, 2);
  {
    Tape t1, t2;
    const Eigen::MatrixXd a = next.Forward(t1, t1.Constant(e)).value();
    CHECK(a == next.Forward(t2, t2.Constant(e)).value());
    CHECK(a.cols() == 64);
  }
  {
    Tape tape;
    CHECK_THROWS_AS(next.Forward(tape, tape.Constant(Random(1, 63, 1))), ValidationError);
  }
  {
    store.ZeroGrad();
    Tape tape;
    tape.Backward(EmbeddingLoss(next.Forward(tape, tape.Constant(e)),
                                tape.Constant(Random(1, 64, 9))));
    double norm = 0.0;
    for (ad::Parameter* p : store.WithPrefix("next")) norm += p->grad.squaredNorm();
    CHECK(norm > 0.0);
  }
  next.SetIdentity();
  Tape tape;
  CHECK(next.Forward(tape, tape.Constant(e)).value() == e);
}

TEST_CASE("embedding loss examples") {
  const Eigen::RowVectorXd zero = Eigen::RowVectorXd::Zero(2);
  Eigen::RowVectorXd target(2);
  target << 3.0, 4.0;
  CHECK(EmbeddingLoss(zero, target) == 12.5);
  CHECK(EmbeddingLoss(target, target) == 0.0);
  const Eigen::RowVectorXd a = Random(1, 64, 1).row(0);
  const Eigen::RowVectorXd b = Random(1, 64, 2).row(0);
  for (double c : {0.5, 3.0, -2.0}) {
    CHECK(EmbeddingLoss(Eigen::RowVectorXd(c * a), Eigen::RowVectorXd(c * b)) ==
          doctest::Approx(c * c * EmbeddingLoss(a, b)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(EmbeddingLoss(zero, Eigen::RowVectorXd::Zero(3)), ValidationError);
}

TEST_CASE("embedding loss stops gradient into the target") {
  ad::ParameterStore store;
  ad::Parameter* pred = store.Create("pred", Random(1, 6, 1));
  ad::Parameter* target = store.Create("target", Random(1, 6, 2));
  Tape tape;
  tape.Backward(EmbeddingLoss(tape.Param(pred), tape.Param(target)));
  CHECK(pred->grad.norm() > 0.0);
  CHECK(target->grad.norm() == 0.0);

  const auto cmp = testing::CompareGradients({pred}, [&](Tape& t) {
    return EmbeddingLoss(t.Param(pred), t.Constant(target->value));
  });
  CHECK(cmp.relative_error < 1e-4);
}

TEST_CASE("data-dependent init normalizes the first convolution") {
  Fixture f;
  std::vector<Eigen::MatrixXd> mels;
  for (int i = 0; i < 6; ++i) mels.push_back(Random(30 + i, 16, 40 + i, 0.3));
  std::vector<const Eigen::MatrixXd*> ptrs;
  for (const auto& m : mels) ptrs.push_back(&m);
  f.enc.InitializeFromData(ptrs);
  ad::Parameter* w = f.store.Find("f_p.reference.conv0.weight");
  ad::Parameter* b = f.store.Find("f_p.reference.conv0.bias");
  REQUIRE(w != nullptr);
  REQUIRE(b != nullptr);
  const int cout = static_cast<int>(w->value.cols());
  Eigen::ArrayXd sum = Eigen::ArrayXd::Zero(cout), sq = Eigen::ArrayXd::Zero(cout);
  double count = 0.0;
  for (const auto& m : mels) {
    Tape tape;
    const Eigen::MatrixXd y = ad::Conv2dStride2(tape.Constant(m), tape.Constant(w->value),
                                                tape.Constant(b->value), 1, 16)
                                  .value();
    const int freq = static_cast<int>(y.cols()) / cout;
    for (int c = 0; c < cout; ++c) {
      const Eigen::MatrixXd block = y.middleCols(c * freq, freq);
      sum(c) += block.sum();
      sq(c) += block.squaredNorm();
    }
    count += y.rows() * freq;
  }
  const Eigen::ArrayXd mean = sum / count;
  const Eigen::ArrayXd var = sq / count - mean.square();
  CHECK(mean.abs().maxCoeff() < 1e-9);
  CHECK((var - 1.0).abs().maxCoeff() < 1e-6);
}

TEST_CASE("context config validation") {
  ContextConfig cfg;
  CHECK(ContextConfig::FromJson(cfg.ToJson()).ToJson() == cfg.ToJson());
  cfg.num_tokens = 8;
  CHECK_THROWS_AS(cfg.Validate(), ValidationError);
  cfg.num_tokens = 10;
  cfg.num_heads = 5;  // 64 not divisible
  CHECK_THROWS_AS(cfg.Validate(), ValidationError);
}

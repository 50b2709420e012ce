#ifndef SPONTTS_TESTS_TAGGER_ORACLE_H_
#define SPONTTS_TESTS_TAGGER_ORACLE_H_

// Independent reference implementations used to check the tagger module.

#include <array>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "spontts/corpus.h"
#include "spontts/rng.h"
#include "spontts/tagger.h"

namespace spontts::testing {

// Selection by repeated extraction of the best remaining token (no sort).
inline std::vector<BehaviorTag> BruteForceSelect(const Eigen::MatrixXd& probs,
                                                 double p) {
  const int m = static_cast<int>(probs.rows());
  const int n = static_cast<int>(std::floor(p * m));
  std::vector<BehaviorTag> out(m, BehaviorTag::kNone);
  std::vector<bool> taken(m, false);
  for (int round = 0; round < n; ++round) {
    int pick = -1;
    double pick_score = -1.0;
    for (int i = 0; i < m; ++i) {
      if (taken[i]) continue;
      const double s = std::max({probs(i, 1), probs(i, 2), probs(i, 3)});
      if (pick < 0 || s > pick_score) {
        pick = i;
        pick_score = s;
      }
    }
    taken[pick] = true;
    const double fp = probs(pick, 1), pl = probs(pick, 2), both = probs(pick, 3);
    if (fp >= pl && fp >= both) {
      out[pick] = BehaviorTag::kFilledPause;
    } else if (pl >= both) {
      out[pick] = BehaviorTag::kProlongation;
    } else {
      out[pick] = BehaviorTag::kBoth;
    }
  }
  return out;
}

// Random simplex rows. With `quantize`, probabilities come from a small grid
// so ties are frequent.
inline Eigen::MatrixXd RandomSimplexRows(Rng& rng, int m, bool quantize) {
  Eigen::MatrixXd probs(m, 4);
  for (int i = 0; i < m; ++i) {
    if (quantize) {
      std::array<int, 4> units{};
      for (int k = 0; k < 8; ++k) ++units[rng.Below(4)];
      for (int c = 0; c < 4; ++c) probs(i, c) = units[c] / 8.0;
    } else {
      double total = 0.0;
      for (int c = 0; c < 4; ++c) {
        probs(i, c) = -std::log(1.0 - rng.Uniform());
        total += probs(i, c);
      }
      probs.row(i) /= total;
    }
  }
  return probs;
}

struct OracleClassMetrics {
  double precision, recall, f1;
};

// Confusion-matrix reference for per-class one-vs-rest metrics.
inline std::array<OracleClassMetrics, 4> ConfusionMetrics(
    const std::vector<std::vector<BehaviorTag>>& pred,
    const std::vector<std::vector<BehaviorTag>>& gold) {
  double confusion[4][4] = {};
  for (size_t s = 0; s < pred.size(); ++s)
    for (size_t i = 0; i < pred[s].size(); ++i)
      confusion[TagIndex(gold[s][i])][TagIndex(pred[s][i])] += 1.0;
  std::array<OracleClassMetrics, 4> out{};
  for (int c = 0; c < 4; ++c) {
    double col = 0, row = 0;
    for (int k = 0; k < 4; ++k) {
      col += confusion[k][c];
      row += confusion[c][k];
    }
    const double tp = confusion[c][c];
    const double p = col > 0 ? tp / col : 0.0;
    const double r = row > 0 ? tp / row : 0.0;
    out[c] = {p, r, (p + r) > 0 ? 2 * p * r / (p + r) : 0.0};
  }
  return out;
}

}  // namespace spontts::testing

#endif  // SPONTTS_TESTS_TAGGER_ORACLE_H_

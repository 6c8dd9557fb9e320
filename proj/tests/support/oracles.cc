// Copyright 2026 The Somnoseq Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "support/oracles.h"

#include <algorithm>
#include <cmath>
#include <map>

namespace somnoseq::testing {

double oracle_sequence_loss(const std::vector<std::vector<std::vector<double>>>& logits,
                            const std::vector<std::vector<int>>& targets, OracleLoss kind,
                            bool eod_as_class) {
  std::map<int, std::vector<double>> by_class;
  for (std::size_t t = 0; t < logits.size(); ++t) {
    for (std::size_t s = 0; s < logits[t].size(); ++s) {
      const int y = targets[s][t];
      if (y == 5 && !eod_as_class) continue;
      const auto& z = logits[t][s];
      const double m = *std::max_element(z.begin(), z.end());
      double denom = 0.0;
      for (double v : z) denom += std::exp(v - m);
      double err = 0.0;
      for (std::size_t k = 0; k < z.size(); ++k) {
        const double p = std::exp(z[k] - m) / denom;
        const double target = static_cast<int>(k) == y ? 1.0 : 0.0;
        err += (target - p) * (target - p);
      }
      by_class[y].push_back(err / static_cast<double>(z.size()));
    }
  }
  double total = 0.0;
  std::size_t samples = 0;
  for (const auto& [c, errs] : by_class) samples += errs.size();
  for (const auto& [c, errs] : by_class) {
    double l = 0.0;
    for (double e : errs) l += e;
    l /= static_cast<double>(errs.size());
    switch (kind) {
      case OracleLoss::kMfe: total += l; break;
      case OracleLoss::kMsfe: total += l * l; break;
      case OracleLoss::kMse:
        total += l * static_cast<double>(errs.size()) / static_cast<double>(samples);
        break;
    }
  }
  return total;
}

OracleMetrics oracle_metrics(const Matrix5& m) {
  OracleMetrics r;
  double n = 0.0, diag = 0.0;
  std::array<double, 5> rows{}, cols{};
  for (int a = 0; a < 5; ++a) {
    for (int p = 0; p < 5; ++p) {
      const double v = static_cast<double>(m[a][p]);
      n += v;
      rows[a] += v;
      cols[p] += v;
      if (a == p) diag += v;
    }
  }
  double f1_sum = 0.0, chance = 0.0;
  for (int c = 0; c < 5; ++c) {
    const double tp = static_cast<double>(m[c][c]);
    const double fp = cols[c] - tp;
    const double fn = rows[c] - tp;
    const double tn = n - tp - fp - fn;
    r.precision[c] = 100.0 * tp / (tp + fp);
    r.recall[c] = 100.0 * tp / (tp + fn);
    r.specificity[c] = 100.0 * tn / (tn + fp);
    r.f1[c] = 2.0 * r.precision[c] * r.recall[c] / (r.precision[c] + r.recall[c]);
    f1_sum += r.f1[c];
    chance += rows[c] * cols[c];
  }
  r.accuracy = 100.0 * diag / n;
  r.macro_f1 = f1_sum / 5.0;
  const double po = diag / n;
  const double pe = chance / (n * n);
  r.kappa = (po - pe) / (1.0 - pe);
  return r;
}

Matrix5 published_confusion_fpz_cz() {
  return {{{7161, 432, 67, 27, 219},
           {442, 1486, 364, 25, 409},
           {359, 735, 14187, 1035, 837},
           {37, 9, 560, 4857, 2},
           {153, 307, 368, 2, 6520}}};
}

Matrix5 published_confusion_pz_oz() {
  return {{{7094, 398, 82, 41, 238},
           {539, 1167, 455, 29, 492},
           {114, 655, 14220, 1157, 971},
           {17, 12, 791, 4658, 10},
           {100, 314, 506, 50, 6489}}};
}

}  // namespace somnoseq::testing

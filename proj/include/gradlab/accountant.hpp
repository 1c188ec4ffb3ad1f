/*
 * Copyright 2025 The gradlab Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#ifndef GRADLAB_ACCOUNTANT_HPP_
#define GRADLAB_ACCOUNTANT_HPP_

#include <string>
#include <vector>

namespace gradlab {

// Orders used everywhere: integers 2..64 plus {128, 256}.
const std::vector<int>& rdp_alpha_grid();

// Renyi DP of the subsampled Gaussian mechanism at integer order alpha.
// q = 1 is the plain Gaussian, exactly alpha / (2 sigma^2). For q < 1 this
// is the binomial-expansion upper bound of Mironov, Talwar and Zhang,
// "Renyi Differential Privacy of the Sampled Gaussian Mechanism" (2019),
// Eq. for integer alpha, evaluated in log space.
double rdp_gaussian(double sigma, double q, int alpha);

struct BudgetEntry {
  double sigma = 0.0;
  double q = 1.0;
  int steps = 0;
};

struct PrivacyBudget {
  std::vector<BudgetEntry> log;
  double delta = 1e-5;

  void add_steps(double sigma, double q, int steps) {
    log.push_back({sigma, q, steps});
  }
};

struct EpsDelta {
  double eps = 0.0;
  double delta = 0.0;
  int best_alpha = 0;
};

// eps = min over the alpha grid of [sum_entries steps * rdp(alpha)
//       + ln(1/delta) / (alpha - 1)].
EpsDelta compose_and_convert(const PrivacyBudget& budget);

// Bisection on sigma in [1e-2, 1e3] until the accounted eps is within 1% of
// the target. Throws std::range_error if the target is outside that range.
double calibrate_sigma(double target_eps, double delta, double q, int steps);

// One CSV row per logged entry plus the running converted eps.
std::string budget_to_csv(const PrivacyBudget& budget);

}  // namespace gradlab

#endif  // GRADLAB_ACCOUNTANT_HPP_

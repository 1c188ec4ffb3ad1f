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
#include "gradlab/accountant.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "gradlab/error.hpp"

namespace gradlab {

const std::vector<int>& rdp_alpha_grid() {
  static const std::vector<int> grid = [] {
    std::vector<int> g;
    for (int a = 2; a <= 64; ++a) g.push_back(a);
    g.push_back(128);
    g.push_back(256);
    return g;
  }();
  return grid;
}

namespace {

// log(exp(a) + exp(b)) without overflow.
double log_add(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  double hi = std::max(a, b), lo = std::min(a, b);
  return hi + std::log1p(std::exp(lo - hi));
}

double log_binom(int n, int k) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

}  // namespace

double rdp_gaussian(double sigma, double q, int alpha) {
  if (sigma <= 0.0) throw ContractError("rdp_gaussian: sigma must be > 0");
  if (q <= 0.0 || q > 1.0) {
    throw ContractError("rdp_gaussian: q must be in (0, 1]");
  }
  if (alpha <= 1) throw ContractError("rdp_gaussian: alpha must be > 1");

  if (q == 1.0) return alpha / (2.0 * sigma * sigma);

  // A(alpha) = sum_{k=0}^{alpha} C(alpha,k) (1-q)^{alpha-k} q^k
  //            exp(k(k-1) / (2 sigma^2)); RDP = log A / (alpha - 1).
  double log_a = -std::numeric_limits<double>::infinity();
  double log_q = std::log(q), log_1mq = std::log1p(-q);
  for (int k = 0; k <= alpha; ++k) {
    double term = log_binom(alpha, k) + k * log_q + (alpha - k) * log_1mq +
                  (static_cast<double>(k) * k - k) / (2.0 * sigma * sigma);
    log_a = log_add(log_a, term);
  }
  return std::max(0.0, log_a / (alpha - 1));
}

EpsDelta compose_and_convert(const PrivacyBudget& budget) {
  if (budget.log.empty()) {
    throw ContractError("compose_and_convert: empty budget log");
  }
  if (budget.delta <= 0.0 || budget.delta >= 1.0) {
    throw ContractError("compose_and_convert: delta must be in (0, 1)");
  }
  for (const auto& e : budget.log) {
    if (e.steps < 0) throw ContractError("compose_and_convert: steps < 0");
  }

  EpsDelta out;
  out.delta = budget.delta;
  out.eps = std::numeric_limits<double>::infinity();
  double log_inv_delta = std::log(1.0 / budget.delta);
  for (int alpha : rdp_alpha_grid()) {
    double total = 0.0;
    for (const auto& e : budget.log) {
      total += e.steps * rdp_gaussian(e.sigma, e.q, alpha);
    }
    double eps = total + log_inv_delta / (alpha - 1);
    if (eps < out.eps) {
      out.eps = eps;
      out.best_alpha = alpha;
    }
  }
  return out;
}

double calibrate_sigma(double target_eps, double delta, double q, int steps) {
  if (target_eps <= 0.0) {
    throw ContractError("calibrate_sigma: target eps must be > 0");
  }
  if (steps <= 0) throw ContractError("calibrate_sigma: steps must be > 0");

  auto eps_at = [&](double sigma) {
    PrivacyBudget b;
    b.delta = delta;
    b.add_steps(sigma, q, steps);
    return compose_and_convert(b).eps;
  };

  double lo = 1e-2, hi = 1e3;
  double eps_lo = eps_at(lo), eps_hi = eps_at(hi);
  // eps decreases in sigma: need eps(lo) >= target >= eps(hi).
  if (target_eps > eps_lo || target_eps < eps_hi) {
    throw std::range_error("calibrate_sigma: target eps " +
                           std::to_string(target_eps) +
                           " outside reachable range [" +
                           std::to_string(eps_hi) + ", " +
                           std::to_string(eps_lo) + "]");
  }
  for (int i = 0; i < 200; ++i) {
    double mid = 0.5 * (lo + hi);
    double e = eps_at(mid);
    if (std::abs(e - target_eps) / target_eps < 1e-3) return mid;
    if (e > target_eps) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

std::string budget_to_csv(const PrivacyBudget& budget) {
  std::ostringstream os;
  os << "entry,sigma,q,steps,eps_cumulative,delta,best_alpha\n";
  PrivacyBudget partial;
  partial.delta = budget.delta;
  for (size_t i = 0; i < budget.log.size(); ++i) {
    const auto& e = budget.log[i];
    partial.log.push_back(e);
    auto acc = compose_and_convert(partial);
    os << i << ',' << e.sigma << ',' << e.q << ',' << e.steps << ','
       << acc.eps << ',' << acc.delta << ',' << acc.best_alpha << '\n';
  }
  return os.str();
}

}  // namespace gradlab

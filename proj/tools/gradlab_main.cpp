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
#include <cstdio>
#include <exception>
#include <string>

#include "CLI11.hpp"
#include "gradlab/experiment.hpp"

namespace {

struct CommonOpts {
  std::string config;
  std::string out = "out";
  long long seed = -1;
  int jobs = 1;
};

void add_common(CLI::App* sub, CommonOpts& o) {
  sub->add_option("--config", o.config, "experiment config file");
  sub->add_option("--out", o.out, "output directory")->capture_default_str();
  sub->add_option("--seed", o.seed, "override experiment.seed");
  sub->add_option("--jobs", o.jobs, "worker threads (sweep)")
      ->capture_default_str();
}

gradlab::ExperimentConfig load_config(const CommonOpts& o) {
  auto cfg = o.config.empty()
                 ? gradlab::ExperimentConfig::parse_string("")
                 : gradlab::ExperimentConfig::parse_file(o.config);
  if (o.seed >= 0) {
    cfg.set("experiment.seed", std::to_string(o.seed));
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "gradlab: gradient leakage attacks against federated training, with "
      "and without differential privacy"};
  app.require_subcommand(1);

  CommonOpts train_o, attack_o, audit_o, acct_o, sweep_o;
  auto* train = app.add_subcommand("train", "train a classifier");
  add_common(train, train_o);
  auto* attack = app.add_subcommand(
      "attack", "reconstruct a training image from a captured gradient");
  add_common(attack, attack_o);
  auto* audit = app.add_subcommand(
      "audit", "empirical privacy lower bounds vs analytic references");
  add_common(audit, audit_o);
  auto* acct = app.add_subcommand("accountant", "compose a privacy budget");
  add_common(acct, acct_o);
  auto* sweep = app.add_subcommand("sweep", "scan victim model seeds");
  add_common(sweep, sweep_o);

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      auto out = gradlab::run_classification_experiment(load_config(train_o),
                                                        train_o.out);
      std::printf("status=%s epochs=%d train_loss=%.6g val_loss=%.6g "
                  "accuracy=%.4f\n",
                  out.diverged ? "diverged" : "completed", out.epochs_run,
                  out.final_train_loss, out.final_val_loss, out.val_accuracy);
    } else if (attack->parsed()) {
      auto out = gradlab::run_attack_experiment(load_config(attack_o),
                                                attack_o.out);
      std::printf("status=%s label=%d ssim=%.4f loss=%.6g sigma=%.4g\n",
                  out.result.trace.diverged ? "diverged" : "completed",
                  out.result.y_rec, out.final_ssim,
                  out.result.trace.loss.empty() ? 0.0
                                                : out.result.trace.loss.back(),
                  out.noise_sigma);
    } else if (audit->parsed()) {
      auto rows = gradlab::run_audit(load_config(audit_o), audit_o.out);
      for (const auto& r : rows) {
        std::printf("%s sigma=%g q=%g steps=%d eps_emp=%.4f eps_ref=%.4f%s\n",
                    r.mechanism.c_str(), r.sigma, r.q, r.steps,
                    r.eps_empirical, r.eps_reference,
                    r.wide_interval ? " (wide interval)" : "");
      }
    } else if (acct->parsed()) {
      double eps = gradlab::run_accountant(load_config(acct_o), acct_o.out);
      std::printf("eps=%.6f\n", eps);
    } else if (sweep->parsed()) {
      auto rows = gradlab::run_sweep(load_config(sweep_o), sweep_o.out,
                                     sweep_o.jobs);
      for (const auto& r : rows) {
        std::printf("seed=%llu loss=%.6g ssim=%.4f%s\n",
                    static_cast<unsigned long long>(r.model_seed),
                    r.final_loss, r.final_ssim,
                    r.diverged ? " (diverged)" : "");
      }
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

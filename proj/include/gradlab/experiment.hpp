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
#ifndef GRADLAB_EXPERIMENT_HPP_
#define GRADLAB_EXPERIMENT_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gradlab/attack.hpp"
#include "gradlab/dataio.hpp"
#include "gradlab/fedsim.hpp"
#include "gradlab/metrics.hpp"

namespace gradlab {

// Victim model seed frozen from a 32-candidate stability scan: the first
// seed whose no-privacy reconstruction reaches SSIM >= 0.85.
extern const std::uint64_t kStableModelSeed;

// Flat key-value config with [section] headers; keys address as
// "section.key". Unknown keys are rejected at parse time.
class ExperimentConfig {
 public:
  static ExperimentConfig parse_file(const std::string& path);
  static ExperimentConfig parse_string(const std::string& text);

  bool has(const std::string& key) const;
  void set(const std::string& key, const std::string& value);

  std::string get_str(const std::string& key, const std::string& def) const;
  double get_double(const std::string& key, double def) const;
  int get_int(const std::string& key, int def) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t def) const;
  bool get_bool(const std::string& key, bool def) const;

  std::string echo() const;  // canonical sorted key = value dump

 private:
  std::map<std::string, std::string> kv_;
};

struct TrainOutcome {
  bool diverged = false;
  int epochs_run = 0;
  double final_train_loss = 0.0;
  double final_val_loss = 0.0;
  double val_accuracy = 0.0;
  ClassificationMetrics metrics;
};

// Trains the binary CNN under the configured regime; writes trace.csv,
// metrics.csv, loss.svg and manifest.txt into out_dir.
TrainOutcome run_classification_experiment(const ExperimentConfig& cfg,
                                           const std::string& out_dir);

struct AttackOutcome {
  AttackResult result;
  double final_ssim = 0.0;
  double noise_sigma = 0.0;  // dp-sgd noise multiplier actually used
};

// Builds the victim, produces a capture under the configured regime, runs
// the reconstruction attack; writes trace.csv, recon_####.pgm snapshots,
// loss.svg, ssim.svg and manifest.txt into out_dir.
AttackOutcome run_attack_experiment(const ExperimentConfig& cfg,
                                    const std::string& out_dir);

struct AuditRow {
  std::string mechanism;
  double sigma = 0.0;
  double q = 1.0;
  int steps = 1;
  double eps_empirical = 0.0;
  double eps_reference = 0.0;  // analytic or accountant value
  bool wide_interval = false;
};

std::vector<AuditRow> run_audit(const ExperimentConfig& cfg,
                                const std::string& out_dir);

// Writes the composed privacy budget (budget.csv) for the configured
// (sigma | target eps, delta, q, steps); returns the converted eps.
double run_accountant(const ExperimentConfig& cfg, const std::string& out_dir);

struct SweepRow {
  std::uint64_t model_seed = 0;
  double final_loss = 0.0;
  double final_ssim = 0.0;
  bool diverged = false;
};

// No-privacy attack across candidate model seeds; jobs > 1 runs them in
// parallel. Writes sweep.csv into out_dir.
std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg,
                                const std::string& out_dir, int jobs);

struct PlotSeries {
  std::string name;
  std::vector<double> x, y;
};

// Hand-rolled SVG polyline plot; no plotting dependency.
void svg_line_plot(const std::string& path, const std::string& title,
                   const std::string& x_label, const std::string& y_label,
                   const std::vector<PlotSeries>& series, bool log_y = false);

// Config echo plus an FNV-1a content hash per output file.
void write_manifest(const std::string& out_dir, const std::string& config_echo,
                    const std::vector<std::string>& files);

Dataset load_or_synthesize_dataset(const ExperimentConfig& cfg);

}  // namespace gradlab

#endif  // GRADLAB_EXPERIMENT_HPP_

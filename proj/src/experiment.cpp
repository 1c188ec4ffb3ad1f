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
#include "gradlab/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <thread>

#include "gradlab/accountant.hpp"
#include "gradlab/dp.hpp"
#include "gradlab/error.hpp"
#include "gradlab/model.hpp"

namespace fs = std::filesystem;

namespace gradlab {

const std::uint64_t kStableModelSeed = 0;

namespace {

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "experiment.kind", "experiment.seed", "experiment.regime",
      "data.synthetic", "data.mnist_dir", "data.samples", "data.sample_index",
      "train.learning_rate", "train.max_epochs", "train.patience",
      "train.batch_size",
      "dp.clip_norm", "dp.noise_multiplier", "dp.target_eps", "dp.delta",
      "dp.calibration_q", "dp.calibration_steps",
      "pdp.eta", "pdp.sigma", "pdp.kappa",
      "attack.iters", "attack.lr", "attack.alpha", "attack.optimizer",
      "attack.label_mode", "attack.seed", "attack.model_seed",
      "attack.snapshot_every",
      "audit.trials", "audit.mechanism",
      "accountant.sigma", "accountant.target_eps", "accountant.delta",
      "accountant.q", "accountant.steps",
      "sweep.candidates", "sweep.iters",
  };
  return keys;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

ExperimentConfig ExperimentConfig::parse_string(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream is(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ContractError("config line " + std::to_string(lineno) +
                            ": unterminated section header");
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ContractError("config line " + std::to_string(lineno) +
                          ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (section.empty()) {
      throw ContractError("config line " + std::to_string(lineno) +
                          ": key '" + key + "' outside any [section]");
    }
    std::string full = section + "." + key;
    if (!known_keys().count(full)) {
      throw ContractError("config line " + std::to_string(lineno) +
                          ": unknown key '" + full + "'");
    }
    cfg.kv_[full] = value;
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::parse_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("config: cannot open '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_string(ss.str());
}

bool ExperimentConfig::has(const std::string& key) const {
  return kv_.count(key) > 0;
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  if (!known_keys().count(key)) {
    throw ContractError("config: unknown key '" + key + "'");
  }
  kv_[key] = value;
}

std::string ExperimentConfig::get_str(const std::string& key,
                                      const std::string& def) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? def : it->second;
}

double ExperimentConfig::get_double(const std::string& key, double def) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return def;
  try {
    size_t pos = 0;
    double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ContractError("config: '" + key + "' is not a number: '" +
                        it->second + "'");
  }
}

int ExperimentConfig::get_int(const std::string& key, int def) const {
  double v = get_double(key, def);
  if (v != std::floor(v)) {
    throw ContractError("config: '" + key + "' must be an integer");
  }
  return static_cast<int>(v);
}

std::uint64_t ExperimentConfig::get_u64(const std::string& key,
                                        std::uint64_t def) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return def;
  try {
    return std::stoull(it->second);
  } catch (const std::exception&) {
    throw ContractError("config: '" + key + "' is not an unsigned integer");
  }
}

bool ExperimentConfig::get_bool(const std::string& key, bool def) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return def;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw ContractError("config: '" + key + "' must be true or false");
}

std::string ExperimentConfig::echo() const {
  std::ostringstream os;
  for (const auto& [k, v] : kv_) os << k << " = " << v << "\n";
  return os.str();
}

// ------------------------------------------------------------------ helpers

namespace {

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string read_all(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("manifest: cannot open '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

double dataset_loss(const ModelSpec& spec, const ParamSet& params,
                    const Tensor& images, const std::vector<int>& labels,
                    LossKind loss) {
  Tape t;
  auto m = model_forward(t, spec, params, images);
  int l;
  if (loss == LossKind::kBce) {
    l = bce_loss(t, t.reshape(m.output_node, {images.shape[0]}), labels);
  } else {
    l = cross_entropy_loss(t, m.output_node, labels);
  }
  return t.value(l).item();
}

Tensor slice_images(const Tensor& images, const std::vector<int>& idx) {
  int c = images.shape[1], h = images.shape[2], w = images.shape[3];
  size_t stride = static_cast<size_t>(c) * h * w;
  Tensor out({static_cast<int>(idx.size()), c, h, w});
  for (size_t k = 0; k < idx.size(); ++k) {
    std::copy(images.data.begin() + idx[k] * stride,
              images.data.begin() + (idx[k] + 1) * stride,
              out.data.begin() + k * stride);
  }
  return out;
}

double resolve_dp_sigma(const ExperimentConfig& cfg) {
  bool has_sigma = cfg.has("dp.noise_multiplier");
  bool has_eps = cfg.has("dp.target_eps");
  if (has_sigma == has_eps) {
    throw ContractError(
        "config: dp-sgd needs exactly one of dp.noise_multiplier and "
        "dp.target_eps");
  }
  if (has_sigma) return cfg.get_double("dp.noise_multiplier", 0.0);
  double eps = cfg.get_double("dp.target_eps", 8.0);
  double delta = cfg.get_double("dp.delta", 1e-3);
  double q = cfg.get_double("dp.calibration_q", 0.125);
  int steps = cfg.get_int("dp.calibration_steps", 160);
  return calibrate_sigma(eps, delta, q, steps);
}

}  // namespace

Dataset load_or_synthesize_dataset(const ExperimentConfig& cfg) {
  int samples = cfg.get_int("data.samples", 256);
  if (samples < 1) throw ContractError("config: data.samples must be >= 1");
  std::uint64_t seed = cfg.get_u64("experiment.seed", 1);
  bool synthetic = cfg.get_bool("data.synthetic", true);
  std::string dir = cfg.get_str("data.mnist_dir", "");
  if (const char* env = std::getenv("GRADLAB_MNIST_DIR")) dir = env;
  if (!synthetic && dir.empty()) {
    throw ContractError(
        "config: data.synthetic=false needs data.mnist_dir or "
        "GRADLAB_MNIST_DIR");
  }
  if (synthetic || dir.empty()) {
    return synthetic_digits(samples, 1000 + seed);
  }
  auto d = load_idx(dir + "/train-images-idx3-ubyte",
                    dir + "/train-labels-idx1-ubyte");
  int n = std::min(samples, d.size());
  Dataset out;
  out.images = Tensor({n, 1, 32, 32});
  out.labels.assign(d.labels.begin(), d.labels.begin() + n);
  out.num_classes = 10;
  out.split = "mnist";
  for (int i = 0; i < n; ++i) {
    Tensor img({d.images.shape[2], d.images.shape[3]});
    std::copy(d.images.data.begin() + i * img.numel(),
              d.images.data.begin() + (i + 1) * img.numel(),
              img.data.begin());
    Tensor r = resize_nearest(img, 32, 32);
    std::copy(r.data.begin(), r.data.end(),
              out.images.data.begin() + static_cast<size_t>(i) * 32 * 32);
  }
  return out;
}

// ----------------------------------------------------------- classification

TrainOutcome run_classification_experiment(const ExperimentConfig& cfg,
                                           const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::uint64_t seed = cfg.get_u64("experiment.seed", 1);
  Regime regime = regime_from_name(cfg.get_str("experiment.regime",
                                               "standard"));
  double lr = cfg.get_double("train.learning_rate", 0.1);
  int max_epochs = cfg.get_int("train.max_epochs", 60);
  int patience = cfg.get_int("train.patience", 20);
  int batch = cfg.get_int("train.batch_size", 32);
  if (max_epochs < 1 || patience < 1 || batch < 1 || lr <= 0.0) {
    throw ContractError("config: bad train.* values");
  }

  Dataset data = load_or_synthesize_dataset(cfg);
  // binary task: digit parity
  std::vector<int> binary(data.size());
  for (int i = 0; i < data.size(); ++i) binary[i] = data.labels[i] % 2;

  // 80/20 split on a deterministic shuffle
  Rng rng(seed);
  std::vector<int> order(data.size());
  for (int i = 0; i < data.size(); ++i) order[i] = i;
  for (int i = data.size() - 1; i > 0; --i) {
    std::swap(order[i], order[rng.below(i + 1)]);
  }
  int train_n = static_cast<int>(data.size() * 0.8);
  if (train_n < batch || data.size() - train_n < 1) {
    throw ContractError("config: dataset too small for the batch size");
  }
  std::vector<int> train_idx(order.begin(), order.begin() + train_n);
  std::vector<int> val_idx(order.begin() + train_n, order.end());
  Tensor val_images = slice_images(data.images, val_idx);
  std::vector<int> val_labels;
  for (int i : val_idx) val_labels.push_back(binary[i]);

  auto spec = build_custom_cnn_binary();
  auto params = init_params(spec, seed);

  DpSgdConfig dp;
  PdpConfig pdp;
  if (regime == Regime::kDpSgd) {
    dp.clip_norm = cfg.get_double("dp.clip_norm", 1.2);
    dp.batch_size = batch;
    dp.learning_rate = lr;
    ExperimentConfig c2 = cfg;
    if (!c2.has("dp.calibration_q")) {
      c2.set("dp.calibration_q",
             std::to_string(static_cast<double>(batch) / train_n));
    }
    if (!c2.has("dp.calibration_steps")) {
      c2.set("dp.calibration_steps",
             std::to_string(max_epochs * (train_n / batch)));
    }
    dp.noise_multiplier = resolve_dp_sigma(c2);
  } else if (regime == Regime::kPdpSgd) {
    if (cfg.has("pdp.kappa")) {
      pdp.kappa = cfg.get_double("pdp.kappa", 0.0);
    } else {
      pdp = PdpConfig::from_eta_sigma(cfg.get_double("pdp.eta", 0.1),
                                      cfg.get_double("pdp.sigma", 0.1));
    }
  }

  TrainOutcome out;
  std::vector<std::vector<double>> trace;
  ParamSet best = params;
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;
  Rng noise_rng(rng.split(0xd9));

  for (int epoch = 1; epoch <= max_epochs; ++epoch) {
    for (int i = train_n - 1; i > 0; --i) {
      std::swap(train_idx[i], train_idx[rng.below(i + 1)]);
    }
    bool bad = false;
    for (int b = 0; b + batch <= train_n; b += batch) {
      std::vector<int> bi(train_idx.begin() + b,
                          train_idx.begin() + b + batch);
      Batch bt;
      bt.images = slice_images(data.images, bi);
      for (int i : bi) bt.labels.push_back(binary[i]);
      try {
        switch (regime) {
          case Regime::kStandard:
            params = plain_sgd_step(spec, params, bt, lr, LossKind::kBce)
                         .params;
            break;
          case Regime::kDpSgd:
            params = dp_sgd_step(spec, params, bt, dp, LossKind::kBce,
                                 noise_rng)
                         .params;
            break;
          case Regime::kPdpSgd:
            params = pdp_sgd_step(spec, params, bt, lr, pdp, LossKind::kBce)
                         .params;
            break;
        }
      } catch (const NumericError&) {
        bad = true;
        break;
      }
    }
    double train_loss, val_loss;
    if (!bad) {
      try {
        Tensor train_images = slice_images(data.images, train_idx);
        std::vector<int> train_labels;
        for (int i : train_idx) train_labels.push_back(binary[i]);
        train_loss = dataset_loss(spec, params, train_images, train_labels,
                                  LossKind::kBce);
        val_loss = dataset_loss(spec, params, val_images, val_labels,
                                LossKind::kBce);
      } catch (const NumericError&) {
        bad = true;
      }
    }
    if (bad || !std::isfinite(train_loss) || !std::isfinite(val_loss)) {
      out.diverged = true;
      break;
    }
    out.epochs_run = epoch;
    out.final_train_loss = train_loss;
    out.final_val_loss = val_loss;
    trace.push_back({static_cast<double>(epoch), train_loss, val_loss});
    if (val_loss < best_val) {
      best_val = val_loss;
      best = params;
      since_best = 0;
    } else if (++since_best >= patience) {
      break;
    }
  }
  params = best;

  // final validation metrics at threshold 0.5 (positive class: odd digits)
  ConfusionMatrix cm;
  {
    Tape t;
    auto m = model_forward(t, spec, params, val_images);
    const auto& p = t.value(m.output_node).data;
    for (size_t i = 0; i < val_labels.size(); ++i) {
      bool pred = p[i] >= 0.5, truth = val_labels[i] == 1;
      if (pred && truth) ++cm.tp;
      if (pred && !truth) ++cm.fp;
      if (!pred && truth) ++cm.fn;
      if (!pred && !truth) ++cm.tn;
    }
  }
  out.metrics = classification_metrics(cm);
  out.val_accuracy = out.metrics.accuracy;

  save_csv(out_dir + "/trace.csv", "epoch,train_loss,val_loss", trace);
  {
    std::ofstream f(out_dir + "/metrics.csv");
    f << "metric,value\n";
    auto put = [&](const char* name, const std::optional<double>& v) {
      f << name << "," << (v ? std::to_string(*v) : "undefined") << "\n";
    };
    f << "accuracy," << out.metrics.accuracy << "\n";
    put("precision", out.metrics.precision);
    put("recall", out.metrics.recall);
    put("specificity", out.metrics.specificity);
    put("f1", out.metrics.f1);
    put("mcc", out.metrics.mcc);
    f << "val_loss," << out.final_val_loss << "\n";
    f << "epochs," << out.epochs_run << "\n";
    f << "status," << (out.diverged ? "diverged" : "completed") << "\n";
  }
  {
    PlotSeries tr{"train", {}, {}}, va{"val", {}, {}};
    for (const auto& row : trace) {
      tr.x.push_back(row[0]);
      tr.y.push_back(row[1]);
      va.x.push_back(row[0]);
      va.y.push_back(row[2]);
    }
    svg_line_plot(out_dir + "/loss.svg", "training loss (" +
                  regime_name(regime) + ")", "epoch", "loss", {tr, va});
  }
  write_manifest(out_dir, cfg.echo(),
                 {"trace.csv", "metrics.csv", "loss.svg"});
  return out;
}

// ------------------------------------------------------------------- attack

AttackOutcome run_attack_experiment(const ExperimentConfig& cfg,
                                    const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::uint64_t seed = cfg.get_u64("experiment.seed", 1);
  Regime regime = regime_from_name(cfg.get_str("experiment.regime",
                                               "standard"));
  int iters = cfg.get_int("attack.iters", 200);
  if (iters < 1) throw ContractError("config: attack.iters must be >= 1");

  auto spec = build_victim_cnn();
  std::uint64_t model_seed = cfg.get_u64("attack.model_seed",
                                         kStableModelSeed);
  auto params = init_params(spec, model_seed);

  Dataset data = load_or_synthesize_dataset(cfg);
  int sample = cfg.get_int("data.sample_index", 0);
  if (sample < 0 || sample >= data.size()) {
    throw ContractError("config: data.sample_index out of range");
  }
  Tensor truth = slice_images(data.images, {sample});
  int label = data.labels[sample];

  ClientState client;
  client.id = 0;
  client.data.images = truth;
  client.data.labels = {label};
  client.learning_rate = cfg.get_double("train.learning_rate", 0.1);
  client.regime = regime;
  client.loss = LossKind::kCrossEntropy;
  AttackOutcome out;
  if (regime == Regime::kDpSgd) {
    client.dp.clip_norm = cfg.get_double("dp.clip_norm", 1.2);
    client.dp.noise_multiplier = resolve_dp_sigma(cfg);
    client.dp.batch_size = 1;
    out.noise_sigma = client.dp.noise_multiplier;
  } else if (regime == Regime::kPdpSgd) {
    if (cfg.has("pdp.kappa")) {
      client.pdp.kappa = cfg.get_double("pdp.kappa", 0.0);
    } else {
      client.pdp = PdpConfig::from_eta_sigma(cfg.get_double("pdp.eta", 0.1),
                                             cfg.get_double("pdp.sigma", 0.1));
    }
  }
  Rng noise_rng(seed);
  auto capture = local_update(spec, params, client, 0, noise_rng).capture;

  AttackConfig acfg;
  acfg.max_iters = iters;
  acfg.attack_lr = cfg.get_double("attack.lr", 0.1);
  acfg.alpha = cfg.get_double("attack.alpha", 0.0);
  acfg.seed = cfg.get_u64("attack.seed", 17);
  acfg.snapshot_every = cfg.get_int("attack.snapshot_every", 20);
  std::string opt = cfg.get_str("attack.optimizer", "lbfgs");
  if (opt == "lbfgs") {
    acfg.optimizer = AttackConfig::Optimizer::kLbfgs;
  } else if (opt == "adam") {
    acfg.optimizer = AttackConfig::Optimizer::kAdam;
  } else if (opt == "gd") {
    acfg.optimizer = AttackConfig::Optimizer::kGd;
  } else {
    throw ContractError("config: attack.optimizer must be lbfgs, adam or gd");
  }
  std::string lm = cfg.get_str("attack.label_mode", "infer");
  if (lm == "infer") {
    acfg.label_mode = AttackConfig::LabelMode::kInfer;
  } else if (lm == "joint") {
    acfg.label_mode = AttackConfig::LabelMode::kJoint;
  } else {
    throw ContractError("config: attack.label_mode must be infer or joint");
  }

  out.result = run_attack(spec, params, capture, acfg, &truth);
  out.final_ssim = out.result.trace.ssim.empty()
                       ? 0.0
                       : out.result.trace.ssim.back();

  std::vector<std::vector<double>> rows;
  const auto& tr = out.result.trace;
  for (size_t i = 0; i < tr.iterations.size(); ++i) {
    rows.push_back({static_cast<double>(tr.iterations[i]), tr.loss[i],
                    i < tr.ssim.size() ? tr.ssim[i] : 0.0});
  }
  save_csv(out_dir + "/trace.csv", "iteration,loss,ssim", rows);

  std::vector<std::string> files = {"trace.csv", "loss.svg", "ssim.svg"};
  char name[32];
  for (const auto& [iter, img] : tr.snapshots) {
    std::snprintf(name, sizeof(name), "recon_%04d.pgm", iter);
    save_pgm(out_dir + "/" + name, img);
    files.push_back(name);
  }
  std::snprintf(name, sizeof(name), "recon_%04d.pgm",
                tr.iterations.empty() ? 0 : tr.iterations.back());
  if (std::find(files.begin(), files.end(), name) == files.end()) {
    save_pgm(out_dir + "/" + name, out.result.x_rec);
    files.push_back(name);
  }

  {
    PlotSeries s{"reconstruction loss", {}, {}};
    for (size_t i = 0; i < tr.iterations.size(); ++i) {
      s.x.push_back(tr.iterations[i]);
      s.y.push_back(tr.loss[i]);
    }
    svg_line_plot(out_dir + "/loss.svg",
                  "gradient reconstruction loss (" + regime_name(regime) +
                      ")",
                  "iteration", "loss", {s}, true);
    PlotSeries s2{"ssim", {}, {}};
    for (size_t i = 0; i < tr.ssim.size(); ++i) {
      s2.x.push_back(tr.iterations[i]);
      s2.y.push_back(tr.ssim[i]);
    }
    svg_line_plot(out_dir + "/ssim.svg",
                  "reconstruction ssim (" + regime_name(regime) + ")",
                  "iteration", "ssim", {s2});
  }
  write_manifest(out_dir, cfg.echo(), files);
  return out;
}

// -------------------------------------------------------------------- audit

std::vector<AuditRow> run_audit(const ExperimentConfig& cfg,
                                const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::uint64_t seed = cfg.get_u64("experiment.seed", 1);
  int trials = cfg.get_int("audit.trials", 200000);
  std::string which = cfg.get_str("audit.mechanism", "both");
  if (which != "rr" && which != "gaussian" && which != "both") {
    throw ContractError("config: audit.mechanism must be rr, gaussian or both");
  }

  std::vector<AuditRow> rows;
  Rng rng(seed);

  if (which == "rr" || which == "both") {
    Mechanism rr = [](const std::vector<double>& d, Rng& r) {
      double bit = d[0];
      return r.uniform() < 0.75 ? bit : 1.0 - bit;
    };
    AuditConfig ac;
    ac.trials = trials;
    ac.bins = 2;
    ac.bin_lo = 0.0;
    ac.bin_hi = 1.0;
    ac.delta = 0.0;
    auto res = empirical_dp_audit(rr, {0.0}, {1.0}, ac, rng);
    rows.push_back({"randomized-response", 0.0, 1.0, 1, res.eps_lower,
                    std::log(3.0), res.wide_interval});
  }

  if (which == "gaussian" || which == "both") {
    const double delta = 1e-5, q = 0.5;
    for (double sigma : {1.0, 2.0, 4.0}) {
      for (int steps : {1, 4, 16}) {
        Mechanism gauss = [sigma, steps, q](const std::vector<double>& d,
                                            Rng& r) {
          // composed subsampled Gaussian on the count of the differing
          // record: each step includes it with probability q
          double extra = d.size() > 1 ? 1.0 : 0.0;
          double s = 0.0;
          for (int t = 0; t < steps; ++t) {
            double b = (extra > 0.0 && r.uniform() < q) ? 1.0 : 0.0;
            s += b + r.normal(0.0, sigma);
          }
          return s;
        };
        PrivacyBudget budget;
        budget.delta = delta;
        budget.add_steps(sigma, q, steps);
        double eps_acc = compose_and_convert(budget).eps;
        AuditConfig ac;
        ac.trials = trials;
        ac.bins = 32;
        double spread = sigma * std::sqrt(static_cast<double>(steps));
        ac.bin_lo = -6.0 * spread;
        ac.bin_hi = steps * q + 6.0 * spread;
        ac.delta = delta;
        auto res = empirical_dp_audit(gauss, {0.0}, {0.0, 1.0}, ac, rng);
        rows.push_back({"subsampled-gaussian", sigma, q, steps,
                        res.eps_lower, eps_acc, res.wide_interval});
      }
    }
  }

  std::ofstream f(out_dir + "/metrics.csv");
  f << "mechanism,sigma,q,steps,eps_empirical,eps_reference,wide_interval\n";
  f.precision(12);
  for (const auto& r : rows) {
    f << r.mechanism << ',' << r.sigma << ',' << r.q << ',' << r.steps << ','
      << r.eps_empirical << ',' << r.eps_reference << ','
      << (r.wide_interval ? 1 : 0) << "\n";
  }
  f.close();
  write_manifest(out_dir, cfg.echo(), {"metrics.csv"});
  return rows;
}

// --------------------------------------------------------------- accountant

double run_accountant(const ExperimentConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  double delta = cfg.get_double("accountant.delta", 1e-3);
  double q = cfg.get_double("accountant.q", 0.125);
  int steps = cfg.get_int("accountant.steps", 160);
  double sigma;
  if (cfg.has("accountant.sigma") == cfg.has("accountant.target_eps")) {
    throw ContractError(
        "config: need exactly one of accountant.sigma and "
        "accountant.target_eps");
  }
  if (cfg.has("accountant.sigma")) {
    sigma = cfg.get_double("accountant.sigma", 1.0);
  } else {
    sigma = calibrate_sigma(cfg.get_double("accountant.target_eps", 8.0),
                            delta, q, steps);
  }
  PrivacyBudget budget;
  budget.delta = delta;
  budget.add_steps(sigma, q, steps);
  auto acc = compose_and_convert(budget);
  {
    std::ofstream f(out_dir + "/budget.csv");
    f << budget_to_csv(budget);
  }
  write_manifest(out_dir, cfg.echo(), {"budget.csv"});
  return acc.eps;
}

// -------------------------------------------------------------------- sweep

std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg,
                                const std::string& out_dir, int jobs) {
  fs::create_directories(out_dir);
  int candidates = cfg.get_int("sweep.candidates", 32);
  int iters = cfg.get_int("sweep.iters", 200);
  if (candidates < 1) throw ContractError("config: sweep.candidates >= 1");
  if (jobs < 1) jobs = 1;

  Dataset data = load_or_synthesize_dataset(cfg);
  int sample = cfg.get_int("data.sample_index", 0);
  Tensor truth = slice_images(data.images, {sample});
  int label = data.labels[sample];
  auto spec = build_victim_cnn();

  std::vector<SweepRow> rows(candidates);
  std::atomic<int> next{0};
  auto worker = [&]() {
    for (;;) {
      int i = next.fetch_add(1);
      if (i >= candidates) return;
      auto params = init_params(spec, i);
      ClientState client;
      client.data.images = truth;
      client.data.labels = {label};
      client.learning_rate = 0.1;
      client.regime = Regime::kStandard;
      client.loss = LossKind::kCrossEntropy;
      Rng r(1);
      auto capture = local_update(spec, params, client, 0, r).capture;
      AttackConfig acfg;
      acfg.max_iters = iters;
      acfg.seed = cfg.get_u64("attack.seed", 17);
      auto res = run_attack(spec, params, capture, acfg, &truth);
      rows[i].model_seed = i;
      rows[i].diverged = res.trace.diverged;
      rows[i].final_loss =
          res.trace.loss.empty() ? 0.0 : res.trace.loss.back();
      rows[i].final_ssim =
          res.trace.ssim.empty() ? 0.0 : res.trace.ssim.back();
    }
  };
  std::vector<std::thread> pool;
  for (int j = 0; j < std::min(jobs, candidates); ++j) {
    pool.emplace_back(worker);
  }
  for (auto& t : pool) t.join();

  std::vector<std::vector<double>> csv;
  for (const auto& r : rows) {
    csv.push_back({static_cast<double>(r.model_seed), r.final_loss,
                   r.final_ssim, r.diverged ? 1.0 : 0.0});
  }
  save_csv(out_dir + "/sweep.csv", "model_seed,final_loss,final_ssim,diverged",
           csv);
  write_manifest(out_dir, cfg.echo(), {"sweep.csv"});
  return rows;
}

// --------------------------------------------------------------------- svg

void svg_line_plot(const std::string& path, const std::string& title,
                   const std::string& x_label, const std::string& y_label,
                   const std::vector<PlotSeries>& series, bool log_y) {
  const int width = 640, height = 420;
  const int ml = 70, mr = 20, mt = 40, mb = 50;
  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};

  auto ty = [&](double v) { return log_y ? std::log10(std::max(v, 1e-16)) : v; };
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series) {
    for (double v : s.x) {
      xmin = std::min(xmin, v);
      xmax = std::max(xmax, v);
    }
    for (double v : s.y) {
      ymin = std::min(ymin, ty(v));
      ymax = std::max(ymax, ty(v));
    }
  }
  if (xmin > xmax) {
    xmin = 0;
    xmax = 1;
  }
  if (ymin > ymax) {
    ymin = 0;
    ymax = 1;
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;

  auto px = [&](double v) {
    return ml + (v - xmin) / (xmax - xmin) * (width - ml - mr);
  };
  auto py = [&](double v) {
    return height - mb - (ty(v) - ymin) / (ymax - ymin) * (height - mt - mb);
  };

  std::ofstream f(path);
  if (!f) throw FormatError("svg: cannot open '" + path + "'");
  f.precision(6);
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
    << "\" height=\"" << height << "\">\n";
  f << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  f << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" "
       "font-size=\"15\">" << title << "</text>\n";
  // axes
  f << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml
    << "\" y2=\"" << height - mb << "\" stroke=\"black\"/>\n";
  f << "<line x1=\"" << ml << "\" y1=\"" << height - mb << "\" x2=\""
    << width - mr << "\" y2=\"" << height - mb << "\" stroke=\"black\"/>\n";
  f << "<text x=\"" << (ml + width - mr) / 2 << "\" y=\"" << height - 12
    << "\" text-anchor=\"middle\" font-size=\"12\">" << x_label
    << "</text>\n";
  f << "<text x=\"18\" y=\"" << (mt + height - mb) / 2
    << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 18 "
    << (mt + height - mb) / 2 << ")\">" << y_label
    << (log_y ? " (log10)" : "") << "</text>\n";
  // range labels
  f << "<text x=\"" << ml << "\" y=\"" << height - mb + 16
    << "\" font-size=\"10\">" << xmin << "</text>\n";
  f << "<text x=\"" << width - mr << "\" y=\"" << height - mb + 16
    << "\" text-anchor=\"end\" font-size=\"10\">" << xmax << "</text>\n";
  f << "<text x=\"" << ml - 4 << "\" y=\"" << height - mb
    << "\" text-anchor=\"end\" font-size=\"10\">" << ymin << "</text>\n";
  f << "<text x=\"" << ml - 4 << "\" y=\"" << mt + 10
    << "\" text-anchor=\"end\" font-size=\"10\">" << ymax << "</text>\n";

  for (size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    if (s.x.empty()) continue;
    f << "<polyline fill=\"none\" stroke=\"" << colors[si % 4]
      << "\" stroke-width=\"1.5\" points=\"";
    for (size_t i = 0; i < s.x.size(); ++i) {
      f << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
    }
    f << "\"/>\n";
    f << "<text x=\"" << width - mr - 6 << "\" y=\"" << mt + 16 + 16 * si
      << "\" text-anchor=\"end\" font-size=\"11\" fill=\"" << colors[si % 4]
      << "\">" << s.name << "</text>\n";
  }
  f << "</svg>\n";
}

void write_manifest(const std::string& out_dir, const std::string& config_echo,
                    const std::vector<std::string>& files) {
  std::ofstream f(out_dir + "/manifest.txt");
  if (!f) throw FormatError("manifest: cannot open output");
  f << "# configuration\n" << config_echo << "\n# outputs (fnv1a-64)\n";
  for (const auto& name : files) {
    std::uint64_t h = fnv1a(read_all(out_dir + "/" + name));
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(h));
    f << name << "  " << buf << "\n";
  }
}

}  // namespace gradlab

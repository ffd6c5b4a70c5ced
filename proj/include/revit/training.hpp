#pragma once

#include <iomanip>

#include "revit/checkpoint.hpp"
#include "revit/data.hpp"

namespace revit {

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  double base_lr = 0.001;
  std::size_t warmup_epochs = 1;
  double weight_decay = 0.3;
  double grad_clip_norm = 1.0;
  std::uint64_t seed = 0;
  std::string schedule = "cosine";
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    if (epochs == 0) throw ValidationError("train.epochs must be positive");
    if (batch_size == 0) throw ValidationError("train.batch_size must be positive");
    if (!(base_lr > 0.0)) throw ValidationError("train.base_lr must be positive");
    if (warmup_epochs > epochs) throw ValidationError("train.warmup_epochs must not exceed train.epochs");
    if (!(weight_decay >= 0.0)) throw ValidationError("train.weight_decay must be non-negative");
    if (!(grad_clip_norm > 0.0)) throw ValidationError("train.grad_clip_norm must be positive");
    if (schedule != "cosine") throw ValidationError("train.schedule must be 'cosine'");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
      throw ValidationError("train.beta1/beta2 must lie in [0, 1)");
    if (!(eps > 0.0)) throw ValidationError("train.eps must be positive");
  }

  bool operator==(const TrainConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"base_lr", c.base_lr},
                     {"warmup_epochs", c.warmup_epochs},
                     {"weight_decay", c.weight_decay},
                     {"grad_clip_norm", c.grad_clip_norm},
                     {"seed", c.seed},
                     {"schedule", c.schedule},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"eps", c.eps}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (!j.is_object()) throw ValidationError("train config must be a JSON object");
  for (const auto& [key, val] : j.items()) {
    try {
      if (key == "epochs") c.epochs = val.get<std::size_t>();
      else if (key == "batch_size") c.batch_size = val.get<std::size_t>();
      else if (key == "base_lr") c.base_lr = val.get<double>();
      else if (key == "warmup_epochs") c.warmup_epochs = val.get<std::size_t>();
      else if (key == "weight_decay") c.weight_decay = val.get<double>();
      else if (key == "grad_clip_norm") c.grad_clip_norm = val.get<double>();
      else if (key == "seed") c.seed = val.get<std::uint64_t>();
      else if (key == "schedule") c.schedule = val.get<std::string>();
      else if (key == "beta1") c.beta1 = val.get<double>();
      else if (key == "beta2") c.beta2 = val.get<double>();
      else if (key == "eps") c.eps = val.get<double>();
      else throw ValidationError("unknown train config key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("train config key '" + key + "': " + e.what());
    }
  }
}

struct EpochMetrics {
  std::size_t epoch = 0;
  std::size_t step = 0;  // optimizer steps completed
  double lr = 0.0;       // rate used for the last step of the epoch
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
  std::vector<double> alphas;
};

inline std::string metrics_header(std::size_t depth) {
  std::string h = "epoch,step,lr,train_loss,train_acc,val_acc";
  for (std::size_t l = 0; l < depth; ++l) h += ",alpha_" + std::to_string(l);
  return h;
}

inline std::string metrics_row(const EpochMetrics& m) {
  std::ostringstream os;
  os << std::setprecision(9) << m.epoch << ',' << m.step << ',' << m.lr << ',' << m.train_loss << ','
     << m.train_acc << ',' << m.val_acc;
  for (double a : m.alphas) os << ',' << a;
  return os.str();
}

/// Alpha values as logged: the gate's effective value per layer, with plain
/// ViT reported as alpha = 1 (no residual attention).
template <typename T>
std::vector<double> logged_alphas(const ModelConfig& cfg, const ModelParams<T>& p) {
  if (!cfg.residual_attention()) return std::vector<double>(cfg.depth, 1.0);
  return p.alpha.values();
}

inline void check_geometry(const ModelConfig& cfg, const Dataset& ds) {
  if (ds.images.rank() != 4 || ds.channels() != cfg.channels || ds.height() != cfg.image_size ||
      ds.width() != cfg.image_size)
    throw ValidationError("dataset geometry " + shape_str(ds.images.shape()) + " does not match model input [" +
                          std::to_string(cfg.channels) + ", " + std::to_string(cfg.image_size) + ", " +
                          std::to_string(cfg.image_size) + "]");
  if (ds.class_count > cfg.num_classes)
    throw ValidationError("dataset has " + std::to_string(ds.class_count) + " classes but the model predicts " +
                          std::to_string(cfg.num_classes));
}

/// Top-1 accuracy; with `perturb`, every image is transformed before normalization.
template <typename T>
double evaluate(const ModelConfig& cfg, const ModelParams<T>& p, const Dataset& ds,
                const PerturbSpec* perturb = nullptr, PadAnchor anchor = PadAnchor::top_left,
                std::size_t batch_size = 128) {
  check_geometry(cfg, ds);
  if (perturb) perturb->validate();
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < ds.size(); start += batch_size) {
    const std::size_t end = std::min(ds.size(), start + batch_size);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    auto batch = make_batch<T>(ds, idx, cfg.input_mean, cfg.input_std, perturb, anchor);
    auto logits = model_forward(batch, cfg, p).logits;
    const std::size_t C = cfg.num_classes;
    auto ld = logits.data();
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const auto row = ld.subspan(b * C, C);
      const auto pred = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
      if (pred == ds.labels[idx[b]]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

template <typename T>
struct TrainResult {
  ModelConfig model;      // as trained, with normalization statistics resolved
  ModelParams<T> params;  // parameters after the final step
  OptimizerState<T> optimizer;
  std::vector<EpochMetrics> history;
  std::vector<double> batch_losses;
  double best_val_acc = -1.0;
  std::size_t best_epoch = 0;
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
  std::filesystem::path metrics_csv;
};

/// Trains from a fresh initialization. Writes `metrics.csv`, `best.rvt`
/// (highest validation accuracy) and `last.rvt` into `out_dir` when it is
/// non-empty.
/// Fills empty normalization statistics from the training split.
inline ModelConfig resolve_input_stats(ModelConfig cfg, const Dataset& train_set) {
  if (cfg.input_mean.empty() && cfg.input_std.empty()) std::tie(cfg.input_mean, cfg.input_std) = channel_stats(train_set);
  return cfg;
}

template <typename T>
TrainResult<T> train(const ModelConfig& requested, const TrainConfig& tc, const Dataset& train_set, const Dataset& val_set,
                     const std::filesystem::path& out_dir, const nlohmann::json& run_meta = nlohmann::json::object(),
                     std::ostream* log = nullptr) {
  requested.validate();
  tc.validate();
  train_set.validate();
  check_geometry(requested, train_set);
  const ModelConfig cfg = resolve_input_stats(requested, train_set);
  check_geometry(cfg, val_set);

  TrainResult<T> res;
  res.model = cfg;
  res.params = init_params<T>(cfg, cfg.seed);
  const auto named = res.params.named();
  res.optimizer = make_optimizer(named, tc.beta1, tc.beta2, tc.eps, tc.weight_decay);

  const std::size_t n = train_set.size();
  const std::size_t steps_per_epoch = (n + tc.batch_size - 1) / tc.batch_size;
  const std::size_t total = steps_per_epoch * tc.epochs;
  const std::size_t warmup = steps_per_epoch * tc.warmup_epochs;

  std::ofstream csv;
  const bool write_files = !out_dir.empty();
  if (write_files) {
    std::filesystem::create_directories(out_dir);
    res.metrics_csv = out_dir / "metrics.csv";
    res.best_checkpoint = out_dir / "best.rvt";
    res.last_checkpoint = out_dir / "last.rvt";
    csv.open(res.metrics_csv, std::ios::trunc);
    if (!csv) throw IoError("cannot write " + res.metrics_csv.string());
    csv << metrics_header(cfg.depth) << '\n';
  }
  auto snapshot = [&](const ModelParams<T>& params) {
    Checkpoint<T> ck;
    ck.model = cfg;
    ck.run = run_meta;
    ck.run["train"] = tc;
    ck.params = params;
    ck.optimizer = res.optimizer;
    return ck;
  };

  Rng order_rng(tc.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t step = 0;
  double lr = 0.0;
  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    order_rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < n; start += tc.batch_size) {
      const std::size_t end = std::min(n, start + tc.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      std::vector<int> labels(idx.size());
      for (std::size_t b = 0; b < idx.size(); ++b) labels[b] = train_set.labels[idx[b]];
      auto batch = make_batch<T>(train_set, idx, cfg.input_mean, cfg.input_std);

      res.params.zero_grad();
      double loss_value = 0.0;
      try {
        Tape<T> tape;
        GradScope<T> scope(tape);
        auto logits = model_forward(batch, cfg, res.params).logits;
        auto loss = cross_entropy(logits, std::span<const int>(labels));
        loss_value = loss.item();
        backward(loss);
        const std::size_t C = cfg.num_classes;
        for (std::size_t b = 0; b < idx.size(); ++b) {
          auto row = logits.data().subspan(b * C, C);
          if (std::max_element(row.begin(), row.end()) - row.begin() == labels[b]) ++correct;
        }
      } catch (const NumericError& e) {
        throw NumericError(std::string("training diverged at epoch ") + std::to_string(epoch) + ", step " +
                           std::to_string(step) + ": " + e.what() +
                           (write_files ? "; last good checkpoint kept at " + res.best_checkpoint.string() : ""));
      }
      if (!std::isfinite(loss_value))
        throw NumericError("training diverged: non-finite loss at step " + std::to_string(step));

      clip_grad_norm(named, tc.grad_clip_norm);
      lr = lr_at(step, total, warmup, tc.base_lr);
      adam_step(named, res.optimizer, lr);
      ++step;
      loss_sum += loss_value * static_cast<double>(idx.size());
      res.batch_losses.push_back(loss_value);
    }
    res.params.zero_grad();

    EpochMetrics m;
    m.epoch = epoch;
    m.step = step;
    m.lr = lr;
    m.train_loss = loss_sum / static_cast<double>(n);
    m.train_acc = static_cast<double>(correct) / static_cast<double>(n);
    m.val_acc = evaluate(cfg, res.params, val_set);
    m.alphas = logged_alphas(cfg, res.params);
    res.history.push_back(m);
    if (log) *log << metrics_row(m) << '\n';
    if (write_files) {
      csv << metrics_row(m) << '\n';
      csv.flush();
    }
    if (m.val_acc > res.best_val_acc) {
      res.best_val_acc = m.val_acc;
      res.best_epoch = epoch;
      if (write_files) save_checkpoint(res.best_checkpoint, snapshot(res.params));
    }
  }
  if (write_files) save_checkpoint(res.last_checkpoint, snapshot(res.params));
  return res;
}

}  // namespace revit

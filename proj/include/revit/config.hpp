#pragma once

#include "revit/training.hpp"

namespace revit {

/// Where data comes from. `path` is either the reserved word "synthetic", a
/// CIFAR-10 binary directory, or a single record file.
struct DataConfig {
  std::string path = "synthetic";
  std::size_t synthetic_train = 640;
  std::size_t synthetic_val = 256;
  std::uint64_t synthetic_seed = 0;
  std::string pad_anchor = "top_left";

  void validate() const {
    if (path.empty()) throw ValidationError("data.path must not be empty");
    if (synthetic_train == 0 || synthetic_val == 0)
      throw ValidationError("data.synthetic_train/synthetic_val must be positive");
    parse_pad_anchor(pad_anchor);
  }

  bool operator==(const DataConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const DataConfig& c) {
  j = nlohmann::json{{"path", c.path},
                     {"synthetic_train", c.synthetic_train},
                     {"synthetic_val", c.synthetic_val},
                     {"synthetic_seed", c.synthetic_seed},
                     {"pad_anchor", c.pad_anchor}};
}

inline void from_json(const nlohmann::json& j, DataConfig& c) {
  if (!j.is_object()) throw ValidationError("data config must be a JSON object");
  for (const auto& [key, val] : j.items()) {
    try {
      if (key == "path") c.path = val.get<std::string>();
      else if (key == "synthetic_train") c.synthetic_train = val.get<std::size_t>();
      else if (key == "synthetic_val") c.synthetic_val = val.get<std::size_t>();
      else if (key == "synthetic_seed") c.synthetic_seed = val.get<std::uint64_t>();
      else if (key == "pad_anchor") c.pad_anchor = val.get<std::string>();
      else throw ValidationError("unknown data config key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("data config key '" + key + "': " + e.what());
    }
  }
}

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  std::string out = "run";

  void validate() const {
    model.validate();
    train.validate();
    data.validate();
    if (out.empty()) throw ValidationError("out must not be empty");
  }
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{{"model", c.model}, {"train", c.train}, {"data", c.data}, {"out", c.out}};
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
  if (!j.is_object()) throw ValidationError("run config must be a JSON object");
  for (const auto& [key, val] : j.items()) {
    if (key == "model") from_json(val, c.model);
    else if (key == "train") from_json(val, c.train);
    else if (key == "data") from_json(val, c.data);
    else if (key == "out") {
      if (!val.is_string()) throw ValidationError("out must be a string");
      c.out = val.get<std::string>();
    } else {
      throw ValidationError("unknown config key '" + key + "'");
    }
  }
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("config " + path.string() + ": " + e.what());
  }
  RunConfig c;
  from_json(j, c);
  return c;
}

inline SyntheticSpec synthetic_spec(const ModelConfig& m, const DataConfig& d, bool validation) {
  SyntheticSpec s;
  s.seed = validation ? d.synthetic_seed + 1 : d.synthetic_seed;
  s.count = validation ? d.synthetic_val : d.synthetic_train;
  s.classes = m.num_classes;
  s.image_size = m.image_size;
  s.patch_size = m.patch_size;
  s.channels = m.channels;
  return s;
}

/// Train and evaluation splits for a data source.
inline std::pair<Dataset, Dataset> load_data(const ModelConfig& m, const DataConfig& d) {
  if (d.path == "synthetic") {
    auto tr = synthetic_dataset(synthetic_spec(m, d, false));
    tr.split = "train";
    auto va = synthetic_dataset(synthetic_spec(m, d, true));
    va.split = "val";
    return {std::move(tr), std::move(va)};
  }
  const std::filesystem::path p(d.path);
  if (std::filesystem::is_directory(p)) return load_cifar10(p);
  auto ds = load_record_file(p, RecordGeometry{m.channels, m.image_size, m.image_size}, m.num_classes);
  ds.split = "file";
  return {ds, ds};
}

/// Evaluation split only.
inline Dataset load_eval_data(const ModelConfig& m, const DataConfig& d) {
  if (d.path == "synthetic") {
    auto va = synthetic_dataset(synthetic_spec(m, d, true));
    va.split = "val";
    return va;
  }
  return load_data(m, d).second;
}

}  // namespace revit

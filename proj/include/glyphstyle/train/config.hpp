#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"

#include "glyphstyle/data/dataset.hpp"
#include "glyphstyle/loss/losses.hpp"

namespace glyphstyle {

struct TrainConfig {
  int epochs = 100;
  int batch_size = 32;
  double lr = 2e-4;
  int lr_halving_every = 20;  // epochs
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  LossWeights weights;
  std::uint64_t seed = 0;
  bool use_fcm = true;  // style prior: KL terms + sampled path
  bool use_cpm = true;  // frozen content-prior encoder
  std::string data_root;
  std::string checkpoint_dir;
  std::string cpm_artifact;  // required when use_cpm
  int checkpoint_every = 1;  // epochs
  int eval_max_chars = 16;   // test characters scored for "best" selection

  void validate() const {
    check(epochs >= 1, "config: epochs must be >= 1");
    check(batch_size >= 2, "config: batch_size must be >= 2");
    check(lr > 0.0, "config: lr must be positive");
    check(lr_halving_every >= 1, "config: lr_halving_every must be >= 1");
    check(checkpoint_every >= 1, "config: checkpoint_every must be >= 1");
    weights.validate();
  }

  /// Learning rate for a 1-based epoch: halved every lr_halving_every epochs.
  double lr_at_epoch(int epoch) const {
    check(epoch >= 1, "lr_at_epoch: epochs are 1-based");
    const int halvings = (epoch - 1) / lr_halving_every;
    return lr * std::pow(0.5, halvings);
  }

  /// Hash of the semantically relevant fields (paths excluded), extended by
  /// the dataset content hash so a checkpoint cannot silently resume against
  /// different data.
  std::string hash(const std::string& dataset_hash) const {
    nlohmann::json j;
    j["epochs"] = epochs;
    j["batch_size"] = batch_size;
    j["lr"] = lr;
    j["lr_halving_every"] = lr_halving_every;
    j["adam_beta1"] = adam_beta1;
    j["adam_beta2"] = adam_beta2;
    j["weights"] = weights;
    j["seed"] = seed;
    j["use_fcm"] = use_fcm;
    j["use_cpm"] = use_cpm;
    j["dataset"] = dataset_hash;
    Fnv1a64 h;
    h.update(j.dump());
    return h.hex();
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"lr", c.lr},
       {"lr_halving_every", c.lr_halving_every},
       {"adam_beta1", c.adam_beta1},
       {"adam_beta2", c.adam_beta2},
       {"weights", c.weights},
       {"seed", c.seed},
       {"use_fcm", c.use_fcm},
       {"use_cpm", c.use_cpm},
       {"data_root", c.data_root},
       {"checkpoint_dir", c.checkpoint_dir},
       {"cpm_artifact", c.cpm_artifact},
       {"checkpoint_every", c.checkpoint_every},
       {"eval_max_chars", c.eval_max_chars}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.lr = j.value("lr", d.lr);
  c.lr_halving_every = j.value("lr_halving_every", d.lr_halving_every);
  c.adam_beta1 = j.value("adam_beta1", d.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", d.adam_beta2);
  if (j.contains("weights")) c.weights = j.at("weights").get<LossWeights>();
  c.seed = j.value("seed", d.seed);
  c.use_fcm = j.value("use_fcm", d.use_fcm);
  c.use_cpm = j.value("use_cpm", d.use_cpm);
  c.data_root = j.value("data_root", d.data_root);
  c.checkpoint_dir = j.value("checkpoint_dir", d.checkpoint_dir);
  c.cpm_artifact = j.value("cpm_artifact", d.cpm_artifact);
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
  c.eval_max_chars = j.value("eval_max_chars", d.eval_max_chars);
}

inline TrainConfig load_config_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  check(is.good(), "config: cannot open " + path.string());
  nlohmann::json j = nlohmann::json::parse(is);
  return j.get<TrainConfig>();
}

}  // namespace glyphstyle

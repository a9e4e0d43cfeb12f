#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "deml/adam.hpp"
#include "deml/dataset.hpp"
#include "deml/losses.hpp"
#include "deml/model.hpp"

namespace deml {

struct TrainConfig {
  ModelConfig model;
  LossConfig loss;
  double base_lr = 1e-5;
  double learner_lr_multiplier = 10.0;
  double adversary_lr_multiplier = 1.0;
  double weight_decay = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int iterations = 1000;
  int classes_per_batch = 4;  // m
  int images_per_class = 4;   // k
  std::uint64_t seed = 1;
  bool use_adversary = true;
  // Feed the adversary unit-length learner outputs. On raw outputs the
  // reversed gradient grows the embedding norms without bound.
  bool adversary_normalized = true;
  // Let the reversed adversary gradient update the learner matrices too.
  bool adversary_updates_learners = false;
  // Toggles the whole activation-decay term, L_ntri included.
  bool use_activation_decay = true;
  int eval_every = 0;  // 0 disables periodic evaluation
  std::vector<std::size_t> recall_ks{1, 2, 4, 8};
  std::string data_dir;
  std::string output_dir = "run";

  AdamConfig adam() const;
  // Throws ParameterError.
  void validate() const;
};

struct Batch {
  Tensor images;  // [m*k x C x H x W]
  std::vector<int> labels;
};

// m distinct classes drawn uniformly from `classes` (those with at least k
// images), then k distinct images of each. Throws DatasetError when the
// dataset cannot supply that.
Batch sample_batch(const data::Dataset& dataset, std::span<const int> classes, int m, int k,
                   std::mt19937_64& rng);

struct LossComponents {
  double metric = 0.0;
  double act = 0.0;
  double ntri = 0.0;
  double adv = 0.0;
  bool has_adv = false;
  double total = 0.0;
};

// Full objective for one batch as a differentiable scalar.
struct Objective {
  Tensor total;
  LossComponents parts;
};
Objective compute_objective(const Model& model, const Batch& batch, const TrainConfig& cfg);

// One forward/backward pass and Adam update. Throws DivergenceError when
// the loss is not finite; parameters are left untouched in that case.
LossComponents train_step(Model& model, const Batch& batch, const TrainConfig& cfg,
                          std::vector<ParamGroup>& groups, AdamState& state);

class Trainer {
 public:
  Trainer(TrainConfig cfg, const data::Dataset& dataset);

  const TrainConfig& config() const { return cfg_; }
  Model& model() { return model_; }
  const Model& model() const { return model_; }
  int iteration() const { return iteration_; }

  LossComponents step();

  // Runs the configured iterations. Writes one CSV row per step to
  // `loss_log` and, every eval_every steps, unseen-class recalls to
  // `metrics_log` (either may be null).
  void run(std::ostream* loss_log, std::ostream* metrics_log);

  static void write_loss_header(std::ostream& out);
  static void write_metrics_header(std::ostream& out, const TrainConfig& cfg);

 private:
  TrainConfig cfg_;
  const data::Dataset& dataset_;
  Model model_;
  std::vector<ParamGroup> groups_;
  AdamState state_;
  std::mt19937_64 rng_;
  int iteration_ = 0;
};

}  // namespace deml

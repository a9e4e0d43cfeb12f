#include "deml/train.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <sstream>

#include "deml/cam.hpp"
#include "deml/errors.hpp"
#include "deml/eval.hpp"
#include "deml/ops.hpp"

namespace deml {

AdamConfig TrainConfig::adam() const {
  return AdamConfig{base_lr, beta1, beta2, eps, weight_decay};
}

void TrainConfig::validate() const {
  model.validate();
  if (classes_per_batch < 2 || images_per_class < 2) {
    throw ParameterError("train config: classes_per_batch and images_per_class must be >= 2");
  }
  if (iterations < 0) throw ParameterError("train config: iterations must be >= 0");
  if (!(base_lr >= 0.0) || !(learner_lr_multiplier > 0.0) ||
      !(adversary_lr_multiplier > 0.0) || !(weight_decay >= 0.0)) {
    throw ParameterError("train config: invalid learning rate, multiplier or weight decay");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(eps > 0.0)) {
    throw ParameterError("train config: invalid Adam moment coefficients");
  }
  const LossConfig& l = loss;
  if (!(l.alpha > 0 && l.beta > 0 && l.gamma_pos > 0 && l.gamma_neg > 0 && l.lambda0 >= 0 &&
        l.lambda1 >= 0 && l.lambda2 >= 0)) {
    throw ParameterError("train config: loss constants must be positive");
  }
  if (eval_every < 0) throw ParameterError("train config: eval_every must be >= 0");
  if (recall_ks.empty()) throw ParameterError("train config: recall_ks is empty");
}

Batch sample_batch(const data::Dataset& dataset, std::span<const int> classes, int m, int k,
                   std::mt19937_64& rng) {
  if (m < 2 || k < 2) throw ParameterError("sample_batch: m and k must be >= 2");
  std::map<int, std::vector<std::size_t>> by_class;
  for (int c : classes) by_class[c];
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    auto it = by_class.find(dataset.labels[i]);
    if (it != by_class.end()) it->second.push_back(i);
  }
  std::vector<int> eligible;
  for (const auto& [c, idx] : by_class) {
    if (static_cast<int>(idx.size()) >= k) eligible.push_back(c);
  }
  if (static_cast<int>(eligible.size()) < m) {
    throw DatasetError("sample_batch: need " + std::to_string(m) + " classes with >= " +
                       std::to_string(k) + " images, dataset has " +
                       std::to_string(eligible.size()));
  }
  // Partial Fisher-Yates with explicit uniform draws keeps the stream
  // independent of library shuffle implementations.
  auto draw = [&rng](std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(0, hi - 1)(rng);
  };
  for (int a = 0; a < m; ++a) {
    std::swap(eligible[a], eligible[a + draw(eligible.size() - a)]);
  }
  Batch batch;
  std::vector<Tensor> images;
  for (int a = 0; a < m; ++a) {
    std::vector<std::size_t> pool = by_class[eligible[a]];
    for (int b = 0; b < k; ++b) {
      std::swap(pool[b], pool[b + draw(pool.size() - b)]);
      images.push_back(dataset.images[pool[b]]);
      batch.labels.push_back(eligible[a]);
    }
  }
  batch.images = stack_batch(images);
  return batch;
}

Objective compute_objective(const Model& model, const Batch& batch, const TrainConfig& cfg) {
  const ForwardResult fr = model.forward_all_scales(batch.images);
  Objective obj;
  const Tensor metric = binomial_deviance(fr.bank, batch.labels, cfg.loss);
  Tensor act, ntri, adv;
  if (cfg.use_activation_decay) {
    act = activation_decay(fr.bank, cfg.loss);
    const auto weights = model.learner_weights();
    ntri = ntri_regularizer(weights, cfg.loss);
  }
  if (cfg.use_adversary && cfg.model.branches >= 2) {
    for (std::size_t i = 0; i < cfg.model.scales; ++i) {
      // The game is played by FNet, GNet and the CAMs: the learners pass the
      // reversed gradient through but are not updated by it.
      std::vector<Tensor> branch;
      for (std::size_t j = 0; j < cfg.model.branches; ++j) {
        const std::size_t l = i * cfg.model.branches + j;
        Tensor e = cfg.adversary_updates_learners
                       ? fr.bank.embeddings[l]
                       : linear(fr.pooled[l], model.learner(i, j).detach());
        branch.push_back(cfg.adversary_normalized ? normalize_rows(e) : e);
      }
      Tensor term = adversary_loss(branch, model.adversary(i), cfg.loss.lambda0);
      adv = adv.empty() ? term : add(adv, term);
    }
  }
  obj.total = total_loss(metric, act, ntri, adv);
  obj.parts.metric = metric.item();
  obj.parts.act = act.empty() ? 0.0 : act.item();
  obj.parts.ntri = ntri.empty() ? 0.0 : ntri.item();
  obj.parts.has_adv = !adv.empty();
  obj.parts.adv = adv.empty() ? 0.0 : adv.item();
  obj.parts.total = obj.total.item();
  return obj;
}

LossComponents train_step(Model& model, const Batch& batch, const TrainConfig& cfg,
                          std::vector<ParamGroup>& groups, AdamState& state) {
  Objective obj = compute_objective(model, batch, cfg);
  const LossComponents& p = obj.parts;
  if (!std::isfinite(p.total)) {
    std::ostringstream msg;
    msg << "non-finite loss at step " << state.step + 1 << ": metric=" << p.metric
        << " act=" << p.act << " ntri=" << p.ntri << " adv=" << p.adv;
    throw DivergenceError(msg.str());
  }
  obj.total.backward();
  adam_step(groups, state);
  return p;
}

Trainer::Trainer(TrainConfig cfg, const data::Dataset& dataset)
    : cfg_(std::move(cfg)), dataset_(dataset), model_((cfg_.validate(), cfg_.model), cfg_.seed),
      rng_(cfg_.seed ^ 0x5DEECE66DULL) {
  groups_ = model_.param_groups(cfg_.learner_lr_multiplier,
                                cfg_.use_adversary && cfg_.model.branches >= 2,
                                cfg_.adversary_lr_multiplier);
  state_.config = cfg_.adam();
}

LossComponents Trainer::step() {
  const Batch batch =
      sample_batch(dataset_, dataset_.split.seen, cfg_.classes_per_batch, cfg_.images_per_class,
                   rng_);
  const LossComponents parts = train_step(model_, batch, cfg_, groups_, state_);
  ++iteration_;
  return parts;
}

void Trainer::write_loss_header(std::ostream& out) {
  out << "step,L_metric,L_act,L_ntri,L_adv,total\n";
}

void Trainer::write_metrics_header(std::ostream& out, const TrainConfig& cfg) {
  out << "iteration";
  for (std::size_t k : cfg.recall_ks) out << ",R@" << k;
  for (std::size_t i = 0; i < cfg.model.scales; ++i) {
    for (std::size_t k : cfg.recall_ks) out << ",root" << i + 1 << "_R@" << k;
  }
  out << "\n";
}

void Trainer::run(std::ostream* loss_log, std::ostream* metrics_log) {
  auto evaluate = [&] {
    if (!metrics_log) return;
    const RecallTable t = evaluate_zero_shot(model_, dataset_, cfg_.recall_ks, true);
    *metrics_log << iteration_;
    for (double r : t.holistic) *metrics_log << "," << r;
    for (const auto& root : t.per_root) {
      for (double r : root) *metrics_log << "," << r;
    }
    *metrics_log << "\n" << std::flush;
  };
  while (iteration_ < cfg_.iterations) {
    const LossComponents p = step();
    if (loss_log) {
      *loss_log << iteration_ << "," << p.metric << "," << p.act << "," << p.ntri << ",";
      if (p.has_adv) *loss_log << p.adv;
      *loss_log << "," << p.total << "\n";
    }
    if (cfg_.eval_every > 0 && iteration_ % cfg_.eval_every == 0) evaluate();
  }
  if (cfg_.eval_every > 0 && cfg_.iterations % cfg_.eval_every != 0) evaluate();
}

}  // namespace deml

#include "deml/eval.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "deml/errors.hpp"

namespace deml {

RetrievalIndex RetrievalIndex::build(const Tensor& embeddings, std::vector<int> labels) {
  if (embeddings.ndim() != 2 || embeddings.dim(0) != labels.size()) {
    throw DimensionError("retrieval index: " + shape_string(embeddings.shape()) + " rows vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = embeddings.dim(0);
  const std::size_t d = embeddings.dim(1);
  std::vector<double> v(embeddings.values().begin(), embeddings.values().end());
  for (std::size_t r = 0; r < n; ++r) {
    double norm = 0.0;
    for (std::size_t c = 0; c < d; ++c) norm += v[r * d + c] * v[r * d + c];
    norm = std::sqrt(norm);
    if (norm <= 1e-12) {
      throw DegenerateVectorError("retrieval index: row " + std::to_string(r) + " has zero norm");
    }
    for (std::size_t c = 0; c < d; ++c) v[r * d + c] /= norm;
  }
  return RetrievalIndex{Tensor({n, d}, std::move(v)), std::move(labels)};
}

double similarity(const RetrievalIndex& index, std::size_t a, std::size_t b) {
  const std::size_t d = index.embeddings.dim(1);
  auto v = index.embeddings.values();
  double s = 0.0;
  for (std::size_t c = 0; c < d; ++c) s += v[a * d + c] * v[b * d + c];
  return s;
}

double recall_at_k(const RetrievalIndex& index, std::size_t k) {
  const std::size_t n = index.size();
  if (k < 1 || k >= n) {
    throw ParameterError("recall_at_k: K=" + std::to_string(k) + " needs gallery size > K, got " +
                         std::to_string(n));
  }
  std::size_t hits = 0;
  std::vector<double> sims(n);
  for (std::size_t q = 0; q < n; ++q) {
    for (std::size_t g = 0; g < n; ++g) sims[g] = g == q ? 0.0 : similarity(index, q, g);
    // The best-ranked same-class item decides the query: count what precedes it.
    std::size_t best = n;
    for (std::size_t g = 0; g < n; ++g) {
      if (g == q || index.labels[g] != index.labels[q]) continue;
      if (best == n || sims[g] > sims[best]) best = g;
    }
    if (best == n) continue;
    std::size_t ahead = 0;
    for (std::size_t g = 0; g < n; ++g) {
      if (g == q || g == best) continue;
      if (sims[g] > sims[best] || (sims[g] == sims[best] && g < best)) ++ahead;
    }
    if (ahead < k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

LearnerBank embed_images(const Model& model, const std::vector<Tensor>& images,
                         std::size_t chunk) {
  if (images.empty()) throw EmptyInputError("embed_images: no images");
  NoGradGuard no_grad;
  const ModelConfig& cfg = model.config();
  LearnerBank bank{cfg.scales, cfg.branches, {}};
  std::vector<std::vector<double>> rows(cfg.scales * cfg.branches);
  for (std::size_t start = 0; start < images.size(); start += chunk) {
    const std::size_t end = std::min(images.size(), start + chunk);
    const std::vector<Tensor> part(images.begin() + start, images.begin() + end);
    const ForwardResult fr = model.forward_all_scales(stack_batch(part));
    for (std::size_t l = 0; l < rows.size(); ++l) {
      auto v = fr.bank.embeddings[l].values();
      rows[l].insert(rows[l].end(), v.begin(), v.end());
    }
  }
  for (auto& r : rows) {
    const std::size_t dim = cfg.learner_dim();
    bank.embeddings.emplace_back(Shape{images.size(), dim}, std::move(r));
  }
  return bank;
}

RecallTable evaluate_recall(const Model& model, const std::vector<Tensor>& images,
                            const std::vector<int>& labels, std::span<const std::size_t> ks,
                            bool per_root) {
  const LearnerBank bank = embed_images(model, images);
  RecallTable table;
  table.ks.assign(ks.begin(), ks.end());
  const RetrievalIndex holistic = RetrievalIndex::build(holistic_embed(bank), labels);
  for (std::size_t k : ks) table.holistic.push_back(recall_at_k(holistic, k));
  if (per_root) {
    for (std::size_t i = 0; i < bank.scales; ++i) {
      const RetrievalIndex root = RetrievalIndex::build(root_embed(bank, i), labels);
      std::vector<double> row;
      for (std::size_t k : ks) row.push_back(recall_at_k(root, k));
      table.per_root.push_back(std::move(row));
    }
  }
  return table;
}

namespace {

std::pair<std::vector<Tensor>, std::vector<int>> subset(const data::Dataset& dataset,
                                                        std::span<const int> classes) {
  std::pair<std::vector<Tensor>, std::vector<int>> out;
  for (std::size_t i : dataset.indices_of(classes)) {
    out.first.push_back(dataset.images[i]);
    out.second.push_back(dataset.labels[i]);
  }
  if (out.first.empty()) throw DatasetError("evaluation: no images of the requested classes");
  return out;
}

}  // namespace

RecallTable evaluate_zero_shot(const Model& model, const data::Dataset& dataset,
                               std::span<const std::size_t> ks, bool per_root) {
  const std::set<int> seen(dataset.split.seen.begin(), dataset.split.seen.end());
  for (int c : dataset.split.unseen) {
    if (seen.count(c)) {
      throw SplitContaminationError("class " + std::to_string(c) +
                                    " is both a training and a test class");
    }
  }
  auto [images, labels] = subset(dataset, dataset.split.unseen);
  for (int c : labels) {
    if (seen.count(c)) {
      throw SplitContaminationError("evaluated image of training class " + std::to_string(c));
    }
  }
  return evaluate_recall(model, images, labels, ks, per_root);
}

RecallTable evaluate_seen(const Model& model, const data::Dataset& dataset,
                          std::span<const std::size_t> ks) {
  auto [images, labels] = subset(dataset, dataset.split.seen);
  return evaluate_recall(model, images, labels, ks, false);
}

double mean_branch_similarity(const LearnerBank& bank) {
  if (bank.branches < 2) return 0.0;
  const std::size_t n = bank.batch_size();
  const std::size_t v = bank.learner_dim();
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < bank.scales; ++i) {
    for (std::size_t a = 0; a < bank.branches; ++a) {
      for (std::size_t b = a + 1; b < bank.branches; ++b) {
        auto ea = bank.at(i, a).values();
        auto eb = bank.at(i, b).values();
        for (std::size_t s = 0; s < n; ++s) {
          double dot = 0.0, na = 0.0, nb = 0.0;
          for (std::size_t c = 0; c < v; ++c) {
            dot += ea[s * v + c] * eb[s * v + c];
            na += ea[s * v + c] * ea[s * v + c];
            nb += eb[s * v + c] * eb[s * v + c];
          }
          if (na <= 0.0 || nb <= 0.0) continue;
          total += dot / std::sqrt(na * nb);
          ++count;
        }
      }
    }
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

}  // namespace deml

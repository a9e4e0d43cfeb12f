#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "deml/dataset.hpp"
#include "deml/model.hpp"
#include "deml/tensor.hpp"

namespace deml {

// Gallery of L2-normalized rows. Queries are the gallery itself with the
// query excluded from its own neighbor list.
struct RetrievalIndex {
  Tensor embeddings;  // [n x D], unit rows
  std::vector<int> labels;

  // Normalizes the rows of `embeddings`; throws DegenerateVectorError on a
  // zero row and DimensionError on a label count mismatch.
  static RetrievalIndex build(const Tensor& embeddings, std::vector<int> labels);
  std::size_t size() const { return labels.size(); }
};

// Cosine similarity of rows a and b of a normalized index.
double similarity(const RetrievalIndex& index, std::size_t a, std::size_t b);

// Fraction of queries with a same-class item among their K nearest
// neighbors, ranking by similarity then lower index. Throws ParameterError
// unless 1 <= K < gallery size.
double recall_at_k(const RetrievalIndex& index, std::size_t k);

struct RecallTable {
  std::vector<std::size_t> ks;
  std::vector<double> holistic;               // one per K
  std::vector<std::vector<double>> per_root;  // I rows, one column per K
};

// Embeddings of `images` ([N x C x H x W]) computed without a graph, in
// chunks of `chunk` samples.
LearnerBank embed_images(const Model& model, const std::vector<Tensor>& images,
                         std::size_t chunk = 64);

// Recall table over the given images, no split checks.
RecallTable evaluate_recall(const Model& model, const std::vector<Tensor>& images,
                            const std::vector<int>& labels, std::span<const std::size_t> ks,
                            bool per_root);

// Recall over the unseen classes of `dataset`. Throws SplitContaminationError
// when the split's seen and unseen classes intersect or an evaluated image
// belongs to a seen class.
RecallTable evaluate_zero_shot(const Model& model, const data::Dataset& dataset,
                               std::span<const std::size_t> ks, bool per_root = false);

// Recall over the seen (training) classes of `dataset`.
RecallTable evaluate_seen(const Model& model, const data::Dataset& dataset,
                          std::span<const std::size_t> ks);

// Mean pairwise cosine similarity between the J learners of each scale,
// averaged over samples, branch pairs and scales. 0 when J = 1.
double mean_branch_similarity(const LearnerBank& bank);

}  // namespace deml

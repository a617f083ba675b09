#pragma once

#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "graph.hpp"
#include "segmodel.hpp"

namespace alignlab {

enum class AlignKind { None, L2, MMD, CS, Consistency };

AlignKind parse_align_kind(const std::string& text);
std::string to_string(AlignKind kind);

struct AlignmentMetric {
  AlignKind kind = AlignKind::CS;
  double mmd_sigma = 0.0;              // 0 selects the median heuristic
  std::size_t mmd_max_samples = 1024;
  std::uint64_t subsample_seed = 0;
};

// Numerically stable log-softmax over axis 0, composed from primitive ops.
NodeId log_softmax(Graph& graph, NodeId logits);

// Mean over non-ignored pixels of -log softmax(logits)[label]. With weights,
// each pixel's term is scaled by its weight before the sum; the divisor is
// still the number of non-ignored pixels. All pixels ignored -> constant 0.
NodeId cross_entropy(Graph& graph, NodeId logits, std::span<const std::uint8_t> labels,
                     std::span<const double> weights = {}, std::uint8_t ignore = 255);

NodeId align_l2(Graph& graph, NodeId f, NodeId g);
NodeId align_cs(Graph& graph, NodeId f, NodeId g);
NodeId align_mmd(Graph& graph, NodeId f, NodeId g, const AlignmentMetric& metric);

// Biased MMD^2 between row-sample matrices x (n, C) and y (m, C) under an
// RBF kernel exp(-|a-b|^2 / (2 sigma^2)).
NodeId mmd_samples(Graph& graph, NodeId x, NodeId y, double sigma);
// Median pairwise Euclidean distance over the union of the rows of x and y.
double median_pairwise_distance(const Tensor& x, const Tensor& y);

NodeId align_features(Graph& graph, NodeId f, NodeId g, const AlignmentMetric& metric);

struct AlignmentTerms {
  std::vector<NodeId> per_block;
  NodeId raw_sum;    // sum of a(f_l, f'_l) over the subset
  NodeId weighted;   // lambda * raw_sum
  double lambda = 0.0;
};

// lambda = 1 / |blocks|; blocks are 1-based encoder block indices.
double alignment_lambda(const std::set<int>& blocks);
AlignmentTerms alignment_terms(Graph& graph, const PyramidNodes& a, const PyramidNodes& b,
                               const AlignmentMetric& metric, const std::set<int>& blocks);
NodeId alignment_loss(Graph& graph, const PyramidNodes& a, const PyramidNodes& b, const AlignmentMetric& metric,
                      const std::set<int>& blocks);

// Mean per-pixel symmetric KL between the channel softmaxes.
NodeId logit_consistency(Graph& graph, NodeId logits_a, NodeId logits_b);

}  // namespace alignlab

#include "losses.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "error.hpp"
#include "rng.hpp"

namespace alignlab {

namespace {

void require_same_shape(const Graph& g, NodeId a, NodeId b, const char* op) {
  if (g.shape(a) != g.shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(g.shape(a)) + " vs " +
                     shape_string(g.shape(b)));
  }
}

// Per-position maximum over axis 0, as a constant of shape (1, rest...).
Tensor channel_max(const Tensor& x) {
  Shape s = x.shape();
  const std::size_t n = s[0], inner = x.numel() / n;
  s[0] = 1;
  Tensor out(s, -INFINITY);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < inner; ++i) out[i] = std::max(out[i], x[k * inner + i]);
  return out;
}

Tensor as_rows(const Tensor& f) {
  // (C, positions...) -> (P, C)
  const std::size_t C = f.dim(0), P = f.numel() / C;
  Tensor out({P, C});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t p = 0; p < P; ++p) out[p * C + c] = f[c * P + p];
  return out;
}

}  // namespace

AlignKind parse_align_kind(const std::string& text) {
  if (text == "none") return AlignKind::None;
  if (text == "l2") return AlignKind::L2;
  if (text == "mmd") return AlignKind::MMD;
  if (text == "cs") return AlignKind::CS;
  if (text == "consistency") return AlignKind::Consistency;
  throw ConfigError("unknown alignment metric '" + text + "' (expected none, consistency, l2, mmd or cs)");
}

std::string to_string(AlignKind kind) {
  switch (kind) {
    case AlignKind::None: return "none";
    case AlignKind::L2: return "l2";
    case AlignKind::MMD: return "mmd";
    case AlignKind::CS: return "cs";
    case AlignKind::Consistency: return "consistency";
  }
  return "none";
}

NodeId log_softmax(Graph& graph, NodeId logits) {
  const NodeId shifted = graph.sub(logits, graph.constant(channel_max(graph.value(logits))));
  const NodeId lse = graph.log(graph.sum_axis(graph.exp(shifted), 0));
  return graph.sub(shifted, lse);
}

NodeId cross_entropy(Graph& graph, NodeId logits, std::span<const std::uint8_t> labels,
                     std::span<const double> weights, std::uint8_t ignore) {
  const Shape& s = graph.shape(logits);
  if (s.size() != 3) throw ShapeError("cross_entropy: logits must be (K,H,W), got " + shape_string(s));
  const std::size_t K = s[0], P = s[1] * s[2];
  if (labels.size() != P) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " + shape_string(s));
  }
  if (!weights.empty() && weights.size() != P) throw ShapeError("cross_entropy: weight count mismatch");

  Tensor selector(s);
  std::size_t valid = 0;
  for (std::size_t p = 0; p < P; ++p) {
    const std::uint8_t y = labels[p];
    if (y == ignore) continue;
    if (y >= K) throw DataError("cross_entropy: label " + std::to_string(y) + " out of range for K=" + std::to_string(K));
    selector[y * P + p] = weights.empty() ? 1.0 : weights[p];
    ++valid;
  }
  if (valid == 0) return graph.constant(Tensor::scalar(0.0));
  const NodeId picked = graph.sum(graph.mul(log_softmax(graph, logits), graph.constant(std::move(selector))));
  return graph.scale(picked, -1.0 / static_cast<double>(valid));
}

NodeId align_l2(Graph& graph, NodeId f, NodeId g) {
  require_same_shape(graph, f, g, "align_l2");
  return graph.mean(graph.square(graph.sub(f, g)));
}

NodeId align_cs(Graph& graph, NodeId f, NodeId g) {
  require_same_shape(graph, f, g, "align_cs");
  const NodeId dot = graph.sum_axis(graph.mul(f, g), 0);
  const NodeId sf = graph.sum_axis(graph.square(f), 0);
  const NodeId sg = graph.sum_axis(graph.square(g), 0);

  // positions where either norm is below 1e-12 contribute zero
  const Tensor& vf = graph.value(sf);
  const Tensor& vg = graph.value(sg);
  Tensor valid(vf.shape()), pad(vf.shape());
  for (std::size_t i = 0; i < vf.numel(); ++i) {
    const bool ok = vf[i] >= 1e-24 && vg[i] >= 1e-24;
    valid[i] = ok ? 1.0 : 0.0;
    pad[i] = ok ? 0.0 : 1.0;
  }
  const NodeId padn = graph.constant(std::move(pad));
  const NodeId norms = graph.mul(graph.sqrt(graph.add(sf, padn)), graph.sqrt(graph.add(sg, padn)));
  const NodeId cosine = graph.div(dot, norms);
  const NodeId dist = graph.mul(graph.shift(graph.scale(cosine, -1.0), 1.0), graph.constant(std::move(valid)));
  return graph.mean(dist);
}

double median_pairwise_distance(const Tensor& x, const Tensor& y) {
  const std::size_t C = x.dim(1);
  std::vector<const double*> rows;
  for (std::size_t r = 0; r < x.dim(0); ++r) rows.push_back(x.data().data() + r * C);
  for (std::size_t r = 0; r < y.dim(0); ++r) rows.push_back(y.data().data() + r * C);
  std::vector<double> d;
  d.reserve(rows.size() * (rows.size() - 1) / 2);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = i + 1; j < rows.size(); ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        const double t = rows[i][c] - rows[j][c];
        s += t * t;
      }
      d.push_back(std::sqrt(s));
    }
  if (d.empty()) return 0.0;
  auto mid = d.begin() + static_cast<long>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  double m = *mid;
  if (d.size() % 2 == 0) m = 0.5 * (m + *std::max_element(d.begin(), mid));
  return m;
}

NodeId mmd_samples(Graph& graph, NodeId x, NodeId y, double sigma) {
  const Shape& sx = graph.shape(x);
  const Shape& sy = graph.shape(y);
  if (sx.size() != 2 || sy.size() != 2 || sx[1] != sy[1]) {
    throw ShapeError("align_mmd: sample sets " + shape_string(sx) + " and " + shape_string(sy) +
                     " need equal channel counts");
  }
  if (sx[0] == 0 || sy[0] == 0 || sx[0] + sy[0] < 2) throw ShapeError("align_mmd: fewer than 2 samples");
  if (!(sigma > 0.0)) throw ConfigError("align_mmd: bandwidth must be positive");
  const double gamma = -1.0 / (2.0 * sigma * sigma);

  auto kernel_mean = [&](NodeId a, NodeId b) {
    const std::size_t n = graph.shape(a)[0], m = graph.shape(b)[0];
    const NodeId na = graph.sum_axis(graph.square(a), 1);                             // (n, 1)
    const NodeId nb = graph.reshape(graph.sum_axis(graph.square(b), 1), {1, m});       // (1, m)
    const NodeId cross = graph.scale(graph.matmul(a, graph.transpose(b)), -2.0);       // (n, m)
    const NodeId sq = graph.add(graph.add(cross, na), nb);
    (void)n;
    return graph.mean(graph.exp(graph.scale(sq, gamma)));
  };
  const NodeId kxx = kernel_mean(x, x);
  const NodeId kyy = kernel_mean(y, y);
  const NodeId kxy = kernel_mean(x, y);
  return graph.sub(graph.add(kxx, kyy), graph.scale(kxy, 2.0));
}

NodeId align_mmd(Graph& graph, NodeId f, NodeId g, const AlignmentMetric& metric) {
  const Shape& sf = graph.shape(f);
  const Shape& sg = graph.shape(g);
  if (sf.empty() || sg.empty() || sf[0] != sg[0]) {
    throw ShapeError("align_mmd: channel mismatch " + shape_string(sf) + " vs " + shape_string(sg));
  }
  const std::size_t C = sf[0];
  const std::size_t pf = graph.value(f).numel() / C, pg = graph.value(g).numel() / C;
  if (pf + pg < 2) throw ShapeError("align_mmd: fewer than 2 samples");

  auto rows_of = [&](NodeId t, std::size_t positions) {
    return graph.transpose(graph.reshape(t, {C, positions}));
  };
  NodeId x = rows_of(f, pf), y = rows_of(g, pg);

  // one seeded draw, shared by both sets when their position counts agree
  auto draw = [&](std::size_t positions, std::uint64_t salt) {
    std::vector<std::size_t> idx(positions);
    for (std::size_t i = 0; i < positions; ++i) idx[i] = i;
    Rng rng(stream_seed(metric.subsample_seed, static_cast<std::uint64_t>(StreamTag::Subsample), positions, salt));
    rng.shuffle(idx);
    idx.resize(metric.mmd_max_samples);
    std::sort(idx.begin(), idx.end());
    return idx;
  };
  if (metric.mmd_max_samples == 0) throw ConfigError("align_mmd: mmd_max_samples must be positive");
  if (pf > metric.mmd_max_samples) x = graph.gather_rows(x, draw(pf, 0));
  if (pg > metric.mmd_max_samples) y = graph.gather_rows(y, draw(pg, pf == pg ? 0 : 1));

  double sigma = metric.mmd_sigma;
  if (sigma <= 0.0) {
    sigma = median_pairwise_distance(graph.value(x), graph.value(y));
    if (!(sigma > 1e-12)) sigma = 1.0;
  }
  return mmd_samples(graph, x, y, sigma);
}

NodeId align_features(Graph& graph, NodeId f, NodeId g, const AlignmentMetric& metric) {
  switch (metric.kind) {
    case AlignKind::L2: return align_l2(graph, f, g);
    case AlignKind::CS: return align_cs(graph, f, g);
    case AlignKind::MMD: return align_mmd(graph, f, g, metric);
    default: throw ConfigError("align_features: metric '" + to_string(metric.kind) + "' is not a feature distance");
  }
}

double alignment_lambda(const std::set<int>& blocks) {
  if (blocks.empty()) throw ConfigError("alignment: block subset must be nonempty");
  return 1.0 / static_cast<double>(blocks.size());
}

AlignmentTerms alignment_terms(Graph& graph, const PyramidNodes& a, const PyramidNodes& b,
                               const AlignmentMetric& metric, const std::set<int>& blocks) {
  AlignmentTerms t;
  t.lambda = alignment_lambda(blocks);
  for (int l : blocks) {
    if (l < 1 || l > kNumBlocks) throw ConfigError("alignment: block " + std::to_string(l) + " outside 1..4");
    t.per_block.push_back(align_features(graph, a.features[l - 1], b.features[l - 1], metric));
  }
  t.raw_sum = t.per_block.front();
  for (std::size_t i = 1; i < t.per_block.size(); ++i) t.raw_sum = graph.add(t.raw_sum, t.per_block[i]);
  t.weighted = graph.scale(t.raw_sum, t.lambda);
  return t;
}

NodeId alignment_loss(Graph& graph, const PyramidNodes& a, const PyramidNodes& b, const AlignmentMetric& metric,
                      const std::set<int>& blocks) {
  return alignment_terms(graph, a, b, metric, blocks).weighted;
}

NodeId logit_consistency(Graph& graph, NodeId logits_a, NodeId logits_b) {
  require_same_shape(graph, logits_a, logits_b, "logit_consistency");
  const NodeId lp = log_softmax(graph, logits_a);
  const NodeId lq = log_softmax(graph, logits_b);
  const NodeId p = graph.softmax(logits_a, 0);
  const NodeId q = graph.softmax(logits_b, 0);
  const NodeId per_pixel = graph.sum_axis(graph.mul(graph.sub(p, q), graph.sub(lp, lq)), 0);
  return graph.mean(per_pixel);
}

}  // namespace alignlab

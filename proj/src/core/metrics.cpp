#include "metrics.hpp"

#include <cstdio>
#include <numeric>

#include "error.hpp"

namespace alignlab {

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes) : k_(num_classes), counts_(num_classes * num_classes, 0) {
  if (num_classes == 0 || num_classes > 255) throw ConfigError("confusion matrix needs 1..255 classes");
}

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

void ConfusionMatrix::accumulate(std::span<const std::uint8_t> predictions, std::span<const std::uint8_t> labels,
                                 std::uint8_t ignore) {
  if (predictions.size() != labels.size()) {
    throw ShapeError("accumulate: " + std::to_string(predictions.size()) + " predictions vs " +
                     std::to_string(labels.size()) + " labels");
  }
  // validate first so a bad map leaves the matrix untouched
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == ignore) continue;
    if (predictions[i] >= k_) throw DataError("accumulate: prediction " + std::to_string(predictions[i]) + " out of range");
    if (labels[i] >= k_) throw DataError("accumulate: label " + std::to_string(labels[i]) + " out of range");
  }
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] != ignore) ++counts_[labels[i] * k_ + predictions[i]];
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.k_ != k_) throw ShapeError("merge: class count mismatch");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

ConfusionMatrix merge(const ConfusionMatrix& a, const ConfusionMatrix& b) {
  ConfusionMatrix out = a;
  out.merge(b);
  return out;
}

Scores scores(const ConfusionMatrix& cm) {
  const std::size_t K = cm.num_classes();
  Scores s;
  s.iou.resize(K);
  s.acc.resize(K);
  double iou_sum = 0, acc_sum = 0;
  int iou_n = 0, acc_n = 0;
  for (std::size_t c = 0; c < K; ++c) {
    std::uint64_t row = 0, col = 0;
    for (std::size_t j = 0; j < K; ++j) {
      row += cm.at(c, j);
      col += cm.at(j, c);
    }
    const std::uint64_t tp = cm.at(c, c);
    const std::uint64_t denom = row + col - tp;
    if (denom > 0) {
      s.iou[c] = static_cast<double>(tp) / static_cast<double>(denom);
      iou_sum += *s.iou[c];
      ++iou_n;
    }
    if (row > 0) {
      s.acc[c] = static_cast<double>(tp) / static_cast<double>(row);
      acc_sum += *s.acc[c];
      ++acc_n;
    }
  }
  if (iou_n > 0) s.miou = iou_sum / iou_n;
  if (acc_n > 0) s.macc = acc_sum / acc_n;
  return s;
}

namespace {

std::string fmt(const std::optional<double>& v, const char* absent) {
  if (!v) return absent;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

std::string name_of(const std::vector<std::string>& names, std::size_t c) {
  return c < names.size() ? names[c] : "class" + std::to_string(c);
}

}  // namespace

std::string scores_csv(const Scores& s, const std::vector<std::string>& names) {
  std::string out = "class,name,iou,acc\n";
  for (std::size_t c = 0; c < s.iou.size(); ++c) {
    out += std::to_string(c) + "," + name_of(names, c) + "," + fmt(s.iou[c], "") + "," + fmt(s.acc[c], "") + "\n";
  }
  out += "mean,all," + fmt(s.miou, "") + "," + fmt(s.macc, "") + "\n";
  return out;
}

std::string scores_text(const Scores& s, const std::vector<std::string>& names) {
  std::string out;
  char line[128];
  std::snprintf(line, sizeof line, "%-3s %-14s %10s %10s\n", "id", "class", "IoU", "Acc");
  out += line;
  for (std::size_t c = 0; c < s.iou.size(); ++c) {
    std::snprintf(line, sizeof line, "%-3zu %-14s %10s %10s\n", c, name_of(names, c).c_str(),
                  fmt(s.iou[c], "-").c_str(), fmt(s.acc[c], "-").c_str());
    out += line;
  }
  std::snprintf(line, sizeof line, "%-18s %10s %10s\n", "mean", fmt(s.miou, "-").c_str(), fmt(s.macc, "-").c_str());
  out += line;
  return out;
}

}  // namespace alignlab

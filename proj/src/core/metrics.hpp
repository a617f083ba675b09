#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace alignlab {

class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes = 10);

  std::size_t num_classes() const { return k_; }
  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts_[truth * k_ + pred]; }
  std::uint64_t total() const;

  void accumulate(std::span<const std::uint8_t> predictions, std::span<const std::uint8_t> labels,
                  std::uint8_t ignore = 255);
  void merge(const ConfusionMatrix& other);

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t k_;
  std::vector<std::uint64_t> counts_;  // row = ground truth
};

ConfusionMatrix merge(const ConfusionMatrix& a, const ConfusionMatrix& b);

struct Scores {
  std::vector<std::optional<double>> iou;  // absent when the denominator is zero
  std::vector<std::optional<double>> acc;  // absent when the class never occurs in the labels
  std::optional<double> miou;
  std::optional<double> macc;
};

Scores scores(const ConfusionMatrix& cm);

// Per-class table as CSV (class,name,iou,acc) and as aligned text.
std::string scores_csv(const Scores& s, const std::vector<std::string>& names);
std::string scores_text(const Scores& s, const std::vector<std::string>& names);

}  // namespace alignlab

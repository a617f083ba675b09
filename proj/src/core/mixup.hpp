#pragma once

#include <cstdint>
#include <set>
#include <vector>

#include "tensor.hpp"

namespace alignlab {

class Rng;

struct BinaryMask {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> mask;  // 1 where the source pixel is kept
  std::set<int> selected_classes;
};

// Shuffles the classes present in the source labels and keeps the first
// half, rounding up. Ignore pixels are never selected.
BinaryMask build_class_mask(const std::vector<std::uint8_t>& source_labels, std::size_t width, std::size_t height,
                            Rng& rng, std::uint8_t ignore = 255);

// Per-pixel blend of two (C, H, W) images; the mask is shared over channels.
Tensor mix(const Tensor& source, const BinaryMask& mask, const Tensor& target);

std::vector<std::uint8_t> mixed_label(const std::vector<std::uint8_t>& source_labels, const BinaryMask& mask,
                                      const std::vector<std::uint8_t>& target_pseudo_labels);

}  // namespace alignlab

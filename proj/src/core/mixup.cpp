#include "mixup.hpp"

#include "error.hpp"
#include "rng.hpp"

namespace alignlab {

BinaryMask build_class_mask(const std::vector<std::uint8_t>& source_labels, std::size_t width, std::size_t height,
                            Rng& rng, std::uint8_t ignore) {
  if (source_labels.size() != width * height) {
    throw ShapeError("build_class_mask: " + std::to_string(source_labels.size()) + " labels for " +
                     std::to_string(width) + "x" + std::to_string(height));
  }
  std::set<int> present;
  for (std::uint8_t y : source_labels)
    if (y != ignore) present.insert(y);
  if (present.empty()) throw DataError("build_class_mask: label map has no non-ignore classes");

  std::vector<int> classes(present.begin(), present.end());
  rng.shuffle(classes);
  BinaryMask m;
  m.width = width;
  m.height = height;
  m.selected_classes.insert(classes.begin(), classes.begin() + static_cast<long>((classes.size() + 1) / 2));

  bool lut[256] = {};
  for (int c : m.selected_classes) lut[c] = true;
  m.mask.resize(source_labels.size());
  for (std::size_t p = 0; p < source_labels.size(); ++p) m.mask[p] = lut[source_labels[p]] ? 1 : 0;
  return m;
}

Tensor mix(const Tensor& source, const BinaryMask& mask, const Tensor& target) {
  if (source.shape() != target.shape()) {
    throw ShapeError("mix: source " + shape_string(source.shape()) + " vs target " + shape_string(target.shape()));
  }
  if (source.rank() != 3 || source.dim(1) != mask.height || source.dim(2) != mask.width ||
      mask.mask.size() != mask.width * mask.height) {
    throw ShapeError("mix: image " + shape_string(source.shape()) + " does not match mask " +
                     std::to_string(mask.width) + "x" + std::to_string(mask.height));
  }
  const std::size_t P = mask.mask.size();
  Tensor out(source.shape());
  for (std::size_t c = 0; c < source.dim(0); ++c)
    for (std::size_t p = 0; p < P; ++p) {
      const std::size_t i = c * P + p;
      out[i] = mask.mask[p] ? source[i] : target[i];
    }
  return out;
}

std::vector<std::uint8_t> mixed_label(const std::vector<std::uint8_t>& source_labels, const BinaryMask& mask,
                                      const std::vector<std::uint8_t>& target_pseudo_labels) {
  if (source_labels.size() != mask.mask.size() || target_pseudo_labels.size() != mask.mask.size()) {
    throw ShapeError("mixed_label: resolution mismatch");
  }
  std::vector<std::uint8_t> out(mask.mask.size());
  for (std::size_t p = 0; p < out.size(); ++p) out[p] = mask.mask[p] ? source_labels[p] : target_pseudo_labels[p];
  return out;
}

}  // namespace alignlab

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "netpbm.hpp"
#include "scenegen.hpp"
#include "tensor.hpp"

namespace alignlab {

struct DatasetEntry {
  int layout_index = 0;
  LabelMap labels;                 // shared by every appearance of the layout
  std::map<int, Rgb8Image> rgb;    // appearance id -> image
};

struct Dataset {
  std::uint64_t seed = 0;
  SceneConfig config;
  std::vector<DatasetEntry> entries;

  std::size_t size() const { return entries.size(); }
  bool has_appearance(int appearance_id) const;
};

struct Manifest {
  std::filesystem::path root;
  std::size_t label_files = 0;
  std::size_t rgb_files = 0;
};

// Renders layouts [first_index, first_index + count) under the given
// appearances. Images are stored 8-bit, exactly as they would be on disk.
Dataset build_dataset(std::uint64_t seed, int first_index, int count, const SceneConfig& config,
                      const std::vector<int>& appearances);

// Directory layout: manifest.json, labels/%06d.pgm, rgb/%06d_a%d.ppm.
Manifest write_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Manifest write_dataset(const std::vector<Layout>& layouts, const std::vector<int>& appearances,
                       const std::filesystem::path& dir, const SceneConfig& config);
Dataset read_dataset(const std::filesystem::path& dir);

// (3, H, W) tensor with values in [0, 1].
Tensor image_tensor(const Rgb8Image& image);
Tensor image_tensor(const RgbImage& image);
Rgb8Image tensor_image(const Tensor& chw);

}  // namespace alignlab

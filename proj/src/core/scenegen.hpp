#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

namespace alignlab {

enum ClassId : std::uint8_t {
  kRoad = 0,
  kSidewalk = 1,
  kBuilding = 2,
  kSky = 3,
  kVegetation = 4,
  kCar = 5,
  kPerson = 6,
  kPole = 7,
  kTrafficSign = 8,
  kFence = 9,
};

inline constexpr int kDefaultNumClasses = 10;
inline constexpr std::uint8_t kIgnoreLabel = 255;
inline constexpr int kNumAppearances = 4;
inline constexpr int kDuskAppearance = 4;  // evaluation-only condition, never sampled for training

const std::vector<std::string>& class_names();
const char* appearance_name(int appearance_id);

using Rgb = std::array<double, 3>;

struct CountRange {
  int min = 0;
  int max = 0;
};

struct SceneConfig {
  int width = 128;
  int height = 96;
  int num_classes = kDefaultNumClasses;
  CountRange buildings{2, 6};
  CountRange trees{0, 3};
  CountRange fences{0, 2};
  CountRange poles{1, 3};
  CountRange signs{0, 2};
  CountRange cars{0, 4};
  CountRange persons{0, 3};
  CountRange lane_marks{0, 1};
};

// Geometry in continuous pixel coordinates; pixel (x, y) is covered when its
// centre (x + 0.5, y + 0.5) lies inside the primitive.
struct RectShape {
  double x0, y0, x1, y1;  // half-open [x0, x1) x [y0, y1)
  friend bool operator==(const RectShape&, const RectShape&) = default;
};

struct TrapezoidShape {
  double y_top, y_bottom;        // y_top < y_bottom
  double top_left, top_right;    // x extent on the top edge
  double bottom_left, bottom_right;
  friend bool operator==(const TrapezoidShape&, const TrapezoidShape&) = default;
};

struct DiscShape {
  double cx, cy, radius;
  friend bool operator==(const DiscShape&, const DiscShape&) = default;
};

struct PolylineShape {
  std::vector<std::array<double, 2>> points;
  double thickness;
  friend bool operator==(const PolylineShape&, const PolylineShape&) = default;
};

using Primitive = std::variant<RectShape, TrapezoidShape, DiscShape, PolylineShape>;

struct SceneObject {
  int class_id = kSky;
  Primitive shape;
  double depth = 200.0;  // metres, constant over the object
  Rgb albedo{0.5, 0.5, 0.5};
  friend bool operator==(const SceneObject&, const SceneObject&) = default;
};

struct Layout {
  int layout_index = 0;
  std::uint64_t seed = 0;
  int width = 0;
  int height = 0;
  double horizon = 0.0;
  std::vector<SceneObject> objects;  // back to front (depth non-increasing)

  friend bool operator==(const Layout&, const Layout&) = default;
};

bool covers(const Primitive& shape, double px, double py);

struct LightSource {
  double x, y, radius, intensity;
};

struct AppearanceCondition {
  int appearance_id = 1;
  double sun_azimuth = 0.0;    // radians
  double sun_elevation = 0.0;  // radians; <= 0 means no direct sun
  double ambient_gain = 1.0;   // [0, 1]
  Rgb color_tint{1.0, 1.0, 1.0};
  double fog_density = 0.0;  // per-metre extinction
  Rgb fog_color{0.8, 0.8, 0.8};
  std::vector<LightSource> light_sources;
  double noise_sigma = 0.0;  // [0, 0.1]
  double shadow_strength = 0.0;
};

// Parameters shared by every layout rendered under a condition. Per-layout
// draws (fog density, street lights) come from appearance_for_layout.
AppearanceCondition appearance_preset(int appearance_id);
AppearanceCondition appearance_for_layout(int appearance_id, const Layout& layout);

struct LabelMap {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> labels;  // row-major

  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;  // row-major, 3 interleaved channels in [0, 1]
};

struct LabeledSample {
  RgbImage rgb;
  LabelMap labels;
  int layout_index = 0;
  int appearance_id = 0;
  std::uint64_t seed = 0;
};

Layout generate_layout(std::uint64_t seed, int layout_index, const SceneConfig& config = {});

// Index of the front-most object at each pixel.
std::vector<std::uint16_t> rasterize_object_ids(const Layout& layout);
LabelMap rasterize_labels(const Layout& layout);

RgbImage render(const Layout& layout, const AppearanceCondition& appearance);

LabeledSample make_sample(const Layout& layout, int appearance_id);

// Closed-form fog compositing of one channel.
double apply_fog(double value, double fog_value, double density, double depth);

enum class ProtocolKind { Fixed, Random, Single };

struct AppearanceProtocol {
  ProtocolKind kind = ProtocolKind::Random;
  int single_appearance = 0;

  static AppearanceProtocol parse(const std::string& text);  // fixed | random | single:<j>
  std::string to_string() const;
};

struct AppearancePair {
  int first = 0;
  int second = 0;
  friend bool operator==(const AppearancePair&, const AppearancePair&) = default;
};

// The twelve ordered pairs (j, j') with j != j'.
const std::array<AppearancePair, 12>& ordered_appearance_pairs();

class Rng;

// Fixed: pure function of (dataset_seed, layout_index), assigned round-robin
// over a seeded ordering of the twelve pairs. Random: uniform over the twelve
// pairs, drawn from epoch_rng. Single(j): (j, j).
AppearancePair sample_appearance_pair(const AppearanceProtocol& protocol, std::uint64_t dataset_seed,
                                      int layout_index, Rng& epoch_rng);

}  // namespace alignlab

#include "scenegen.hpp"

#include <algorithm>
#include <cmath>

#include "error.hpp"
#include "rng.hpp"

namespace alignlab {

const std::vector<std::string>& class_names() {
  static const std::vector<std::string> names = {"road", "sidewalk", "building", "sky",          "vegetation",
                                                 "car",  "person",   "pole",     "traffic-sign", "fence"};
  return names;
}

const char* appearance_name(int appearance_id) {
  switch (appearance_id) {
    case 0: return "sunset";
    case 1: return "noon";
    case 2: return "night";
    case 3: return "fog";
    case kDuskAppearance: return "dusk";
    default: return "unknown";
  }
}

namespace {

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

double segment_distance(double px, double py, const std::array<double, 2>& a, const std::array<double, 2>& b) {
  const double vx = b[0] - a[0], vy = b[1] - a[1];
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0.0 ? ((px - a[0]) * vx + (py - a[1]) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = px - (a[0] + t * vx), dy = py - (a[1] + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

struct Box {
  int x0, y0, x1, y1;  // inclusive-exclusive pixel range
};

Box bounding_box(const Primitive& shape, int width, int height) {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, RectShape>) {
          x0 = s.x0, y0 = s.y0, x1 = s.x1, y1 = s.y1;
        } else if constexpr (std::is_same_v<T, TrapezoidShape>) {
          x0 = std::min(s.top_left, s.bottom_left);
          x1 = std::max(s.top_right, s.bottom_right);
          y0 = s.y_top, y1 = s.y_bottom;
        } else if constexpr (std::is_same_v<T, DiscShape>) {
          x0 = s.cx - s.radius, x1 = s.cx + s.radius, y0 = s.cy - s.radius, y1 = s.cy + s.radius;
        } else {
          x0 = y0 = 1e18;
          x1 = y1 = -1e18;
          for (const auto& p : s.points) {
            x0 = std::min(x0, p[0]), x1 = std::max(x1, p[0]);
            y0 = std::min(y0, p[1]), y1 = std::max(y1, p[1]);
          }
          x0 -= s.thickness, x1 += s.thickness, y0 -= s.thickness, y1 += s.thickness;
        }
      },
      shape);
  auto lo = [](double v, int hi) { return std::clamp(static_cast<int>(std::floor(v)) - 1, 0, hi); };
  auto up = [](double v, int hi) { return std::clamp(static_cast<int>(std::ceil(v)) + 1, 0, hi); };
  return {lo(x0, width), lo(y0, height), up(x1, width), up(y1, height)};
}

Rgb jitter(Rng& rng, Rgb base, double amount) {
  for (auto& c : base) c = clamp01(c + rng.uniform(-amount, amount));
  return base;
}

bool is_ground(int class_id) { return class_id == kRoad || class_id == kSidewalk; }

bool casts_shadow(int class_id) {
  return class_id == kCar || class_id == kPerson || class_id == kPole || class_id == kVegetation ||
         class_id == kFence;
}

// Camera model for placing standing objects: focal length in pixels equals
// the image width, camera 1.5 m above a flat ground plane.
struct Camera {
  double focal;
  double horizon;
  double height_m = 1.5;

  double ground_y(double depth) const { return horizon + focal * height_m / depth; }
  double pixels(double metres, double depth) const { return focal * metres / depth; }
};

}  // namespace

bool covers(const Primitive& shape, double px, double py) {
  return std::visit(
      [&](const auto& s) -> bool {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, RectShape>) {
          return px >= s.x0 && px < s.x1 && py >= s.y0 && py < s.y1;
        } else if constexpr (std::is_same_v<T, TrapezoidShape>) {
          if (py < s.y_top || py >= s.y_bottom) return false;
          const double t = (py - s.y_top) / (s.y_bottom - s.y_top);
          const double left = s.top_left + t * (s.bottom_left - s.top_left);
          const double right = s.top_right + t * (s.bottom_right - s.top_right);
          return px >= left && px < right;
        } else if constexpr (std::is_same_v<T, DiscShape>) {
          const double dx = px - s.cx, dy = py - s.cy;
          return dx * dx + dy * dy <= s.radius * s.radius;
        } else {
          for (std::size_t i = 1; i < s.points.size(); ++i) {
            if (segment_distance(px, py, s.points[i - 1], s.points[i]) <= 0.5 * s.thickness) return true;
          }
          return false;
        }
      },
      shape);
}

Layout generate_layout(std::uint64_t seed, int layout_index, const SceneConfig& config) {
  if (config.width <= 0 || config.height <= 0) {
    throw ConfigError("generate_layout: resolution must be positive, got " + std::to_string(config.width) + "x" +
                      std::to_string(config.height));
  }
  if (layout_index < 0) throw ConfigError("generate_layout: negative layout index");
  if (config.num_classes != kDefaultNumClasses) {
    throw ConfigError("generate_layout: the scene vocabulary has exactly " + std::to_string(kDefaultNumClasses) +
                      " classes");
  }

  Rng rng(stream_seed(seed, static_cast<std::uint64_t>(StreamTag::Layout), static_cast<std::uint64_t>(layout_index)));
  auto count = [&](CountRange r) { return static_cast<int>(rng.integer(r.min, std::max(r.min, r.max))); };

  const double W = config.width, H = config.height;
  Layout layout;
  layout.layout_index = layout_index;
  layout.seed = seed;
  layout.width = config.width;
  layout.height = config.height;
  layout.horizon = H * rng.uniform(0.38, 0.52);
  const Camera cam{W, layout.horizon};
  const double sky_band = 0.08 * H;  // rows above this are never covered by standing objects
  auto& objs = layout.objects;

  objs.push_back({kSky, RectShape{0, 0, W, H}, 200.0, jitter(rng, {0.55, 0.72, 0.92}, 0.06)});

  const int n_buildings = count(config.buildings);
  for (int b = 0; b < n_buildings; ++b) {
    const double bw = W * rng.uniform(0.15, 0.4);
    const double x0 = rng.uniform(-0.1 * W, W - 0.5 * bw);
    const double top = std::max(sky_band + 0.04 * H, layout.horizon - H * rng.uniform(0.12, 0.4));
    const double grey = rng.uniform(0.35, 0.7);
    objs.push_back({kBuilding, RectShape{x0, top, x0 + bw, layout.horizon + 2.0}, rng.uniform(30.0, 90.0),
                    jitter(rng, {grey, grey * 0.92, grey * 0.85}, 0.05)});
  }

  objs.push_back({kSidewalk, RectShape{0, layout.horizon, W, H}, 28.0, jitter(rng, {0.62, 0.58, 0.54}, 0.04)});

  const double vp = W * rng.uniform(0.35, 0.65);
  const double half_top = W * 0.03;
  const double spread_l = W * rng.uniform(0.45, 0.7), spread_r = W * rng.uniform(0.45, 0.7);
  const TrapezoidShape road{layout.horizon, H, vp - half_top, vp + half_top, vp - spread_l, vp + spread_r};
  objs.push_back({kRoad, road, 26.0, jitter(rng, {0.28, 0.28, 0.3}, 0.03)});

  auto road_edges = [&](double y) {
    const double t = std::clamp((y - road.y_top) / (road.y_bottom - road.y_top), 0.0, 1.0);
    return std::array<double, 2>{road.top_left + t * (road.bottom_left - road.top_left),
                                 road.top_right + t * (road.bottom_right - road.top_right)};
  };
  // x position beside the road at image row y
  auto off_road_x = [&](double y, double half_width) {
    const auto e = road_edges(y);
    const bool left = rng.uniform() < 0.5;
    const double lo = left ? -half_width : e[1] + half_width;
    const double hi = left ? e[0] - half_width : W + half_width;
    return hi > lo ? rng.uniform(lo, hi) : rng.uniform(0.0, W);
  };

  const int n_lanes = count(config.lane_marks);
  for (int l = 0; l < n_lanes; ++l) {
    const double end_x = vp + rng.uniform(-0.15, 0.15) * W;
    objs.push_back({kRoad, PolylineShape{{{vp, layout.horizon + 2.0}, {end_x, H}}, rng.uniform(1.2, 2.2)}, 25.9,
                    jitter(rng, {0.88, 0.88, 0.82}, 0.04)});
  }

  const int n_fences = count(config.fences);
  for (int f = 0; f < n_fences; ++f) {
    const double d = rng.uniform(8.0, 24.0);
    const double yb = cam.ground_y(d), hpx = cam.pixels(1.2, d), wpx = cam.pixels(rng.uniform(3.0, 8.0), d);
    const double x = off_road_x(yb, 0.5 * wpx);
    objs.push_back({kFence, RectShape{x - 0.5 * wpx, yb - hpx, x + 0.5 * wpx, yb}, d,
                    jitter(rng, {0.55, 0.45, 0.32}, 0.06)});
  }

  const int n_trees = count(config.trees);
  for (int t = 0; t < n_trees; ++t) {
    const double d = rng.uniform(10.0, 24.0);
    const double yb = cam.ground_y(d);
    const double trunk_h = cam.pixels(rng.uniform(2.0, 3.5), d);
    const double crown_r = cam.pixels(rng.uniform(1.2, 2.5), d);
    const double x = off_road_x(yb, crown_r);
    const double trunk_w = std::max(1.5, cam.pixels(0.35, d));
    const double crown_y = std::max(sky_band + crown_r, yb - trunk_h - 0.6 * crown_r);
    const Rgb green = jitter(rng, {0.2, 0.45, 0.18}, 0.07);
    objs.push_back({kVegetation, RectShape{x - 0.5 * trunk_w, crown_y, x + 0.5 * trunk_w, yb}, d + 0.05,
                    jitter(rng, {0.35, 0.25, 0.15}, 0.04)});
    objs.push_back({kVegetation, DiscShape{x, crown_y, crown_r}, d, green});
  }

  const int n_poles = count(config.poles);
  std::vector<std::array<double, 3>> pole_tops;  // x, y, depth
  for (int p = 0; p < n_poles; ++p) {
    const double d = rng.uniform(5.0, 24.0);
    const double yb = cam.ground_y(d);
    const double pw = std::max(1.2, cam.pixels(0.18, d));
    const double top = std::max(sky_band, yb - cam.pixels(rng.uniform(4.0, 6.0), d));
    const double x = off_road_x(yb, pw);
    objs.push_back({kPole, RectShape{x - 0.5 * pw, top, x + 0.5 * pw, yb}, d, jitter(rng, {0.45, 0.45, 0.47}, 0.05)});
    pole_tops.push_back({x, top, d});
  }

  const int n_signs = count(config.signs);
  for (int s = 0; s < n_signs; ++s) {
    static const Rgb palette[] = {{0.8, 0.12, 0.1}, {0.1, 0.25, 0.75}, {0.9, 0.75, 0.1}};
    const Rgb colour = jitter(rng, palette[rng.index(3)], 0.05);
    double x, y, d;
    if (!pole_tops.empty()) {
      const auto& pt = pole_tops[rng.index(pole_tops.size())];
      x = pt[0], d = pt[2] - 0.05;
      y = pt[1] + cam.pixels(0.5, pt[2]);
    } else {
      d = rng.uniform(5.0, 24.0);
      y = cam.ground_y(d) - cam.pixels(2.8, d);
      x = off_road_x(cam.ground_y(d), 2.0);
    }
    const double r = std::max(1.5, cam.pixels(rng.uniform(0.35, 0.5), d));
    if (rng.uniform() < 0.5) {
      objs.push_back({kTrafficSign, DiscShape{x, y, r}, d, colour});
    } else {
      objs.push_back({kTrafficSign, RectShape{x - r, y - r, x + r, y + r}, d, colour});
    }
  }

  const int n_cars = count(config.cars);
  for (int c = 0; c < n_cars; ++c) {
    const double d = rng.uniform(5.0, 24.0);
    const double yb = cam.ground_y(d);
    const auto e = road_edges(yb);
    const double wpx = cam.pixels(1.9, d), hpx = cam.pixels(1.5, d);
    const double x = rng.uniform(e[0] + 0.3 * wpx, std::max(e[0] + 0.3 * wpx + 1.0, e[1] - 0.3 * wpx));
    const double top = std::max(sky_band, yb - hpx);
    const double shrink = 0.18 * wpx;
    const Rgb paint{rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)};
    objs.push_back({kCar, TrapezoidShape{top, yb, x - 0.5 * wpx + shrink, x + 0.5 * wpx - shrink, x - 0.5 * wpx,
                                         x + 0.5 * wpx},
                    d, paint});
  }

  const int n_persons = count(config.persons);
  for (int p = 0; p < n_persons; ++p) {
    const double d = rng.uniform(4.0, 24.0);
    const double yb = cam.ground_y(d);
    const double wpx = std::max(1.5, cam.pixels(0.5, d)), hpx = cam.pixels(rng.uniform(1.55, 1.9), d);
    const double x = off_road_x(yb, wpx);
    objs.push_back({kPerson, RectShape{x - 0.5 * wpx, std::max(sky_band, yb - hpx), x + 0.5 * wpx, yb}, d,
                    jitter(rng, {0.6, 0.35, 0.45}, 0.25)});
  }

  std::stable_sort(objs.begin(), objs.end(),
                   [](const SceneObject& a, const SceneObject& b) { return a.depth > b.depth; });
  return layout;
}

std::vector<std::uint16_t> rasterize_object_ids(const Layout& layout) {
  const int W = layout.width, H = layout.height;
  std::vector<std::uint16_t> ids(static_cast<std::size_t>(W) * H, 0);
  for (std::size_t o = 0; o < layout.objects.size(); ++o) {
    const auto& obj = layout.objects[o];
    const Box box = bounding_box(obj.shape, W, H);
    for (int y = box.y0; y < box.y1; ++y)
      for (int x = box.x0; x < box.x1; ++x)
        if (covers(obj.shape, x + 0.5, y + 0.5)) ids[static_cast<std::size_t>(y) * W + x] = static_cast<std::uint16_t>(o);
  }
  return ids;
}

LabelMap rasterize_labels(const Layout& layout) {
  LabelMap out{layout.width, layout.height, {}};
  const auto ids = rasterize_object_ids(layout);
  out.labels.resize(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out.labels[i] = static_cast<std::uint8_t>(layout.objects[ids[i]].class_id);
  }
  return out;
}

double apply_fog(double value, double fog_value, double density, double depth) {
  const double transmission = std::exp(-density * depth);
  return value * transmission + fog_value * (1.0 - transmission);
}

AppearanceCondition appearance_preset(int appearance_id) {
  AppearanceCondition a;
  a.appearance_id = appearance_id;
  switch (appearance_id) {
    case 0:  // sunset: low warm sun, long soft shadows
      a.sun_azimuth = 0.6;
      a.sun_elevation = 0.18;
      a.ambient_gain = 0.55;
      a.color_tint = {1.0, 0.85, 0.7};
      a.shadow_strength = 0.25;
      a.noise_sigma = 0.015;
      break;
    case 1:  // noon: high sun, saturated colours, hard short shadows
      a.sun_azimuth = 2.0;
      a.sun_elevation = 1.2;
      a.ambient_gain = 0.75;
      a.color_tint = {1.05, 1.03, 1.0};
      a.shadow_strength = 0.45;
      a.noise_sigma = 0.01;
      break;
    case 2:  // night: no sun, dim blue ambient, street lights
      a.sun_azimuth = 0.0;
      a.sun_elevation = -0.3;
      a.ambient_gain = 0.15;
      a.color_tint = {0.75, 0.85, 1.1};
      a.noise_sigma = 0.04;
      break;
    case 3:  // fog: overcast, dense extinction
      a.sun_azimuth = 1.0;
      a.sun_elevation = 0.6;
      a.ambient_gain = 0.7;
      a.color_tint = {0.95, 0.97, 1.0};
      a.fog_density = 0.125;
      a.fog_color = {0.78, 0.78, 0.8};
      a.noise_sigma = 0.02;
      break;
    case kDuskAppearance:  // held-out evaluation condition
      a.sun_azimuth = 2.6;
      a.sun_elevation = 0.05;
      a.ambient_gain = 0.35;
      a.color_tint = {0.85, 0.72, 0.95};
      a.fog_density = 0.02;
      a.fog_color = {0.45, 0.36, 0.5};
      a.shadow_strength = 0.2;
      a.noise_sigma = 0.03;
      break;
    default:
      throw ConfigError("unknown appearance id " + std::to_string(appearance_id));
  }
  return a;
}

AppearanceCondition appearance_for_layout(int appearance_id, const Layout& layout) {
  AppearanceCondition a = appearance_preset(appearance_id);
  Rng rng(stream_seed(layout.seed, static_cast<std::uint64_t>(StreamTag::Appearance),
                      static_cast<std::uint64_t>(layout.layout_index), static_cast<std::uint64_t>(appearance_id), 1));
  const double W = layout.width, H = layout.height;
  auto add_lights = [&](int lo, int hi, double i_lo, double i_hi) {
    const int n = static_cast<int>(rng.integer(lo, hi));
    for (int l = 0; l < n; ++l) {
      a.light_sources.push_back(
          {rng.uniform(0.0, W), rng.uniform(0.2 * H, 0.55 * H), W * rng.uniform(0.06, 0.14), rng.uniform(i_lo, i_hi)});
    }
  };
  if (appearance_id == 2) add_lights(3, 6, 0.3, 0.6);
  if (appearance_id == 3) a.fog_density = rng.uniform(0.05, 0.2);
  if (appearance_id == kDuskAppearance) {
    a.fog_density = rng.uniform(0.01, 0.03);
    add_lights(1, 2, 0.1, 0.25);
  }
  return a;
}

RgbImage render(const Layout& layout, const AppearanceCondition& appearance) {
  const int W = layout.width, H = layout.height;
  const auto ids = rasterize_object_ids(layout);
  const auto& a = appearance;
  const bool sun_up = a.sun_elevation > 0.0;
  const double sin_e = sun_up ? std::sin(a.sun_elevation) : 0.0;
  const double cos_e = sun_up ? std::cos(a.sun_elevation) : 0.0;

  const double diffuse_ground = sin_e;
  const double diffuse_vertical = cos_e * (0.55 + 0.45 * std::cos(a.sun_azimuth));
  const double sky_gain = a.ambient_gain + (1.0 - a.ambient_gain) * (sun_up ? clamp01(sin_e + 0.3) : 0.0);

  RgbImage img{W, H, std::vector<double>(static_cast<std::size_t>(W) * H * 3)};

  // albedo and sun shading
  for (std::size_t p = 0; p < ids.size(); ++p) {
    const auto& obj = layout.objects[ids[p]];
    double gain;
    if (obj.class_id == kSky) {
      gain = sky_gain;
    } else {
      const double diffuse = is_ground(obj.class_id) ? diffuse_ground : diffuse_vertical;
      gain = a.ambient_gain + (1.0 - a.ambient_gain) * diffuse;
    }
    for (int c = 0; c < 3; ++c) img.pixels[p * 3 + c] = obj.albedo[c] * gain;
  }

  // shadows: footprint parallelograms cast onto ground pixels; RGB only
  if (sun_up && a.shadow_strength > 0.0) {
    std::vector<std::uint8_t> shadow(ids.size(), 0);
    const double cot_e = cos_e / sin_e;
    for (const auto& obj : layout.objects) {
      if (!casts_shadow(obj.class_id)) continue;
      const Box box = bounding_box(obj.shape, W, H);
      if (box.x1 <= box.x0 || box.y1 <= box.y0) continue;
      const double height_px = box.y1 - box.y0;
      const double length = std::min(0.5 * H, 0.35 * height_px * cot_e);
      const double sx = length * std::cos(a.sun_azimuth);
      const double sy = 0.3 * length * std::sin(a.sun_azimuth);
      const double foot = box.y1 - 1.0;
      const double x0 = box.x0, x1 = box.x1;
      const int yy0 = std::max(0, static_cast<int>(std::floor(std::min(foot, foot + sy))));
      const int yy1 = std::min(H, static_cast<int>(std::ceil(std::max(foot, foot + sy))) + 1);
      for (int y = yy0; y < yy1; ++y) {
        const double py = y + 0.5;
        const double t = std::abs(sy) > 1e-9 ? (py - foot) / sy : 0.0;
        if (t < 0.0 || t > 1.0) continue;
        const double lo = x0 + t * sx, hi = x1 + t * sx;
        for (int x = std::max(0, static_cast<int>(std::floor(lo))); x < std::min(W, static_cast<int>(std::ceil(hi))); ++x) {
          const double px = x + 0.5;
          if (px < lo || px >= hi) continue;
          const std::size_t p = static_cast<std::size_t>(y) * W + x;
          if (is_ground(layout.objects[ids[p]].class_id)) shadow[p] = 1;
        }
      }
    }
    for (std::size_t p = 0; p < ids.size(); ++p)
      if (shadow[p])
        for (int c = 0; c < 3; ++c) img.pixels[p * 3 + c] *= 1.0 - a.shadow_strength;
  }

  for (std::size_t p = 0; p < ids.size(); ++p) {
    const double depth = layout.objects[ids[p]].depth;
    for (int c = 0; c < 3; ++c) {
      double v = img.pixels[p * 3 + c] * a.color_tint[c];
      if (a.fog_density > 0.0) v = apply_fog(v, a.fog_color[c], a.fog_density, depth);
      img.pixels[p * 3 + c] = v;
    }
  }

  if (!a.light_sources.empty()) {
    static constexpr Rgb kLampColour{1.0, 0.85, 0.55};
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        double glow = 0.0;
        for (const auto& l : a.light_sources) {
          const double dx = x + 0.5 - l.x, dy = y + 0.5 - l.y;
          glow += l.intensity * std::exp(-(dx * dx + dy * dy) / (l.radius * l.radius));
        }
        const std::size_t p = static_cast<std::size_t>(y) * W + x;
        for (int c = 0; c < 3; ++c) img.pixels[p * 3 + c] += glow * kLampColour[c];
      }
  }

  if (a.noise_sigma > 0.0) {
    Rng noise(stream_seed(layout.seed, static_cast<std::uint64_t>(StreamTag::Appearance),
                          static_cast<std::uint64_t>(layout.layout_index),
                          static_cast<std::uint64_t>(a.appearance_id)));
    for (double& v : img.pixels) v += a.noise_sigma * noise.normal();
  }

  for (double& v : img.pixels) v = clamp01(v);
  return img;
}

LabeledSample make_sample(const Layout& layout, int appearance_id) {
  LabeledSample s;
  s.rgb = render(layout, appearance_for_layout(appearance_id, layout));
  s.labels = rasterize_labels(layout);
  s.layout_index = layout.layout_index;
  s.appearance_id = appearance_id;
  s.seed = layout.seed;
  return s;
}

AppearanceProtocol AppearanceProtocol::parse(const std::string& text) {
  AppearanceProtocol p;
  if (text == "fixed") {
    p.kind = ProtocolKind::Fixed;
  } else if (text == "random") {
    p.kind = ProtocolKind::Random;
  } else if (text.rfind("single:", 0) == 0 && text.size() == 8 && text[7] >= '0' && text[7] <= '3') {
    p.kind = ProtocolKind::Single;
    p.single_appearance = text[7] - '0';
  } else {
    throw ConfigError("unknown appearance protocol '" + text + "' (expected fixed, random or single:<0-3>)");
  }
  return p;
}

std::string AppearanceProtocol::to_string() const {
  switch (kind) {
    case ProtocolKind::Fixed: return "fixed";
    case ProtocolKind::Random: return "random";
    case ProtocolKind::Single: return "single:" + std::to_string(single_appearance);
  }
  return "random";
}

const std::array<AppearancePair, 12>& ordered_appearance_pairs() {
  static const std::array<AppearancePair, 12> pairs = [] {
    std::array<AppearancePair, 12> out{};
    std::size_t k = 0;
    for (int j = 0; j < kNumAppearances; ++j)
      for (int jp = 0; jp < kNumAppearances; ++jp)
        if (j != jp) out[k++] = {j, jp};
    return out;
  }();
  return pairs;
}

AppearancePair sample_appearance_pair(const AppearanceProtocol& protocol, std::uint64_t dataset_seed,
                                      int layout_index, Rng& epoch_rng) {
  const auto& pairs = ordered_appearance_pairs();
  switch (protocol.kind) {
    case ProtocolKind::Single:
      return {protocol.single_appearance, protocol.single_appearance};
    case ProtocolKind::Random:
      return pairs[epoch_rng.index(pairs.size())];
    case ProtocolKind::Fixed: {
      std::vector<std::size_t> order(pairs.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      Rng perm(stream_seed(dataset_seed, static_cast<std::uint64_t>(StreamTag::Protocol)));
      perm.shuffle(order);
      return pairs[order[static_cast<std::size_t>(layout_index) % pairs.size()]];
    }
  }
  return pairs[0];
}

}  // namespace alignlab

#include "cbs/datagen.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "cbs/error.hpp"
#include "cbs/png_io.hpp"

namespace cbs {

using nlohmann::json;

namespace {

constexpr int kIndexSchema = 1;
constexpr double kNoiseAmplitude = 0.04;
constexpr double kMinContrast = 0.45;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string file_name(int id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06d.png", id);
  return buf;
}

double contrast(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  return std::abs(a[0] - b[0]) + std::abs(a[1] - b[1]) + std::abs(a[2] - b[2]);
}

json shape_json(const ShapeSpec& s) {
  return {{"class_id", s.class_id}, {"cx", s.cx}, {"cy", s.cy}, {"extent", s.extent}, {"color", s.color}};
}

}  // namespace

const std::vector<std::string>& shape_class_names() {
  static const std::vector<std::string> names{"background", "circle", "square", "triangle"};
  return names;
}

bool ShapeSpec::contains(double px, double py) const noexcept {
  const double dx = px - cx;
  const double dy = py - cy;
  switch (class_id) {
    case kCircle:
      return dx * dx + dy * dy <= extent * extent;
    case kSquare:
      return std::abs(dx) <= extent && std::abs(dy) <= extent;
    case kTriangle: {
      // Upright equilateral triangle: apex above the center, flat base below.
      const double base_y = extent / 2.0;
      if (dy > base_y || dy < -extent) return false;
      const double half_width = (dy + extent) / std::sqrt(3.0);
      return std::abs(dx) <= half_width;
    }
    default:
      return false;
  }
}

double ShapeSpec::bounding_radius() const noexcept {
  return class_id == kSquare ? extent * std::sqrt(2.0) : extent;
}

SyntheticSample generate_sample(int sample_id, std::uint64_t seed, int size) {
  if (size < kMinDatasetSize) {
    throw ValidationError("dataset image size must be >= " + std::to_string(kMinDatasetSize) + ", got " +
                          std::to_string(size));
  }
  SyntheticSample s;
  s.sample_id = sample_id;
  s.seed = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(sample_id)));
  std::mt19937_64 rng(s.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> shape_count(1, 3);
  std::uniform_int_distribution<int> shape_class(kCircle, kTriangle);
  std::uniform_real_distribution<double> extent(size * 0.1, size * 0.22);

  for (double& c : s.background) c = unit(rng);
  const int wanted = shape_count(rng);
  for (int attempt = 0; attempt < 200 && static_cast<int>(s.shapes.size()) < wanted; ++attempt) {
    ShapeSpec shape;
    shape.class_id = shape_class(rng);
    shape.extent = extent(rng);
    const double r = shape.bounding_radius();
    std::uniform_real_distribution<double> center(r + 1.0, size - r - 1.0);
    shape.cx = center(rng);
    shape.cy = center(rng);
    bool clear = true;
    for (const auto& other : s.shapes) {
      if (std::hypot(shape.cx - other.cx, shape.cy - other.cy) <= r + other.bounding_radius() + 2.0) {
        clear = false;
        break;
      }
    }
    if (!clear) continue;
    do {
      for (double& c : shape.color) c = unit(rng);
    } while (contrast(shape.color, s.background) < kMinContrast);
    s.shapes.push_back(shape);
  }

  std::uniform_real_distribution<double> noise(-kNoiseAmplitude, kNoiseAmplitude);
  std::vector<double> px(static_cast<std::size_t>(size) * size * Frame::kChannels);
  std::vector<std::uint8_t> labels(static_cast<std::size_t>(size) * size, kBackground);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * size + x;
      const std::array<double, 3>* color = &s.background;
      for (const auto& shape : s.shapes) {
        if (shape.contains(x + 0.5, y + 0.5)) {
          color = &shape.color;
          labels[p] = static_cast<std::uint8_t>(shape.class_id);
          break;
        }
      }
      for (int c = 0; c < Frame::kChannels; ++c) {
        px[p * Frame::kChannels + c] = from_byte(to_byte((*color)[c] + noise(rng)));
      }
    }
  }
  s.image = Frame(size, size, std::move(px));
  s.labels = LabelMap(static_cast<int>(shape_class_names().size()), size, size, std::move(labels));
  return s;
}

std::vector<SyntheticSample> generate_dataset(int n, std::uint64_t seed, int size) {
  if (n < 1) throw ValidationError("dataset needs at least one sample");
  if (size < kMinDatasetSize) {
    throw ValidationError("dataset image size must be >= " + std::to_string(kMinDatasetSize));
  }
  std::vector<SyntheticSample> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) out.push_back(generate_sample(i, seed, size));
  return out;
}

void save_dataset(const std::filesystem::path& dir, const std::vector<SyntheticSample>& samples,
                  std::uint64_t seed, int size) {
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "labels");
  json entries = json::array();
  for (const auto& s : samples) {
    const std::string name = file_name(s.sample_id);
    write_png(dir / "images" / name, s.image);
    write_gray_png(dir / "labels" / name,
                   GrayImage{s.labels.height(), s.labels.width(), {s.labels.labels().begin(), s.labels.labels().end()}});
    json shapes = json::array();
    for (const auto& shape : s.shapes) shapes.push_back(shape_json(shape));
    entries.push_back({{"id", s.sample_id},
                       {"seed", s.seed},
                       {"image", "images/" + name},
                       {"labels", "labels/" + name},
                       {"background", s.background},
                       {"shapes", shapes}});
  }
  const json index = {{"schema", kIndexSchema},
                      {"n", samples.size()},
                      {"seed", seed},
                      {"size", size},
                      {"classes", shape_class_names()},
                      {"samples", entries}};
  std::ofstream out(dir / "index.json", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / "index.json").string());
  out << index.dump(2) << '\n';
}

std::vector<SyntheticSample> load_dataset(const std::filesystem::path& dir) {
  const auto index_path = dir / "index.json";
  std::ifstream in(index_path);
  if (!in) throw IoError("missing dataset index " + index_path.string());
  std::vector<SyntheticSample> out;
  try {
    const json index = json::parse(in);
    if (index.at("schema").get<int>() != kIndexSchema) {
      throw IoError("unsupported dataset index schema in " + index_path.string());
    }
    const int num_classes = static_cast<int>(index.at("classes").size());
    const auto& entries = index.at("samples");
    if (entries.size() != index.at("n").get<std::size_t>()) {
      throw IoError("dataset index " + index_path.string() + " lists " + std::to_string(entries.size()) +
                    " samples but declares n = " + std::to_string(index.at("n").get<std::size_t>()));
    }
    for (const auto& e : entries) {
      SyntheticSample s;
      s.sample_id = e.at("id").get<int>();
      s.seed = e.at("seed").get<std::uint64_t>();
      s.background = e.at("background").get<std::array<double, 3>>();
      for (const auto& j : e.at("shapes")) {
        s.shapes.push_back({j.at("class_id").get<int>(), j.at("cx").get<double>(), j.at("cy").get<double>(),
                            j.at("extent").get<double>(), j.at("color").get<std::array<double, 3>>()});
      }
      s.image = read_png(dir / e.at("image").get<std::string>());
      GrayImage labels = read_gray_png(dir / e.at("labels").get<std::string>());
      if (!s.image.same_extent(labels.height, labels.width)) {
        throw IoError("label file for sample " + std::to_string(s.sample_id) + " in " + dir.string() +
                      " does not match its image");
      }
      s.labels = LabelMap(num_classes, labels.height, labels.width, std::move(labels.values));
      out.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw IoError("corrupt dataset index " + index_path.string() + ": " + e.what());
  } catch (const ValidationError& e) {
    throw IoError("invalid dataset in " + dir.string() + ": " + e.what());
  }
  return out;
}

std::vector<LabeledFrame> labeled_frames(const std::vector<SyntheticSample>& samples) {
  std::vector<LabeledFrame> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back({s.image, s.labels});
  return out;
}

}  // namespace cbs

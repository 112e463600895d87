#include "cbs/run_config.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cbs/datagen.hpp"
#include "cbs/error.hpp"

namespace cbs {

using nlohmann::json;

namespace {

constexpr std::string_view kStubPrefix = "stub:";

bool is_stub(const std::string& ref) { return ref.rfind(kStubPrefix, 0) == 0; }

std::string resolve(const std::string& ref, const std::filesystem::path& base) {
  if (ref.empty() || is_stub(ref)) return ref;
  const std::filesystem::path p(ref);
  return p.is_absolute() ? ref : (base / p).lexically_normal().string();
}

std::vector<double> parse_numbers(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ValidationError("not a number: '" + item + "'");
    }
  }
  return out;
}

}  // namespace

RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir) {
  RunConfig cfg;
  try {
    const json j = json::parse(text);
    if (j.at("schema").get<int>() != RunConfig::kSchemaVersion) {
      throw ValidationError("unsupported run config schema " + j.at("schema").dump());
    }
    cfg.seg_model = resolve(j.at("seg_model").get<std::string>(), base_dir);
    const json styles = j.value("styles", json::object());
    for (const auto& [id, ref] : styles.items()) {
      cfg.styles[id] = resolve(ref.get<std::string>(), base_dir);
    }
    if (j.contains("input_frames")) cfg.input_frames = resolve(j.at("input_frames").get<std::string>(), base_dir);
    if (j.contains("output_dir")) cfg.output_dir = resolve(j.at("output_dir").get<std::string>(), base_dir);
    for (const auto& e : j.value("assignment", json::array())) {
      const int cls = e.at("class_id").get<int>();
      if (cfg.assignment.entries().contains(cls)) {
        throw ValidationError("duplicate class " + std::to_string(cls) + " in assignment");
      }
      const auto style = e.at("style_id").get<std::string>();
      if (!cfg.styles.contains(style)) {
        throw ValidationError("assignment references undeclared style '" + style + "'");
      }
      cfg.assignment.assign(cls, style);
    }
    cfg.mode = parse_mode(j.value("mode", std::string("parallel")));
    cfg.feather_radius = j.value("feather_radius", 0);
    cfg.worker_budget = j.value("worker_budget", 2);
    cfg.port = j.value("port", 8080);
    cfg.max_fps = j.value("max_fps", 30.0);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("invalid run config: ") + e.what());
  }
  if (cfg.feather_radius < 0) throw ValidationError("feather_radius must be >= 0");
  if (cfg.worker_budget < 1) throw ValidationError("worker_budget must be >= 1");
  if (cfg.port < 0 || cfg.port > 65535) throw ValidationError("port out of range");
  if (!(cfg.max_fps > 0.0)) throw ValidationError("max_fps must be positive");
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read run config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str(), path.parent_path());
}

std::shared_ptr<const SegmentationBranch> load_segmentation(const std::string& ref) {
  if (!is_stub(ref)) return std::make_shared<ModelSegmentation>(std::make_shared<SegModel>(SegModel::load(ref)));
  const std::string spec = ref.substr(kStubPrefix.size());
  if (spec == "quadrants") return std::make_shared<QuadrantSegmentation>(shape_class_names());
  if (spec.rfind("full:", 0) == 0) {
    const auto values = parse_numbers(spec.substr(5));
    if (values.size() != 1) throw ValidationError("stub:full expects one class index");
    return std::make_shared<FullFrameSegmentation>(shape_class_names(), static_cast<int>(values[0]));
  }
  throw ValidationError("unknown segmentation stub '" + ref + "'");
}

std::shared_ptr<const StyleBranch> load_style(const std::string& ref) {
  if (!is_stub(ref)) return std::make_shared<ModelStyle>(std::make_shared<StyleModel>(StyleModel::load(ref)));
  const std::string spec = ref.substr(kStubPrefix.size());
  if (spec == "identity") return std::make_shared<IdentityStyle>();
  if (spec.rfind("constant:", 0) == 0) {
    const auto rgb = parse_numbers(spec.substr(9));
    if (rgb.size() != 3) throw ValidationError("stub:constant expects r,g,b");
    for (double v : rgb) {
      if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("stub:constant components must lie in [0,1]");
    }
    return std::make_shared<ConstantStyle>(rgb[0], rgb[1], rgb[2]);
  }
  throw ValidationError("unknown style stub '" + ref + "'");
}

StyleRegistry load_styles(const std::map<std::string, std::string>& refs) {
  StyleRegistry out;
  for (const auto& [id, ref] : refs) out.emplace(id, load_style(ref));
  return out;
}

std::string assignment_to_json(const StyleAssignment& assignment) {
  json entries = json::array();
  for (const auto& [cls, style] : assignment.entries()) entries.push_back({{"class_id", cls}, {"style_id", style}});
  return json{{"schema", 1}, {"entries", entries}}.dump();
}

}  // namespace cbs

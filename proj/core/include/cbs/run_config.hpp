#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>

#include "cbs/branches.hpp"
#include "cbs/pipeline.hpp"

namespace cbs {

/// Everything `run` and `serve` need. Model references are checkpoint
/// directories or stub URIs:
///   segmentation: stub:full:<class>, stub:quadrants
///   style:        stub:identity, stub:constant:<r>,<g>,<b>
/// Relative paths resolve against the config file's directory.
struct RunConfig {
  static constexpr int kSchemaVersion = 1;

  std::string seg_model;
  std::map<std::string, std::string> styles;
  std::filesystem::path input_frames;
  std::filesystem::path output_dir;
  StyleAssignment assignment;
  int feather_radius = 0;
  ExecutionMode mode = ExecutionMode::parallel;
  int worker_budget = 2;
  int port = 8080;
  double max_fps = 30.0;

  PipelineConfig pipeline() const {
    return {assignment, feather_radius, mode, worker_budget};
  }
};

RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

std::shared_ptr<const SegmentationBranch> load_segmentation(const std::string& ref);
std::shared_ptr<const StyleBranch> load_style(const std::string& ref);
StyleRegistry load_styles(const std::map<std::string, std::string>& refs);

/// {"schema":1,"entries":[{"class_id":..,"style_id":..}, ...]}
std::string assignment_to_json(const StyleAssignment& assignment);

}  // namespace cbs

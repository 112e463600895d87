#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cbs/branches.hpp"
#include "cbs/error.hpp"
#include "cbs/frame.hpp"

namespace cbs {

enum class ExecutionMode { parallel, sequential };

std::string to_string(ExecutionMode mode);
ExecutionMode parse_mode(std::string_view text);

struct PipelineConfig {
  StyleAssignment assignment;
  int feather_radius = 0;
  ExecutionMode mode = ExecutionMode::parallel;
  int worker_budget = 2;
};

/// Per-frame stage timings in milliseconds (monotonic clock).
struct FrameTimings {
  double t_seg = 0.0;
  double t_style = 0.0;
  double t_composite = 0.0;
  double t_total = 0.0;
  long frame_index = 0;
};

struct FrameResult {
  Frame frame;
  FrameTimings timings;
};

/// A stage failed; `stage()` names it ("segmentation", "style:<id>", "composite").
class PipelineError : public Error {
 public:
  PipelineError(std::string stage, const std::string& what)
      : Error(stage + " stage failed: " + what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

/// Single-producer / single-consumer mailbox for assignment updates. The
/// newest pushed assignment wins; each push bumps the version.
class AssignmentChannel {
 public:
  std::uint64_t push(StyleAssignment assignment);
  std::optional<std::pair<StyleAssignment, std::uint64_t>> take();

 private:
  std::mutex mutex_;
  std::optional<StyleAssignment> pending_;
  std::uint64_t version_ = 0;
};

/// A source item is either a frame or a read error for that slot.
struct SourceItem {
  std::optional<Frame> frame;
  std::string error;
};
/// Returns std::nullopt once the source is exhausted.
using FrameSource = std::function<std::optional<SourceItem>()>;

struct StreamRecord {
  long frame_index = 0;
  std::optional<Frame> frame;  // empty when the frame failed
  FrameTimings timings;
  std::string error;
  StyleAssignment assignment;
  std::uint64_t assignment_version = 0;
};
using StreamSink = std::function<void(const StreamRecord&)>;

/// Runs segmentation and every distinct assigned style for a frame, then
/// composites. Parallel mode fans the branches out over a worker pool of
/// `worker_budget` threads; results are bit-identical to sequential mode.
class Pipeline {
 public:
  Pipeline(std::shared_ptr<const SegmentationBranch> segmentation, StyleRegistry styles, PipelineConfig config);
  ~Pipeline();
  Pipeline(const Pipeline&) = delete;
  Pipeline& operator=(const Pipeline&) = delete;

  FrameResult process_frame(const Frame& input, long frame_index = 0);

  /// Processes frames in source order. Pending assignment updates are applied
  /// only between frames; every record carries the assignment it used.
  void process_stream(const FrameSource& source, AssignmentChannel* control, const StreamSink& sink);

  /// Throws ValidationError if the assignment names an unknown class or style.
  void validate(const StyleAssignment& assignment) const;
  /// Must not be called concurrently with process_frame.
  void set_assignment(StyleAssignment assignment);

  const PipelineConfig& config() const noexcept { return config_; }
  const StyleRegistry& styles() const noexcept { return styles_; }
  std::vector<std::string> class_names() const { return segmentation_->class_names(); }

 private:
  class Workers;

  std::shared_ptr<const SegmentationBranch> segmentation_;
  StyleRegistry styles_;
  PipelineConfig config_;
  std::unique_ptr<Workers> workers_;
};

/// One-shot convenience wrapper around Pipeline::process_frame.
FrameResult process_frame(const Frame& input, std::shared_ptr<const SegmentationBranch> segmentation,
                          StyleRegistry styles, const PipelineConfig& config);

inline constexpr std::size_t kMinBenchmarkFrames = 10;

struct StubDelays {
  double seg_ms = 0.0;
  double style_ms = 0.0;
};

struct BenchmarkReport {
  long frames = 0;
  ExecutionMode mode = ExecutionMode::parallel;
  double mean_ms = 0.0;
  double median_ms = 0.0;
  double p95_ms = 0.0;
  double fps = 0.0;
  double mean_seg_ms = 0.0;
  double mean_style_ms = 0.0;
  double mean_composite_ms = 0.0;
};

/// Statistics over per-frame totals; p95 uses the nearest-rank rule.
BenchmarkReport summarize(std::span<const FrameTimings> timings, ExecutionMode mode);

BenchmarkReport benchmark(std::span<const Frame> frames, Pipeline& pipeline);
/// Replaces both stages by sleep stubs (identity styles, full-frame
/// segmentation) to isolate orchestration overhead. With an empty assignment
/// class 1 is assigned to a single stub style.
BenchmarkReport benchmark(std::span<const Frame> frames, const PipelineConfig& config, const StubDelays& delays,
                          std::vector<std::string> class_names);

std::string report_to_json(const BenchmarkReport& report);

// Frame directories hold frame_%06d.png files read in index order.
std::string frame_file_name(long index);
std::vector<std::filesystem::path> list_frames(const std::filesystem::path& dir);
std::vector<Frame> load_frames(const std::filesystem::path& dir);
/// Reads frames lazily; unreadable files become error items.
FrameSource directory_source(const std::filesystem::path& dir, bool loop = false);
FrameSource memory_source(std::vector<Frame> frames);

}  // namespace cbs

#include "cbs/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <future>
#include <numeric>
#include <regex>

#include <boost/asio/post.hpp>
#include <boost/asio/thread_pool.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "cbs/composite.hpp"
#include "cbs/png_io.hpp"

namespace cbs {

using Clock = std::chrono::steady_clock;

namespace {

double ms_between(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double, std::milli>(b - a).count();
}

struct BranchOutcome {
  Clock::time_point start;
  Clock::time_point end;
};

}  // namespace

std::string to_string(ExecutionMode mode) { return mode == ExecutionMode::parallel ? "parallel" : "sequential"; }

ExecutionMode parse_mode(std::string_view text) {
  if (text == "parallel") return ExecutionMode::parallel;
  if (text == "sequential") return ExecutionMode::sequential;
  throw ValidationError("unknown mode '" + std::string(text) + "' (expected parallel or sequential)");
}

std::uint64_t AssignmentChannel::push(StyleAssignment assignment) {
  std::lock_guard lock(mutex_);
  pending_ = std::move(assignment);
  return ++version_;
}

std::optional<std::pair<StyleAssignment, std::uint64_t>> AssignmentChannel::take() {
  std::lock_guard lock(mutex_);
  if (!pending_) return std::nullopt;
  auto out = std::make_pair(std::move(*pending_), version_);
  pending_.reset();
  return out;
}

class Pipeline::Workers {
 public:
  explicit Workers(int threads) : pool_(static_cast<std::size_t>(threads)) {}
  ~Workers() { pool_.join(); }

  template <typename F>
  std::future<void> submit(F&& task) {
    auto packaged = std::make_shared<std::packaged_task<void()>>(std::forward<F>(task));
    auto future = packaged->get_future();
    boost::asio::post(pool_, [packaged] { (*packaged)(); });
    return future;
  }

 private:
  boost::asio::thread_pool pool_;
};

Pipeline::Pipeline(std::shared_ptr<const SegmentationBranch> segmentation, StyleRegistry styles,
                   PipelineConfig config)
    : segmentation_(std::move(segmentation)), styles_(std::move(styles)), config_(std::move(config)) {
  if (!segmentation_) throw ValidationError("pipeline needs a segmentation branch");
  if (config_.worker_budget < 1) throw ValidationError("worker budget must be >= 1");
  if (config_.feather_radius < 0) throw ValidationError("feather radius must be >= 0");
  for (const auto& [id, branch] : styles_) {
    if (!branch) throw ValidationError("style '" + id + "' has no branch");
  }
  validate(config_.assignment);
  if (config_.mode == ExecutionMode::parallel) workers_ = std::make_unique<Workers>(config_.worker_budget);
}

Pipeline::~Pipeline() = default;

void Pipeline::validate(const StyleAssignment& assignment) const {
  const int classes = static_cast<int>(segmentation_->class_names().size());
  for (const auto& [class_id, style_id] : assignment.entries()) {
    if (class_id < 0 || class_id >= classes) {
      throw ValidationError("assignment names unknown class " + std::to_string(class_id));
    }
    if (!styles_.contains(style_id)) {
      throw ValidationError("assignment for class " + std::to_string(class_id) + " names unknown style '" +
                            style_id + "'");
    }
  }
}

void Pipeline::set_assignment(StyleAssignment assignment) {
  validate(assignment);
  config_.assignment = std::move(assignment);
}

FrameResult Pipeline::process_frame(const Frame& input, long frame_index) {
  const auto t0 = Clock::now();
  const std::vector<std::string> style_ids = config_.assignment.distinct_styles();

  std::optional<ProbMap> prob;
  std::map<std::string, Frame> styled;
  BranchOutcome seg_time{};
  std::vector<BranchOutcome> style_times(style_ids.size());
  std::vector<std::optional<Frame>> style_out(style_ids.size());

  auto run_seg = [&] {
    seg_time.start = Clock::now();
    try {
      prob = segmentation_->predict(input);
    } catch (const std::exception& e) {
      throw PipelineError("segmentation", e.what());
    }
    seg_time.end = Clock::now();
  };
  auto run_style = [&](std::size_t i) {
    style_times[i].start = Clock::now();
    try {
      style_out[i] = styles_.at(style_ids[i])->stylize(input);
    } catch (const std::exception& e) {
      throw PipelineError("style:" + style_ids[i], e.what());
    }
    style_times[i].end = Clock::now();
  };

  if (config_.mode == ExecutionMode::parallel) {
    std::vector<std::future<void>> pending;
    pending.push_back(workers_->submit(run_seg));
    for (std::size_t i = 0; i < style_ids.size(); ++i) pending.push_back(workers_->submit([&, i] { run_style(i); }));
    std::exception_ptr failure;
    for (auto& f : pending) {
      try {
        f.get();
      } catch (...) {
        if (!failure) failure = std::current_exception();
      }
    }
    if (failure) std::rethrow_exception(failure);
  } else {
    run_seg();
    for (std::size_t i = 0; i < style_ids.size(); ++i) run_style(i);
  }
  for (std::size_t i = 0; i < style_ids.size(); ++i) styled.emplace(style_ids[i], std::move(*style_out[i]));

  const auto tc = Clock::now();
  Frame output;
  try {
    if (!input.same_extent(prob->height(), prob->width())) {
      throw ShapeError("segmentation output extent differs from the input frame");
    }
    std::vector<ClassMask> masks;
    for (const auto& [class_id, style_id] : config_.assignment.entries()) {
      masks.push_back(extract_mask(*prob, class_id));
    }
    if (config_.feather_radius > 0) {
      std::vector<SoftMask> soft;
      for (const auto& m : masks) soft.push_back(feather_mask(m, config_.feather_radius));
      output = composite_multi(input, styled, soft, config_.assignment);
    } else {
      output = composite_multi(input, styled, masks, config_.assignment);
    }
  } catch (const PipelineError&) {
    throw;
  } catch (const std::exception& e) {
    throw PipelineError("composite", e.what());
  }
  const auto t_end = Clock::now();

  FrameTimings timings;
  timings.frame_index = frame_index;
  timings.t_seg = ms_between(seg_time.start, seg_time.end);
  if (!style_times.empty()) {
    auto first = style_times.front().start;
    auto last = style_times.front().end;
    for (const auto& t : style_times) {
      first = std::min(first, t.start);
      last = std::max(last, t.end);
    }
    timings.t_style = ms_between(first, last);
  }
  timings.t_composite = ms_between(tc, t_end);
  timings.t_total = ms_between(t0, t_end);
  return {std::move(output), timings};
}

void Pipeline::process_stream(const FrameSource& source, AssignmentChannel* control, const StreamSink& sink) {
  std::uint64_t version = 0;
  for (long index = 0;; ++index) {
    if (control) {
      if (auto update = control->take()) {
        try {
          set_assignment(std::move(update->first));
          version = update->second;
        } catch (const ValidationError& e) {
          spdlog::warn("stream: rejected assignment update {}: {}", update->second, e.what());
        }
      }
    }
    std::optional<SourceItem> item = source();
    if (!item) break;

    StreamRecord record;
    record.frame_index = index;
    record.assignment = config_.assignment;
    record.assignment_version = version;
    record.timings.frame_index = index;
    if (!item->frame) {
      record.error = item->error.empty() ? "source produced no frame" : item->error;
    } else {
      try {
        FrameResult result = process_frame(*item->frame, index);
        record.frame = std::move(result.frame);
        record.timings = result.timings;
      } catch (const std::exception& e) {
        record.error = e.what();
      }
    }
    if (!record.error.empty()) spdlog::warn("stream: frame {} failed: {}", index, record.error);
    sink(record);
  }
}

FrameResult process_frame(const Frame& input, std::shared_ptr<const SegmentationBranch> segmentation,
                          StyleRegistry styles, const PipelineConfig& config) {
  Pipeline pipeline(std::move(segmentation), std::move(styles), config);
  return pipeline.process_frame(input);
}

BenchmarkReport summarize(std::span<const FrameTimings> timings, ExecutionMode mode) {
  if (timings.size() < kMinBenchmarkFrames) {
    throw ValidationError("benchmark needs at least " + std::to_string(kMinBenchmarkFrames) + " frames, got " +
                          std::to_string(timings.size()));
  }
  BenchmarkReport r;
  r.frames = static_cast<long>(timings.size());
  r.mode = mode;
  std::vector<double> totals;
  for (const auto& t : timings) {
    totals.push_back(t.t_total);
    r.mean_seg_ms += t.t_seg;
    r.mean_style_ms += t.t_style;
    r.mean_composite_ms += t.t_composite;
  }
  const double n = static_cast<double>(timings.size());
  r.mean_ms = std::accumulate(totals.begin(), totals.end(), 0.0) / n;
  r.mean_seg_ms /= n;
  r.mean_style_ms /= n;
  r.mean_composite_ms /= n;
  std::sort(totals.begin(), totals.end());
  const std::size_t mid = totals.size() / 2;
  r.median_ms = totals.size() % 2 ? totals[mid] : 0.5 * (totals[mid - 1] + totals[mid]);
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * n));
  r.p95_ms = totals[std::max<std::size_t>(rank, 1) - 1];
  r.fps = 1000.0 / r.mean_ms;
  return r;
}

BenchmarkReport benchmark(std::span<const Frame> frames, Pipeline& pipeline) {
  if (frames.size() < kMinBenchmarkFrames) {
    throw ValidationError("benchmark needs at least " + std::to_string(kMinBenchmarkFrames) + " frames, got " +
                          std::to_string(frames.size()));
  }
  std::vector<FrameTimings> timings;
  timings.reserve(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    timings.push_back(pipeline.process_frame(frames[i], static_cast<long>(i)).timings);
  }
  return summarize(timings, pipeline.config().mode);
}

BenchmarkReport benchmark(std::span<const Frame> frames, const PipelineConfig& config, const StubDelays& delays,
                          std::vector<std::string> class_names) {
  if (frames.size() < kMinBenchmarkFrames) {
    throw ValidationError("benchmark needs at least " + std::to_string(kMinBenchmarkFrames) + " frames, got " +
                          std::to_string(frames.size()));
  }
  PipelineConfig cfg = config;
  if (cfg.assignment.empty()) cfg.assignment.assign(1 % static_cast<int>(class_names.size()), "stub");
  const int masked_class = cfg.assignment.entries().begin()->first;
  auto seg = std::make_shared<DelayedSegmentation>(
      std::make_shared<FullFrameSegmentation>(std::move(class_names), masked_class), fixed_delay(delays.seg_ms));
  StyleRegistry styles;
  for (const auto& id : cfg.assignment.distinct_styles()) {
    styles.emplace(id, std::make_shared<DelayedStyle>(std::make_shared<IdentityStyle>(), fixed_delay(delays.style_ms)));
  }
  Pipeline pipeline(std::move(seg), std::move(styles), cfg);
  return benchmark(frames, pipeline);
}

std::string report_to_json(const BenchmarkReport& r) {
  const nlohmann::json j = {{"schema", 1},
                            {"frames", r.frames},
                            {"mode", to_string(r.mode)},
                            {"mean_ms", r.mean_ms},
                            {"median_ms", r.median_ms},
                            {"p95_ms", r.p95_ms},
                            {"fps", r.fps},
                            {"stage_means_ms",
                             {{"seg", r.mean_seg_ms}, {"style", r.mean_style_ms}, {"composite", r.mean_composite_ms}}}};
  return j.dump(2);
}

std::string frame_file_name(long index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%06ld.png", index);
  return buf;
}

std::vector<std::filesystem::path> list_frames(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("frame directory " + dir.string() + " does not exist");
  static const std::regex pattern(R"(frame_(\d{6,})\.png)");
  std::vector<std::pair<long, std::filesystem::path>> found;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (entry.is_regular_file() && std::regex_match(name, m, pattern)) {
      found.emplace_back(std::stol(m[1].str()), entry.path());
    }
  }
  std::sort(found.begin(), found.end());
  std::vector<std::filesystem::path> out;
  for (auto& [idx, path] : found) out.push_back(std::move(path));
  return out;
}

std::vector<Frame> load_frames(const std::filesystem::path& dir) {
  std::vector<Frame> frames;
  for (const auto& p : list_frames(dir)) frames.push_back(read_png(p));
  return frames;
}

FrameSource directory_source(const std::filesystem::path& dir, bool loop) {
  auto paths = std::make_shared<std::vector<std::filesystem::path>>(list_frames(dir));
  auto next = std::make_shared<std::size_t>(0);
  return [paths, next, loop]() -> std::optional<SourceItem> {
    if (paths->empty()) return std::nullopt;
    if (*next >= paths->size()) {
      if (!loop) return std::nullopt;
      *next = 0;
    }
    const auto& path = (*paths)[(*next)++];
    try {
      return SourceItem{read_png(path), {}};
    } catch (const std::exception& e) {
      return SourceItem{std::nullopt, e.what()};
    }
  };
}

FrameSource memory_source(std::vector<Frame> frames) {
  auto data = std::make_shared<std::vector<Frame>>(std::move(frames));
  auto next = std::make_shared<std::size_t>(0);
  return [data, next]() -> std::optional<SourceItem> {
    if (*next >= data->size()) return std::nullopt;
    return SourceItem{(*data)[(*next)++], {}};
  };
}

}  // namespace cbs

// cbs: command-line front end for dataset generation, training, batch runs,
// benchmarking and the live steering service.

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "cbs/datagen.hpp"
#include "cbs/logging.hpp"
#include "cbs/pipeline.hpp"
#include "cbs/png_io.hpp"
#include "cbs/run_config.hpp"
#include "cbs/segmenter.hpp"
#include "cbs/service.hpp"
#include "cbs/styler.hpp"

namespace fs = std::filesystem;
using namespace cbs;

namespace {

struct GenDataArgs {
  int n = 100;
  std::uint64_t seed = 0;
  int size = 64;
  bool as_frames = false;
  fs::path out;
};

struct TrainStyleArgs {
  fs::path style;
  fs::path content;
  fs::path out;
  int content_size = 32;
  int max_content = 16;
  int style_size = 0;
  StyleHyperparams params;
};

struct TrainSegArgs {
  fs::path data;
  fs::path eval;
  fs::path out;
  SegHyperparams params;
};

struct RunArgs {
  fs::path config;
};

struct BenchArgs {
  fs::path frames;
  fs::path config;
  fs::path report;
  double stub_seg_ms = 0.0;
  double stub_style_ms = 0.0;
  std::string mode = "parallel";
  int workers = 2;
};

struct ServeArgs {
  fs::path config;
  int port = -1;
  std::string address = "127.0.0.1";
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

// Content images: a dataset directory (uses its images) or any directory of PNGs.
std::vector<Frame> load_content(const fs::path& dir, int size, int limit) {
  std::vector<fs::path> files;
  const fs::path images = fs::exists(dir / "index.json") ? dir / "images" : dir;
  if (!fs::is_directory(images)) throw IoError("content directory not found: " + images.string());
  for (const auto& entry : fs::directory_iterator(images)) {
    if (entry.path().extension() == ".png") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("no PNG content images in " + images.string());
  if (limit > 0 && static_cast<int>(files.size()) > limit) files.resize(static_cast<std::size_t>(limit));
  std::vector<Frame> frames;
  for (const auto& f : files) {
    Frame frame = read_png(f);
    if (size > 0 && (frame.height() != size || frame.width() != size)) frame = resize(frame, size, size);
    frames.push_back(std::move(frame));
  }
  return frames;
}

int gen_data(const GenDataArgs& a) {
  const auto samples = generate_dataset(a.n, a.seed, a.size);
  if (a.as_frames) {
    fs::create_directories(a.out);
    for (const auto& s : samples) write_png(a.out / frame_file_name(s.sample_id), s.image);
    spdlog::info("gen-data: wrote {} frames to {}", samples.size(), a.out.string());
    return 0;
  }
  save_dataset(a.out, samples, a.seed, a.size);
  spdlog::info("gen-data: wrote {} samples to {}", samples.size(), a.out.string());
  return 0;
}

int train_style_cmd(const TrainStyleArgs& a) {
  Frame style = read_png(a.style);
  if (a.style_size > 0) style = resize(style, a.style_size, a.style_size);
  const auto content = load_content(a.content, a.content_size, a.max_content);
  const StyleModel model = train_style(style, content, a.params);
  model.save(a.out);
  std::printf("train-style: loss %.6g -> %.6g, saved %s\n", model.meta().initial.total, model.meta().final_loss.total,
              a.out.string().c_str());
  return 0;
}

int train_seg_cmd(const TrainSegArgs& a) {
  const auto samples = load_dataset(a.data);
  const auto data = labeled_frames(samples);
  const SegModel model = train_seg(data, a.params, shape_class_names());
  model.save(a.out);
  std::printf("train-seg: %zu parameters, loss %.6g -> %.6g, saved %s\n", model.network().parameter_count(),
              model.meta().initial_loss, model.meta().final_loss, a.out.string().c_str());
  if (!a.eval.empty()) {
    const auto held = labeled_frames(load_dataset(a.eval));
    std::vector<ProbMap> preds;
    std::vector<LabelMap> truths;
    for (const auto& s : held) {
      preds.push_back(predict(s.image, model));
      truths.push_back(s.labels);
    }
    std::printf("train-seg: held-out mIoU %.4f over %zu samples\n", mean_iou(preds, truths), held.size());
  }
  return 0;
}

int run_cmd(const RunArgs& a) {
  const RunConfig cfg = load_run_config(a.config);
  Pipeline pipeline(load_segmentation(cfg.seg_model), load_styles(cfg.styles), cfg.pipeline());
  fs::create_directories(cfg.output_dir);
  long written = 0;
  std::string first_error;
  pipeline.process_stream(directory_source(cfg.input_frames), nullptr, [&](const StreamRecord& r) {
    if (!r.frame) {
      if (first_error.empty()) first_error = r.error;
      spdlog::error("run: frame {}: {}", r.frame_index, r.error);
      return;
    }
    write_png(cfg.output_dir / frame_file_name(r.frame_index), *r.frame);
    ++written;
  });
  if (!first_error.empty()) throw PipelineError("source", first_error);
  std::printf("run: wrote %ld frames to %s\n", written, cfg.output_dir.string().c_str());
  return 0;
}

int bench_cmd(const BenchArgs& a) {
  const auto frames = load_frames(a.frames);
  BenchmarkReport report;
  if (!a.config.empty()) {
    const RunConfig cfg = load_run_config(a.config);
    PipelineConfig pc = cfg.pipeline();
    pc.mode = parse_mode(a.mode);
    pc.worker_budget = a.workers;
    Pipeline pipeline(load_segmentation(cfg.seg_model), load_styles(cfg.styles), pc);
    report = benchmark(frames, pipeline);
  } else {
    PipelineConfig pc;
    pc.mode = parse_mode(a.mode);
    pc.worker_budget = a.workers;
    report = benchmark(frames, pc, StubDelays{a.stub_seg_ms, a.stub_style_ms}, shape_class_names());
  }
  const std::string json = report_to_json(report);
  if (a.report.empty()) {
    std::printf("%s\n", json.c_str());
  } else {
    write_text(a.report, json + "\n");
    std::printf("bench: %s mean %.3f ms, %.2f fps, report %s\n", to_string(report.mode).c_str(), report.mean_ms,
                report.fps, a.report.string().c_str());
  }
  return 0;
}

int serve_cmd(const ServeArgs& a) {
  const RunConfig cfg = load_run_config(a.config);
  ServiceOptions options;
  options.address = a.address;
  options.port = static_cast<unsigned short>(a.port >= 0 ? a.port : cfg.port);
  options.max_fps = cfg.max_fps;

  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  Service service(load_segmentation(cfg.seg_model), load_styles(cfg.styles), cfg.pipeline(),
                  load_frames(cfg.input_frames), options);
  service.start();
  std::printf("serve: listening on http://%s:%u\n", a.address.c_str(), service.port());
  std::fflush(stdout);
  int sig = 0;
  sigwait(&signals, &sig);
  service.stop();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  init_logging();

  CLI::App app{"Class-based styling: data generation, training, batch runs and live service", "cbs"};
  app.require_subcommand(1);
  app.fallthrough(false);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Render a synthetic shapes dataset");
  gen_cmd->add_option("--n", gen.n, "Number of samples")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--seed", gen.seed, "Dataset seed");
  gen_cmd->add_option("--size", gen.size, "Image side in pixels")->check(CLI::Range(32, 4096));
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_flag("--as-frames", gen.as_frames, "Write only the images, as a frame_%06d.png sequence");

  TrainStyleArgs ts;
  auto* ts_cmd = app.add_subcommand("train-style", "Train a feed-forward styler for one style image");
  ts_cmd->add_option("--style", ts.style, "Style image (PNG)")->required()->check(CLI::ExistingFile);
  ts_cmd->add_option("--content", ts.content, "Content images: dataset or PNG directory")->required();
  ts_cmd->add_option("--out", ts.out, "Model directory")->required();
  ts_cmd->add_option("--content-size", ts.content_size, "Resize content images to this side (0 keeps)");
  ts_cmd->add_option("--max-content", ts.max_content, "Use at most this many content images (0 uses all)");
  ts_cmd->add_option("--style-size", ts.style_size, "Resize the style image to this side (0 keeps)");
  ts_cmd->add_option("--iterations", ts.params.iterations)->check(CLI::PositiveNumber);
  ts_cmd->add_option("--lr", ts.params.learning_rate)->check(CLI::PositiveNumber);
  ts_cmd->add_option("--batch", ts.params.batch_size)->check(CLI::PositiveNumber);
  ts_cmd->add_option("--w-content", ts.params.weights.content);
  ts_cmd->add_option("--w-style", ts.params.weights.style);
  ts_cmd->add_option("--width", ts.params.network.width, "Transform network width")->check(CLI::PositiveNumber);
  ts_cmd->add_option("--blocks", ts.params.network.residual_blocks, "Residual blocks");
  ts_cmd->add_option("--seed", ts.params.seed);

  TrainSegArgs tg;
  auto* tg_cmd = app.add_subcommand("train-seg", "Train the segmentation network on a dataset");
  tg_cmd->add_option("--data", tg.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  tg_cmd->add_option("--out", tg.out, "Model directory")->required();
  tg_cmd->add_option("--eval", tg.eval, "Held-out dataset for a mIoU report")->check(CLI::ExistingDirectory);
  tg_cmd->add_option("--steps", tg.params.steps)->check(CLI::PositiveNumber);
  tg_cmd->add_option("--batch", tg.params.batch_size)->check(CLI::PositiveNumber);
  tg_cmd->add_option("--lr", tg.params.learning_rate)->check(CLI::PositiveNumber);
  tg_cmd->add_option("--width", tg.params.network.width)->check(CLI::PositiveNumber);
  tg_cmd->add_option("--dilations", tg.params.network.dilations)->delimiter(',');
  tg_cmd->add_option("--seed", tg.params.seed);

  RunArgs run;
  auto* run_cmd_ = app.add_subcommand("run", "Style a directory of frames per a run config");
  run_cmd_->add_option("--config", run.config, "Run config JSON")->required()->check(CLI::ExistingFile);

  BenchArgs bench;
  auto* bench_cmd_ = app.add_subcommand("bench", "Time the pipeline over a frame directory");
  bench_cmd_->add_option("--frames", bench.frames, "Frame directory")->required()->check(CLI::ExistingDirectory);
  bench_cmd_->add_option("--config", bench.config, "Run config; without it both stages are sleep stubs")
      ->check(CLI::ExistingFile);
  bench_cmd_->add_option("--stub-seg-ms", bench.stub_seg_ms)->check(CLI::NonNegativeNumber);
  bench_cmd_->add_option("--stub-style-ms", bench.stub_style_ms)->check(CLI::NonNegativeNumber);
  bench_cmd_->add_option("--mode", bench.mode)->check(CLI::IsMember({"parallel", "sequential"}));
  bench_cmd_->add_option("--workers", bench.workers)->check(CLI::PositiveNumber);
  bench_cmd_->add_option("--report", bench.report, "Write the report JSON here");

  ServeArgs serve;
  auto* serve_cmd_ = app.add_subcommand("serve", "Start the live steering service");
  serve_cmd_->add_option("--config", serve.config, "Run config JSON")->required()->check(CLI::ExistingFile);
  serve_cmd_->add_option("--port", serve.port, "Override the config port (0 picks one)")->check(CLI::Range(0, 65535));
  serve_cmd_->add_option("--address", serve.address);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "cbs: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*gen_cmd) return gen_data(gen);
    if (*ts_cmd) return train_style_cmd(ts);
    if (*tg_cmd) return train_seg_cmd(tg);
    if (*run_cmd_) return run_cmd(run);
    if (*bench_cmd_) return bench_cmd(bench);
    if (*serve_cmd_) return serve_cmd(serve);
  } catch (const std::exception& e) {
    std::cerr << "cbs: error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

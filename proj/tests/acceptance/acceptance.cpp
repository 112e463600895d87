// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any fails.
//
//   acceptance [criterion ...]     run all, or only the named criteria

#include <Eigen/Eigenvalues>

#include <array>
#include <atomic>
#include <cmath>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <mutex>
#include <random>
#include <string>
#include <thread>
#include <unistd.h>
#include <vector>

#include "cbs/branches.hpp"
#include "cbs/composite.hpp"
#include "cbs/datagen.hpp"
#include "cbs/features.hpp"
#include "cbs/logging.hpp"
#include "cbs/pipeline.hpp"
#include "cbs/segmenter.hpp"
#include "cbs/styler.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace cbs;
using namespace cbs::testing;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// 1000 random (I, T, R) triples up to 128x128 against the per-pixel blend oracle.
Outcome compositing_exactness() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int> extent(1, 128);
  std::uniform_real_distribution<double> density(0.0, 1.0);
  int mismatched = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int h = extent(rng), w = extent(rng);
    const Frame input = random_frame(rng, h, w);
    const Frame styled = random_frame(rng, h, w);
    const ClassMask mask = random_mask(rng, 1, h, w, density(rng));
    const Frame out = composite_single(input, styled, mask);
    const auto expected = composite_oracle(input, styled, mask);
    if (!std::equal(expected.begin(), expected.end(), out.pixels().begin())) ++mismatched;
  }
  const double secs = seconds_since(t0);
  return {mismatched == 0 && secs < 30.0, fmt("%d/1000 triples differ from oracle, %.1fs (limit 30s)", mismatched, secs)};
}

Outcome gram_loss_suite() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(202);
  std::uniform_int_distribution<int> dim(1, 12);
  std::uniform_real_distribution<double> scale(-3.0, 3.0);
  double asym = 0.0, eig_floor = 1e300, scaling = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const int c = dim(rng), h = dim(rng), w = dim(rng);
    const FeatureMap f{1, random_tensor(rng, {c, h, w})};
    const GramMatrix g = gram(f);
    Eigen::MatrixXd m(c, c);
    for (int i = 0; i < c; ++i)
      for (int j = 0; j < c; ++j) {
        m(i, j) = g.at(i, j);
        asym = std::max(asym, std::abs(g.at(i, j) - g.at(j, i)));
      }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m, Eigen::EigenvaluesOnly);
    eig_floor = std::min(eig_floor, solver.eigenvalues().minCoeff());

    const double a = scale(rng);
    FeatureMap fa = f;
    fa.values *= a;
    const GramMatrix ga = gram(fa);
    double peak = 0.0, diff = 0.0;
    for (std::size_t k = 0; k < g.values.size(); ++k) {
      peak = std::max(peak, std::abs(a * a * g.values[k]));
      diff = std::max(diff, std::abs(ga.values[k] - a * a * g.values[k]));
    }
    if (peak > 0.0) scaling = std::max(scaling, diff / peak);
  }

  // Identity cases must vanish exactly, through the real extractor.
  const ConvFeatureExtractor extractor;
  bool style_zero = true, content_zero = true;
  for (int trial = 0; trial < 5; ++trial) {
    const Frame s = random_frame(rng, 16 + 8 * trial, 16 + 8 * trial);
    const FeaturePyramid p = extractor.extract(s);
    std::vector<GramMatrix> grams;
    for (const auto& level : p) grams.push_back(gram(level));
    style_zero = style_zero && style_loss(p, grams) == 0.0;
    content_zero = content_zero && content_loss(p[kContentLevel], p[kContentLevel]) == 0.0;
  }

  double ce_err = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const ProbMap p = random_probs(rng, 3, 4, 4);
    const LabelMap y = random_labels(rng, 3, 4, 4);
    const double expected = cross_entropy_oracle(p, y);
    ce_err = std::max(ce_err, std::abs(cross_entropy(p, y) - expected) / std::max(1.0, std::abs(expected)));
  }

  const double secs = seconds_since(t0);
  const bool pass = asym <= 1e-9 && eig_floor >= -1e-6 && scaling <= 1e-9 && style_zero && content_zero &&
                    ce_err <= 1e-9 && secs < 60.0;
  return {pass, fmt("asym %.2e (<=1e-9), min eig %.2e (>=-1e-6), scaling %.2e (<=1e-9), style(S,S)=0 %s, "
                    "content(F,F)=0 %s, CE err %.2e (<=1e-9), %.1fs",
                    asym, eig_floor, scaling, style_zero ? "yes" : "no", content_zero ? "yes" : "no", ce_err, secs)};
}

// Zero-initialized biases put many pre-activations exactly on the ReLU kink,
// where central differences are meaningless; move them off it.
void jitter_biases(const std::vector<nn::Param*>& params, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  for (auto* p : params)
    if (p->value.rank() == 1)
      for (auto& v : p->value.values()) v = u(rng);
}

std::vector<double*> flat_values(const std::vector<nn::Param*>& params) {
  std::vector<double*> out;
  for (auto* p : params)
    for (auto& v : p->value.values()) out.push_back(&v);
  return out;
}

std::vector<double> flat_grads(const std::vector<nn::Param*>& params) {
  std::vector<double> out;
  for (auto* p : params)
    for (double v : p->grad.values()) out.push_back(v);
  return out;
}

Outcome gradient_checks() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(303);

  // Perceptual loss w.r.t. every transform-network parameter.
  const ConvFeatureExtractor extractor({.seed = 7, .widths = {4, 4, 4, 4}});
  TransformNet net({.width = 4, .residual_blocks = 1});
  net.init(11);
  auto params = net.parameters();
  jitter_biases(params, rng);
  const std::size_t style_params = nn::parameter_count(params);
  const Frame input = random_frame(rng, 8, 8, 0.25, 0.75);
  const FeaturePyramid style_pyr = extractor.extract(random_frame(rng, 8, 8));
  std::vector<GramMatrix> grams;
  for (const auto& level : style_pyr) grams.push_back(gram(level));
  const LossWeights weights{1.0, 10.0};
  for (auto* p : params) p->zero_grad();
  accumulate_style_gradients(net, extractor, input, grams, weights, 1.0);
  const auto style_check = finite_difference_check(flat_values(params), flat_grads(params), [&] {
    const Frame out = to_frame(net.forward(to_tensor(input)));
    return perceptual_loss(input, out, grams, weights, extractor).total;
  });

  // Cross-entropy w.r.t. every segmentation-network parameter.
  DabSegNet seg({.num_classes = 4, .width = 4, .dilations = {2, 4}});
  seg.init(13);
  auto seg_params = seg.parameters();
  jitter_biases(seg_params, rng);
  const std::size_t seg_count = seg.parameter_count();
  const Frame image = random_frame(rng, 8, 8);
  const LabelMap labels = random_labels(rng, 4, 8, 8);
  const auto ce_of = [&] {
    const nn::Tensor probs = nn::softmax_channels(seg.forward(to_tensor(image)));
    return cross_entropy(ProbMap(4, 8, 8, {probs.values().begin(), probs.values().end()}), labels);
  };
  for (auto* p : seg_params) p->zero_grad();
  DabSegNet::Trace trace;
  const nn::Tensor logits = seg.forward(to_tensor(image), &trace);
  seg.backward(trace, softmax_cross_entropy_grad(logits, labels));
  const auto seg_check = finite_difference_check(flat_values(seg_params), flat_grads(seg_params), ce_of);

  const double secs = seconds_since(t0);
  const bool pass = style_params <= 1000 && seg_count <= 1000 && style_check.relative_error < 1e-4 &&
                    seg_check.relative_error < 1e-4 && secs < 120.0;
  return {pass, fmt("perceptual rel err %.2e over %zu params, cross-entropy rel err %.2e over %zu params "
                    "(limit 1e-4, <=1000 params, 8x8), %.1fs",
                    style_check.relative_error, style_params, seg_check.relative_error, seg_count, secs)};
}

Frame stripes_style(int size) {
  std::vector<double> px;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const bool band = ((x + y) / 3) % 2 == 0;
      px.push_back(band ? 0.9 : 0.1);
      px.push_back(band ? 0.2 : 0.6);
      px.push_back(band ? 0.1 : 0.8);
    }
  return Frame(size, size, std::move(px));
}

std::vector<Frame> content_frames(int n, int size, std::uint64_t seed) {
  std::vector<Frame> out;
  for (const auto& s : generate_dataset(n, seed, 32)) out.push_back(resize(s.image, size, size));
  return out;
}

Outcome style_training() {
  const auto t0 = Clock::now();
  const auto content = content_frames(16, 16, 404);
  StyleHyperparams hp;
  hp.iterations = 200;
  hp.seed = 5;
  const Frame style = stripes_style(32);
  const StyleModel model = train_style(style, content, hp);
  const double initial = model.meta().initial.total, final_loss = model.meta().final_loss.total;

  // Held-out frames should move toward the style under the trained network.
  const ConvFeatureExtractor extractor;
  int closer = 0;
  const auto held = content_frames(8, 16, 405);
  for (const auto& f : held) {
    const double before = style_loss(extractor.extract(f), model.style_grams());
    const double after = style_loss(extractor.extract(stylize(f, model)), model.style_grams());
    closer += after < before;
  }
  const double secs = seconds_since(t0);
  return {final_loss < 0.5 * initial && closer == static_cast<int>(held.size()) && secs < 300.0,
          fmt("total loss %.4g -> %.4g, ratio %.3f (limit <0.5); held-out style loss lowered on %d/%zu; "
              "%.1fs (limit 300s)",
              initial, final_loss, final_loss / initial, closer, held.size(), secs)};
}

Outcome segmentation_training() {
  const auto t0 = Clock::now();
  constexpr std::uint64_t kSeed = 1;
  const auto train = labeled_frames(generate_dataset(200, kSeed, 64));
  std::vector<SyntheticSample> held;
  for (int id = 200; id < 250; ++id) held.push_back(generate_sample(id, kSeed, 64));
  SegHyperparams hp;
  hp.steps = 500;
  hp.seed = 3;
  const SegModel model = train_seg(train, hp, shape_class_names());
  std::vector<ProbMap> preds;
  std::vector<LabelMap> truths;
  for (const auto& s : labeled_frames(held)) {
    preds.push_back(predict(s.image, model));
    truths.push_back(s.labels);
  }
  const double miou = mean_iou(preds, truths);

  // A lone centered circle: the circle class should own the center pixel.
  std::vector<double> px;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      const bool inside = std::hypot(x + 0.5 - 32.0, y + 0.5 - 32.0) <= 11.0;
      for (double v : inside ? std::array{0.85, 0.25, 0.2} : std::array{0.2, 0.45, 0.7}) px.push_back(v);
    }
  const double circle_p = predict(Frame(64, 64, std::move(px)), model).at(kCircle, 32, 32);
  const std::size_t default_params = DabSegNet(SegNetConfig{}).parameter_count();
  const double secs = seconds_since(t0);
  return {miou >= 0.8 && default_params < 760000 && circle_p > 0.5 && secs < 600.0,
          fmt("held-out mIoU %.4f (limit >=0.8) on 50 samples, default params %zu (<760000), centered circle "
              "p=%.3f (>0.5), %.1fs (limit 600s)",
              miou, default_params, circle_p, secs)};
}

Outcome parallelism() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(606);
  std::vector<Frame> frames;
  for (int i = 0; i < 100; ++i) frames.push_back(random_frame(rng, 32, 32));
  PipelineConfig cfg;
  cfg.worker_budget = 2;
  cfg.mode = ExecutionMode::parallel;
  const auto par = benchmark(frames, cfg, {30.0, 30.0}, shape_class_names());
  cfg.mode = ExecutionMode::sequential;
  const auto seq = benchmark(frames, cfg, {30.0, 30.0}, shape_class_names());

  // Real tiny models: two styles and a segmenter, both modes must agree bit for bit.
  SegHyperparams shp;
  shp.steps = 20;
  shp.batch_size = 2;
  shp.network.width = 8;
  auto seg = std::make_shared<SegModel>(
      train_seg(labeled_frames(generate_dataset(8, 21, 32)), shp, shape_class_names()));
  StyleHyperparams a, b;
  a.iterations = b.iterations = 5;
  a.network.width = b.network.width = 4;
  a.seed = 1;
  b.seed = 2;
  const auto content = content_frames(4, 16, 22);
  StyleRegistry styles{{"a", std::make_shared<ModelStyle>(std::make_shared<StyleModel>(
                                 train_style(stripes_style(16), content, a)))},
                       {"b", std::make_shared<ModelStyle>(std::make_shared<StyleModel>(
                                 train_style(random_frame(rng, 16, 16), content, b)))}};
  PipelineConfig real;
  real.assignment = StyleAssignment({{1, "a"}, {2, "b"}, {3, "a"}});
  real.feather_radius = 1;
  real.mode = ExecutionMode::parallel;
  Pipeline p_par(std::make_shared<ModelSegmentation>(seg), styles, real);
  real.mode = ExecutionMode::sequential;
  Pipeline p_seq(std::make_shared<ModelSegmentation>(seg), styles, real);
  int differing = 0;
  const auto samples = generate_dataset(10, 23, 32);
  for (const auto& s : samples) {
    if (p_par.process_frame(s.image).frame != p_seq.process_frame(s.image).frame) ++differing;
  }

  const double ratio = par.mean_ms / seq.mean_ms;
  const double secs = seconds_since(t0);
  return {ratio <= 0.7 && differing == 0 && secs < 120.0,
          fmt("parallel %.2f ms vs sequential %.2f ms, ratio %.3f (limit <=0.7); %d/10 real-model frames differ "
              "between modes; %.1fs",
              par.mean_ms, seq.mean_ms, ratio, differing, secs)};
}

// Random per-call delays, safe to draw from several worker threads.
DelaySource random_delay(std::uint64_t seed, int max_us) {
  auto rng = std::make_shared<std::mt19937_64>(seed);
  auto mutex = std::make_shared<std::mutex>();
  return [rng, mutex, max_us] {
    std::lock_guard lock(*mutex);
    return std::chrono::microseconds(std::uniform_int_distribution<int>(0, max_us)(*rng));
  };
}

Outcome stream_semantics() {
  std::mt19937_64 rng(707);
  const auto names = shape_class_names();
  std::vector<Frame> frames;
  for (int i = 0; i < 100; ++i) frames.push_back(random_frame(rng, 16, 16));

  // Order: delayed stubs under parallel execution must still yield frames in source order,
  // each equal to the undelayed reference output.
  PipelineConfig cfg;
  cfg.assignment = StyleAssignment({{0, "red"}, {2, "blue"}});
  cfg.worker_budget = 3;
  const StyleRegistry plain{{"red", std::make_shared<ConstantStyle>(1.0, 0.0, 0.0)},
                            {"blue", std::make_shared<ConstantStyle>(0.0, 0.0, 1.0)}};
  StyleRegistry delayed;
  std::uint64_t k = 0;
  for (const auto& [id, branch] : plain) delayed[id] = std::make_shared<DelayedStyle>(branch, random_delay(++k, 4000));
  auto quads = std::make_shared<QuadrantSegmentation>(names);
  Pipeline reference(quads, plain, cfg);
  Pipeline stream(std::make_shared<DelayedSegmentation>(quads, random_delay(99, 4000)), delayed, cfg);
  std::vector<long> order;
  int wrong = 0;
  stream.process_stream(memory_source(frames), nullptr, [&](const StreamRecord& r) {
    order.push_back(r.frame_index);
    if (!r.frame || *r.frame != reference.process_frame(frames[static_cast<std::size_t>(r.frame_index)]).frame) ++wrong;
  });
  bool ordered = order.size() == frames.size();
  for (std::size_t i = 0; ordered && i < order.size(); ++i) ordered = order[i] == static_cast<long>(i);

  // Atomicity: every class is painted by one constant style; a frame mixing colors
  // would mean an update landed mid-frame.
  const StyleRegistry colors{{"red", std::make_shared<DelayedStyle>(std::make_shared<ConstantStyle>(1.0, 0.0, 0.0),
                                                                    random_delay(5, 2000))},
                             {"green", std::make_shared<DelayedStyle>(std::make_shared<ConstantStyle>(0.0, 1.0, 0.0),
                                                                      random_delay(6, 2000))}};
  const auto all_to = [](const std::string& style) {
    return StyleAssignment({{0, style}, {1, style}, {2, style}, {3, style}});
  };
  PipelineConfig acfg;
  acfg.assignment = all_to("red");
  acfg.worker_budget = 2;
  Pipeline atomic(quads, colors, acfg);
  AssignmentChannel channel;
  std::atomic<bool> done{false};
  std::thread producer([&] {
    std::mt19937_64 prng(808);
    for (int i = 0; !done; ++i) {
      channel.push(all_to(i % 2 ? "red" : "green"));
      std::this_thread::sleep_for(std::chrono::microseconds(std::uniform_int_distribution<int>(100, 3000)(prng)));
    }
  });
  int mixed = 0, mismatched = 0, green_frames = 0;
  atomic.process_stream(memory_source(frames), &channel, [&](const StreamRecord& r) {
    if (!r.frame) {
      ++mixed;
      return;
    }
    const auto px = r.frame->pixels();
    const double g0 = px[1];
    bool uniform = true;
    for (std::size_t i = 0; i < px.size(); i += 3) uniform = uniform && px[i + 1] == g0;
    if (!uniform) ++mixed;
    const std::string expected = r.assignment.entries().at(0);
    if ((expected == "green") != (g0 == 1.0)) ++mismatched;
    green_frames += g0 == 1.0;
  });
  done = true;
  producer.join();

  const bool pass = ordered && wrong == 0 && mixed == 0 && mismatched == 0;
  return {pass, fmt("order preserved %s over %zu frames, %d wrong outputs; %d mixed-assignment frames, %d frames "
                    "disagreeing with their recorded assignment (%d green / 100)",
                    ordered ? "yes" : "no", order.size(), wrong, mixed, mismatched, green_frames)};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + CBS_CLI_PATH + "\" " + args + " > /dev/null 2>&1";
  return std::system(cmd.c_str());
}

Outcome reproducibility() {
  const auto t0 = Clock::now();
  const fs::path root = fs::temp_directory_path() / fmt("cbs-repro-%d", static_cast<int>(::getpid()));
  fs::remove_all(root);
  std::vector<std::string> failures;

  // Each workspace gets its own copy of everything so the comparison sees two independent runs.
  for (const char* ws : {"a", "b"}) {
    const fs::path d = root / ws;
    fs::create_directories(d / "models");
    const std::string q = "\"" + d.string() + "\"";
    const bool ok =
        run_cli("gen-data --n 40 --seed 7 --size 32 --out " + q + "/ds") == 0 &&
        run_cli("gen-data --n 12 --seed 8 --size 32 --as-frames --out " + q + "/frames") == 0 &&
        run_cli("train-seg --data " + q + "/ds --out " + q + "/models/seg --steps 15 --batch 2 --width 8 --seed 3") ==
            0 &&
        run_cli("train-style --style " + q + "/ds/images/000003.png --content " + q + "/ds --out " + q +
                "/models/ink --iterations 6 --batch 2 --width 4 --content-size 16 --max-content 8 --seed 4") == 0 &&
        fs::copy_file(fs::path(CBS_SOURCE_DIR) / "docs" / "run.example.json", d / "run.json") &&
        run_cli("run --config " + q + "/run.json") == 0 &&
        run_cli("bench --frames " + q + "/frames --stub-seg-ms 1 --stub-style-ms 1 --report " + q + "/bench.json") == 0;
    if (!ok) failures.push_back(std::string("command failed in workspace ") + ws);
  }
  if (failures.empty()) {
    for (const char* artifact : {"ds", "frames", "models/seg", "models/ink", "out"}) {
      const auto diff = first_tree_difference(root / "a" / artifact, root / "b" / artifact);
      if (!diff.empty()) failures.push_back(std::string(artifact) + ": " + diff);
    }
    if (!fs::exists(root / "a" / "bench.json")) failures.push_back("bench report missing");
  }
  fs::remove_all(root);
  const double secs = seconds_since(t0);
  std::string detail = failures.empty() ? "gen-data, train-seg, train-style and run artifacts byte-identical across "
                                          "two runs; bench report written"
                                        : failures.front();
  return {failures.empty(), detail + fmt(", %.1fs", secs)};
}

struct Criterion {
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  init_logging();
  const std::vector<Criterion> criteria{
      {"compositing-exactness", compositing_exactness},
      {"gram-loss-suite", gram_loss_suite},
      {"gradient-checks", gradient_checks},
      {"style-training", style_training},
      {"segmentation-training", segmentation_training},
      {"parallelism", parallelism},
      {"stream-semantics", stream_semantics},
      {"reproducibility", reproducibility},
  };
  std::vector<std::string> only(argv + 1, argv + argc);
  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.name) == only.end()) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}

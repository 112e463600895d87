#include "cbs/segmenter.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "cbs/error.hpp"
#include "cbs/features.hpp"
#include "cbs/nn/optim.hpp"
#include "cbs/nn/weights_file.hpp"

namespace cbs {

using nlohmann::json;

LabelMap::LabelMap(int num_classes, int height, int width, std::vector<std::uint8_t> labels)
    : num_classes_(num_classes), height_(height), width_(width), labels_(std::move(labels)) {
  if (num_classes < 1 || num_classes > 255) throw ValidationError("label map class count out of range");
  if (height < 1 || width < 1) throw ValidationError("label map extent must be at least 1x1");
  if (labels_.size() != static_cast<std::size_t>(height) * width) {
    throw ShapeError("label buffer does not match " + std::to_string(height) + "x" + std::to_string(width));
  }
  for (auto v : labels_) {
    if (v >= num_classes) {
      throw ValidationError("label " + std::to_string(v) + " outside " + std::to_string(num_classes) + " classes");
    }
  }
}

LabelMap LabelMap::from_one_hot(int num_classes, int height, int width, std::span<const double> one_hot) {
  if (one_hot.size() != static_cast<std::size_t>(height) * width * num_classes) {
    throw ShapeError("one-hot buffer does not match its extent");
  }
  std::vector<std::uint8_t> labels(static_cast<std::size_t>(height) * width);
  for (std::size_t p = 0; p < labels.size(); ++p) {
    int hot = -1;
    for (int c = 0; c < num_classes; ++c) {
      const double v = one_hot[p * num_classes + c];
      if (v == 1.0) {
        if (hot >= 0) throw ValidationError("pixel " + std::to_string(p) + " has two hot classes");
        hot = c;
      } else if (v != 0.0) {
        throw ValidationError("one-hot entries must be 0 or 1");
      }
    }
    if (hot < 0) throw ValidationError("pixel " + std::to_string(p) + " has no hot class");
    labels[p] = static_cast<std::uint8_t>(hot);
  }
  return LabelMap(num_classes, height, width, std::move(labels));
}

std::vector<double> LabelMap::to_one_hot() const {
  std::vector<double> out(labels_.size() * num_classes_, 0.0);
  for (std::size_t p = 0; p < labels_.size(); ++p) out[p * num_classes_ + labels_[p]] = 1.0;
  return out;
}

ProbMap::ProbMap(int num_classes, int height, int width, std::vector<double> probs)
    : num_classes_(num_classes), height_(height), width_(width), probs_(std::move(probs)) {
  if (num_classes < 1 || height < 1 || width < 1) throw ValidationError("invalid probability map extent");
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  if (probs_.size() != plane * num_classes) throw ShapeError("probability buffer does not match its extent");
  for (std::size_t p = 0; p < plane; ++p) {
    double sum = 0.0;
    for (int c = 0; c < num_classes; ++c) {
      const double v = probs_[c * plane + p];
      if (!std::isfinite(v) || v < 0.0 || v > 1.0) throw ValidationError("probability outside [0,1]");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      throw ValidationError("probabilities at pixel " + std::to_string(p) + " sum to " + std::to_string(sum));
    }
  }
}

ProbMap ProbMap::from_labels(const LabelMap& labels) {
  const std::size_t plane = static_cast<std::size_t>(labels.height()) * labels.width();
  std::vector<double> probs(plane * labels.num_classes(), 0.0);
  for (std::size_t p = 0; p < plane; ++p) probs[labels.labels()[p] * plane + p] = 1.0;
  return ProbMap(labels.num_classes(), labels.height(), labels.width(), std::move(probs));
}

int ProbMap::argmax(int y, int x) const noexcept {
  int best = 0;
  double best_v = at(0, y, x);
  for (int c = 1; c < num_classes_; ++c) {
    const double v = at(c, y, x);
    if (v > best_v) {
      best = c;
      best_v = v;
    }
  }
  return best;
}

double cross_entropy(const ProbMap& pred, const LabelMap& truth) {
  if (pred.num_classes() != truth.num_classes() || pred.height() != truth.height() ||
      pred.width() != truth.width()) {
    throw ShapeError("cross entropy: prediction and ground truth shapes differ");
  }
  double loss = 0.0;
  for (int y = 0; y < truth.height(); ++y)
    for (int x = 0; x < truth.width(); ++x) {
      loss -= std::log(std::max(pred.at(truth.label(y, x), y, x), kProbabilityFloor));
    }
  return loss;
}

nn::Tensor softmax_cross_entropy_grad(const nn::Tensor& logits, const LabelMap& truth) {
  if (logits.rank() != 3 || logits.channels() != truth.num_classes() || logits.height() != truth.height() ||
      logits.width() != truth.width()) {
    throw ShapeError("cross entropy gradient: logits " + logits.shape_string() + " do not match labels");
  }
  nn::Tensor g = nn::softmax_channels(logits);
  for (int y = 0; y < truth.height(); ++y)
    for (int x = 0; x < truth.width(); ++x) g.at(truth.label(y, x), y, x) -= 1.0;
  return g;
}

ClassMask extract_mask(const ProbMap& prob, int class_id) {
  if (class_id < 0 || class_id >= prob.num_classes()) {
    throw ValidationError("unknown class id " + std::to_string(class_id));
  }
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(prob.height()) * prob.width());
  for (int y = 0; y < prob.height(); ++y)
    for (int x = 0; x < prob.width(); ++x)
      mask[static_cast<std::size_t>(y) * prob.width() + x] = prob.argmax(y, x) == class_id ? 1 : 0;
  return ClassMask(class_id, prob.height(), prob.width(), std::move(mask));
}

std::vector<ClassMask> extract_masks(const ProbMap& prob) {
  const std::size_t plane = static_cast<std::size_t>(prob.height()) * prob.width();
  std::vector<std::vector<std::uint8_t>> masks(prob.num_classes(), std::vector<std::uint8_t>(plane, 0));
  for (int y = 0; y < prob.height(); ++y)
    for (int x = 0; x < prob.width(); ++x)
      masks[prob.argmax(y, x)][static_cast<std::size_t>(y) * prob.width() + x] = 1;
  std::vector<ClassMask> out;
  for (int c = 0; c < prob.num_classes(); ++c) out.emplace_back(c, prob.height(), prob.width(), std::move(masks[c]));
  return out;
}

double mean_iou(std::span<const ProbMap> preds, std::span<const LabelMap> truths) {
  if (preds.empty()) throw ValidationError("mean IoU of an empty set");
  if (preds.size() != truths.size()) throw ShapeError("mean IoU: prediction and ground truth counts differ");
  const int K = truths.front().num_classes();
  std::vector<long> inter(K, 0), uni(K, 0), present(K, 0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const ProbMap& p = preds[i];
    const LabelMap& t = truths[i];
    if (p.num_classes() != K || t.num_classes() != K || p.height() != t.height() || p.width() != t.width()) {
      throw ShapeError("mean IoU: sample " + std::to_string(i) + " shapes differ");
    }
    for (int y = 0; y < t.height(); ++y)
      for (int x = 0; x < t.width(); ++x) {
        const int a = p.argmax(y, x);
        const int b = t.label(y, x);
        ++present[b];
        if (a == b) {
          ++inter[a];
          ++uni[a];
        } else {
          ++uni[a];
          ++uni[b];
        }
      }
  }
  double sum = 0.0;
  int counted = 0;
  for (int c = 0; c < K; ++c) {
    if (present[c] == 0) continue;
    sum += static_cast<double>(inter[c]) / static_cast<double>(uni[c]);
    ++counted;
  }
  return sum / counted;
}

DabSegNet::DabSegNet(SegNetConfig config) : config_(std::move(config)) {
  const int w = config_.width;
  if (w < 1 || config_.num_classes < 2) throw ValidationError("invalid segmentation network config");
  stem_ = nn::Conv2d("seg.stem", {.in_channels = 3, .out_channels = w, .stride = 2});
  for (std::size_t b = 0; b < config_.dilations.size(); ++b) {
    const int d = config_.dilations[b];
    if (d < 1) throw ValidationError("dilation must be >= 1");
    const std::string prefix = "seg.block" + std::to_string(b);
    blocks_.push_back({
        nn::Conv2d(prefix + ".depthwise", {.in_channels = w, .out_channels = w, .groups = w}),
        nn::Conv2d(prefix + ".pointwise", {.in_channels = w, .out_channels = w, .kernel = 1, .padding = 0}),
        nn::Conv2d(prefix + ".dilated",
                   {.in_channels = w, .out_channels = w, .padding = d, .dilation = d, .groups = w}),
        nn::Conv2d(prefix + ".fuse", {.in_channels = 2 * w, .out_channels = w, .kernel = 1, .padding = 0}),
    });
  }
  head_ = nn::Conv2d("seg.head", {.in_channels = w, .out_channels = config_.num_classes, .kernel = 1, .padding = 0});
  const std::size_t count = parameter_count();
  if (count >= kMaxSegParameters) {
    throw ModelError("segmentation network has " + std::to_string(count) + " parameters, budget is " +
                     std::to_string(kMaxSegParameters));
  }
}

void DabSegNet::init(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  stem_.init(rng);
  for (auto& b : blocks_) {
    b.depthwise.init(rng);
    b.pointwise.init(rng);
    b.dilated.init(rng);
    b.fuse.init(rng, 0.5);
  }
  head_.init(rng, 0.5);
}

nn::Tensor DabSegNet::forward(const nn::Tensor& x, Trace* trace) const {
  if (x.rank() != 3 || x.channels() != 3) throw ShapeError("segmentation network expects 3 x H x W input");
  Trace local;
  Trace& t = trace ? *trace : local;
  t.input = x;
  t.stem_pre = stem_.forward(x);
  nn::Tensor h = nn::relu(t.stem_pre);
  t.blocks.clear();
  for (const auto& b : blocks_) {
    BlockTrace bt;
    bt.input = h;
    bt.depthwise = b.depthwise.forward(h);
    bt.concat_pre = nn::concat_channels(b.pointwise.forward(bt.depthwise), b.dilated.forward(h));
    bt.out_pre = b.fuse.forward(nn::relu(bt.concat_pre));
    bt.out_pre += h;
    h = nn::relu(bt.out_pre);
    t.blocks.push_back(std::move(bt));
  }
  t.features = std::move(h);
  t.logits_low = head_.forward(t.features);
  return nn::resize_bilinear(t.logits_low, x.height(), x.width());
}

void DabSegNet::backward(const Trace& t, const nn::Tensor& grad_logits) {
  const nn::Tensor g_low =
      nn::resize_bilinear_backward(grad_logits, t.logits_low.height(), t.logits_low.width());
  nn::Tensor g = head_.backward(t.features, g_low);
  for (std::size_t i = blocks_.size(); i-- > 0;) {
    Block& b = blocks_[i];
    const BlockTrace& bt = t.blocks[i];
    const nn::Tensor g_pre = nn::relu_backward(bt.out_pre, g);
    nn::Tensor g_in = g_pre;
    const nn::Tensor g_cat = nn::relu_backward(bt.concat_pre, b.fuse.backward(nn::relu(bt.concat_pre), g_pre));
    auto [g_sep, g_dil] = nn::split_channels(g_cat, config_.width);
    g_in += b.depthwise.backward(bt.input, b.pointwise.backward(bt.depthwise, g_sep));
    g_in += b.dilated.backward(bt.input, g_dil);
    g = std::move(g_in);
  }
  stem_.backward(t.input, nn::relu_backward(t.stem_pre, g));
}

std::vector<nn::Param*> DabSegNet::parameters() {
  std::vector<nn::Param*> out;
  stem_.collect(out);
  for (auto& b : blocks_) {
    b.depthwise.collect(out);
    b.pointwise.collect(out);
    b.dilated.collect(out);
    b.fuse.collect(out);
  }
  head_.collect(out);
  return out;
}

std::vector<const nn::Param*> DabSegNet::parameters() const {
  auto mut = const_cast<DabSegNet*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

std::size_t DabSegNet::parameter_count() const {
  std::size_t n = 0;
  for (const nn::Param* p : parameters()) n += p->value.size();
  return n;
}

SegModel::SegModel(DabSegNet network, std::vector<std::string> class_names, SegTrainingMeta meta)
    : loaded_(true), net_(std::move(network)), classes_(std::move(class_names)), meta_(meta) {
  if (static_cast<int>(classes_.size()) != net_.config().num_classes) {
    throw ModelError("segmentation model has " + std::to_string(classes_.size()) + " class names for " +
                     std::to_string(net_.config().num_classes) + " outputs");
  }
}

void SegModel::save(const std::filesystem::path& dir) const {
  if (!loaded_) throw ModelError("cannot save an unloaded segmentation model");
  std::filesystem::create_directories(dir);
  nn::TensorMap tensors;
  for (const nn::Param* p : net_.parameters()) tensors.emplace(p->name, p->value);
  nn::save_tensors(dir / "weights.bin", tensors);

  json classes = json::array();
  for (std::size_t i = 0; i < classes_.size(); ++i) classes.push_back({{"index", i}, {"name", classes_[i]}});
  json manifest = {
      {"schema", kSchemaVersion},
      {"kind", "seg_model"},
      {"weights_file", "weights.bin"},
      {"classes", classes},
      {"block_config", {{"width", net_.config().width}, {"dilations", net_.config().dilations}}},
      {"parameter_count", net_.parameter_count()},
      {"seed", meta_.seed},
      {"training",
       {{"steps", meta_.steps}, {"learning_rate", meta_.learning_rate}, {"batch_size", meta_.batch_size}}},
      {"initial_loss", meta_.initial_loss},
      {"final_loss", meta_.final_loss},
  };
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

SegModel SegModel::load(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  std::ifstream in(path);
  if (!in) throw ModelError("missing model manifest " + path.string());
  try {
    const json m = json::parse(in);
    if (m.at("schema").get<int>() != kSchemaVersion || m.at("kind").get<std::string>() != "seg_model") {
      throw ModelError("unsupported segmentation manifest in " + dir.string());
    }
    std::vector<std::string> names;
    for (const auto& c : m.at("classes")) {
      if (c.at("index").get<std::size_t>() != names.size()) throw ModelError("class list out of order");
      names.push_back(c.at("name").get<std::string>());
    }
    SegNetConfig cfg{static_cast<int>(names.size()), m.at("block_config").at("width").get<int>(),
                     m.at("block_config").at("dilations").get<std::vector<int>>()};
    DabSegNet net(cfg);
    auto tensors = nn::load_tensors(dir / m.at("weights_file").get<std::string>());
    for (nn::Param* p : net.parameters()) {
      auto it = tensors.find(p->name);
      if (it == tensors.end() || it->second.shape() != p->value.shape()) {
        throw ModelError("weights in " + dir.string() + " lack a valid tensor " + p->name);
      }
      p->value = std::move(it->second);
    }
    SegTrainingMeta meta;
    meta.steps = m.at("training").at("steps").get<long>();
    meta.learning_rate = m.at("training").at("learning_rate").get<double>();
    meta.batch_size = m.at("training").at("batch_size").get<int>();
    meta.seed = m.at("seed").get<std::uint64_t>();
    meta.initial_loss = m.at("initial_loss").get<double>();
    meta.final_loss = m.at("final_loss").get<double>();
    return SegModel(std::move(net), std::move(names), meta);
  } catch (const IoError& e) {
    throw ModelError(std::string("unreadable segmentation model: ") + e.what());
  } catch (const json::exception& e) {
    throw ModelError("corrupt segmentation manifest " + path.string() + ": " + e.what());
  }
}

ProbMap predict(const Frame& input, const SegModel& model) {
  if (!model.loaded()) throw ModelError("predict called with an unloaded segmentation model");
  const nn::Tensor probs = nn::softmax_channels(model.network().forward(to_tensor(input)));
  std::vector<double> values(probs.values().begin(), probs.values().end());
  return ProbMap(probs.channels(), probs.height(), probs.width(), std::move(values));
}

namespace {

double mean_pixel_loss(const DabSegNet& net, std::span<const LabeledFrame> dataset) {
  double total = 0.0;
  std::size_t pixels = 0;
  for (const auto& s : dataset) {
    const nn::Tensor p = nn::softmax_channels(net.forward(to_tensor(s.image)));
    ProbMap pm(p.channels(), p.height(), p.width(), {p.values().begin(), p.values().end()});
    total += cross_entropy(pm, s.labels);
    pixels += static_cast<std::size_t>(s.labels.height()) * s.labels.width();
  }
  return total / static_cast<double>(pixels);
}

}  // namespace

SegModel train_seg(std::span<const LabeledFrame> dataset, const SegHyperparams& params,
                   std::vector<std::string> class_names) {
  if (dataset.empty()) throw ValidationError("segmentation training needs a non-empty dataset");
  if (params.steps < 0 || params.batch_size < 1 || !(params.learning_rate > 0.0)) {
    throw ValidationError("invalid segmentation training hyperparameters");
  }
  for (const auto& s : dataset) {
    if (s.labels.num_classes() != params.network.num_classes) {
      throw ValidationError("dataset class count " + std::to_string(s.labels.num_classes()) +
                            " differs from the network's " + std::to_string(params.network.num_classes));
    }
    if (!s.image.same_extent(s.labels.height(), s.labels.width())) {
      throw ShapeError("sample image and labels differ in extent");
    }
  }

  DabSegNet net(params.network);
  net.init(params.seed);
  nn::Adam adam(net.parameters(), {.learning_rate = params.learning_rate});
  std::mt19937_64 rng(params.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);

  SegTrainingMeta meta;
  meta.steps = params.steps;
  meta.seed = params.seed;
  meta.learning_rate = params.learning_rate;
  meta.batch_size = params.batch_size;
  meta.initial_loss = mean_pixel_loss(net, dataset);
  spdlog::info("train-seg: {} parameters, initial loss {:.6g}", net.parameter_count(), meta.initial_loss);

  for (long step = 0; step < params.steps; ++step) {
    adam.zero_grad();
    double batch_loss = 0.0;
    for (int b = 0; b < params.batch_size; ++b) {
      const LabeledFrame& s = dataset[pick(rng)];
      DabSegNet::Trace trace;
      const nn::Tensor logits = net.forward(to_tensor(s.image), &trace);
      nn::Tensor grad = softmax_cross_entropy_grad(logits, s.labels);
      const double pixels = static_cast<double>(s.labels.height()) * s.labels.width();
      const nn::Tensor probs = nn::softmax_channels(logits);
      for (int y = 0; y < s.labels.height(); ++y)
        for (int x = 0; x < s.labels.width(); ++x)
          batch_loss -= std::log(std::max(probs.at(s.labels.label(y, x), y, x), kProbabilityFloor)) /
                        (pixels * params.batch_size);
      grad *= 1.0 / (pixels * params.batch_size);
      net.backward(trace, grad);
    }
    if (!std::isfinite(batch_loss)) throw DivergenceError("segmentation training loss is not finite", step);
    adam.step();
    if ((step + 1) % 50 == 0) spdlog::debug("train-seg: step {} batch loss {:.6g}", step + 1, batch_loss);
  }

  meta.final_loss = mean_pixel_loss(net, dataset);
  spdlog::info("train-seg: final loss {:.6g}", meta.final_loss);
  return SegModel(std::move(net), std::move(class_names), meta);
}

}  // namespace cbs

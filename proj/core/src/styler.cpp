#include "cbs/styler.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "cbs/error.hpp"
#include "cbs/nn/optim.hpp"
#include "cbs/nn/weights_file.hpp"
#include "cbs/png_io.hpp"

namespace cbs {

using nlohmann::json;

LossBreakdown perceptual_loss(const Frame& input, const Frame& output,
                              const std::vector<GramMatrix>& style_grams, const LossWeights& weights,
                              const FeatureNetwork& extractor) {
  if (!input.same_extent(output.height(), output.width())) {
    throw ShapeError("perceptual loss: output extent differs from input");
  }
  const FeaturePyramid in = extractor.extract(input);
  const FeaturePyramid out = extractor.extract(output);
  if (out.size() <= kContentLevel) throw ShapeError("perceptual loss needs at least two feature levels");
  LossBreakdown loss;
  loss.content = content_loss(out[kContentLevel], in[kContentLevel]);
  loss.style = style_loss(out, style_grams);
  loss.total = weights.content * loss.content + weights.style * loss.style;
  return loss;
}

TransformNet::TransformNet(TransformNetConfig config) : config_(config) {
  if (config.width < 1 || config.residual_blocks < 0) throw ValidationError("invalid transform network config");
  const int w = config.width;
  stem_ = nn::Conv2d("transform.stem", {.in_channels = 3, .out_channels = w});
  down_ = nn::Conv2d("transform.down", {.in_channels = w, .out_channels = w, .stride = 2});
  for (int b = 0; b < config.residual_blocks; ++b) {
    const std::string prefix = "transform.res" + std::to_string(b);
    block_a_.emplace_back(prefix + ".a", nn::ConvSpec{.in_channels = w, .out_channels = w});
    block_b_.emplace_back(prefix + ".b", nn::ConvSpec{.in_channels = w, .out_channels = w});
  }
  out_ = nn::Conv2d("transform.out", {.in_channels = w, .out_channels = 3});
}

void TransformNet::init(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  stem_.init(rng);
  down_.init(rng);
  for (std::size_t b = 0; b < block_a_.size(); ++b) {
    block_a_[b].init(rng);
    block_b_[b].init(rng, 0.5);
  }
  // Small output layer: an untrained network starts close to the identity.
  out_.init(rng, 0.1);
}

nn::Tensor TransformNet::forward(const nn::Tensor& x, Trace* trace) const {
  if (x.rank() != 3 || x.channels() != 3) throw ShapeError("transform network expects 3 x H x W input");
  Trace local;
  Trace& t = trace ? *trace : local;
  t.input = x;
  t.stem_pre = stem_.forward(x);
  t.stem = nn::relu(t.stem_pre);
  t.down_pre = down_.forward(t.stem);
  nn::Tensor h = nn::relu(t.down_pre);
  t.block_in.clear();
  t.block_mid_pre.clear();
  for (std::size_t b = 0; b < block_a_.size(); ++b) {
    t.block_in.push_back(h);
    t.block_mid_pre.push_back(block_a_[b].forward(h));
    h += block_b_[b].forward(nn::relu(t.block_mid_pre.back()));
  }
  t.trunk = std::move(h);
  t.upsampled = nn::resize_nearest(t.trunk, x.height(), x.width());
  t.out_pre = out_.forward(t.upsampled);
  t.out_pre += x;
  nn::Tensor y = t.out_pre;
  for (double& v : y.values()) v = std::clamp(v, 0.0, 1.0);
  return y;
}

void TransformNet::backward(const Trace& t, const nn::Tensor& grad_output) {
  nn::Tensor g = grad_output;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (t.out_pre[i] < 0.0 || t.out_pre[i] > 1.0) g[i] = 0.0;
  }
  nn::Tensor g_up = out_.backward(t.upsampled, g);
  nn::Tensor gh = nn::resize_nearest_backward(g_up, t.trunk.height(), t.trunk.width());
  for (std::size_t b = block_a_.size(); b-- > 0;) {
    const nn::Tensor mid = nn::relu(t.block_mid_pre[b]);
    const nn::Tensor g_mid = block_b_[b].backward(mid, gh);
    const nn::Tensor g_mid_pre = nn::relu_backward(t.block_mid_pre[b], g_mid);
    gh += block_a_[b].backward(t.block_in[b], g_mid_pre);
  }
  const nn::Tensor g_down = nn::relu_backward(t.down_pre, gh);
  const nn::Tensor g_stem = down_.backward(t.stem, g_down);
  stem_.backward(t.input, nn::relu_backward(t.stem_pre, g_stem));
}

std::vector<nn::Param*> TransformNet::parameters() {
  std::vector<nn::Param*> out;
  stem_.collect(out);
  down_.collect(out);
  for (std::size_t b = 0; b < block_a_.size(); ++b) {
    block_a_[b].collect(out);
    block_b_[b].collect(out);
  }
  out_.collect(out);
  return out;
}

std::vector<const nn::Param*> TransformNet::parameters() const {
  auto mut = const_cast<TransformNet*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

LossBreakdown accumulate_style_gradients(TransformNet& net, const FeatureNetwork& extractor,
                                         const Frame& input, const std::vector<GramMatrix>& style_grams,
                                         const LossWeights& weights, double scale) {
  const nn::Tensor x = to_tensor(input);
  TransformNet::Trace trace;
  const nn::Tensor y = net.forward(x, &trace);
  const auto target = extractor.forward(x);
  const auto generated = extractor.forward(y);
  const FeaturePyramid& gen = generated->pyramid();
  const FeaturePyramid& ref = target->pyramid();
  if (gen.size() <= kContentLevel) throw ShapeError("perceptual loss needs at least two feature levels");

  LossBreakdown loss;
  loss.content = content_loss(gen[kContentLevel], ref[kContentLevel]);
  loss.style = style_loss(gen, style_grams);
  loss.total = weights.content * loss.content + weights.style * loss.style;

  std::vector<nn::Tensor> grads = style_loss_grad(gen, style_grams);
  for (auto& g : grads) g *= weights.style;
  nn::Tensor gc = content_loss_grad(gen[kContentLevel], ref[kContentLevel]);
  gc *= weights.content;
  grads[kContentLevel] += gc;
  nn::Tensor g_out = generated->backward(grads);
  g_out *= scale;
  net.backward(trace, g_out);
  return loss;
}

StyleModel::StyleModel(TransformNet network, std::vector<GramMatrix> style_grams, std::string style_image_ref,
                       ExtractorInfo extractor, StyleTrainingMeta meta)
    : loaded_(true),
      net_(std::move(network)),
      grams_(std::move(style_grams)),
      style_ref_(std::move(style_image_ref)),
      extractor_(std::move(extractor)),
      meta_(meta) {
  if (grams_.size() != extractor_.widths.size()) {
    throw ModelError("style model has " + std::to_string(grams_.size()) + " grams for " +
                     std::to_string(extractor_.widths.size()) + " extractor levels");
  }
}

namespace {

json losses_json(const LossBreakdown& l) {
  return {{"content", l.content}, {"style", l.style}, {"total", l.total}};
}

LossBreakdown losses_from(const json& j) {
  return {j.at("content").get<double>(), j.at("style").get<double>(), j.at("total").get<double>()};
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text << '\n';
}

json read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  std::ifstream in(path);
  if (!in) throw ModelError("missing model manifest " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ModelError("corrupt model manifest " + path.string() + ": " + e.what());
  }
}

void assign_params(std::vector<nn::Param*> params, nn::TensorMap& tensors, const std::filesystem::path& dir) {
  for (nn::Param* p : params) {
    auto it = tensors.find(p->name);
    if (it == tensors.end()) throw ModelError("weights in " + dir.string() + " lack tensor " + p->name);
    if (it->second.shape() != p->value.shape()) {
      throw ModelError("tensor " + p->name + " has shape " + it->second.shape_string() + ", expected " +
                       p->value.shape_string());
    }
    p->value = std::move(it->second);
    p->grad = nn::Tensor(p->value.shape());
    tensors.erase(it);
  }
}

}  // namespace

void StyleModel::save(const std::filesystem::path& dir) const {
  if (!loaded_) throw ModelError("cannot save an unloaded style model");
  std::filesystem::create_directories(dir);
  nn::TensorMap tensors;
  for (const nn::Param* p : net_.parameters()) tensors.emplace(p->name, p->value);
  for (const auto& g : grams_) {
    tensors.emplace("gram.l" + std::to_string(g.level), nn::Tensor({g.channels, g.channels}, g.values));
  }
  nn::save_tensors(dir / "weights.bin", tensors);

  json manifest = {
      {"schema", kSchemaVersion},
      {"kind", "style_model"},
      {"weights_file", "weights.bin"},
      {"levels", grams_.size()},
      {"channel_widths", extractor_.widths},
      {"extractor", {{"name", extractor_.name}, {"seed", extractor_.seed}}},
      {"network", {{"width", net_.config().width}, {"residual_blocks", net_.config().residual_blocks}}},
      {"weights", {{"content", meta_.weights.content}, {"style", meta_.weights.style}}},
      {"seed", meta_.seed},
      {"style_image_hash", style_ref_},
      {"training",
       {{"iterations", meta_.iterations},
        {"learning_rate", meta_.learning_rate},
        {"batch_size", meta_.batch_size}}},
      {"initial_losses", losses_json(meta_.initial)},
      {"final_losses", losses_json(meta_.final_loss)},
  };
  write_text(dir / "manifest.json", manifest.dump(2));
}

StyleModel StyleModel::load(const std::filesystem::path& dir) {
  const json m = read_manifest(dir);
  try {
    if (m.at("schema").get<int>() != kSchemaVersion || m.at("kind").get<std::string>() != "style_model") {
      throw ModelError("unsupported style model manifest in " + dir.string());
    }
    TransformNetConfig cfg{m.at("network").at("width").get<int>(),
                           m.at("network").at("residual_blocks").get<int>()};
    TransformNet net(cfg);
    auto tensors = nn::load_tensors(dir / m.at("weights_file").get<std::string>());
    assign_params(net.parameters(), tensors, dir);

    ExtractorInfo info{m.at("extractor").at("name").get<std::string>(),
                       m.at("channel_widths").get<std::vector<int>>(),
                       m.at("extractor").at("seed").get<std::uint64_t>()};
    const auto levels = m.at("levels").get<std::size_t>();
    if (levels != info.widths.size()) throw ModelError("manifest level count disagrees with channel widths");
    std::vector<GramMatrix> grams;
    for (std::size_t l = 0; l < levels; ++l) {
      const std::string name = "gram.l" + std::to_string(l + 1);
      auto it = tensors.find(name);
      const int c = info.widths[l];
      if (it == tensors.end() || it->second.shape() != std::vector<int>{c, c}) {
        throw ModelError("weights in " + dir.string() + " lack a valid " + name);
      }
      grams.push_back({static_cast<int>(l) + 1, c, {it->second.values().begin(), it->second.values().end()}});
    }

    StyleTrainingMeta meta;
    meta.iterations = m.at("training").at("iterations").get<long>();
    meta.learning_rate = m.at("training").at("learning_rate").get<double>();
    meta.batch_size = m.at("training").at("batch_size").get<int>();
    meta.seed = m.at("seed").get<std::uint64_t>();
    meta.weights = {m.at("weights").at("content").get<double>(), m.at("weights").at("style").get<double>()};
    meta.initial = losses_from(m.at("initial_losses"));
    meta.final_loss = losses_from(m.at("final_losses"));
    return StyleModel(std::move(net), std::move(grams), m.at("style_image_hash").get<std::string>(),
                      std::move(info), meta);
  } catch (const IoError& e) {
    throw ModelError(std::string("unreadable style model: ") + e.what());
  } catch (const json::exception& e) {
    throw ModelError("corrupt style manifest in " + dir.string() + ": " + e.what());
  } catch (const ShapeError& e) {
    throw ModelError("corrupt style weights in " + dir.string() + ": " + e.what());
  }
}

Frame stylize(const Frame& input, const StyleModel& model) {
  if (!model.loaded()) throw ModelError("stylize called with an unloaded style model");
  return to_frame(model.network().forward(to_tensor(input)));
}

namespace {

LossBreakdown mean_loss(const TransformNet& net, const FeatureNetwork& extractor, std::span<const Frame> content,
                        const std::vector<GramMatrix>& grams, const LossWeights& weights) {
  LossBreakdown sum;
  for (const Frame& f : content) {
    const Frame out = to_frame(net.forward(to_tensor(f)));
    const LossBreakdown l = perceptual_loss(f, out, grams, weights, extractor);
    sum.content += l.content;
    sum.style += l.style;
    sum.total += l.total;
  }
  const double n = static_cast<double>(content.size());
  return {sum.content / n, sum.style / n, sum.total / n};
}

ExtractorInfo describe(const FeatureNetwork& extractor) {
  ExtractorInfo info{extractor.name(), extractor.channel_widths(), 0};
  if (const auto* conv = dynamic_cast<const ConvFeatureExtractor*>(&extractor)) info.seed = conv->config().seed;
  return info;
}

}  // namespace

StyleModel train_style(const Frame& style, std::span<const Frame> content, const StyleHyperparams& params,
                       const FeatureNetwork& extractor) {
  if (content.empty()) throw ValidationError("style training needs at least one content frame");
  if (params.iterations < 0 || params.batch_size < 1 || !(params.learning_rate > 0.0)) {
    throw ValidationError("invalid style training hyperparameters");
  }

  std::vector<GramMatrix> grams;
  for (const FeatureMap& level : extractor.extract(style)) grams.push_back(gram(level));

  TransformNet net(params.network);
  net.init(params.seed);
  nn::Adam adam(net.parameters(), {.learning_rate = params.learning_rate});
  std::mt19937_64 rng(params.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_int_distribution<std::size_t> pick(0, content.size() - 1);

  StyleTrainingMeta meta;
  meta.iterations = params.iterations;
  meta.seed = params.seed;
  meta.weights = params.weights;
  meta.learning_rate = params.learning_rate;
  meta.batch_size = params.batch_size;
  meta.initial = mean_loss(net, extractor, content, grams, params.weights);
  spdlog::info("train-style: initial loss {:.6g} (content {:.6g}, style {:.6g})", meta.initial.total,
               meta.initial.content, meta.initial.style);

  const double scale = 1.0 / params.batch_size;
  for (long it = 0; it < params.iterations; ++it) {
    adam.zero_grad();
    double batch_total = 0.0;
    for (int b = 0; b < params.batch_size; ++b) {
      const LossBreakdown l =
          accumulate_style_gradients(net, extractor, content[pick(rng)], grams, params.weights, scale);
      batch_total += l.total * scale;
    }
    if (!std::isfinite(batch_total)) throw DivergenceError("style training loss is not finite", it);
    adam.step();
    if ((it + 1) % 25 == 0) spdlog::debug("train-style: iteration {} batch loss {:.6g}", it + 1, batch_total);
  }

  meta.final_loss = mean_loss(net, extractor, content, grams, params.weights);
  if (!std::isfinite(meta.final_loss.total)) {
    throw DivergenceError("style training loss is not finite", params.iterations);
  }
  spdlog::info("train-style: final loss {:.6g} (content {:.6g}, style {:.6g})", meta.final_loss.total,
               meta.final_loss.content, meta.final_loss.style);
  return StyleModel(std::move(net), std::move(grams), content_hash(style), describe(extractor), meta);
}

StyleModel train_style(const Frame& style, std::span<const Frame> content, const StyleHyperparams& params) {
  return train_style(style, content, params, ConvFeatureExtractor{});
}

}  // namespace cbs

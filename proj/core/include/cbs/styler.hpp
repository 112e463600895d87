#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cbs/features.hpp"
#include "cbs/frame.hpp"
#include "cbs/nn/layers.hpp"

namespace cbs {

struct LossWeights {
  double content = 1.0;
  double style = 10.0;
};

struct LossBreakdown {
  double content = 0.0;
  double style = 0.0;
  double total = 0.0;
};

/// Index into a pyramid of the level used by the content term ("level 2").
inline constexpr std::size_t kContentLevel = 1;

/// content_loss on level-2 features of (out, input) plus style_loss over all
/// levels of out, combined with `weights`.
LossBreakdown perceptual_loss(const Frame& input, const Frame& output,
                              const std::vector<GramMatrix>& style_grams, const LossWeights& weights,
                              const FeatureNetwork& extractor);

struct TransformNetConfig {
  int width = 16;
  int residual_blocks = 2;
};

/// Feed-forward image transform: conv, stride-2 conv, residual blocks,
/// nearest upsample back to the input extent, conv to RGB, global input skip,
/// clamp to [0,1].
class TransformNet {
 public:
  struct Trace {
    nn::Tensor input;
    nn::Tensor stem_pre;
    nn::Tensor stem;
    nn::Tensor down_pre;
    std::vector<nn::Tensor> block_in;
    std::vector<nn::Tensor> block_mid_pre;
    nn::Tensor trunk;
    nn::Tensor upsampled;
    nn::Tensor out_pre;  // input + residual, before the clamp
  };

  TransformNet() = default;
  explicit TransformNet(TransformNetConfig config);

  void init(std::uint64_t seed);

  nn::Tensor forward(const nn::Tensor& x, Trace* trace = nullptr) const;
  /// Accumulates parameter gradients for dLoss/d(clamped output).
  void backward(const Trace& trace, const nn::Tensor& grad_output);

  std::vector<nn::Param*> parameters();
  std::vector<const nn::Param*> parameters() const;
  const TransformNetConfig& config() const noexcept { return config_; }

 private:
  TransformNetConfig config_;
  nn::Conv2d stem_;
  nn::Conv2d down_;
  std::vector<nn::Conv2d> block_a_;
  std::vector<nn::Conv2d> block_b_;
  nn::Conv2d out_;
};

/// Forward the network, evaluate the perceptual loss against `style_grams`,
/// and accumulate `scale` * dLoss/dParams into the network. Returns the loss.
LossBreakdown accumulate_style_gradients(TransformNet& net, const FeatureNetwork& extractor,
                                         const Frame& input, const std::vector<GramMatrix>& style_grams,
                                         const LossWeights& weights, double scale);

struct StyleHyperparams {
  long iterations = 200;
  double learning_rate = 3e-3;
  int batch_size = 4;
  LossWeights weights{};
  std::uint64_t seed = 0;
  TransformNetConfig network{};
};

/// Identifies the feature network a model's Grams were computed with.
struct ExtractorInfo {
  std::string name;
  std::vector<int> widths;
  std::uint64_t seed = 0;
};

struct StyleTrainingMeta {
  long iterations = 0;
  std::uint64_t seed = 0;
  LossWeights weights{};
  double learning_rate = 0.0;
  int batch_size = 0;
  LossBreakdown initial{};
  LossBreakdown final_loss{};
};

/// A trained styler: transform network, style Grams, and provenance.
class StyleModel {
 public:
  static constexpr int kSchemaVersion = 1;

  StyleModel() = default;
  StyleModel(TransformNet network, std::vector<GramMatrix> style_grams, std::string style_image_ref,
             ExtractorInfo extractor, StyleTrainingMeta meta);

  bool loaded() const noexcept { return loaded_; }
  const TransformNet& network() const noexcept { return net_; }
  const std::vector<GramMatrix>& style_grams() const noexcept { return grams_; }
  const std::string& style_image_ref() const noexcept { return style_ref_; }
  const ExtractorInfo& extractor() const noexcept { return extractor_; }
  const StyleTrainingMeta& meta() const noexcept { return meta_; }

  /// Writes `weights.bin` and `manifest.json` into `dir` (created if missing).
  void save(const std::filesystem::path& dir) const;
  static StyleModel load(const std::filesystem::path& dir);

 private:
  bool loaded_ = false;
  TransformNet net_;
  std::vector<GramMatrix> grams_;
  std::string style_ref_;
  ExtractorInfo extractor_;
  StyleTrainingMeta meta_;
};

/// Single forward pass; output has the input's extent. Throws ModelError
/// for an unloaded model.
Frame stylize(const Frame& input, const StyleModel& model);

/// Trains a transform network for one style image. Deterministic for a fixed
/// seed. Throws DivergenceError on a non-finite loss.
StyleModel train_style(const Frame& style, std::span<const Frame> content, const StyleHyperparams& params,
                       const FeatureNetwork& extractor);
StyleModel train_style(const Frame& style, std::span<const Frame> content, const StyleHyperparams& params);

}  // namespace cbs

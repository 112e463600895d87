#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "cbs/frame.hpp"
#include "cbs/nn/layers.hpp"
#include "cbs/nn/tensor.hpp"

namespace cbs {

/// Frame <-> C x H x W tensor conversion.
nn::Tensor to_tensor(const Frame& frame);
/// Clamps into [0,1] before building the frame.
Frame to_frame(const nn::Tensor& tensor);

/// One level l of a feature pyramid: C_l x H_l x W_l.
struct FeatureMap {
  int level = 1;
  nn::Tensor values;

  int channels() const noexcept { return values.channels(); }
  int height() const noexcept { return values.height(); }
  int width() const noexcept { return values.width(); }
};

/// Levels ordered 1..L with non-increasing spatial size.
using FeaturePyramid = std::vector<FeatureMap>;

/// Channel co-activation matrix of one feature level, C_l x C_l.
struct GramMatrix {
  int level = 1;
  int channels = 0;
  std::vector<double> values;

  double at(int i, int j) const noexcept { return values[static_cast<std::size_t>(i) * channels + j]; }
  friend bool operator==(const GramMatrix&, const GramMatrix&) = default;
};

/// The result of one forward pass through a feature network; keeps whatever
/// activations are needed to backpropagate into the input image.
class FeatureForward {
 public:
  virtual ~FeatureForward() = default;
  virtual const FeaturePyramid& pyramid() const = 0;
  /// `level_grads[l]` is dLoss/dF_l; an empty tensor means zero.
  virtual nn::Tensor backward(const std::vector<nn::Tensor>& level_grads) const = 0;
};

/// Pluggable fixed feature network. Parameters never change after construction.
class FeatureNetwork {
 public:
  virtual ~FeatureNetwork() = default;
  virtual std::string name() const = 0;
  virtual int levels() const = 0;
  virtual std::vector<int> channel_widths() const = 0;
  /// Smallest accepted input height/width.
  virtual int min_extent() const = 0;
  virtual std::unique_ptr<FeatureForward> forward(const nn::Tensor& x) const = 0;

  FeaturePyramid extract(const Frame& frame) const;
};

struct ExtractorConfig {
  std::uint64_t seed = 0x5eedf00dULL;
  std::vector<int> widths{8, 16, 32, 64};
};

/// Seed-initialized, bias-free conv extractor: level 1 at stride 1, each
/// following level a stride-2 3x3 conv, ReLU after every conv.
class ConvFeatureExtractor final : public FeatureNetwork {
 public:
  explicit ConvFeatureExtractor(ExtractorConfig config = {});

  std::string name() const override { return "conv-random-v1"; }
  int levels() const override { return static_cast<int>(layers_.size()); }
  std::vector<int> channel_widths() const override { return config_.widths; }
  int min_extent() const override { return 1 << (levels() - 1); }
  std::unique_ptr<FeatureForward> forward(const nn::Tensor& x) const override;

  const ExtractorConfig& config() const noexcept { return config_; }

 private:
  class Pass;
  ExtractorConfig config_;
  std::vector<nn::Conv2d> layers_;
};

GramMatrix gram(const FeatureMap& features);

/// (1 / (C H W)) * ||gen - in||^2.
double content_loss(const FeatureMap& generated, const FeatureMap& input);
/// dLoss/d(generated) of content_loss.
nn::Tensor content_loss_grad(const FeatureMap& generated, const FeatureMap& input);

/// sum_l (1 / C_l) * ||G(gen, l) - G_style_l||_F^2.
double style_loss(const FeaturePyramid& generated, const std::vector<GramMatrix>& style_grams);
/// Per-level dLoss/dF_l of style_loss.
std::vector<nn::Tensor> style_loss_grad(const FeaturePyramid& generated,
                                        const std::vector<GramMatrix>& style_grams);

}  // namespace cbs

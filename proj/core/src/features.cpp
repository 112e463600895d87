#include "cbs/features.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "cbs/error.hpp"

namespace cbs {

nn::Tensor to_tensor(const Frame& frame) {
  nn::Tensor t = nn::Tensor::chw(Frame::kChannels, frame.height(), frame.width());
  for (int y = 0; y < frame.height(); ++y)
    for (int x = 0; x < frame.width(); ++x)
      for (int c = 0; c < Frame::kChannels; ++c) t.at(c, y, x) = frame.at(y, x, c);
  return t;
}

Frame to_frame(const nn::Tensor& tensor) {
  if (tensor.rank() != 3 || tensor.channels() != Frame::kChannels) {
    throw ShapeError("cannot build a frame from tensor " + tensor.shape_string());
  }
  std::vector<double> px(tensor.size());
  std::size_t i = 0;
  for (int y = 0; y < tensor.height(); ++y)
    for (int x = 0; x < tensor.width(); ++x)
      for (int c = 0; c < Frame::kChannels; ++c) {
        const double v = tensor.at(c, y, x);
        if (!std::isfinite(v)) throw ModelError("network produced a non-finite pixel");
        px[i++] = std::clamp(v, 0.0, 1.0);
      }
  return Frame(tensor.height(), tensor.width(), std::move(px));
}

FeaturePyramid FeatureNetwork::extract(const Frame& frame) const {
  return forward(to_tensor(frame))->pyramid();
}

class ConvFeatureExtractor::Pass final : public FeatureForward {
 public:
  Pass(const ConvFeatureExtractor& net, const nn::Tensor& x) : net_(net) {
    const nn::Tensor* in = &x;
    inputs_.reserve(net.layers_.size());
    preact_.reserve(net.layers_.size());
    for (std::size_t l = 0; l < net.layers_.size(); ++l) {
      inputs_.push_back(*in);
      preact_.push_back(net.layers_[l].forward(*in));
      pyramid_.push_back({static_cast<int>(l) + 1, nn::relu(preact_.back())});
      in = &pyramid_.back().values;
    }
  }

  const FeaturePyramid& pyramid() const override { return pyramid_; }

  nn::Tensor backward(const std::vector<nn::Tensor>& level_grads) const override {
    if (level_grads.size() != pyramid_.size()) {
      throw ShapeError("feature backward expects " + std::to_string(pyramid_.size()) + " level gradients");
    }
    nn::Tensor carry;
    for (std::size_t l = pyramid_.size(); l-- > 0;) {
      nn::Tensor g(pyramid_[l].values.shape());
      if (level_grads[l].size() != 0) g += level_grads[l];
      if (carry.size() != 0) g += carry;
      const nn::Tensor gpre = nn::relu_backward(preact_[l], g);
      const auto& layer = net_.layers_[l];
      nn::Tensor gx(inputs_[l].shape());
      nn::conv2d_backward(inputs_[l], layer.weight().value, layer.spec(), gpre, &gx, nullptr, nullptr);
      carry = std::move(gx);
    }
    return carry;
  }

 private:
  const ConvFeatureExtractor& net_;
  std::vector<nn::Tensor> inputs_;
  std::vector<nn::Tensor> preact_;
  FeaturePyramid pyramid_;
};

ConvFeatureExtractor::ConvFeatureExtractor(ExtractorConfig config) : config_(std::move(config)) {
  if (config_.widths.empty()) throw ValidationError("feature extractor needs at least one level");
  std::mt19937_64 rng(config_.seed);
  int in = Frame::kChannels;
  for (std::size_t l = 0; l < config_.widths.size(); ++l) {
    nn::ConvSpec spec{.in_channels = in,
                      .out_channels = config_.widths[l],
                      .kernel = 3,
                      .stride = l == 0 ? 1 : 2,
                      .padding = 1,
                      .bias = false};
    layers_.emplace_back("extractor.l" + std::to_string(l + 1), spec);
    layers_.back().init(rng);
    in = config_.widths[l];
  }
}

std::unique_ptr<FeatureForward> ConvFeatureExtractor::forward(const nn::Tensor& x) const {
  if (x.rank() != 3 || x.channels() != Frame::kChannels) {
    throw ShapeError("feature extractor expects a 3-channel image, got " + x.shape_string());
  }
  if (x.height() < min_extent() || x.width() < min_extent()) {
    throw ValidationError("input " + std::to_string(x.height()) + "x" + std::to_string(x.width()) +
                          " is smaller than the extractor footprint " + std::to_string(min_extent()));
  }
  return std::make_unique<Pass>(*this, x);
}

GramMatrix gram(const FeatureMap& features) {
  const nn::Tensor& f = features.values;
  if (f.rank() != 3 || f.size() == 0) throw ShapeError("gram expects a non-empty C x H x W map");
  const int C = f.channels();
  const std::size_t n = static_cast<std::size_t>(f.height()) * f.width();
  GramMatrix g{features.level, C, std::vector<double>(static_cast<std::size_t>(C) * C)};
  for (int i = 0; i < C; ++i) {
    const double* fi = f.data() + i * n;
    for (int j = i; j < C; ++j) {
      const double* fj = f.data() + j * n;
      double sum = 0.0;
      for (std::size_t p = 0; p < n; ++p) sum += fi[p] * fj[p];
      const double v = sum / static_cast<double>(n);
      g.values[static_cast<std::size_t>(i) * C + j] = v;
      g.values[static_cast<std::size_t>(j) * C + i] = v;
    }
  }
  return g;
}

namespace {

void require_same_shape(const FeatureMap& a, const FeatureMap& b) {
  if (a.values.shape() != b.values.shape()) {
    throw ShapeError("feature maps differ: " + a.values.shape_string() + " vs " + b.values.shape_string());
  }
}

void require_aligned(const FeaturePyramid& generated, const std::vector<GramMatrix>& style_grams) {
  if (generated.size() != style_grams.size()) {
    throw ShapeError("style loss: pyramid has " + std::to_string(generated.size()) + " levels, " +
                     std::to_string(style_grams.size()) + " style grams given");
  }
  for (std::size_t l = 0; l < generated.size(); ++l) {
    if (generated[l].channels() != style_grams[l].channels) {
      throw ShapeError("style loss: channel mismatch at level " + std::to_string(l + 1));
    }
  }
}

}  // namespace

double content_loss(const FeatureMap& generated, const FeatureMap& input) {
  require_same_shape(generated, input);
  double sum = 0.0;
  for (std::size_t i = 0; i < generated.values.size(); ++i) {
    const double d = generated.values[i] - input.values[i];
    sum += d * d;
  }
  return sum / static_cast<double>(generated.values.size());
}

nn::Tensor content_loss_grad(const FeatureMap& generated, const FeatureMap& input) {
  require_same_shape(generated, input);
  nn::Tensor g(generated.values.shape());
  const double scale = 2.0 / static_cast<double>(generated.values.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = scale * (generated.values[i] - input.values[i]);
  return g;
}

double style_loss(const FeaturePyramid& generated, const std::vector<GramMatrix>& style_grams) {
  require_aligned(generated, style_grams);
  double total = 0.0;
  for (std::size_t l = 0; l < generated.size(); ++l) {
    const GramMatrix g = gram(generated[l]);
    double sum = 0.0;
    for (std::size_t i = 0; i < g.values.size(); ++i) {
      const double d = g.values[i] - style_grams[l].values[i];
      sum += d * d;
    }
    total += sum / g.channels;
  }
  return total;
}

std::vector<nn::Tensor> style_loss_grad(const FeaturePyramid& generated,
                                        const std::vector<GramMatrix>& style_grams) {
  require_aligned(generated, style_grams);
  std::vector<nn::Tensor> grads;
  grads.reserve(generated.size());
  for (std::size_t l = 0; l < generated.size(); ++l) {
    const nn::Tensor& f = generated[l].values;
    const int C = f.channels();
    const std::size_t n = static_cast<std::size_t>(f.height()) * f.width();
    const GramMatrix g = gram(generated[l]);
    // d/dF (1/C)||G - S||^2 = 4 / (C n) * (G - S) F, using the symmetry of G - S.
    const double scale = 4.0 / (static_cast<double>(C) * static_cast<double>(n));
    nn::Tensor out(f.shape());
    for (int i = 0; i < C; ++i) {
      double* oi = out.data() + i * n;
      for (int j = 0; j < C; ++j) {
        const double dij = scale * (g.at(i, j) - style_grams[l].at(i, j));
        if (dij == 0.0) continue;
        const double* fj = f.data() + j * n;
        for (std::size_t p = 0; p < n; ++p) oi[p] += dij * fj[p];
      }
    }
    grads.push_back(std::move(out));
  }
  return grads;
}

}  // namespace cbs

#pragma once

#include <random>

#include "cbs/nn/tensor.hpp"

namespace cbs::nn {

struct ConvSpec {
  int in_channels = 1;
  int out_channels = 1;
  int kernel = 3;
  int stride = 1;
  int padding = 1;
  int dilation = 1;
  int groups = 1;
  bool bias = true;

  int out_extent(int in) const noexcept {
    return (in + 2 * padding - dilation * (kernel - 1) - 1) / stride + 1;
  }
};

/// Raw convolution primitives. The backward pass accumulates into the
/// provided gradient buffers; any of them may be null.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor* bias, const ConvSpec& spec);
void conv2d_backward(const Tensor& x, const Tensor& weight, const ConvSpec& spec, const Tensor& grad_out,
                     Tensor* grad_x, Tensor* grad_weight, Tensor* grad_bias);

Tensor relu(const Tensor& x);
/// Gradient through ReLU given the forward *input*.
Tensor relu_backward(const Tensor& x, const Tensor& grad_out);

/// Nearest-neighbour resampling to an explicit extent.
Tensor resize_nearest(const Tensor& x, int height, int width);
Tensor resize_nearest_backward(const Tensor& grad_out, int in_height, int in_width);

/// Bilinear resampling with half-pixel centers (align_corners = false).
Tensor resize_bilinear(const Tensor& x, int height, int width);
Tensor resize_bilinear_backward(const Tensor& grad_out, int in_height, int in_width);

Tensor concat_channels(const Tensor& a, const Tensor& b);
/// Splits a channel-concatenated gradient back into its two halves.
std::pair<Tensor, Tensor> split_channels(const Tensor& x, int first_channels);

/// Softmax across the channel axis at every pixel.
Tensor softmax_channels(const Tensor& logits);

/// A convolution layer owning its parameters.
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, ConvSpec spec);

  /// He-normal initialization scaled by `gain`; biases start at zero.
  void init(std::mt19937_64& rng, double gain = 1.0);

  Tensor forward(const Tensor& x) const;
  /// Accumulates parameter gradients and returns the input gradient.
  Tensor backward(const Tensor& x, const Tensor& grad_out);

  const ConvSpec& spec() const noexcept { return spec_; }
  Param& weight() noexcept { return weight_; }
  Param& bias() noexcept { return bias_; }
  const Param& weight() const noexcept { return weight_; }
  const Param& bias() const noexcept { return bias_; }
  void collect(std::vector<Param*>& out);

 private:
  ConvSpec spec_;
  Param weight_;
  Param bias_;
};

}  // namespace cbs::nn

#include "cbs/nn/layers.hpp"

#include <algorithm>
#include <cmath>

#include "cbs/error.hpp"

namespace cbs::nn {
namespace {

int ceil_div(int a, int b) { return a >= 0 ? (a + b - 1) / b : -((-a) / b); }
int floor_div(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

// Output index range [lo, hi) whose input tap offset `shift` stays inside [0, in).
struct Range {
  int lo;
  int hi;
};

Range valid_outputs(int in, int out, int stride, int shift) {
  const int lo = std::max(0, ceil_div(-shift, stride));
  const int hi = std::min(out, floor_div(in - 1 - shift, stride) + 1);
  return {lo, std::max(lo, hi)};
}

void check_conv_input(const Tensor& x, const Tensor& weight, const ConvSpec& spec) {
  if (x.rank() != 3 || x.channels() != spec.in_channels) {
    throw ShapeError("conv2d expects " + std::to_string(spec.in_channels) + " input channels, got " +
                     x.shape_string());
  }
  if (spec.in_channels % spec.groups != 0 || spec.out_channels % spec.groups != 0) {
    throw ShapeError("conv2d channel counts not divisible by groups");
  }
  const std::vector<int> expected{spec.out_channels, spec.in_channels / spec.groups, spec.kernel,
                                  spec.kernel};
  if (weight.shape() != expected) {
    throw ShapeError("conv2d weight shape " + weight.shape_string() + " does not match its conv spec");
  }
  if (spec.out_extent(x.height()) < 1 || spec.out_extent(x.width()) < 1) {
    throw ShapeError("conv2d input " + x.shape_string() + " too small for kernel");
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor* bias, const ConvSpec& spec) {
  check_conv_input(x, weight, spec);
  const int H = x.height(), W = x.width();
  const int Ho = spec.out_extent(H), Wo = spec.out_extent(W);
  const int in_per_group = spec.in_channels / spec.groups;
  const int out_per_group = spec.out_channels / spec.groups;
  const int K = spec.kernel, s = spec.stride, d = spec.dilation, p = spec.padding;

  Tensor y = Tensor::chw(spec.out_channels, Ho, Wo);
  for (int oc = 0; oc < spec.out_channels; ++oc) {
    double* yplane = &y.at(oc, 0, 0);
    if (bias) std::fill(yplane, yplane + static_cast<std::size_t>(Ho) * Wo, (*bias)[oc]);
    const int group = oc / out_per_group;
    for (int icg = 0; icg < in_per_group; ++icg) {
      const int ic = group * in_per_group + icg;
      const double* wk = weight.data() + (static_cast<std::size_t>(oc) * in_per_group + icg) * K * K;
      for (int ky = 0; ky < K; ++ky) {
        const Range ry = valid_outputs(H, Ho, s, ky * d - p);
        for (int kx = 0; kx < K; ++kx) {
          const double wv = wk[ky * K + kx];
          const int shift_x = kx * d - p;
          const Range rx = valid_outputs(W, Wo, s, shift_x);
          for (int oy = ry.lo; oy < ry.hi; ++oy) {
            const double* xrow = &x.at(ic, oy * s + ky * d - p, 0);
            double* yrow = yplane + static_cast<std::size_t>(oy) * Wo;
            if (s == 1) {
              for (int ox = rx.lo; ox < rx.hi; ++ox) yrow[ox] += wv * xrow[ox + shift_x];
            } else {
              for (int ox = rx.lo; ox < rx.hi; ++ox) yrow[ox] += wv * xrow[ox * s + shift_x];
            }
          }
        }
      }
    }
  }
  return y;
}

void conv2d_backward(const Tensor& x, const Tensor& weight, const ConvSpec& spec, const Tensor& grad_out,
                     Tensor* grad_x, Tensor* grad_weight, Tensor* grad_bias) {
  check_conv_input(x, weight, spec);
  const int H = x.height(), W = x.width();
  const int Ho = spec.out_extent(H), Wo = spec.out_extent(W);
  if (grad_out.shape() != std::vector<int>{spec.out_channels, Ho, Wo}) {
    throw ShapeError("conv2d gradient shape " + grad_out.shape_string() + " does not match output");
  }
  const int in_per_group = spec.in_channels / spec.groups;
  const int out_per_group = spec.out_channels / spec.groups;
  const int K = spec.kernel, s = spec.stride, d = spec.dilation, p = spec.padding;

  for (int oc = 0; oc < spec.out_channels; ++oc) {
    const double* gplane = &grad_out.at(oc, 0, 0);
    if (grad_bias) {
      double sum = 0.0;
      for (std::size_t i = 0; i < static_cast<std::size_t>(Ho) * Wo; ++i) sum += gplane[i];
      (*grad_bias)[oc] += sum;
    }
    const int group = oc / out_per_group;
    for (int icg = 0; icg < in_per_group; ++icg) {
      const int ic = group * in_per_group + icg;
      const std::size_t wbase = (static_cast<std::size_t>(oc) * in_per_group + icg) * K * K;
      for (int ky = 0; ky < K; ++ky) {
        const Range ry = valid_outputs(H, Ho, s, ky * d - p);
        for (int kx = 0; kx < K; ++kx) {
          const double wv = weight[wbase + ky * K + kx];
          const int shift_x = kx * d - p;
          const Range rx = valid_outputs(W, Wo, s, shift_x);
          double wgrad = 0.0;
          for (int oy = ry.lo; oy < ry.hi; ++oy) {
            const int iy = oy * s + ky * d - p;
            const double* grow = gplane + static_cast<std::size_t>(oy) * Wo;
            const double* xrow = &x.at(ic, iy, 0);
            if (grad_x) {
              double* gxrow = &grad_x->at(ic, iy, 0);
              for (int ox = rx.lo; ox < rx.hi; ++ox) gxrow[ox * s + shift_x] += wv * grow[ox];
            }
            if (grad_weight) {
              for (int ox = rx.lo; ox < rx.hi; ++ox) wgrad += grow[ox] * xrow[ox * s + shift_x];
            }
          }
          if (grad_weight) (*grad_weight)[wbase + ky * K + kx] += wgrad;
        }
      }
    }
  }
}

Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& grad_out) {
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(x[i] > 0.0)) g[i] = 0.0;
  }
  return g;
}

namespace {

int nearest_source(int dst, int in, int out) {
  return std::min(static_cast<int>(static_cast<long>(dst) * in / out), in - 1);
}

struct Tap {
  int i0;
  int i1;
  double w1;  // weight of i1; i0 gets 1 - w1
};

Tap bilinear_tap(int dst, int in, int out) {
  const double scale = static_cast<double>(in) / out;
  const double src = std::max(0.0, (dst + 0.5) * scale - 0.5);
  const int i0 = std::min(static_cast<int>(src), in - 1);
  const int i1 = std::min(i0 + 1, in - 1);
  return {i0, i1, src - i0};
}

}  // namespace

Tensor resize_nearest(const Tensor& x, int height, int width) {
  Tensor y = Tensor::chw(x.channels(), height, width);
  for (int c = 0; c < x.channels(); ++c)
    for (int oy = 0; oy < height; ++oy) {
      const int iy = nearest_source(oy, x.height(), height);
      for (int ox = 0; ox < width; ++ox) y.at(c, oy, ox) = x.at(c, iy, nearest_source(ox, x.width(), width));
    }
  return y;
}

Tensor resize_nearest_backward(const Tensor& grad_out, int in_height, int in_width) {
  Tensor g = Tensor::chw(grad_out.channels(), in_height, in_width);
  const int height = grad_out.height(), width = grad_out.width();
  for (int c = 0; c < grad_out.channels(); ++c)
    for (int oy = 0; oy < height; ++oy) {
      const int iy = nearest_source(oy, in_height, height);
      for (int ox = 0; ox < width; ++ox)
        g.at(c, iy, nearest_source(ox, in_width, width)) += grad_out.at(c, oy, ox);
    }
  return g;
}

Tensor resize_bilinear(const Tensor& x, int height, int width) {
  Tensor y = Tensor::chw(x.channels(), height, width);
  std::vector<Tap> tx(width);
  for (int ox = 0; ox < width; ++ox) tx[ox] = bilinear_tap(ox, x.width(), width);
  for (int oy = 0; oy < height; ++oy) {
    const Tap ty = bilinear_tap(oy, x.height(), height);
    for (int c = 0; c < x.channels(); ++c) {
      const double* r0 = &x.at(c, ty.i0, 0);
      const double* r1 = &x.at(c, ty.i1, 0);
      double* out = &y.at(c, oy, 0);
      for (int ox = 0; ox < width; ++ox) {
        const Tap& t = tx[ox];
        const double top = r0[t.i0] * (1 - t.w1) + r0[t.i1] * t.w1;
        const double bot = r1[t.i0] * (1 - t.w1) + r1[t.i1] * t.w1;
        out[ox] = top * (1 - ty.w1) + bot * ty.w1;
      }
    }
  }
  return y;
}

Tensor resize_bilinear_backward(const Tensor& grad_out, int in_height, int in_width) {
  Tensor g = Tensor::chw(grad_out.channels(), in_height, in_width);
  const int height = grad_out.height(), width = grad_out.width();
  std::vector<Tap> tx(width);
  for (int ox = 0; ox < width; ++ox) tx[ox] = bilinear_tap(ox, in_width, width);
  for (int oy = 0; oy < height; ++oy) {
    const Tap ty = bilinear_tap(oy, in_height, height);
    for (int c = 0; c < grad_out.channels(); ++c) {
      double* r0 = &g.at(c, ty.i0, 0);
      double* r1 = &g.at(c, ty.i1, 0);
      const double* go = &grad_out.at(c, oy, 0);
      for (int ox = 0; ox < width; ++ox) {
        const Tap& t = tx[ox];
        const double top = go[ox] * (1 - ty.w1);
        const double bot = go[ox] * ty.w1;
        r0[t.i0] += top * (1 - t.w1);
        r0[t.i1] += top * t.w1;
        r1[t.i0] += bot * (1 - t.w1);
        r1[t.i1] += bot * t.w1;
      }
    }
  }
  return g;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw ShapeError("concat: " + a.shape_string() + " vs " + b.shape_string());
  }
  Tensor y = Tensor::chw(a.channels() + b.channels(), a.height(), a.width());
  std::copy(a.values().begin(), a.values().end(), y.values().begin());
  std::copy(b.values().begin(), b.values().end(), y.values().begin() + static_cast<std::ptrdiff_t>(a.size()));
  return y;
}

std::pair<Tensor, Tensor> split_channels(const Tensor& x, int first_channels) {
  Tensor a = Tensor::chw(first_channels, x.height(), x.width());
  Tensor b = Tensor::chw(x.channels() - first_channels, x.height(), x.width());
  std::copy(x.values().begin(), x.values().begin() + static_cast<std::ptrdiff_t>(a.size()), a.values().begin());
  std::copy(x.values().begin() + static_cast<std::ptrdiff_t>(a.size()), x.values().end(), b.values().begin());
  return {std::move(a), std::move(b)};
}

Tensor softmax_channels(const Tensor& logits) {
  const int C = logits.channels();
  const std::size_t plane = static_cast<std::size_t>(logits.height()) * logits.width();
  Tensor y(logits.shape());
  for (std::size_t i = 0; i < plane; ++i) {
    double peak = logits[i];
    for (int c = 1; c < C; ++c) peak = std::max(peak, logits[c * plane + i]);
    double sum = 0.0;
    for (int c = 0; c < C; ++c) {
      const double e = std::exp(logits[c * plane + i] - peak);
      y[c * plane + i] = e;
      sum += e;
    }
    for (int c = 0; c < C; ++c) y[c * plane + i] /= sum;
  }
  return y;
}

Conv2d::Conv2d(const std::string& name, ConvSpec spec)
    : spec_(spec),
      weight_(name + ".weight", {spec.out_channels, spec.in_channels / spec.groups, spec.kernel, spec.kernel}) {
  if (spec.bias) bias_ = Param(name + ".bias", {spec.out_channels});
}

void Conv2d::init(std::mt19937_64& rng, double gain) {
  const int fan_in = spec_.in_channels / spec_.groups * spec_.kernel * spec_.kernel;
  std::normal_distribution<double> dist(0.0, gain * std::sqrt(2.0 / fan_in));
  for (double& w : weight_.value.values()) w = dist(rng);
  bias_.value.fill(0.0);
}

Tensor Conv2d::forward(const Tensor& x) const {
  return conv2d(x, weight_.value, spec_.bias ? &bias_.value : nullptr, spec_);
}

Tensor Conv2d::backward(const Tensor& x, const Tensor& grad_out) {
  Tensor gx(x.shape());
  conv2d_backward(x, weight_.value, spec_, grad_out, &gx, &weight_.grad, spec_.bias ? &bias_.grad : nullptr);
  return gx;
}

void Conv2d::collect(std::vector<Param*>& out) {
  out.push_back(&weight_);
  if (spec_.bias) out.push_back(&bias_);
}

}  // namespace cbs::nn

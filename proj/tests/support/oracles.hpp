#pragma once

// Independent reference implementations used by the unit and acceptance tests.
// Written as plain loops over the definitions; they share no code with cbs_core
// beyond the data types.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include "cbs/features.hpp"
#include "cbs/frame.hpp"
#include "cbs/segmenter.hpp"

namespace cbs::testing {

inline Frame random_frame(std::mt19937_64& rng, int h, int w, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> px(static_cast<std::size_t>(h) * w * 3);
  for (auto& v : px) v = u(rng);
  return Frame(h, w, std::move(px));
}

inline ClassMask random_mask(std::mt19937_64& rng, int class_id, int h, int w, double density) {
  std::bernoulli_distribution on(density);
  std::vector<std::uint8_t> m(static_cast<std::size_t>(h) * w);
  for (auto& v : m) v = on(rng) ? 1 : 0;
  return ClassMask(class_id, h, w, std::move(m));
}

inline nn::Tensor random_tensor(std::mt19937_64& rng, std::vector<int> shape, double lo = -1.0, double hi = 1.0) {
  nn::Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

// U(h,w,c) = R(h,w) T(h,w,c) + (1 - R(h,w)) I(h,w,c)
inline std::vector<double> composite_oracle(const Frame& input, const Frame& styled, const ClassMask& mask) {
  std::vector<double> out;
  for (int y = 0; y < input.height(); ++y)
    for (int x = 0; x < input.width(); ++x)
      for (int c = 0; c < 3; ++c) {
        const double r = mask.at(y, x);
        out.push_back(r * styled.at(y, x, c) + (1.0 - r) * input.at(y, x, c));
      }
  return out;
}

// G_ij = 1/(HW) sum_{h,w} F(h,w,i) F(h,w,j), computed independently for every (i,j).
inline std::vector<double> gram_oracle(const nn::Tensor& f) {
  const int C = f.channels(), H = f.height(), W = f.width();
  std::vector<double> g(static_cast<std::size_t>(C) * C, 0.0);
  for (int i = 0; i < C; ++i)
    for (int j = 0; j < C; ++j) {
      double s = 0.0;
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) s += f.at(i, y, x) * f.at(j, y, x);
      g[static_cast<std::size_t>(i) * C + j] = s / (H * W);
    }
  return g;
}

inline double content_loss_oracle(const nn::Tensor& gen, const nn::Tensor& in) {
  double s = 0.0;
  for (std::size_t i = 0; i < gen.size(); ++i) s += (gen[i] - in[i]) * (gen[i] - in[i]);
  return s / static_cast<double>(gen.size());
}

inline double style_loss_oracle(const std::vector<nn::Tensor>& gen, const std::vector<std::vector<double>>& style) {
  double total = 0.0;
  for (std::size_t l = 0; l < gen.size(); ++l) {
    const auto g = gram_oracle(gen[l]);
    double s = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) s += (g[k] - style[l][k]) * (g[k] - style[l][k]);
    total += s / gen[l].channels();
  }
  return total;
}

// -sum_h sum_w sum_c Y log max(P, 1e-12), summing over every class explicitly.
inline double cross_entropy_oracle(const ProbMap& p, const LabelMap& y) {
  double loss = 0.0;
  for (int h = 0; h < y.height(); ++h)
    for (int w = 0; w < y.width(); ++w)
      for (int c = 0; c < y.num_classes(); ++c) {
        const double yc = (y.label(h, w) == c) ? 1.0 : 0.0;
        loss -= yc * std::log(std::max(p.at(c, h, w), 1e-12));
      }
  return loss;
}

inline ProbMap random_probs(std::mt19937_64& rng, int classes, int h, int w) {
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  std::vector<double> p(static_cast<std::size_t>(classes) * h * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      std::vector<double> e(classes);
      double z = 0.0;
      for (auto& v : e) z += (v = std::exp(u(rng)));
      for (int c = 0; c < classes; ++c) p[(static_cast<std::size_t>(c) * h + y) * w + x] = e[c] / z;
    }
  return ProbMap(classes, h, w, std::move(p));
}

inline LabelMap random_labels(std::mt19937_64& rng, int classes, int h, int w) {
  std::uniform_int_distribution<int> pick(0, classes - 1);
  std::vector<std::uint8_t> l(static_cast<std::size_t>(h) * w);
  for (auto& v : l) v = static_cast<std::uint8_t>(pick(rng));
  return LabelMap(classes, h, w, std::move(l));
}

// Per-class IoU pooled over the whole set, averaged over classes present in the ground truth.
inline double mean_iou_oracle(const std::vector<LabelMap>& pred, const std::vector<LabelMap>& truth) {
  const int C = truth.front().num_classes();
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < C; ++c) {
    long inter = 0, uni = 0, gt = 0;
    for (std::size_t i = 0; i < truth.size(); ++i)
      for (int y = 0; y < truth[i].height(); ++y)
        for (int x = 0; x < truth[i].width(); ++x) {
          const bool a = pred[i].label(y, x) == c, b = truth[i].label(y, x) == c;
          inter += a && b;
          uni += a || b;
          gt += b;
        }
    if (gt == 0) continue;
    sum += static_cast<double>(inter) / static_cast<double>(uni);
    ++present;
  }
  return sum / present;
}

struct GradCheck {
  double relative_error = 0.0;  // ||g - g_fd|| / max(||g||, ||g_fd||)
  double max_abs_diff = 0.0;
  std::size_t checked = 0;
};

// Central differences over every entry of `params`; `loss` re-evaluates the scalar.
inline GradCheck finite_difference_check(std::vector<double*> params, const std::vector<double>& analytic,
                                         const std::function<double()>& loss, double step = 1e-5) {
  GradCheck out;
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double keep = *params[i];
    *params[i] = keep + step;
    const double up = loss();
    *params[i] = keep - step;
    const double down = loss();
    *params[i] = keep;
    const double numeric = (up - down) / (2.0 * step);
    diff2 += (numeric - analytic[i]) * (numeric - analytic[i]);
    a2 += analytic[i] * analytic[i];
    n2 += numeric * numeric;
    out.max_abs_diff = std::max(out.max_abs_diff, std::abs(numeric - analytic[i]));
  }
  const double denom = std::max(std::sqrt(a2), std::sqrt(n2));
  out.relative_error = denom > 0.0 ? std::sqrt(diff2) / denom : 0.0;
  out.checked = params.size();
  return out;
}

inline std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Empty string when both trees hold the same files with the same bytes,
// otherwise the first differing relative path.
inline std::string first_tree_difference(const std::filesystem::path& a, const std::filesystem::path& b) {
  namespace fs = std::filesystem;
  std::vector<fs::path> fa, fb;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) fa.push_back(fs::relative(e.path(), a));
  for (const auto& e : fs::recursive_directory_iterator(b))
    if (e.is_regular_file()) fb.push_back(fs::relative(e.path(), b));
  std::sort(fa.begin(), fa.end());
  std::sort(fb.begin(), fb.end());
  if (fa != fb) return "file lists differ";
  for (const auto& rel : fa)
    if (read_bytes(a / rel) != read_bytes(b / rel)) return rel.string();
  return {};
}

}  // namespace cbs::testing

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cbs/frame.hpp"
#include "cbs/nn/layers.hpp"

namespace cbs {

/// Ground truth as one class index per pixel; the one-hot view is exposed
/// through one_hot(). Exactly one class is hot at every pixel by construction.
class LabelMap {
 public:
  LabelMap() = default;
  LabelMap(int num_classes, int height, int width, std::vector<std::uint8_t> labels);
  /// Builds from an H x W x |C| one-hot buffer; rejects anything not one-hot.
  static LabelMap from_one_hot(int num_classes, int height, int width, std::span<const double> one_hot);

  int num_classes() const noexcept { return num_classes_; }
  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  int label(int y, int x) const noexcept { return labels_[static_cast<std::size_t>(y) * width_ + x]; }
  double one_hot(int y, int x, int c) const noexcept { return label(y, x) == c ? 1.0 : 0.0; }
  std::span<const std::uint8_t> labels() const noexcept { return labels_; }
  /// H x W x |C| interleaved one-hot buffer.
  std::vector<double> to_one_hot() const;

  friend bool operator==(const LabelMap&, const LabelMap&) = default;

 private:
  int num_classes_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> labels_;
};

/// Per-pixel class probabilities, stored |C| x H x W. Values lie in [0,1] and
/// sum to one per pixel within 1e-6.
class ProbMap {
 public:
  ProbMap() = default;
  ProbMap(int num_classes, int height, int width, std::vector<double> probs);
  static ProbMap from_labels(const LabelMap& labels);

  int num_classes() const noexcept { return num_classes_; }
  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  double at(int c, int y, int x) const noexcept {
    return probs_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x];
  }
  std::span<const double> values() const noexcept { return probs_; }
  /// Lowest class index wins ties.
  int argmax(int y, int x) const noexcept;

  friend bool operator==(const ProbMap&, const ProbMap&) = default;

 private:
  int num_classes_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<double> probs_;
};

struct LabeledFrame {
  Frame image;
  LabelMap labels;
};

inline constexpr double kProbabilityFloor = 1e-12;
inline constexpr std::size_t kMaxSegParameters = 760'000;

/// -sum_{h,w} sum_c Y(h,w,c) log(max(P(h,w,c), 1e-12)).
double cross_entropy(const ProbMap& pred, const LabelMap& truth);
/// d cross_entropy(softmax(logits)) / d logits = softmax(logits) - Y.
nn::Tensor softmax_cross_entropy_grad(const nn::Tensor& logits, const LabelMap& truth);

/// 1 where the argmax class is `class_id`. Throws ValidationError for an
/// index outside the map's classes.
ClassMask extract_mask(const ProbMap& prob, int class_id);
std::vector<ClassMask> extract_masks(const ProbMap& prob);

/// Mean over ground-truth-present classes of intersection / union, with
/// counts pooled over the whole list. Throws on empty or misaligned input.
double mean_iou(std::span<const ProbMap> preds, std::span<const LabelMap> truths);

struct SegNetConfig {
  int num_classes = 4;
  int width = 32;
  std::vector<int> dilations{2, 4, 8};
};

/// DAB-style network: stride-2 stem, blocks of (depthwise-separable branch
/// || dilated depthwise branch) -> concat -> pointwise fuse with a residual,
/// 1x1 classifier, bilinear upsampling to the input extent.
class DabSegNet {
 public:
  struct BlockTrace {
    nn::Tensor input;
    nn::Tensor depthwise;
    nn::Tensor concat_pre;
    nn::Tensor out_pre;
  };
  struct Trace {
    nn::Tensor input;
    nn::Tensor stem_pre;
    std::vector<BlockTrace> blocks;
    nn::Tensor features;
    nn::Tensor logits_low;
  };

  DabSegNet() = default;
  /// Throws ModelError if the parameter count reaches kMaxSegParameters.
  explicit DabSegNet(SegNetConfig config);

  void init(std::uint64_t seed);
  /// Pre-softmax scores at the input extent.
  nn::Tensor forward(const nn::Tensor& x, Trace* trace = nullptr) const;
  void backward(const Trace& trace, const nn::Tensor& grad_logits);

  std::vector<nn::Param*> parameters();
  std::vector<const nn::Param*> parameters() const;
  std::size_t parameter_count() const;
  const SegNetConfig& config() const noexcept { return config_; }

 private:
  struct Block {
    nn::Conv2d depthwise;
    nn::Conv2d pointwise;
    nn::Conv2d dilated;
    nn::Conv2d fuse;
  };

  SegNetConfig config_;
  nn::Conv2d stem_;
  std::vector<Block> blocks_;
  nn::Conv2d head_;
};

struct SegHyperparams {
  long steps = 500;
  int batch_size = 8;
  double learning_rate = 1e-2;
  std::uint64_t seed = 0;
  SegNetConfig network{};
};

struct SegTrainingMeta {
  long steps = 0;
  std::uint64_t seed = 0;
  double learning_rate = 0.0;
  int batch_size = 0;
  double initial_loss = 0.0;  // mean per-pixel cross-entropy over the training set
  double final_loss = 0.0;
};

class SegModel {
 public:
  static constexpr int kSchemaVersion = 1;

  SegModel() = default;
  SegModel(DabSegNet network, std::vector<std::string> class_names, SegTrainingMeta meta);

  bool loaded() const noexcept { return loaded_; }
  const DabSegNet& network() const noexcept { return net_; }
  const std::vector<std::string>& class_names() const noexcept { return classes_; }
  const SegTrainingMeta& meta() const noexcept { return meta_; }

  void save(const std::filesystem::path& dir) const;
  static SegModel load(const std::filesystem::path& dir);

 private:
  bool loaded_ = false;
  DabSegNet net_;
  std::vector<std::string> classes_;
  SegTrainingMeta meta_;
};

/// Probability map at the input resolution. Throws ModelError when unloaded.
ProbMap predict(const Frame& input, const SegModel& model);

SegModel train_seg(std::span<const LabeledFrame> dataset, const SegHyperparams& params,
                   std::vector<std::string> class_names);

}  // namespace cbs

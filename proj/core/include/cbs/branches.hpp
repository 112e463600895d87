#pragma once

#include <array>
#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "cbs/frame.hpp"
#include "cbs/segmenter.hpp"
#include "cbs/styler.hpp"

namespace cbs {

/// The segmentation side of the pipeline. Implementations must be safe to
/// call from several threads at once.
class SegmentationBranch {
 public:
  virtual ~SegmentationBranch() = default;
  virtual ProbMap predict(const Frame& frame) const = 0;
  virtual std::vector<std::string> class_names() const = 0;
};

/// One global styling pass. Same thread-safety contract as SegmentationBranch.
class StyleBranch {
 public:
  virtual ~StyleBranch() = default;
  virtual Frame stylize(const Frame& frame) const = 0;
};

using StyleRegistry = std::map<std::string, std::shared_ptr<const StyleBranch>>;

class ModelSegmentation final : public SegmentationBranch {
 public:
  explicit ModelSegmentation(std::shared_ptr<const SegModel> model);
  ProbMap predict(const Frame& frame) const override { return cbs::predict(frame, *model_); }
  std::vector<std::string> class_names() const override { return model_->class_names(); }

 private:
  std::shared_ptr<const SegModel> model_;
};

class ModelStyle final : public StyleBranch {
 public:
  explicit ModelStyle(std::shared_ptr<const StyleModel> model);
  Frame stylize(const Frame& frame) const override { return cbs::stylize(frame, *model_); }

 private:
  std::shared_ptr<const StyleModel> model_;
};

// Stubs used by tests, benchmarks and UI development.

class IdentityStyle final : public StyleBranch {
 public:
  Frame stylize(const Frame& frame) const override { return frame; }
};

class ConstantStyle final : public StyleBranch {
 public:
  ConstantStyle(double r, double g, double b) : color_{r, g, b} {}
  Frame stylize(const Frame& frame) const override {
    return Frame::filled(frame.height(), frame.width(), color_[0], color_[1], color_[2]);
  }

 private:
  std::array<double, 3> color_;
};

/// Every pixel belongs to one class.
class FullFrameSegmentation final : public SegmentationBranch {
 public:
  FullFrameSegmentation(std::vector<std::string> class_names, int class_id);
  ProbMap predict(const Frame& frame) const override;
  std::vector<std::string> class_names() const override { return names_; }

 private:
  std::vector<std::string> names_;
  int class_id_;
};

/// Splits the frame into quadrants labelled 0..3 (clockwise from top-left),
/// wrapping modulo the class count.
class QuadrantSegmentation final : public SegmentationBranch {
 public:
  explicit QuadrantSegmentation(std::vector<std::string> class_names);
  ProbMap predict(const Frame& frame) const override;
  std::vector<std::string> class_names() const override { return names_; }

 private:
  std::vector<std::string> names_;
};

/// Returns ground-truth labels supplied by a lookup, e.g. the generator's
/// recorded geometry for a known frame.
class OracleSegmentation final : public SegmentationBranch {
 public:
  using Lookup = std::function<LabelMap(const Frame&)>;
  OracleSegmentation(std::vector<std::string> class_names, Lookup lookup);
  ProbMap predict(const Frame& frame) const override { return ProbMap::from_labels(lookup_(frame)); }
  std::vector<std::string> class_names() const override { return names_; }

 private:
  std::vector<std::string> names_;
  Lookup lookup_;
};

/// Sleeps before delegating; the delay source must be thread-safe.
using DelaySource = std::function<std::chrono::microseconds()>;
DelaySource fixed_delay(double milliseconds);

class DelayedSegmentation final : public SegmentationBranch {
 public:
  DelayedSegmentation(std::shared_ptr<const SegmentationBranch> inner, DelaySource delay);
  ProbMap predict(const Frame& frame) const override;
  std::vector<std::string> class_names() const override { return inner_->class_names(); }

 private:
  std::shared_ptr<const SegmentationBranch> inner_;
  DelaySource delay_;
};

class DelayedStyle final : public StyleBranch {
 public:
  DelayedStyle(std::shared_ptr<const StyleBranch> inner, DelaySource delay);
  Frame stylize(const Frame& frame) const override;

 private:
  std::shared_ptr<const StyleBranch> inner_;
  DelaySource delay_;
};

}  // namespace cbs

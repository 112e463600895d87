#include "cbs/branches.hpp"

#include <thread>

#include "cbs/error.hpp"

namespace cbs {
namespace {

ProbMap one_hot_map(int num_classes, int height, int width, const std::function<int(int, int)>& label_of) {
  std::vector<std::uint8_t> labels(static_cast<std::size_t>(height) * width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) labels[static_cast<std::size_t>(y) * width + x] = static_cast<std::uint8_t>(label_of(y, x));
  return ProbMap::from_labels(LabelMap(num_classes, height, width, std::move(labels)));
}

}  // namespace

ModelSegmentation::ModelSegmentation(std::shared_ptr<const SegModel> model) : model_(std::move(model)) {
  if (!model_ || !model_->loaded()) throw ModelError("segmentation branch needs a loaded model");
}

ModelStyle::ModelStyle(std::shared_ptr<const StyleModel> model) : model_(std::move(model)) {
  if (!model_ || !model_->loaded()) throw ModelError("style branch needs a loaded model");
}

FullFrameSegmentation::FullFrameSegmentation(std::vector<std::string> class_names, int class_id)
    : names_(std::move(class_names)), class_id_(class_id) {
  if (class_id < 0 || class_id >= static_cast<int>(names_.size())) {
    throw ValidationError("full-frame stub class " + std::to_string(class_id) + " out of range");
  }
}

ProbMap FullFrameSegmentation::predict(const Frame& frame) const {
  return one_hot_map(static_cast<int>(names_.size()), frame.height(), frame.width(),
                     [this](int, int) { return class_id_; });
}

QuadrantSegmentation::QuadrantSegmentation(std::vector<std::string> class_names) : names_(std::move(class_names)) {
  if (names_.empty()) throw ValidationError("quadrant stub needs at least one class");
}

ProbMap QuadrantSegmentation::predict(const Frame& frame) const {
  const int k = static_cast<int>(names_.size());
  const int h = frame.height(), w = frame.width();
  return one_hot_map(k, h, w, [&](int y, int x) {
    const bool bottom = y >= h / 2;
    const bool right = x >= w / 2;
    const int quadrant = bottom ? (right ? 2 : 3) : (right ? 1 : 0);
    return quadrant % k;
  });
}

OracleSegmentation::OracleSegmentation(std::vector<std::string> class_names, Lookup lookup)
    : names_(std::move(class_names)), lookup_(std::move(lookup)) {}

DelaySource fixed_delay(double milliseconds) {
  const auto us = std::chrono::microseconds(static_cast<long>(milliseconds * 1000.0));
  return [us] { return us; };
}

DelayedSegmentation::DelayedSegmentation(std::shared_ptr<const SegmentationBranch> inner, DelaySource delay)
    : inner_(std::move(inner)), delay_(std::move(delay)) {}

ProbMap DelayedSegmentation::predict(const Frame& frame) const {
  std::this_thread::sleep_for(delay_());
  return inner_->predict(frame);
}

DelayedStyle::DelayedStyle(std::shared_ptr<const StyleBranch> inner, DelaySource delay)
    : inner_(std::move(inner)), delay_(std::move(delay)) {}

Frame DelayedStyle::stylize(const Frame& frame) const {
  std::this_thread::sleep_for(delay_());
  return inner_->stylize(frame);
}

}  // namespace cbs

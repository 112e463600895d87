#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace cbs::nn {

/// Dense row-major tensor of doubles. Activations are C x H x W; conv
/// weights are O x (I/groups) x K x K.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, double fill = 0.0);
  Tensor(std::vector<int> shape, std::vector<double> data);

  static Tensor chw(int channels, int height, int width, double fill = 0.0) {
    return Tensor({channels, height, width}, fill);
  }

  const std::vector<int>& shape() const noexcept { return shape_; }
  int dim(std::size_t i) const noexcept { return shape_[i]; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }

  // C x H x W accessors; only meaningful for rank-3 tensors.
  int channels() const noexcept { return shape_[0]; }
  int height() const noexcept { return shape_[1]; }
  int width() const noexcept { return shape_[2]; }
  double& at(int c, int y, int x) noexcept {
    return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
  }
  const double& at(int c, int y, int x) const noexcept {
    return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
  }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  void fill(double v);
  Tensor& operator+=(const Tensor& other);
  Tensor& operator*=(double s);

  std::string shape_string() const;
  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

/// A trainable tensor together with its accumulated gradient.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;

  Param() = default;
  Param(std::string n, std::vector<int> shape) : name(std::move(n)), value(shape), grad(shape) {}
  void zero_grad() { grad.fill(0.0); }
};

std::size_t parameter_count(std::span<Param* const> params);

}  // namespace cbs::nn

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "morphsnn/errors.hpp"
#include "morphsnn/neuron.hpp"

namespace morphsnn {

/// Binary event frames indexed (t, c, h, w), one byte per element.
class SpikeTensor {
 public:
  SpikeTensor() = default;
  SpikeTensor(std::size_t t, std::size_t c, std::size_t h, std::size_t w) : t_(t), c_(c), h_(h), w_(w) {
    if (t == 0 || c == 0 || h == 0 || w == 0) {
      throw DimensionError("SpikeTensor: dims must be positive, got " + dims_string());
    }
    data_.assign(t * c * h * w, 0);
  }
  SpikeTensor(std::size_t t, const MapShape& frame) : SpikeTensor(t, frame.channels, frame.height, frame.width) {}

  [[nodiscard]] std::size_t timesteps() const noexcept { return t_; }
  [[nodiscard]] std::size_t channels() const noexcept { return c_; }
  [[nodiscard]] std::size_t height() const noexcept { return h_; }
  [[nodiscard]] std::size_t width() const noexcept { return w_; }
  [[nodiscard]] MapShape frame_shape() const noexcept { return {c_, h_, w_}; }
  [[nodiscard]] std::size_t frame_size() const noexcept { return c_ * h_ * w_; }
  [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }

  [[nodiscard]] std::size_t index(std::size_t t, std::size_t c, std::size_t y, std::size_t x) const noexcept {
    return ((t * c_ + c) * h_ + y) * w_ + x;
  }
  [[nodiscard]] std::uint8_t at(std::size_t t, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[index(t, c, y, x)];
  }
  void set(std::size_t t, std::size_t c, std::size_t y, std::size_t x, bool v) { data_[index(t, c, y, x)] = v ? 1 : 0; }

  [[nodiscard]] std::span<std::uint8_t> frame(std::size_t t) { return {data_.data() + t * frame_size(), frame_size()}; }
  [[nodiscard]] std::span<const std::uint8_t> frame(std::size_t t) const {
    return {data_.data() + t * frame_size(), frame_size()};
  }
  [[nodiscard]] std::span<std::uint8_t> raw() noexcept { return data_; }
  [[nodiscard]] std::span<const std::uint8_t> raw() const noexcept { return data_; }

  /// Frame t as reals, channel-major, into `dst` (length C*H*W).
  void copy_frame(std::size_t t, std::span<double> dst) const {
    if (t >= t_ || dst.size() != frame_size()) {
      throw DimensionError("SpikeTensor::copy_frame: frame " + std::to_string(t) + " of " + dims_string());
    }
    const auto src = frame(t);
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i];
  }

  [[nodiscard]] std::size_t count_active() const noexcept {
    std::size_t n = 0;
    for (auto v : data_) n += v;
    return n;
  }
  [[nodiscard]] bool is_binary() const noexcept {
    for (auto v : data_)
      if (v > 1) return false;
    return true;
  }

  [[nodiscard]] std::string dims_string() const {
    return "(" + std::to_string(t_) + "," + std::to_string(c_) + "," + std::to_string(h_) + "," + std::to_string(w_) +
           ")";
  }

  friend bool operator==(const SpikeTensor&, const SpikeTensor&) = default;

 private:
  std::size_t t_ = 0, c_ = 0, h_ = 0, w_ = 0;
  std::vector<std::uint8_t> data_;
};

}  // namespace morphsnn

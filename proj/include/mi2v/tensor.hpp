#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace mi2v {

enum class Layout : std::uint8_t {
  RowMajor,
  // Rank-4 (B, C, 1, S): the sequence axis is innermost and contiguous.
  ChannelsFirst4D,
};

using Dims = std::vector<std::int64_t>;

inline constexpr std::size_t kMaxRank = 5;

// Dense float32 tensor with contiguous row-major storage and a layout tag.
// The tag only records how the logical axes should be read; storage is always
// row-major over `dims()`.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Dims dims, Layout layout = Layout::RowMajor);
  Tensor(Dims dims, std::vector<float> data, Layout layout = Layout::RowMajor);

  static Tensor zeros(Dims dims) { return Tensor(std::move(dims)); }
  static Tensor filled(Dims dims, float value);
  static Tensor from(Dims dims, std::initializer_list<float> values);

  const Dims& dims() const { return dims_; }
  std::int64_t dim(std::size_t axis) const { return dims_.at(axis); }
  std::size_t rank() const { return dims_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  Layout layout() const { return layout_; }

  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }
  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  // Row-major flat offset of a full index.
  std::size_t offset(std::initializer_list<std::int64_t> index) const;
  float& at(std::initializer_list<std::int64_t> index) { return data_[offset(index)]; }
  float at(std::initializer_list<std::int64_t> index) const { return data_[offset(index)]; }

  // Same values, new extents. The element count must not change.
  Tensor reshaped(Dims dims, Layout layout = Layout::RowMajor) const;

  bool all_finite() const;
  bool bit_equal(const Tensor& other) const;

 private:
  Dims dims_;
  std::vector<float> data_;
  Layout layout_ = Layout::RowMajor;
};

std::size_t element_count(const Dims& dims);
std::string to_string(const Dims& dims);
std::string to_string(Layout layout);

// Throws mi2v::Error naming `where` if any value is NaN or infinite.
void check_finite(const Tensor& t, const std::string& where);

// Max absolute difference divided by the max magnitude of `reference`.
// Zero when both are identically zero.
double relative_error(const Tensor& value, const Tensor& reference);

}  // namespace mi2v

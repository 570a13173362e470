#include "mi2v/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "mi2v/error.hpp"

namespace mi2v {

namespace {

void validate_shape(const Dims& dims, Layout layout, const char* where) {
  require(dims.size() <= kMaxRank, where, "rank " + std::to_string(dims.size()) + " exceeds 5");
  for (auto d : dims) require(d >= 0, where, "negative extent in " + to_string(dims));
  if (layout == Layout::ChannelsFirst4D) {
    require(dims.size() == 4 && dims[2] == 1, where,
            "channels-first layout needs (B, C, 1, S), got " + to_string(dims));
  }
}

}  // namespace

std::size_t element_count(const Dims& dims) {
  std::size_t n = 1;
  for (auto d : dims) n *= static_cast<std::size_t>(d);
  return n;
}

std::string to_string(const Dims& dims) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) os << ", ";
    os << dims[i];
  }
  os << ')';
  return os.str();
}

std::string to_string(Layout layout) {
  return layout == Layout::RowMajor ? "row-major" : "channels-first-4d";
}

Tensor::Tensor(Dims dims, Layout layout) : dims_(std::move(dims)), layout_(layout) {
  validate_shape(dims_, layout_, "Tensor");
  data_.assign(element_count(dims_), 0.0f);
}

Tensor::Tensor(Dims dims, std::vector<float> data, Layout layout)
    : dims_(std::move(dims)), data_(std::move(data)), layout_(layout) {
  validate_shape(dims_, layout_, "Tensor");
  require(data_.size() == element_count(dims_), "Tensor",
          "value count " + std::to_string(data_.size()) + " does not match " + to_string(dims_));
}

Tensor Tensor::filled(Dims dims, float value) {
  Tensor t(std::move(dims));
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

Tensor Tensor::from(Dims dims, std::initializer_list<float> values) {
  return Tensor(std::move(dims), std::vector<float>(values));
}

std::size_t Tensor::offset(std::initializer_list<std::int64_t> index) const {
  require(index.size() == dims_.size(), "Tensor::offset", "index rank mismatch");
  std::size_t off = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    require(i >= 0 && i < dims_[axis], "Tensor::offset", "index out of range");
    off = off * static_cast<std::size_t>(dims_[axis]) + static_cast<std::size_t>(i);
    ++axis;
  }
  return off;
}

Tensor Tensor::reshaped(Dims dims, Layout layout) const {
  require(element_count(dims) == data_.size(), "Tensor::reshaped",
          "cannot view " + to_string(dims_) + " as " + to_string(dims));
  return Tensor(std::move(dims), data_, layout);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

bool Tensor::bit_equal(const Tensor& other) const {
  return dims_ == other.dims_ && layout_ == other.layout_ &&
         (data_.empty() ||
          std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(float)) == 0);
}

void check_finite(const Tensor& t, const std::string& where) {
  require(t.all_finite(), where, "non-finite value in result");
}

double relative_error(const Tensor& value, const Tensor& reference) {
  require(value.dims() == reference.dims(), "relative_error",
          "shape mismatch " + to_string(value.dims()) + " vs " + to_string(reference.dims()));
  double diff = 0.0;
  double scale = 0.0;
  for (std::size_t i = 0; i < value.size(); ++i) {
    diff = std::max(diff, std::fabs(double(value[i]) - double(reference[i])));
    scale = std::max(scale, std::fabs(double(reference[i])));
  }
  if (diff == 0.0) return 0.0;
  return diff / std::max(scale, 1e-30);
}

}  // namespace mi2v

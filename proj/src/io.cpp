#include "mi2v/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include "mi2v/error.hpp"

namespace mi2v {

namespace {

constexpr char kMagic[4] = {'M', 'I', '2', 'V'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  void need(std::size_t n, const std::string& what) const {
    require(bytes_.size() - pos_ >= n, "tensor_io_load",
            "truncated " + what + " at byte " + std::to_string(pos_));
  }
  std::uint32_t u32(const std::string& what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint8_t u8(const std::string& what) {
    need(1, what);
    return bytes_[pos_++];
  }
  const std::uint8_t* take(std::size_t n, const std::string& what) {
    need(n, what);
    const std::uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_container(const std::vector<NamedTensor>& entries) {
  constexpr const char* where = "tensor_io_save";
  std::set<std::string> seen;
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, kContainerVersion);
  put_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) {
    require(seen.insert(name).second, where, "duplicate name '" + name + "'");
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.dims()) {
      require(d >= 0 && d <= 0xFFFFFFFFll, where, "extent of '" + name + "' does not fit in u32");
      put_u32(out, static_cast<std::uint32_t>(d));
    }
    out.push_back(0);
    for (float v : t.values()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

std::vector<NamedTensor> decode_container(const std::vector<std::uint8_t>& bytes) {
  constexpr const char* where = "tensor_io_load";
  Reader r(bytes);
  const std::uint8_t* magic = r.take(4, "header");
  require(std::memcmp(magic, kMagic, 4) == 0, where, "bad magic");
  const auto version = r.u32("header");
  require(version == kContainerVersion, where, "unsupported version " + std::to_string(version));
  const auto count = r.u32("header");
  std::vector<NamedTensor> entries;
  std::set<std::string> seen;
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto len = r.u32("entry name");
    const auto* np = r.take(len, "entry name");
    std::string name(reinterpret_cast<const char*>(np), len);
    require(seen.insert(name).second, where, "duplicate name '" + name + "'");
    const auto rank = r.u32("rank of '" + name + "'");
    require(rank <= static_cast<std::uint32_t>(kMaxRank), where,
            "rank " + std::to_string(rank) + " of '" + name + "' is too large");
    Dims dims(rank);
    for (auto& d : dims) d = r.u32("dims of '" + name + "'");
    const auto dtype = r.u8("dtype of '" + name + "'");
    require(dtype == 0, where, "unsupported dtype " + std::to_string(dtype) + " for '" + name + "'");
    std::size_t n = 1;
    for (auto d : dims) {
      require(d == 0 || n <= bytes.size() / 4 / std::size_t(d), where, "truncated payload of '" + name + "'");
      n *= std::size_t(d);
    }
    const auto* payload = r.take(4 * n, "payload of '" + name + "'");
    std::vector<float> values(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t w = 0;
      for (int b = 0; b < 4; ++b) w |= std::uint32_t(payload[4 * i + b]) << (8 * b);
      values[i] = std::bit_cast<float>(w);
    }
    entries.emplace_back(std::move(name), Tensor(std::move(dims), std::move(values)));
  }
  require(r.done(), where, "trailing bytes after the last entry");
  return entries;
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(bool(f), "write_file", "cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(bool(f), "write_file", "write to '" + path + "' failed");
}

void write_text(const std::string& path, const std::string& text) {
  write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(bool(f), "read_file", "cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void tensor_io_save(const std::string& path, const std::vector<NamedTensor>& entries) {
  write_file(path, encode_container(entries));
}

std::vector<NamedTensor> tensor_io_load(const std::string& path) { return decode_container(read_file(path)); }

const Tensor& find_entry(const std::vector<NamedTensor>& entries, const std::string& name) {
  for (const auto& [n, t] : entries)
    if (n == name) return t;
  fail("tensor_io_load", "no entry named '" + name + "'");
}

void save_weights(const std::string& path, const DenoiserWeights& weights) {
  std::vector<NamedTensor> entries;
  for (const auto& [name, t] : weights.named()) entries.emplace_back(name, *t);
  tensor_io_save(path, entries);
}

DenoiserWeights load_weights(const std::string& path, const DenoiserConfig& config) {
  constexpr const char* where = "load_weights";
  const auto entries = tensor_io_load(path);
  // A zero-seed init supplies the expected names, shapes and rope settings.
  DenoiserWeights w = init_weights(config, 0);
  auto slots = w.named_mut();
  require(entries.size() == slots.size(), where,
          "file has " + std::to_string(entries.size()) + " entries, config expects " + std::to_string(slots.size()));
  for (auto& [name, slot] : slots) {
    const Tensor& t = find_entry(entries, name);
    require(t.dims() == slot->dims(), where,
            "'" + name + "' has dims " + to_string(t.dims()) + ", expected " + to_string(slot->dims()));
    require(t.all_finite(), where, "'" + name + "' holds non-finite values");
    *slot = t;
  }
  return w;
}

std::vector<std::uint8_t> emit_pgm_preview(const Tensor& latent_frame, const LatentSpec& spec) {
  constexpr const char* where = "emit_pgm_preview";
  const std::int64_t w = spec.latent_width(), h = spec.latent_height();
  require(latent_frame.rank() == 2 && latent_frame.dim(0) == w * h, where,
          "expected (" + std::to_string(w * h) + ", C) for one frame, got " + to_string(latent_frame.dims()));
  const std::int64_t c = latent_frame.dim(1);
  require(c >= 1, where, "no channels");
  std::vector<double> mean(static_cast<std::size_t>(w * h));
  for (std::int64_t i = 0; i < w * h; ++i) {
    double acc = 0.0;
    for (std::int64_t j = 0; j < c; ++j) acc += latent_frame[i * c + j];
    mean[i] = acc / double(c);
  }
  const auto [lo, hi] = std::minmax_element(mean.begin(), mean.end());
  const double mn = *lo, mx = *hi;
  const std::string header = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  for (double v : mean) {
    if (!(mx > mn)) {
      out.push_back(128);
    } else {
      out.push_back(static_cast<std::uint8_t>(std::lround((v - mn) / (mx - mn) * 255.0)));
    }
  }
  return out;
}

}  // namespace mi2v

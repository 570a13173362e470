#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mi2v/denoiser.hpp"
#include "mi2v/flow.hpp"
#include "mi2v/tensor.hpp"

namespace mi2v {

// Binary tensor container, all integers little-endian:
//   "MI2V"  u32 version (1)  u32 entry count
//   per entry: u32 name length, UTF-8 name, u32 rank, u32 dims[rank],
//              u8 dtype (0 = f32), payload (4 * prod(dims) bytes, row-major)
inline constexpr std::uint32_t kContainerVersion = 1;

using NamedTensor = std::pair<std::string, Tensor>;

std::vector<std::uint8_t> encode_container(const std::vector<NamedTensor>& entries);
std::vector<NamedTensor> decode_container(const std::vector<std::uint8_t>& bytes);

void tensor_io_save(const std::string& path, const std::vector<NamedTensor>& entries);
std::vector<NamedTensor> tensor_io_load(const std::string& path);

// Finds an entry by name or throws.
const Tensor& find_entry(const std::vector<NamedTensor>& entries, const std::string& name);

void save_weights(const std::string& path, const DenoiserWeights& weights);
// Loads into the layout `config` implies; every expected entry must be present
// with matching dims and nothing else may be.
DenoiserWeights load_weights(const std::string& path, const DenoiserConfig& config);

// Binary PGM ("P5") of one latent frame: channel mean per token, min-max
// scaled to 0..255, width = latent width. A constant frame maps to 128.
std::vector<std::uint8_t> emit_pgm_preview(const Tensor& latent_frame, const LatentSpec& spec);

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes);
void write_text(const std::string& path, const std::string& text);
std::vector<std::uint8_t> read_file(const std::string& path);

}  // namespace mi2v

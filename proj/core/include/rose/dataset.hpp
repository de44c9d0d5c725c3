#pragma once

// image corpora: idx ingestion, synthetic generators, and the brightness
// perturbation. pixels are floats in [0, 1]; images are [n, h, w, c] with
// c = 1 for everything in scope (identical bytes to [n, c, h, w] at c = 1).

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rose/tensor.hpp"

namespace rose {

struct ImageDataset {
  TensorT<float> images;  // [n, h, w, c], values in [0, 1]
  std::string label;      // provenance
  uint64_t source_hash = 0;

  int64_t size() const { return images.ndim() == 4 ? images.dim(0) : 0; }
};

// idx (big-endian, magic 0x00000803, unsigned bytes) -> floats in [0, 1].
// label defaults to the path when empty.
ImageDataset load_idx(const std::string& path, const std::string& label = "");

// inverse of load_idx: round(pixel * 255) bytes; single-channel only.
void write_idx(const ImageDataset& ds, const std::string& path);

// per-pixel uniform draws from {0..255}/255.
ImageDataset gen_noise(int64_t n, int64_t h, int64_t w, uint64_t seed);

// one uniform level per image, replicated across its pixels.
ImageDataset gen_constant(int64_t n, int64_t h, int64_t w, uint64_t seed);

// pixel <- clamp(pixel * factor, 0, 1); factor must be positive.
ImageDataset brightness(const ImageDataset& ds, double factor);

// plain-text manifest: one `label=path` per line, '#' comments and blank
// lines ignored. returns (label, path) pairs in file order.
std::vector<std::pair<std::string, std::string>> read_manifest(
    const std::string& path);

// uniform per-source subsets without replacement, concatenated; provenance
// keeps each row's source label.
struct MixedDataset {
  ImageDataset data;
  std::vector<std::string> provenance;  // one label per row
};

MixedDataset overall_mix(const std::vector<ImageDataset>& sources,
                         int64_t per_source, uint64_t seed);

}  // namespace rose

#include "rose/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "rose/error.hpp"
#include "rose/hash.hpp"
#include "rose/rng.hpp"

namespace rose {
namespace {

constexpr uint32_t kIdxMagic = 0x00000803;  // unsigned byte, 3 dims

uint32_t read_be32(const unsigned char* p) {
  return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) |
         (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

void write_be32(std::string& out, uint32_t v) {
  out.push_back(char((v >> 24) & 0xff));
  out.push_back(char((v >> 16) & 0xff));
  out.push_back(char((v >> 8) & 0xff));
  out.push_back(char(v & 0xff));
}

std::vector<unsigned char> read_file(const std::string& path,
                                     const char* what) {
  std::ifstream f(path, std::ios::binary);
  if (!f)
    throw DataError(std::string(what) + ": cannot open " + path);
  f.seekg(0, std::ios::end);
  const auto len = f.tellg();
  f.seekg(0, std::ios::beg);
  std::vector<unsigned char> buf(static_cast<size_t>(len));
  if (len > 0 && !f.read(reinterpret_cast<char*>(buf.data()), len))
    throw DataError(std::string(what) + ": cannot read " + path);
  return buf;
}

void validate_images(const ImageDataset& ds, const char* what) {
  if (ds.images.ndim() != 4 || ds.images.dim(0) < 1)
    throw DataError(std::string(what) + ": dataset images must be a " +
                    "non-empty [n, h, w, c] tensor, got " +
                    shape_str(ds.images.shape()));
}

uint64_t hash_floats(const TensorT<float>& t) {
  return fnv1a64(t.data(), size_t(t.numel()) * sizeof(float));
}

}  // namespace

ImageDataset load_idx(const std::string& path, const std::string& label) {
  const auto buf = read_file(path, "load_idx");
  if (buf.size() < 16)
    throw DataError("load_idx: " + path + " is truncated: header needs 16 " +
                    "bytes, file has " + std::to_string(buf.size()));
  const uint32_t magic = read_be32(buf.data());
  if (magic != kIdxMagic) {
    char msg[96];
    std::snprintf(msg, sizeof msg,
                  "load_idx: bad magic 0x%08x, expected 0x%08x", magic,
                  kIdxMagic);
    throw DataError(std::string(msg) + " in " + path);
  }
  const int64_t n = read_be32(buf.data() + 4);
  const int64_t h = read_be32(buf.data() + 8);
  const int64_t w = read_be32(buf.data() + 12);
  if (n < 1 || h < 1 || w < 1)
    throw DataError("load_idx: " + path + " declares empty dimensions [" +
                    std::to_string(n) + ", " + std::to_string(h) + ", " +
                    std::to_string(w) + "]");
  const size_t want = size_t(n) * size_t(h) * size_t(w);
  const size_t have = buf.size() - 16;
  if (have < want)
    throw DataError("load_idx: " + path + " is truncated: missing " +
                    std::to_string(want - have) + " bytes of pixel data");
  if (have > want)
    throw DataError("load_idx: " + path + " has " +
                    std::to_string(have - want) + " trailing bytes");

  ImageDataset ds;
  ds.images = TensorT<float>({n, h, w, 1});
  const unsigned char* px = buf.data() + 16;
  for (size_t i = 0; i < want; ++i)
    ds.images[int64_t(i)] = float(px[i]) / 255.0f;
  ds.label = label.empty() ? path : label;
  ds.source_hash = fnv1a64(buf.data(), buf.size());
  return ds;
}

void write_idx(const ImageDataset& ds, const std::string& path) {
  validate_images(ds, "write_idx");
  if (ds.images.dim(3) != 1)
    throw DataError("write_idx: only single-channel images, got " +
                    shape_str(ds.images.shape()));
  std::string out;
  out.reserve(16 + size_t(ds.images.numel()));
  write_be32(out, kIdxMagic);
  write_be32(out, uint32_t(ds.images.dim(0)));
  write_be32(out, uint32_t(ds.images.dim(1)));
  write_be32(out, uint32_t(ds.images.dim(2)));
  for (int64_t i = 0; i < ds.images.numel(); ++i) {
    const float v = std::min(1.0f, std::max(0.0f, ds.images[i]));
    out.push_back(char((unsigned char)std::lround(v * 255.0f)));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f || !f.write(out.data(), std::streamsize(out.size())))
    throw DataError("write_idx: cannot write " + path);
}

ImageDataset gen_noise(int64_t n, int64_t h, int64_t w, uint64_t seed) {
  if (n < 1 || h < 1 || w < 1)
    throw DataError("gen_noise: dimensions must be positive");
  Rng rng(seed);
  std::vector<unsigned char> levels(size_t(n) * size_t(h) * size_t(w));
  for (auto& b : levels) b = (unsigned char)rng.below(256);

  ImageDataset ds;
  ds.images = TensorT<float>({n, h, w, 1});
  for (size_t i = 0; i < levels.size(); ++i)
    ds.images[int64_t(i)] = float(levels[i]) / 255.0f;
  ds.label = "noise";
  ds.source_hash = fnv1a64(levels.data(), levels.size());
  return ds;
}

ImageDataset gen_constant(int64_t n, int64_t h, int64_t w, uint64_t seed) {
  if (n < 1 || h < 1 || w < 1)
    throw DataError("gen_constant: dimensions must be positive");
  Rng rng(seed);
  std::vector<unsigned char> levels(static_cast<size_t>(n));
  for (auto& b : levels) b = (unsigned char)rng.below(256);

  ImageDataset ds;
  ds.images = TensorT<float>({n, h, w, 1});
  const int64_t pixels = h * w;
  for (int64_t i = 0; i < n; ++i) {
    const float v = float(levels[size_t(i)]) / 255.0f;
    for (int64_t j = 0; j < pixels; ++j) ds.images[i * pixels + j] = v;
  }
  ds.label = "constant";
  ds.source_hash = fnv1a64(levels.data(), levels.size());
  return ds;
}

ImageDataset brightness(const ImageDataset& ds, double factor) {
  validate_images(ds, "brightness");
  if (!(factor > 0.0))
    throw DataError("brightness: factor must be positive, got " +
                    std::to_string(factor));
  ImageDataset out;
  out.images = TensorT<float>(ds.images.shape());
  const float f = float(factor);
  for (int64_t i = 0; i < ds.images.numel(); ++i)
    out.images[i] = std::min(1.0f, std::max(0.0f, ds.images[i] * f));
  out.label = ds.label;
  out.source_hash = hash_floats(out.images);
  return out;
}

std::vector<std::pair<std::string, std::string>> read_manifest(
    const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("read_manifest: cannot open " + path);
  std::vector<std::pair<std::string, std::string>> entries;
  std::string line;
  int64_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r");
    std::string body = line.substr(first, last - first + 1);
    if (body[0] == '#') continue;
    const auto eq = body.find('=');
    const auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t");
      const auto b = s.find_last_not_of(" \t");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    std::string key = eq == std::string::npos ? "" : trim(body.substr(0, eq));
    std::string val = eq == std::string::npos ? "" : trim(body.substr(eq + 1));
    if (key.empty() || val.empty())
      throw DataError("read_manifest: line " + std::to_string(lineno) +
                      " of " + path + " is not label=path");
    entries.emplace_back(std::move(key), std::move(val));
  }
  return entries;
}

MixedDataset overall_mix(const std::vector<ImageDataset>& sources,
                         int64_t per_source, uint64_t seed) {
  if (sources.empty()) throw DataError("overall_mix: no sources");
  if (per_source < 1)
    throw DataError("overall_mix: per-source count must be positive");
  for (const auto& src : sources) {
    validate_images(src, "overall_mix");
    if (src.size() < per_source)
      throw DataError("overall_mix: source '" + src.label + "' holds " +
                      std::to_string(src.size()) + " images, need " +
                      std::to_string(per_source));
    for (int d = 1; d < 4; ++d)
      if (src.images.dim(d) != sources[0].images.dim(d))
        throw DataError("overall_mix: source '" + src.label + "' shape " +
                        shape_str(src.images.shape()) + " differs from '" +
                        sources[0].label + "' " +
                        shape_str(sources[0].images.shape()));
  }

  const int64_t row = sources[0].images.numel() / sources[0].images.dim(0);
  const int64_t total = per_source * int64_t(sources.size());
  MixedDataset mix;
  mix.data.images = TensorT<float>(
      {total, sources[0].images.dim(1), sources[0].images.dim(2),
       sources[0].images.dim(3)});
  mix.data.label = "mix";
  mix.provenance.reserve(size_t(total));

  int64_t at = 0;
  for (size_t si = 0; si < sources.size(); ++si) {
    const auto& src = sources[si];
    std::vector<int64_t> idx(size_t(src.size()));
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(derive_seed(seed, si));
    rng.shuffle(idx.data(), int64_t(idx.size()));
    idx.resize(size_t(per_source));
    std::sort(idx.begin(), idx.end());
    for (int64_t i : idx) {
      for (int64_t j = 0; j < row; ++j)
        mix.data.images[at * row + j] = src.images[i * row + j];
      mix.provenance.push_back(src.label);
      ++at;
    }
  }
  mix.data.source_hash = hash_floats(mix.data.images);
  return mix;
}

}  // namespace rose

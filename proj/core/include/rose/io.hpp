#pragma once

// artifact plumbing: model checkpoints ("RVAE0001"), fisher factor files
// ("RFSH0001"), and the csv surfaces. binary formats are little-endian and
// byte-exact; csv floats are printed with enough digits to round-trip.

#include <bit>
#include <cstdint>
#include <string>
#include <vector>

#include "rose/hash.hpp"
#include "rose/metrics.hpp"
#include "rose/score.hpp"
#include "rose/vae.hpp"

namespace rose {
namespace detail {

inline void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, float v) {
  put_u32(out, std::bit_cast<uint32_t>(v));
}

inline void put_f64(std::string& out, double v) {
  put_u64(out, std::bit_cast<uint64_t>(v));
}

// bounds-checked little-endian reader over a loaded file
struct ByteReader {
  const std::string& buf;
  std::string what;
  size_t at = 0;

  ByteReader(const std::string& b, std::string w)
      : buf(b), what(std::move(w)) {}

  void need(size_t k) const {
    if (at + k > buf.size())
      throw DataError(what + ": truncated: needs " + std::to_string(k) +
                      " more bytes at offset " + std::to_string(at) +
                      ", file has " + std::to_string(buf.size() - at));
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= uint32_t((unsigned char)buf[at + size_t(i)]) << (8 * i);
    at += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= uint64_t((unsigned char)buf[at + size_t(i)]) << (8 * i);
    at += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string bytes(size_t k) {
    need(k);
    std::string s = buf.substr(at, k);
    at += k;
    return s;
  }
  void done() const {
    if (at != buf.size())
      throw DataError(what + ": " + std::to_string(buf.size() - at) +
                      " trailing bytes");
  }
};

std::string read_file_bytes(const std::string& path, const char* what);
void write_file_bytes(const std::string& path, const std::string& bytes,
                      const char* what);

// check an 8-byte magic, naming what was found on mismatch
void expect_magic(ByteReader& r, const char* magic);

}  // namespace detail

inline constexpr uint32_t kFormatVersion = 1;

// canonical architecture text: the arch numbers, every layer spec, the head
// sizes, and the selected layer indices. the fingerprint hashes these bytes.
std::string arch_descriptor(const VaeArch& arch);
uint64_t arch_fingerprint(const VaeArch& arch);
VaeArch parse_descriptor(const std::string& text);

// checksum over the serialized little-endian f32 parameter blob, so it is
// identical for 32-bit and 64-bit runs of the same weights.
template <class Real>
uint64_t weights_checksum(const Vae<Real>& vae) {
  std::string blob;
  blob.reserve(size_t(vae.param_count()) * 4);
  for (const auto* t : vae.param_tensors())
    for (int64_t i = 0; i < t->numel(); ++i)
      detail::put_f32(blob, float((*t)[i]));
  return fnv1a64(blob.data(), blob.size());
}

template <class Real>
void save_checkpoint(const Vae<Real>& vae, const std::string& path) {
  std::string out = "RVAE0001";
  detail::put_u32(out, kFormatVersion);
  detail::put_u64(out, arch_fingerprint(vae.arch));
  const std::string desc = arch_descriptor(vae.arch);
  detail::put_u32(out, uint32_t(desc.size()));
  out += desc;
  detail::put_u64(out, uint64_t(vae.param_count()));
  for (const auto* t : vae.param_tensors())
    for (int64_t i = 0; i < t->numel(); ++i)
      detail::put_f32(out, float((*t)[i]));
  detail::write_file_bytes(path, out, "save_checkpoint");
}

template <class Real>
Vae<Real> load_checkpoint(const std::string& path) {
  const std::string buf = detail::read_file_bytes(path, "load_checkpoint");
  detail::ByteReader r(buf, "load_checkpoint: " + path);
  detail::expect_magic(r, "RVAE0001");
  const uint32_t version = r.u32();
  if (version != kFormatVersion)
    throw DataError("load_checkpoint: " + path + ": unsupported version " +
                    std::to_string(version));
  const uint64_t stored = r.u64();
  const std::string desc = r.bytes(r.u32());
  if (fnv1a64(desc.data(), desc.size()) != stored)
    throw DataError("load_checkpoint: " + path +
                    ": fingerprint does not match the stored descriptor");
  const VaeArch arch = parse_descriptor(desc);
  if (arch_fingerprint(arch) != stored)
    throw DataError("load_checkpoint: " + path +
                    ": stored descriptor is not the canonical form for its "
                    "architecture");
  Vae<Real> vae = build_vae<Real>(arch, 0);
  const uint64_t count = r.u64();
  if (count != uint64_t(vae.param_count()))
    throw DataError("load_checkpoint: " + path + ": " +
                    std::to_string(count) + " parameters stored, " +
                    std::to_string(vae.param_count()) + " expected");
  for (auto* t : vae.param_tensors())
    for (int64_t i = 0; i < t->numel(); ++i) (*t)[i] = Real(r.f32());
  r.done();
  return vae;
}

// fisher artifact file: factors, calibration stats, and the identity of the
// model it was fitted against.
struct FisherFileInfo {
  uint64_t fingerprint = 0;
  uint64_t weights = 0;
};

struct LoadedFisher {
  FisherArtifact artifact;
  FisherFileInfo info;
};

void save_fisher(const FisherArtifact& art, const FisherFileInfo& info,
                 const std::string& path);
LoadedFisher load_fisher(const std::string& path);

// score table csv: id,s_raw_1..L,s_hat_1..L,rose,nll
void write_score_csv(const ScoreTable& table, const std::string& path);
ScoreTable load_score_csv(const std::string& path);

// eval report csv: metric,dataset,value
struct ReportRow {
  std::string metric;
  std::string dataset;
  double value = 0;
};

void write_report_csv(const std::vector<ReportRow>& rows,
                      const std::string& path);

// histogram csv: bin_left,bin_right,count_in,count_out
void write_histogram_csv(const Histogram& h, const std::string& path);

// loss curve csv: epoch,loss with epoch 0 = before training
void write_loss_csv(const std::vector<double>& epoch_loss,
                    const std::string& path);

}  // namespace rose

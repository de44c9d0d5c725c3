#include "rose/io.hpp"

#include <cctype>
#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

namespace rose {
namespace detail {

std::string read_file_bytes(const std::string& path, const char* what) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError(std::string(what) + ": cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file_bytes(const std::string& path, const std::string& bytes,
                      const char* what) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f || !f.write(bytes.data(), std::streamsize(bytes.size())))
    throw DataError(std::string(what) + ": cannot write " + path);
}

void expect_magic(ByteReader& r, const char* magic) {
  const std::string found = r.bytes(8);
  if (found == magic) return;
  std::string shown;
  for (char c : found)
    shown.push_back(std::isprint((unsigned char)c) ? c : '.');
  char hex[32];
  std::string hexs;
  for (char c : found) {
    std::snprintf(hex, sizeof hex, "%02x", (unsigned char)c);
    hexs += hex;
  }
  throw DataError(r.what + ": bad magic \"" + shown + "\" (0x" + hexs +
                  "), expected \"" + magic + "\"");
}

namespace {

void put_tensor(std::string& out, const Tensor64& t) {
  for (int64_t i = 0; i < t.numel(); ++i) put_f64(out, t[i]);
}

Tensor64 get_tensor(ByteReader& r, int64_t rows, int64_t cols) {
  Tensor64 t({rows, cols});
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = r.f64();
  return t;
}

// %.17g keeps doubles exact through a csv round trip
void put_value(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

}  // namespace
}  // namespace detail

std::string arch_descriptor(const VaeArch& arch) {
  const Vae<float> vae = build_vae<float>(arch, 0);
  std::string d = "arch " + std::to_string(arch.input_h) + " " +
                  std::to_string(arch.input_w) + " " +
                  std::to_string(arch.input_c) + " " +
                  std::to_string(arch.base_channels) + " " +
                  std::to_string(arch.conv_layers) + " " +
                  std::to_string(arch.latent_dim) + "\n";
  for (const auto& l : vae.encoder.layers())
    d += "encoder " + l.spec.describe() + "\n";
  d += "mean " + vae.mean_head.spec.describe() + "\n";
  d += "logvar " + vae.logvar_head.spec.describe() + "\n";
  for (const auto& l : vae.decoder.layers())
    d += "decoder " + l.spec.describe() + "\n";
  d += "selected";
  for (int s : vae.selected) d += " " + std::to_string(s);
  d += "\n";
  return d;
}

uint64_t arch_fingerprint(const VaeArch& arch) {
  const std::string d = arch_descriptor(arch);
  return fnv1a64(d.data(), d.size());
}

VaeArch parse_descriptor(const std::string& text) {
  VaeArch arch;
  long long h = 0, w = 0, c = 0, base = 0, convs = 0, latent = 0;
  if (std::sscanf(text.c_str(), "arch %lld %lld %lld %lld %lld %lld", &h, &w,
                  &c, &base, &convs, &latent) != 6)
    throw DataError("parse_descriptor: descriptor does not start with an "
                    "arch line");
  arch.input_h = h;
  arch.input_w = w;
  arch.input_c = c;
  arch.base_channels = base;
  arch.conv_layers = convs;
  arch.latent_dim = latent;
  return arch;
}

void save_fisher(const FisherArtifact& art, const FisherFileInfo& info,
                 const std::string& path) {
  const size_t layers = art.layer_count();
  if (layers == 0) throw DataError("save_fisher: artifact has no factors");
  if (!art.stats.empty() && art.stats.size() != layers)
    throw DataError("save_fisher: " + std::to_string(art.stats.size()) +
                    " layer stats for " + std::to_string(layers) +
                    " factors");

  std::string out = "RFSH0001";
  detail::put_u32(out, kFormatVersion);
  detail::put_u64(out, info.fingerprint);
  detail::put_u64(out, info.weights);
  out.push_back(art.method == FisherMethod::diag ? 0 : 1);
  detail::put_u32(out, uint32_t(layers));
  for (size_t l = 0; l < layers; ++l) {
    if (art.method == FisherMethod::diag) {
      const DiagFactor& f = art.diag[l];
      detail::put_u64(out, uint64_t(f.n_samples));
      detail::put_f64(out, f.damping);
      detail::put_u32(out, uint32_t(f.diag.dim(0)));
      detail::put_u32(out, uint32_t(f.diag.dim(1)));
      detail::put_tensor(out, f.diag);
    } else {
      const EkfacFactor& f = art.ekfac[l];
      detail::put_u64(out, uint64_t(f.n_samples));
      detail::put_f64(out, f.damping);
      detail::put_u32(out, uint32_t(f.sigma.dim(0)));
      detail::put_u32(out, uint32_t(f.sigma.dim(1)));
      detail::put_tensor(out, f.basis_out);
      detail::put_tensor(out, f.basis_in);
      detail::put_tensor(out, f.sigma);
    }
  }
  out.push_back(art.stats.empty() ? 0 : 1);
  for (const LayerStats& st : art.stats) {
    detail::put_f64(out, st.mu);
    detail::put_f64(out, st.sigma);
    detail::put_u64(out, uint64_t(st.count));
    out.push_back(st.degenerate ? 1 : 0);
  }
  detail::write_file_bytes(path, out, "save_fisher");
}

LoadedFisher load_fisher(const std::string& path) {
  const std::string buf = detail::read_file_bytes(path, "load_fisher");
  detail::ByteReader r(buf, "load_fisher: " + path);
  detail::expect_magic(r, "RFSH0001");
  const uint32_t version = r.u32();
  if (version != kFormatVersion)
    throw DataError("load_fisher: " + path + ": unsupported version " +
                    std::to_string(version));

  LoadedFisher lf;
  lf.info.fingerprint = r.u64();
  lf.info.weights = r.u64();
  const std::string method = r.bytes(1);
  if (method[0] != 0 && method[0] != 1)
    throw DataError("load_fisher: " + path + ": unknown method tag " +
                    std::to_string(int(method[0])));
  lf.artifact.method =
      method[0] == 0 ? FisherMethod::diag : FisherMethod::ekfac;
  const uint32_t layers = r.u32();
  if (layers == 0)
    throw DataError("load_fisher: " + path + ": no factors stored");

  for (uint32_t l = 0; l < layers; ++l) {
    const int64_t n_samples = int64_t(r.u64());
    const double damping = r.f64();
    const int64_t q = r.u32();
    const int64_t p = r.u32();
    if (q < 1 || p < 1)
      throw DataError("load_fisher: " + path + ": factor " +
                      std::to_string(l) + " declares empty sides");
    if (lf.artifact.method == FisherMethod::diag) {
      DiagFactor f;
      f.n_samples = n_samples;
      f.damping = damping;
      f.diag = detail::get_tensor(r, q, p);
      lf.artifact.diag.push_back(std::move(f));
    } else {
      EkfacFactor f;
      f.n_samples = n_samples;
      f.damping = damping;
      f.basis_out = detail::get_tensor(r, q, q);
      f.basis_in = detail::get_tensor(r, p, p);
      f.sigma = detail::get_tensor(r, q, p);
      lf.artifact.ekfac.push_back(std::move(f));
    }
  }
  const std::string has_stats = r.bytes(1);
  if (has_stats[0] == 1) {
    for (uint32_t l = 0; l < layers; ++l) {
      LayerStats st;
      st.mu = r.f64();
      st.sigma = r.f64();
      st.count = int64_t(r.u64());
      st.degenerate = r.bytes(1)[0] != 0;
      lf.artifact.stats.push_back(st);
    }
  } else if (has_stats[0] != 0) {
    throw DataError("load_fisher: " + path + ": bad stats flag");
  }
  r.done();
  return lf;
}

void write_score_csv(const ScoreTable& table, const std::string& path) {
  std::string out = "id";
  for (int64_t l = 1; l <= table.layers; ++l)
    out += ",s_raw_" + std::to_string(l);
  for (int64_t l = 1; l <= table.layers; ++l)
    out += ",s_hat_" + std::to_string(l);
  out += ",rose,nll\n";
  for (const ScoreRow& row : table.rows) {
    if (int64_t(row.raw.size()) != table.layers ||
        int64_t(row.shat.size()) != table.layers)
      throw DataError("write_score_csv: row width does not match the " +
                      std::to_string(table.layers) + "-layer header");
    out += std::to_string(row.id);
    for (double v : row.raw) {
      out.push_back(',');
      detail::put_value(out, v);
    }
    for (double v : row.shat) {
      out.push_back(',');
      detail::put_value(out, v);
    }
    out.push_back(',');
    detail::put_value(out, row.rose);
    out.push_back(',');
    detail::put_value(out, row.nll);
    out.push_back('\n');
  }
  detail::write_file_bytes(path, out, "write_score_csv");
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  size_t at = 0;
  while (true) {
    const size_t comma = line.find(',', at);
    if (comma == std::string::npos) {
      fields.push_back(line.substr(at));
      return fields;
    }
    fields.push_back(line.substr(at, comma - at));
    at = comma + 1;
  }
}

double parse_double(const std::string& s, const std::string& where) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0')
    throw DataError(where + ": '" + s + "' is not a number");
  return v;
}

}  // namespace

ScoreTable load_score_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("load_score_csv: cannot open " + path);
  std::string line;
  if (!std::getline(f, line))
    throw DataError("load_score_csv: " + path + " is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();

  const auto header = split_csv_line(line);
  int64_t layers = 0;
  while (size_t(layers + 1) < header.size() &&
         header[size_t(layers + 1)] ==
             "s_raw_" + std::to_string(layers + 1))
    ++layers;
  const size_t want = size_t(1 + 2 * layers + 2);
  bool ok = layers > 0 && header.size() == want && header[0] == "id" &&
            header[want - 2] == "rose" && header[want - 1] == "nll";
  for (int64_t l = 1; ok && l <= layers; ++l)
    ok = header[size_t(layers + l)] == "s_hat_" + std::to_string(l);
  if (!ok)
    throw DataError("load_score_csv: " + path +
                    ": header is not id,s_raw_*,s_hat_*,rose,nll");

  ScoreTable table;
  table.layers = layers;
  int64_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    const std::string where =
        "load_score_csv: " + path + " line " + std::to_string(lineno);
    if (fields.size() != want)
      throw DataError(where + ": expected " + std::to_string(want) +
                      " fields, got " + std::to_string(fields.size()));
    ScoreRow row;
    char* end = nullptr;
    row.id = std::strtoll(fields[0].c_str(), &end, 10);
    if (end == fields[0].c_str() || *end != '\0')
      throw DataError(where + ": '" + fields[0] + "' is not an id");
    for (int64_t l = 0; l < layers; ++l)
      row.raw.push_back(parse_double(fields[size_t(1 + l)], where));
    for (int64_t l = 0; l < layers; ++l)
      row.shat.push_back(parse_double(fields[size_t(1 + layers + l)], where));
    row.rose = parse_double(fields[want - 2], where);
    row.nll = parse_double(fields[want - 1], where);
    table.rows.push_back(std::move(row));
  }
  return table;
}

void write_report_csv(const std::vector<ReportRow>& rows,
                      const std::string& path) {
  std::string out = "metric,dataset,value\n";
  for (const ReportRow& r : rows) {
    out += r.metric + "," + r.dataset + ",";
    detail::put_value(out, r.value);
    out.push_back('\n');
  }
  detail::write_file_bytes(path, out, "write_report_csv");
}

void write_histogram_csv(const Histogram& h, const std::string& path) {
  std::string out = "bin_left,bin_right,count_in,count_out\n";
  for (size_t b = 0; b + 1 < h.edges.size(); ++b) {
    detail::put_value(out, h.edges[b]);
    out.push_back(',');
    detail::put_value(out, h.edges[b + 1]);
    out += "," + std::to_string(h.count_in[b]) + "," +
           std::to_string(h.count_out[b]) + "\n";
  }
  detail::write_file_bytes(path, out, "write_histogram_csv");
}

void write_loss_csv(const std::vector<double>& epoch_loss,
                    const std::string& path) {
  std::string out = "epoch,loss\n";
  for (size_t e = 0; e < epoch_loss.size(); ++e) {
    out += std::to_string(e) + ",";
    detail::put_value(out, epoch_loss[e]);
    out.push_back('\n');
  }
  detail::write_file_bytes(path, out, "write_loss_csv");
}

}  // namespace rose

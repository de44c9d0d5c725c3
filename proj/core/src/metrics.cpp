#include "rose/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "rose/error.hpp"

namespace rose {
namespace {

void check_scores(const std::vector<double>& s, const char* what,
                  const char* which) {
  if (s.empty())
    throw DataError(std::string(what) + ": empty " + which + " score array");
  for (double v : s)
    if (!std::isfinite(v))
      throw DataError(std::string(what) + ": non-finite " + which + " score");
}

}  // namespace

double auroc(const std::vector<double>& in_scores,
             const std::vector<double>& out_scores) {
  check_scores(in_scores, "auroc", "in");
  check_scores(out_scores, "auroc", "out");
  const int64_t n = int64_t(in_scores.size());
  const int64_t m = int64_t(out_scores.size());

  std::vector<std::pair<double, int>> all;
  all.reserve(size_t(n + m));
  for (double v : in_scores) all.emplace_back(v, 0);
  for (double v : out_scores) all.emplace_back(v, 1);
  std::sort(all.begin(), all.end());

  // doubled rank sum of the out group stays an exact integer under the
  // average-rank tie rule, so one final division decides the rounding and
  // auroc(in, out) + auroc(out, in) == 1 holds bitwise.
  int64_t two_rank_out = 0;
  size_t i = 0;
  while (i < all.size()) {
    size_t j = i;
    int64_t out_in_group = 0;
    while (j < all.size() && all[j].first == all[i].first) {
      out_in_group += all[j].second;
      ++j;
    }
    two_rank_out += out_in_group * int64_t(i + 1 + j);  // 1-based a + b
    i = j;
  }
  const int64_t two_u = two_rank_out - m * (m + 1);
  return double(two_u) / double(2 * n * m);
}

double auprc(const std::vector<double>& in_scores,
             const std::vector<double>& out_scores) {
  check_scores(in_scores, "auprc", "in");
  check_scores(out_scores, "auprc", "out");
  std::vector<double> in = in_scores, out = out_scores;
  std::sort(in.begin(), in.end());
  std::sort(out.begin(), out.end());

  // sweep thresholds through the distinct merged score values ascending;
  // positives are in-distribution samples at or below the threshold. area is
  // the step-wise sum of precision over recall increments.
  const double n = double(in.size());
  size_t i = 0, j = 0;
  int64_t tp = 0, fp = 0, prev_tp = 0;
  double area = 0;
  while (i < in.size() || j < out.size()) {
    double tau;
    if (i == in.size())
      tau = out[j];
    else if (j == out.size())
      tau = in[i];
    else
      tau = std::min(in[i], out[j]);
    while (i < in.size() && in[i] == tau) {
      ++tp;
      ++i;
    }
    while (j < out.size() && out[j] == tau) {
      ++fp;
      ++j;
    }
    if (tp > prev_tp) {
      const double precision = double(tp) / double(tp + fp);
      area += (double(tp - prev_tp) / n) * precision;
      prev_tp = tp;
    }
  }
  return area;
}

double fpr_at_tpr(const std::vector<double>& in_scores,
                  const std::vector<double>& out_scores, double tpr_target) {
  check_scores(in_scores, "fpr_at_tpr", "in");
  check_scores(out_scores, "fpr_at_tpr", "out");
  if (!(tpr_target > 0.0 && tpr_target <= 1.0))
    throw DataError("fpr_at_tpr: target must lie in (0, 1]");

  std::vector<double> in = in_scores;
  std::sort(in.begin(), in.end());
  const int64_t n = int64_t(in.size());
  // smallest threshold detecting the target fraction of in samples is the
  // ceil(target * n)-th smallest in score (the guard absorbs products like
  // 0.8 * 5 landing a hair above the integer).
  int64_t k = int64_t(std::ceil(tpr_target * double(n) - 1e-9));
  k = std::max<int64_t>(1, std::min(n, k));
  const double tau = in[size_t(k - 1)];

  int64_t below = 0;
  for (double v : out_scores)
    if (v <= tau) ++below;
  return double(below) / double(out_scores.size());
}

EvalResult evaluate_scores(const std::vector<double>& in_scores,
                           const std::vector<double>& out_scores) {
  EvalResult r;
  r.auroc = auroc(in_scores, out_scores);
  r.auprc = auprc(in_scores, out_scores);
  r.fpr80 = fpr_at_tpr(in_scores, out_scores, 0.80);
  r.n_in = int64_t(in_scores.size());
  r.n_out = int64_t(out_scores.size());
  return r;
}

std::vector<double> layer_aurocs(const Tensor64& in_scores,
                                 const Tensor64& out_scores) {
  detail::require_matrix(in_scores, "layer_aurocs");
  detail::require_matrix(out_scores, "layer_aurocs");
  if (in_scores.dim(1) != out_scores.dim(1))
    throw DataError("layer_aurocs: layer counts differ (" +
                    std::to_string(in_scores.dim(1)) + " vs " +
                    std::to_string(out_scores.dim(1)) + ")");
  const int64_t layers = in_scores.dim(1);
  std::vector<double> result;
  result.reserve(size_t(layers));
  std::vector<double> in(size_t(in_scores.dim(0)));
  std::vector<double> out(size_t(out_scores.dim(0)));
  for (int64_t l = 0; l < layers; ++l) {
    for (int64_t r = 0; r < in_scores.dim(0); ++r)
      in[size_t(r)] = in_scores[r * layers + l];
    for (int64_t r = 0; r < out_scores.dim(0); ++r)
      out[size_t(r)] = out_scores[r * layers + l];
    result.push_back(auroc(in, out));
  }
  return result;
}

Histogram score_histogram(const std::vector<double>& in_scores,
                          const std::vector<double>& out_scores, int bins) {
  check_scores(in_scores, "score_histogram", "in");
  check_scores(out_scores, "score_histogram", "out");
  if (bins < 1) throw DataError("score_histogram: bins must be positive");

  double lo = in_scores[0], hi = in_scores[0];
  for (double v : in_scores) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  for (double v : out_scores) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi <= lo) hi = lo + 1.0;  // degenerate spread: one occupied bin

  Histogram h;
  h.edges.resize(size_t(bins) + 1);
  for (int b = 0; b <= bins; ++b)
    h.edges[size_t(b)] = lo + (hi - lo) * double(b) / double(bins);
  h.edges.back() = hi;
  h.count_in.assign(size_t(bins), 0);
  h.count_out.assign(size_t(bins), 0);
  const auto bin_of = [&](double v) {
    int b = int((v - lo) / (hi - lo) * double(bins));
    return std::max(0, std::min(bins - 1, b));
  };
  for (double v : in_scores) ++h.count_in[size_t(bin_of(v))];
  for (double v : out_scores) ++h.count_out[size_t(bin_of(v))];
  return h;
}

SweepTable robustness_sweep(const std::vector<double>& grid,
                            const std::function<double(double)>& auroc_at) {
  if (grid.empty()) throw DataError("robustness_sweep: empty grid");
  SweepTable t;
  t.rows.reserve(grid.size());
  for (double x : grid) t.rows.push_back({x, auroc_at(x)});
  double mean = 0;
  for (const auto& row : t.rows) mean += row.auroc;
  mean /= double(t.rows.size());
  double var = 0;
  for (const auto& row : t.rows) {
    const double d = row.auroc - mean;
    var += d * d;
  }
  t.mean = mean;
  t.stddev = std::sqrt(var / double(t.rows.size()));
  return t;
}

}  // namespace rose

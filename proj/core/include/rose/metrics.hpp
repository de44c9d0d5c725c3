#pragma once

// threshold-free detection metrics over score arrays. convention everywhere:
// higher score = more out-of-distribution; the positive class is
// in-distribution, detected positive when its score falls at or below the
// threshold.

#include <cstdint>
#include <functional>
#include <vector>

#include "rose/tensor.hpp"

namespace rose {

struct EvalResult {
  double auroc = 0;
  double auprc = 0;
  double fpr80 = 0;
  int64_t n_in = 0;
  int64_t n_out = 0;
  std::vector<double> layer_aurocs;  // filled by layer_aurocs() when wanted
};

// probability that a random out sample outranks a random in sample, ties
// counted one half (average-rank mann-whitney).
double auroc(const std::vector<double>& in_scores,
             const std::vector<double>& out_scores);

// area under the precision-recall curve with step-wise interpolation.
double auprc(const std::vector<double>& in_scores,
             const std::vector<double>& out_scores);

// fraction of out scores at or below the smallest threshold that detects
// `tpr_target` of the in scores.
double fpr_at_tpr(const std::vector<double>& in_scores,
                  const std::vector<double>& out_scores,
                  double tpr_target = 0.80);

inline double fpr80(const std::vector<double>& in_scores,
                    const std::vector<double>& out_scores) {
  return fpr_at_tpr(in_scores, out_scores, 0.80);
}

EvalResult evaluate_scores(const std::vector<double>& in_scores,
                           const std::vector<double>& out_scores);

// one auroc per column of two [n, layers] score matrices.
std::vector<double> layer_aurocs(const Tensor64& in_scores,
                                 const Tensor64& out_scores);

// equal-width shared binning of both samples, for plotting externally.
struct Histogram {
  std::vector<double> edges;  // bins + 1 ascending edges
  std::vector<int64_t> count_in;
  std::vector<int64_t> count_out;
};

Histogram score_histogram(const std::vector<double>& in_scores,
                          const std::vector<double>& out_scores,
                          int bins = 50);

// one detector auroc per grid point plus the row mean and population spread.
struct SweepRow {
  double x = 0;
  double auroc = 0;
};

struct SweepTable {
  std::vector<SweepRow> rows;
  double mean = 0;
  double stddev = 0;
};

SweepTable robustness_sweep(const std::vector<double>& grid,
                            const std::function<double(double)>& auroc_at);

}  // namespace rose

#pragma once

#include <iosfwd>
#include <vector>

namespace repspk {

struct ScoredTrial {
  double score = 0.0;
  bool target = false;
};

struct DcfParams {
  double p_target = 0.01;
  double c_fa = 1.0;
  double c_miss = 1.0;
};

// dot(a,b) / (|a|*|b|). Throws on length mismatch or a zero-norm input.
double cosine_score(const std::vector<double>& a, const std::vector<double>& b);

struct MetricResult {
  double value = 0.0;
  double threshold = 0.0;
};

// Equal error rate under the accept-iff-score>=threshold rule, swept over
// the distinct scores plus one sentinel above the max. When no candidate
// gives FAR == FRR exactly, the crossing is linearly interpolated between
// the two adjacent operating points. Needs both classes present.
MetricResult compute_eer(const std::vector<ScoredTrial>& trials);

// Normalized minimum detection cost: min over candidate thresholds (distinct
// scores plus a sentinel beyond each end) of
//   c_miss * p_target * Pmiss + c_fa * (1 - p_target) * Pfa,
// divided by min(c_miss * p_target, c_fa * (1 - p_target)).
MetricResult compute_mindcf(const std::vector<ScoredTrial>& trials,
                            const DcfParams& params = {});

// Score file: one `score<TAB>label` line per trial, label 1 = target.
std::vector<ScoredTrial> read_score_lines(std::istream& in);
void write_score_lines(std::ostream& out,
                       const std::vector<ScoredTrial>& trials);

}  // namespace repspk

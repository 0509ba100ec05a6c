#include "repspk/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "repspk/errors.hpp"

namespace repspk {

double cosine_score(const std::vector<double>& a,
                    const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty()) {
    throw ShapeError("cosine_score: vector lengths " +
                     std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) {
    throw ValueError("cosine_score: zero-norm embedding");
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

namespace {

struct SplitTrials {
  std::vector<double> targets;     // sorted ascending
  std::vector<double> nontargets;  // sorted ascending
};

SplitTrials split_and_validate(const std::vector<ScoredTrial>& trials,
                               const char* op) {
  SplitTrials s;
  for (const auto& t : trials) {
    if (!std::isfinite(t.score)) {
      throw ValueError(std::string(op) + ": non-finite score");
    }
    (t.target ? s.targets : s.nontargets).push_back(t.score);
  }
  if (s.targets.empty() || s.nontargets.empty()) {
    throw ValueError(std::string(op) +
                     ": need at least one target and one nontarget trial");
  }
  std::sort(s.targets.begin(), s.targets.end());
  std::sort(s.nontargets.begin(), s.nontargets.end());
  return s;
}

// Targets rejected at threshold t: score < t.
std::int64_t miss_count(const std::vector<double>& targets, double t) {
  return std::lower_bound(targets.begin(), targets.end(), t) -
         targets.begin();
}

// Nontargets accepted at threshold t: score >= t.
std::int64_t fa_count(const std::vector<double>& nontargets, double t) {
  return nontargets.end() -
         std::lower_bound(nontargets.begin(), nontargets.end(), t);
}

std::vector<double> distinct_scores(const SplitTrials& s) {
  std::vector<double> all;
  all.reserve(s.targets.size() + s.nontargets.size());
  all.insert(all.end(), s.targets.begin(), s.targets.end());
  all.insert(all.end(), s.nontargets.begin(), s.nontargets.end());
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  return all;
}

}  // namespace

MetricResult compute_eer(const std::vector<ScoredTrial>& trials) {
  const SplitTrials s = split_and_validate(trials, "compute_eer");
  std::vector<double> candidates = distinct_scores(s);
  candidates.push_back(candidates.back() + 1.0);  // reject-all endpoint

  const double nt = static_cast<double>(s.targets.size());
  const double nn = static_cast<double>(s.nontargets.size());
  // At the lowest candidate everything is accepted (FAR 1, FRR 0), at the
  // sentinel nothing is (FAR 0, FRR 1), and FRR - FAR never decreases, so a
  // sign change exists and has a predecessor.
  double prev_far = 1.0, prev_frr = 0.0, prev_t = candidates.front();
  for (const double t : candidates) {
    const double frr = static_cast<double>(miss_count(s.targets, t)) / nt;
    const double far = static_cast<double>(fa_count(s.nontargets, t)) / nn;
    if (frr >= far) {
      if (frr == far) return {far, t};
      const double alpha =
          (prev_far - prev_frr) / ((frr - prev_frr) - (far - prev_far));
      return {prev_far + alpha * (far - prev_far),
              prev_t + alpha * (t - prev_t)};
    }
    prev_far = far;
    prev_frr = frr;
    prev_t = t;
  }
  throw ValueError("compute_eer: no crossing found");  // unreachable
}

MetricResult compute_mindcf(const std::vector<ScoredTrial>& trials,
                            const DcfParams& params) {
  if (!(params.p_target > 0.0) || !(params.p_target < 1.0) ||
      !(params.c_fa > 0.0) || !(params.c_miss > 0.0)) {
    throw ValueError("compute_mindcf: need 0 < p_target < 1 and positive costs");
  }
  const SplitTrials s = split_and_validate(trials, "compute_mindcf");
  std::vector<double> candidates;
  const std::vector<double> scores = distinct_scores(s);
  candidates.reserve(scores.size() + 2);
  candidates.push_back(scores.front() - 1.0);  // accept-all endpoint
  candidates.insert(candidates.end(), scores.begin(), scores.end());
  candidates.push_back(scores.back() + 1.0);  // reject-all endpoint

  const double nt = static_cast<double>(s.targets.size());
  const double nn = static_cast<double>(s.nontargets.size());
  const double miss_w = params.c_miss * params.p_target;
  const double fa_w = params.c_fa * (1.0 - params.p_target);

  double best = 0.0, best_t = 0.0;
  bool first = true;
  for (const double t : candidates) {
    const double pmiss = static_cast<double>(miss_count(s.targets, t)) / nt;
    const double pfa = static_cast<double>(fa_count(s.nontargets, t)) / nn;
    const double cost = miss_w * pmiss + fa_w * pfa;
    if (first || cost < best) {
      best = cost;
      best_t = t;
      first = false;
    }
  }
  return {best / std::min(miss_w, fa_w), best_t};
}

std::vector<ScoredTrial> read_score_lines(std::istream& in) {
  std::vector<ScoredTrial> trials;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    ScoredTrial t;
    int label = -1;
    if (!(ls >> t.score >> label) || (label != 0 && label != 1) ||
        !std::isfinite(t.score)) {
      throw ValueError("score line " + std::to_string(lineno) +
                       ": expected `score<TAB>label` with label 0 or 1");
    }
    t.target = label == 1;
    trials.push_back(t);
  }
  return trials;
}

void write_score_lines(std::ostream& out,
                       const std::vector<ScoredTrial>& trials) {
  const auto old_precision = out.precision(17);
  for (const auto& t : trials) {
    out << t.score << "\t" << (t.target ? 1 : 0) << "\n";
  }
  out.precision(old_precision);
}

}  // namespace repspk

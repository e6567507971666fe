#pragma once

// Binary-classification evaluation: ROC sweep, AUC, EER, HTER.
// Label 1 is a real (bona fide) sample, label 0 an attack. A sample is
// accepted as real when score >= threshold.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedtta {

struct ScoredSet {
  std::vector<double> scores;
  std::vector<int> labels;

  std::size_t size() const noexcept { return scores.size(); }
};

struct RocPoint {
  double far = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;
};

struct ErrorRates {
  double hter = 0.0;
  double far = 0.0;
  double frr = 0.0;
};

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
};

struct MetricsReport {
  double hter = 0.0;
  double eer = 0.0;
  double auc = 0.0;
  double far = 0.0;
  double frr = 0.0;
  double threshold = 0.0;
  std::vector<RocPoint> roc;
};

namespace detail {

struct ClassCounts {
  std::size_t reals = 0;
  std::size_t attacks = 0;
};

inline ClassCounts validate_scored(const ScoredSet& s, const char* who) {
  if (s.scores.size() != s.labels.size()) {
    throw std::invalid_argument(std::string(who) + ": scores and labels differ in length");
  }
  ClassCounts c;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s.labels[i] == 1) {
      ++c.reals;
    } else if (s.labels[i] == 0) {
      ++c.attacks;
    } else {
      throw std::invalid_argument(std::string(who) + ": labels must be 0 or 1");
    }
    if (std::isnan(s.scores[i])) throw std::invalid_argument(std::string(who) + ": NaN score");
  }
  if (c.reals == 0 || c.attacks == 0) {
    throw std::invalid_argument(std::string(who) + ": both classes must be present");
  }
  return c;
}

inline std::vector<double> distinct_scores(const ScoredSet& s) {
  std::vector<double> d = s.scores;
  std::sort(d.begin(), d.end());
  d.erase(std::unique(d.begin(), d.end()), d.end());
  return d;
}

// Candidate operating thresholds in ascending order: -inf, midpoints between
// consecutive distinct scores, +inf. Every distinct accept/reject partition
// of the set is realized by exactly one candidate.
inline std::vector<double> candidate_thresholds(const ScoredSet& s) {
  const auto d = distinct_scores(s);
  std::vector<double> t;
  t.reserve(d.size() + 1);
  t.push_back(-std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i + 1 < d.size(); ++i) t.push_back(0.5 * (d[i] + d[i + 1]));
  t.push_back(std::numeric_limits<double>::infinity());
  return t;
}

struct ErrorCounts {
  std::size_t accepted_attacks = 0;
  std::size_t rejected_reals = 0;
};

inline ErrorCounts count_errors(const ScoredSet& s, double threshold) {
  ErrorCounts e;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const bool accept = s.scores[i] >= threshold;
    if (s.labels[i] == 0 && accept) ++e.accepted_attacks;
    if (s.labels[i] == 1 && !accept) ++e.rejected_reals;
  }
  return e;
}

inline ErrorRates rates_from(ErrorCounts e, ClassCounts c) {
  ErrorRates r;
  r.far = static_cast<double>(e.accepted_attacks) / static_cast<double>(c.attacks);
  r.frr = static_cast<double>(e.rejected_reals) / static_cast<double>(c.reals);
  r.hter = 0.5 * (r.far + r.frr);
  return r;
}

inline ErrorRates rates_at(const ScoredSet& s, double threshold, ClassCounts c) {
  return rates_from(count_errors(s, threshold), c);
}

}  // namespace detail

inline ErrorRates hter(const ScoredSet& s, double threshold) {
  const auto c = detail::validate_scored(s, "hter");
  return detail::rates_at(s, threshold, c);
}

// Points ordered from (0,0) to (1,1), one per distinct score threshold plus
// the two sentinels.
inline std::vector<RocPoint> roc_curve(const ScoredSet& s) {
  const auto c = detail::validate_scored(s, "roc_curve");
  std::vector<std::size_t> order(s.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s.scores[a] > s.scores[b]; });

  std::vector<RocPoint> roc;
  roc.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  std::size_t tp = 0, fp = 0;
  for (std::size_t k = 0; k < order.size();) {
    const double tau = s.scores[order[k]];
    while (k < order.size() && s.scores[order[k]] == tau) {
      if (s.labels[order[k]] == 1) ++tp; else ++fp;
      ++k;
    }
    roc.push_back({static_cast<double>(fp) / static_cast<double>(c.attacks),
                   static_cast<double>(tp) / static_cast<double>(c.reals), tau});
  }
  roc.push_back({1.0, 1.0, -std::numeric_limits<double>::infinity()});
  return roc;
}

inline double trapezoid_area(const std::vector<RocPoint>& roc) {
  double area = 0.0;
  for (std::size_t i = 1; i < roc.size(); ++i) {
    area += (roc[i].far - roc[i - 1].far) * (roc[i].tpr + roc[i - 1].tpr) * 0.5;
  }
  return area;
}

// Mann-Whitney statistic: P(real score > attack score), ties count 1/2.
// Computed from ranks in O(n log n).
inline double auc(const ScoredSet& s) {
  const auto c = detail::validate_scored(s, "auc");
  std::vector<std::size_t> order(s.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s.scores[a] < s.scores[b]; });

  // wins counted in half-units to stay exact in integers
  std::size_t attacks_below = 0;
  long double twice_wins = 0;
  for (std::size_t k = 0; k < order.size();) {
    const double v = s.scores[order[k]];
    std::size_t reals_here = 0, attacks_here = 0;
    while (k < order.size() && s.scores[order[k]] == v) {
      if (s.labels[order[k]] == 1) ++reals_here; else ++attacks_here;
      ++k;
    }
    twice_wins += 2.0L * static_cast<long double>(reals_here) * attacks_below +
                  static_cast<long double>(reals_here) * attacks_here;
    attacks_below += attacks_here;
  }
  return static_cast<double>(twice_wins / (2.0L * c.reals * c.attacks));
}

// Threshold minimizing |FAR - FRR| over the candidate thresholds; ties go to
// the lowest threshold. The reported rate is the mean of FAR and FRR there.
inline EerResult eer(const ScoredSet& s) {
  const auto c = detail::validate_scored(s, "eer");
  EerResult best;
  // |FAR - FRR| scaled by reals * attacks, so equal gaps compare equal
  std::size_t best_gap = std::numeric_limits<std::size_t>::max();
  for (double t : detail::candidate_thresholds(s)) {
    const auto e = detail::count_errors(s, t);
    const std::size_t a = e.accepted_attacks * c.reals, b = e.rejected_reals * c.attacks;
    const std::size_t gap = a > b ? a - b : b - a;
    if (gap < best_gap) {
      best_gap = gap;
      const auto r = detail::rates_from(e, c);
      best = {0.5 * (r.far + r.frr), t};
    }
  }
  return best;
}

// Operating threshold from pooled data-center development scores.
inline double select_threshold(const ScoredSet& dev) { return eer(dev).threshold; }

inline MetricsReport evaluate(const ScoredSet& test, double threshold) {
  MetricsReport r;
  const auto e = hter(test, threshold);
  r.hter = e.hter;
  r.far = e.far;
  r.frr = e.frr;
  r.threshold = threshold;
  r.eer = eer(test).eer;
  r.auc = auc(test);
  r.roc = roc_curve(test);
  return r;
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_roc_csv(std::ostream& os, const std::vector<RocPoint>& roc) {
  os << "FAR,TPR\n";
  for (const auto& p : roc) os << format_double(p.far) << ',' << format_double(p.tpr) << '\n';
}

inline void write_report_lines(std::ostream& os, const MetricsReport& r, const std::string& prefix = "") {
  os << prefix << "hter=" << format_double(r.hter) << '\n'
     << prefix << "eer=" << format_double(r.eer) << '\n'
     << prefix << "auc=" << format_double(r.auc) << '\n'
     << prefix << "far=" << format_double(r.far) << '\n'
     << prefix << "frr=" << format_double(r.frr) << '\n'
     << prefix << "threshold=" << format_double(r.threshold) << '\n';
}

}  // namespace fedtta

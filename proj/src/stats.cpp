#include "liverdiff/stats.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

namespace liverdiff {

double roc_auc(std::span<const ScoredItem> items) {
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return items[a].score < items[b].score; });
  double n_pos = 0;
  double rank_sum_pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && items[order[j]].score == items[order[i]].score) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (items[order[k]].label != 0 && items[order[k]].label != 1) throw std::invalid_argument("roc_auc: labels must be 0/1");
      if (items[order[k]].label == 1) {
        n_pos += 1;
        rank_sum_pos += mid_rank;
      }
    }
    i = j;
  }
  const double n_neg = static_cast<double>(items.size()) - n_pos;
  if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("roc_auc: both classes must be present");
  return (rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg);
}

std::vector<RocPoint> roc_curve(std::span<const ScoredItem> items) {
  std::vector<ScoredItem> sorted(items.begin(), items.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
  double n_pos = 0;
  for (const auto& s : sorted) n_pos += s.label;
  const double n_neg = static_cast<double>(sorted.size()) - n_pos;
  if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("roc_curve: both classes must be present");
  std::vector<RocPoint> pts{{0, 0}};
  double tp = 0, fp = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j].score == sorted[i].score) {
      (sorted[j].label == 1 ? tp : fp) += 1;
      ++j;
    }
    pts.push_back({fp / n_neg, tp / n_pos});
    i = j;
  }
  return pts;
}

std::vector<PatientScore> patient_level_scores(std::span<const ImagePrediction> predictions) {
  std::vector<PatientScore> out;
  std::unordered_map<std::string, std::size_t> slot;
  for (const auto& p : predictions) {
    if (p.patient_id.empty()) throw std::invalid_argument("patient_level_scores: image " + p.image_id + " has no patient id");
    auto [it, inserted] = slot.try_emplace(p.patient_id, out.size());
    if (inserted) out.push_back({p.patient_id, p.label, 0.0, 0});
    auto& ps = out[it->second];
    if (ps.label != p.label) throw std::invalid_argument("patient " + p.patient_id + " has images with different labels");
    ps.score += p.score;
    ++ps.n_images;
  }
  for (auto& ps : out) ps.score /= ps.n_images;
  return out;
}

double mean(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("mean of empty sample");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_std(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double ss = 0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

TTestResult paired_ttest(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("paired_ttest: samples differ in length");
  if (a.size() < 2) throw std::invalid_argument("paired_ttest: need at least 2 pairs");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double md = mean(d);
  const double sd = sample_std(d);
  TTestResult r;
  r.df = static_cast<int>(d.size()) - 1;
  if (sd == 0.0) {
    r.degenerate = true;
    if (md == 0.0) {
      r.t = 0.0;
      r.p = 1.0;
    } else {
      r.t = std::copysign(std::numeric_limits<double>::infinity(), md);
      r.p = 0.0;
    }
    return r;
  }
  r.t = md / (sd / std::sqrt(static_cast<double>(d.size())));
  const boost::math::students_t dist(r.df);
  r.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  return r;
}

Interval t_interval(std::span<const double> values, double confidence) {
  Interval iv;
  iv.n = static_cast<int>(values.size());
  iv.mean = mean(values);
  const double sd = sample_std(values);
  if (values.size() < 2 || sd == 0.0) {
    iv.lo = iv.hi = iv.mean;
    return iv;
  }
  const boost::math::students_t dist(static_cast<double>(values.size() - 1));
  const double q = boost::math::quantile(boost::math::complement(dist, (1.0 - confidence) / 2.0));
  const double half = q * sd / std::sqrt(static_cast<double>(values.size()));
  iv.lo = iv.mean - half;
  iv.hi = iv.mean + half;
  return iv;
}

}  // namespace liverdiff

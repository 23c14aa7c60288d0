#pragma once

#include "liverdiff/dataset.hpp"

#include <span>
#include <string>
#include <vector>

namespace liverdiff {

struct ScoredItem {
  double score = 0;
  int label = 0;  ///< 0 or 1
};

/// Area under the ROC curve via mid-ranks: P(s+ > s-) + 0.5 P(s+ = s-).
/// Throws if either class is absent.
double roc_auc(std::span<const ScoredItem> items);

struct RocPoint {
  double fpr = 0;
  double tpr = 0;
};

/// ROC curve vertices from (0,0) to (1,1), one vertex per distinct threshold.
std::vector<RocPoint> roc_curve(std::span<const ScoredItem> items);

struct ImagePrediction {
  std::string image_id;
  std::string patient_id;
  int label = 0;
  double score = 0;
};

struct PatientScore {
  std::string patient_id;
  int label = 0;
  double score = 0;
  int n_images = 0;
};

/// Mean image prediction per patient, in order of first appearance.
/// Throws if a patient's images disagree on the label.
std::vector<PatientScore> patient_level_scores(std::span<const ImagePrediction> predictions);

struct TTestResult {
  double t = 0;
  double p = 1;
  int df = 0;
  bool degenerate = false;  ///< differences have zero variance
};

/// Paired two-sided t-test on per-seed differences a_i - b_i (n - 1 df).
TTestResult paired_ttest(std::span<const double> a, std::span<const double> b);

struct Interval {
  double mean = 0;
  double lo = 0;
  double hi = 0;
  int n = 0;
};

/// Two-sided t confidence interval for the mean (n - 1 df). With n = 1 or
/// zero spread the interval collapses to the mean.
Interval t_interval(std::span<const double> values, double confidence = 0.95);

double mean(std::span<const double> v);
/// Sample standard deviation (n - 1 denominator); 0 for n < 2.
double sample_std(std::span<const double> v);

}  // namespace liverdiff

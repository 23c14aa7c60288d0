#include "liverdiff/geneval.hpp"

#include <map>
#include <random>
#include <sstream>

namespace liverdiff {

StubExtractor::StubExtractor(std::uint64_t seed) {
  constexpr int in = kInputSide * kInputSide;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
  w_embed_ = Eigen::MatrixXd::NullaryExpr(kFeatureDim, in, [&] { return n(rng); });
  b_embed_ = Eigen::VectorXd::NullaryExpr(kFeatureDim, [&] { return 0.1 * n(rng); });
  w_class_ = Eigen::MatrixXd::NullaryExpr(kNumImageClasses, in, [&] { return 4.0 * n(rng); });
}

Eigen::VectorXd StubExtractor::input_vector(const Plane& image) const {
  const Plane small = resize_bilinear(image, 0, 0, static_cast<double>(image.rows()), static_cast<double>(image.cols()),
                                      kInputSide, kInputSide);
  return Eigen::Map<const Eigen::VectorXf>(small.data(), small.size()).cast<double>();
}

Eigen::VectorXd StubExtractor::embed(const Plane& image) const {
  return (w_embed_ * input_vector(image) + b_embed_).array().tanh().matrix();
}

Eigen::VectorXd StubExtractor::classify(const Plane& image) const {
  const Eigen::VectorXd logits = w_class_ * input_vector(image);
  const Eigen::VectorXd e = (logits.array() - logits.maxCoeff()).exp().matrix();
  return e / e.sum();
}

Eigen::VectorXd BrightnessExtractor::embed(const Plane& image) const {
  return Eigen::VectorXd::Constant(kFeatureDim, static_cast<double>(image.mean()));
}

Eigen::VectorXd BrightnessExtractor::classify(const Plane&) const {
  return Eigen::VectorXd::Constant(kNumImageClasses, 1.0 / kNumImageClasses);
}

ExtractedFeatures extract(const FeatureExtractor& extractor, const std::vector<const Plane*>& images) {
  ExtractedFeatures out;
  out.features.resize(static_cast<Eigen::Index>(images.size()), kFeatureDim);
  out.probs.resize(static_cast<Eigen::Index>(images.size()), kNumImageClasses);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    out.features.row(row) = extractor.embed(*images[i]).transpose();
    out.probs.row(row) = extractor.classify(*images[i]).transpose();
  }
  return out;
}

namespace {

Eigen::MatrixXd select_rows(const Eigen::MatrixXd& m, const std::vector<Eigen::Index>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

}  // namespace

std::vector<GenEvalRow> evaluate_synthetic(const SyntheticSet& set, const std::vector<LabeledImage>& validation,
                                           const FeatureExtractor& extractor, int n_splits) {
  if (set.images.empty()) throw std::invalid_argument("evaluate_synthetic: synthetic set is empty");
  if (set.provenance.size() != set.images.size()) throw std::invalid_argument("evaluate_synthetic: provenance size mismatch");
  std::vector<const Plane*> syn_ptrs;
  for (const auto& im : set.images) syn_ptrs.push_back(&im);
  std::vector<const Plane*> real_ptrs;
  for (const auto& v : validation) real_ptrs.push_back(v.image);
  const ExtractedFeatures syn = extract(extractor, syn_ptrs);
  const ExtractedFeatures real = extract(extractor, real_ptrs);

  std::vector<GenEvalRow> rows;
  for (const std::string cls : {"healthy", "unhealthy", "both"}) {
    std::vector<Eigen::Index> syn_rows, real_rows;
    for (std::size_t i = 0; i < set.provenance.size(); ++i)
      if (cls == "both" || (set.provenance[i].intended_label == ClassLabel::unhealthy) == (cls == "unhealthy"))
        syn_rows.push_back(static_cast<Eigen::Index>(i));
    for (std::size_t i = 0; i < validation.size(); ++i)
      if (cls == "both" || (validation[i].label == ClassLabel::unhealthy) == (cls == "unhealthy"))
        real_rows.push_back(static_cast<Eigen::Index>(i));

    GenEvalRow row;
    row.variant = to_string(set.variant);
    row.cls = cls;
    row.fold_id = set.fold_id;
    row.n_synthetic = static_cast<int>(syn_rows.size());
    row.n_real = static_cast<int>(real_rows.size());
    if (!syn_rows.empty()) {
      const auto [m, s] = inception_score(select_rows(syn.probs, syn_rows),
                                          std::min<int>(n_splits, static_cast<int>(syn_rows.size())));
      row.is_mean = m;
      row.is_std = s;
    }
    if (syn_rows.size() >= 2 && real_rows.size() >= 2)
      row.fid = std::max(0.0, frechet_distance_from_features(select_rows(syn.features, syn_rows),
                                                             select_rows(real.features, real_rows)));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<GenEvalAggregate> aggregate_folds(const std::vector<GenEvalRow>& rows) {
  std::map<std::pair<std::string, std::string>, std::pair<std::vector<double>, std::vector<double>>> groups;
  std::vector<std::pair<std::string, std::string>> order;
  for (const auto& r : rows) {
    const auto key = std::make_pair(r.variant, r.cls);
    if (!groups.count(key)) order.push_back(key);
    auto& g = groups[key];
    if (r.is_mean) g.first.push_back(*r.is_mean);
    if (r.fid) g.second.push_back(*r.fid);
  }
  std::vector<GenEvalAggregate> out;
  for (const auto& key : order) {
    const auto& g = groups[key];
    GenEvalAggregate a{key.first, key.second, std::nullopt, std::nullopt};
    if (!g.first.empty()) a.is_mean = t_interval(g.first);
    if (!g.second.empty()) a.fid = t_interval(g.second);
    out.push_back(a);
  }
  return out;
}

namespace {

std::string fmt(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream os;
  os.precision(6);
  os << *v;
  return os.str();
}

}  // namespace

std::string report_csv(const GenEvalReport& report) {
  std::ostringstream os;
  os << "variant,class,fold,n_synthetic,n_real,IS_mean,IS_std,FID,IS_ci_lo,IS_ci_hi,FID_ci_lo,FID_ci_hi\n";
  for (const auto& r : report.rows)
    os << r.variant << ',' << r.cls << ',' << r.fold_id << ',' << r.n_synthetic << ',' << r.n_real << ','
       << fmt(r.is_mean) << ',' << fmt(r.is_std) << ',' << fmt(r.fid) << ",,,,\n";
  for (const auto& a : report.aggregates) {
    const auto opt = [](const std::optional<Interval>& iv, double Interval::*field) -> std::optional<double> {
      if (!iv) return std::nullopt;
      return (*iv).*field;
    };
    os << a.variant << ',' << a.cls << ",mean,,," << fmt(opt(a.is_mean, &Interval::mean)) << ",,"
       << fmt(opt(a.fid, &Interval::mean)) << ',' << fmt(opt(a.is_mean, &Interval::lo)) << ','
       << fmt(opt(a.is_mean, &Interval::hi)) << ',' << fmt(opt(a.fid, &Interval::lo)) << ','
       << fmt(opt(a.fid, &Interval::hi)) << '\n';
  }
  return os.str();
}

}  // namespace liverdiff

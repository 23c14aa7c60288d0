#include "liverdiff/diffusion.hpp"

namespace liverdiff {

NoiseSchedule build_schedule(int T, double beta_start, double beta_end) {
  if (T < 2) throw std::invalid_argument("build_schedule: T must be at least 2");
  if (!(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0))
    throw std::invalid_argument("build_schedule: need 0 < beta_start < beta_end < 1");
  NoiseSchedule s;
  s.T = T;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  s.betas = Eigen::VectorXd::LinSpaced(T, beta_start, beta_end);
  s.alpha_bars.resize(T);
  double prod = 1.0;
  for (int t = 0; t < T; ++t) {
    prod *= 1.0 - s.betas(t);
    s.alpha_bars(t) = prod;
  }
  return s;
}

}  // namespace liverdiff

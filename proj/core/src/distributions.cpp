#include "prunecert/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "prunecert/rng.hpp"

namespace prunecert {

namespace {
constexpr double kLog2Pi = 1.8378770664093453;  // ln(2*pi)

void check_family(const ActionDistribution& p, const ActionDistribution& q) {
  if (p.family != q.family) {
    throw std::invalid_argument("distribution family mismatch");
  }
  if (p.family == HeadFamily::kGaussian) {
    if (p.mean.size() != q.mean.size()) {
      throw std::invalid_argument("gaussian dimension mismatch");
    }
  } else if (p.probs.size() != q.probs.size()) {
    throw std::invalid_argument("categorical dimension mismatch");
  }
}
}  // namespace

ActionDistribution ActionDistribution::gaussian(std::vector<double> mean,
                                                std::vector<double> std) {
  if (mean.size() != std.size()) {
    throw std::invalid_argument("gaussian: mean/std length mismatch");
  }
  for (double s : std) {
    if (!(s > 0.0)) throw std::invalid_argument("gaussian: std must be > 0");
  }
  ActionDistribution d;
  d.family = HeadFamily::kGaussian;
  d.mean = std::move(mean);
  d.std = std::move(std);
  return d;
}

ActionDistribution ActionDistribution::categorical(std::vector<double> logits) {
  if (logits.empty()) throw std::invalid_argument("categorical: empty logits");
  ActionDistribution d;
  d.family = HeadFamily::kCategorical;
  d.probs = softmax(logits);
  d.logits = std::move(logits);
  return d;
}

std::vector<double> softmax(std::span<const double> logits) {
  double m = logits[0];
  for (double z : logits) m = std::max(m, z);
  std::vector<double> p(logits.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    acc += p[i];
  }
  for (double& v : p) v /= acc;
  return p;
}

double categorical_c_verified() { return 1.0 / (2.0 * std::sqrt(2.0)); }

double gaussian_c(std::span<const double> sigma) {
  double lambda_min = sigma[0] * sigma[0];
  for (double s : sigma) lambda_min = std::min(lambda_min, s * s);
  return 1.0 / std::sqrt(2.0 * M_PI * lambda_min);
}

double log_prob(const ActionDistribution& dist, std::span<const double> action) {
  if (dist.family != HeadFamily::kGaussian) {
    throw std::invalid_argument("log_prob: vector action needs a gaussian head");
  }
  if (action.size() != dist.mean.size()) {
    throw std::invalid_argument("log_prob: action dimension mismatch");
  }
  double lp = 0.0;
  for (std::size_t i = 0; i < action.size(); ++i) {
    const double z = (action[i] - dist.mean[i]) / dist.std[i];
    lp += -0.5 * z * z - std::log(dist.std[i]) - 0.5 * kLog2Pi;
  }
  return lp;
}

double log_prob(const ActionDistribution& dist, std::size_t action) {
  if (dist.family != HeadFamily::kCategorical) {
    throw std::invalid_argument("log_prob: index action needs a categorical head");
  }
  if (action >= dist.probs.size()) {
    throw std::out_of_range("log_prob: action index out of range");
  }
  // logits - logsumexp keeps precision for small probabilities
  double m = dist.logits[0];
  for (double z : dist.logits) m = std::max(m, z);
  double acc = 0.0;
  for (double z : dist.logits) acc += std::exp(z - m);
  return dist.logits[action] - m - std::log(acc);
}

std::vector<double> sample_gaussian(const ActionDistribution& dist, std::mt19937_64& rng) {
  std::vector<double> a(dist.mean.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = dist.mean[i] + dist.std[i] * gauss(rng);
  }
  return a;
}

std::size_t sample_categorical(const ActionDistribution& dist, std::mt19937_64& rng) {
  return categorical_index(rng, dist.probs);
}

double entropy(const ActionDistribution& dist) {
  if (dist.family == HeadFamily::kGaussian) {
    double h = 0.0;
    for (double s : dist.std) h += 0.5 * (1.0 + kLog2Pi) + std::log(s);
    return h;
  }
  double h = 0.0;
  for (double p : dist.probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

double kl(const ActionDistribution& p, const ActionDistribution& q) {
  check_family(p, q);
  if (p.family == HeadFamily::kGaussian) {
    double d = 0.0;
    for (std::size_t i = 0; i < p.mean.size(); ++i) {
      const double s1 = p.std[i], s2 = q.std[i];
      const double dm = p.mean[i] - q.mean[i];
      d += std::log(s2 / s1) + (s1 * s1 + dm * dm) / (2.0 * s2 * s2) - 0.5;
    }
    return d;
  }
  double d = 0.0;
  for (std::size_t i = 0; i < p.probs.size(); ++i) {
    if (p.probs[i] == 0.0) continue;
    if (q.probs[i] == 0.0) return std::numeric_limits<double>::infinity();
    d += p.probs[i] * std::log(p.probs[i] / q.probs[i]);
  }
  return std::max(d, 0.0);
}

namespace {
double whitened_distance(const ActionDistribution& p, const ActionDistribution& q) {
  double d2 = 0.0;
  for (std::size_t i = 0; i < p.mean.size(); ++i) {
    if (p.std[i] != q.std[i]) {
      throw std::invalid_argument("gaussian tv: stds must match");
    }
    const double z = (p.mean[i] - q.mean[i]) / p.std[i];
    d2 += z * z;
  }
  return std::sqrt(d2);
}
}  // namespace

double standard_normal_cdf(double x) {
  return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
}

double tv_upper_bound(const ActionDistribution& p, const ActionDistribution& q) {
  check_family(p, q);
  if (p.family == HeadFamily::kGaussian) {
    double dm2 = 0.0;
    for (std::size_t i = 0; i < p.mean.size(); ++i) {
      const double d = p.mean[i] - q.mean[i];
      dm2 += d * d;
    }
    return std::sqrt(dm2) * gaussian_c(p.std);
  }
  return tv_exact(p, q);
}

double tv_exact(const ActionDistribution& p, const ActionDistribution& q) {
  check_family(p, q);
  if (p.family == HeadFamily::kCategorical) {
    double acc = 0.0;
    for (std::size_t i = 0; i < p.probs.size(); ++i) {
      acc += std::fabs(p.probs[i] - q.probs[i]);
    }
    return 0.5 * acc;
  }
  const double d = whitened_distance(p, q);
  return 2.0 * standard_normal_cdf(d / 2.0) - 1.0;
}

TvEstimate tv_monte_carlo(const ActionDistribution& p, const ActionDistribution& q,
                          std::size_t n, std::mt19937_64& rng) {
  check_family(p, q);
  TvEstimate est;
  if (p.family == HeadFamily::kCategorical) {
    est.estimate = tv_exact(p, q);
    est.samples = 0;
    return est;
  }
  // TV = E_{x~p}[max(0, 1 - q(x)/p(x))]; the density ratio only depends on the
  // whitened 1-D projection, so sample that scalar directly.
  const double d = whitened_distance(p, q);
  double acc = 0.0, acc2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = gauss(rng);
    // log q(x)/p(x) along the projection: N(d,1) vs N(0,1) at x
    const double log_ratio = -0.5 * (x - d) * (x - d) + 0.5 * x * x;
    const double v = std::max(0.0, 1.0 - std::exp(log_ratio));
    acc += v;
    acc2 += v * v;
  }
  const double mean = acc / static_cast<double>(n);
  est.estimate = mean;
  est.samples = n;
  if (n > 1) {
    const double var = (acc2 - acc * mean) / static_cast<double>(n - 1);
    est.ci95 = 1.96 * std::sqrt(std::max(var, 0.0) / static_cast<double>(n));
  }
  return est;
}

}  // namespace prunecert

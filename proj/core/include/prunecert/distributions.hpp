#pragma once

#include <random>
#include <span>
#include <vector>

namespace prunecert {

enum class HeadFamily { kGaussian, kCategorical };

/// Either a diagonal Gaussian (mean, std) or a categorical over K actions.
/// Categorical keeps the raw logits alongside the normalized probabilities;
/// probabilities come from max-shifted softmax.
struct ActionDistribution {
  HeadFamily family = HeadFamily::kGaussian;
  std::vector<double> mean;
  std::vector<double> std;
  std::vector<double> logits;
  std::vector<double> probs;

  static ActionDistribution gaussian(std::vector<double> mean, std::vector<double> std);
  static ActionDistribution categorical(std::vector<double> logits);
};

std::vector<double> softmax(std::span<const double> logits);

// Conversion constants from output-space l2 distance to total variation.
// Gaussian: 1/sqrt(2*pi*lambda_min(Sigma)). Categorical: the provable
// 1/(2*sqrt(2)) by default; 1/4 reproduces the looser published constant.
inline constexpr double kCategoricalCPublished = 0.25;
double categorical_c_verified();
double gaussian_c(std::span<const double> sigma);

double log_prob(const ActionDistribution& dist, std::span<const double> action);
double log_prob(const ActionDistribution& dist, std::size_t action);

/// Gaussian sample fills `out`; categorical returns the index.
std::vector<double> sample_gaussian(const ActionDistribution& dist, std::mt19937_64& rng);
std::size_t sample_categorical(const ActionDistribution& dist, std::mt19937_64& rng);

double entropy(const ActionDistribution& dist);

/// KL(p || q). Same family required. Categorical with q==0 where p>0 yields
/// +infinity.
double kl(const ActionDistribution& p, const ActionDistribution& q);

/// Family constant bound: c * ||delta output||_2. For Gaussian this is
/// ||mean_p - mean_q||_2 / sqrt(2 pi lambda_min); for categorical it is exact
/// TV = 0.5*||p-q||_1 (no surrogate needed at the distribution level).
double tv_upper_bound(const ActionDistribution& p, const ActionDistribution& q);

/// Exact total variation: categorical 0.5*||p-q||_1; Gaussian with identical
/// stds uses the whitened 1-D reduction 2*Phi(d/2)-1. Throws if Gaussian stds
/// differ (the policies here always share a state-independent Sigma).
double tv_exact(const ActionDistribution& p, const ActionDistribution& q);

struct TvEstimate {
  double estimate = 0.0;
  double ci95 = 0.0;
  std::size_t samples = 0;
};

/// Monte-Carlo TV estimate from E_{x~p}[max(0, 1 - q(x)/p(x))], with a
/// 1.96*SEM interval. Categorical is returned exactly with ci 0.
TvEstimate tv_monte_carlo(const ActionDistribution& p, const ActionDistribution& q,
                          std::size_t n, std::mt19937_64& rng);

double standard_normal_cdf(double x);

}  // namespace prunecert

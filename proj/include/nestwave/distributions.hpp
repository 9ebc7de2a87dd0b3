#pragma once

// Binomial, zero-inflated binomial, zero-and-N-inflated binomial and
// multinomial-logistic building blocks.
//
// The inflated forms share one mixture. With A = λ0 + N log(1-p) and
// B = λN + N log p,
//   pmf(y) = (e^A 1{y=0} + e^B 1{y=N} + Bin(y; N, p)) / (e^A + e^B + 1).
// The zero-inflated form is the same with B = -inf.

#include <cstdint>
#include <span>
#include <vector>

#include "nestwave/numeric.hpp"

namespace nestwave {

enum class Family { Binomial, ZeroInflated, ZeroAndNInflated };

struct MixtureWeights {
  double q0 = 0.0;
  double qN = 0.0;
};

MixtureWeights zani_weights(std::int64_t n, double p, double lambda0, double lambda_n);

double binomial_logpmf(std::int64_t y, std::int64_t n, double p);
double zani_logpmf(std::int64_t y, std::int64_t n, double p, double lambda0, double lambda_n);
// Point mass at 0 carries 1 - q0 with q0 = 1 / (e^λ0 (1-p)^N + 1).
double zi_logpmf(std::int64_t y, std::int64_t n, double p, double lambda0);

// Log-pmf of a family together with its derivatives in η = logit p and in the
// inflation weights. Entries for weights the family lacks are 0.
struct LogpmfGrad {
  double value = 0.0;
  double d_eta = 0.0;
  double d_lambda0 = 0.0;
  double d_lambda_n = 0.0;
};

LogpmfGrad inflated_logpmf_grad(Family family, std::int64_t y, std::int64_t n, double eta,
                                double lambda0, double lambda_n);

double multinomial_logpmf(std::span<const std::int64_t> y, std::span<const double> p);

// Reference category is the last one: p_k ∝ exp(η_k) for k < K, p_K ∝ 1.
std::vector<double> multilogit(std::span<const double> eta);
std::vector<double> multilogit_inverse(std::span<const double> p);

// Multinomial log-pmf in (K-1) logits; fills d/dη_k.
double multinomial_logpmf_eta(std::span<const std::int64_t> y, std::span<const double> eta,
                              std::span<double> grad);

std::int64_t sample_binomial(std::int64_t n, double p, Rng& rng);
std::int64_t sample_zani(std::int64_t n, double p, double lambda0, double lambda_n, Rng& rng);
std::int64_t sample_zi(std::int64_t n, double p, double lambda0, Rng& rng);
std::int64_t sample_family(Family family, std::int64_t n, double p, double lambda0,
                           double lambda_n, Rng& rng);
std::vector<std::int64_t> sample_multinomial(std::int64_t n, std::span<const double> p, Rng& rng);

}  // namespace nestwave

#pragma once

#include <span>
#include <vector>

#include "siclab/nn.hpp"

namespace siclab {

// Per-user soft symbol posteriors: probs is K x M, one probability row per
// user over the constellation values.
struct Beliefs {
  Matrix probs;
  std::vector<double> symbols;

  int n_users() const { return probs.rows; }
  int n_classes() const { return probs.cols; }
};

Beliefs uniform_beliefs(int n_users, const std::vector<double>& symbols);

// First and second central moments of a symbol distribution.
struct SymbolStats {
  double mean = 0.0;
  double var = 0.0;
};

SymbolStats soft_symbol_stats(std::span<const double> row, std::span<const double> symbols);

// z_i = y - sum_{k != i} h_k * E[s_k], expectations from the current beliefs.
std::vector<double> cancel_interference(std::span<const double> y, const Matrix& h,
                                        const Beliefs& beliefs, int user);

// Gaussian soft detection: residual interference plus noise is modeled as
// N(0, C_i) with C_i = sum_{k != i} h_k h_k^T var_k + sigma_n^2 I, and the
// posterior over constellation points follows from Bayes with uniform priors.
// C_i gets diagonal loading 1e-9*trace(C)/N before factorization; if it still
// is not positive definite, throws std::runtime_error.
std::vector<double> soft_detect(std::span<const double> z, const Matrix& h,
                                std::span<const double> vars, int user, double noise_var,
                                std::span<const double> symbols);

// L Jacobi iterations of cancel + detect from uniform initial beliefs. All
// users within an iteration read the previous iteration's beliefs.
Beliefs run_sic(std::span<const double> y, const Matrix& h, double noise_var, int iterations,
                const std::vector<double>& symbols);

// Per-user argmax; ties break toward the lowest index.
std::vector<int> hard_decision(const Matrix& probs);

}  // namespace siclab

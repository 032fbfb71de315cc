#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "siclab/nn.hpp"
#include "siclab/rng.hpp"

namespace siclab {

enum class ChannelKind { kLinear, kQuantized, kPoisson };

std::string channel_kind_name(ChannelKind kind);
ChannelKind channel_kind_from_name(const std::string& name);

// A fixed channel realization plus the transmission parameters. H is N x K;
// users map symbol indices into `constellation` (BPSK {-1,+1} by default).
struct ChannelSpec {
  ChannelKind kind = ChannelKind::kLinear;
  int n_rx = 0;     // N receive antennas
  int n_users = 0;  // K users
  Matrix h;         // N x K
  std::vector<double> constellation = {-1.0, 1.0};
  double snr_db = 10.0;
  double quant_step = 1.0;    // quantized channel only
  double poisson_bias = 1.0;  // poisson channel only
  double csi_noise_var = 0.0;

  int n_classes() const { return static_cast<int>(constellation.size()); }
  double noise_variance() const;
  void validate() const;
};

// Labeled samples: y is T x N, labels is T x K symbol indices (row-major).
struct Dataset {
  ChannelSpec spec;
  std::uint64_t seed = 0;
  Matrix y;
  std::vector<int> labels;

  int size() const { return y.rows; }
  const int* labels_row(int t) const { return labels.data() + static_cast<std::size_t>(t) * spec.n_users; }

  // Sum over samples of ||y_t||^2. Finite for any generated dataset; the
  // architecture-specific input energies build on this.
  double signal_energy() const;
};

// H[n,k] = exp(-|n-k|): the deterministic exponential-decay profile used as
// the default linear Gaussian channel.
Matrix default_channel_matrix(int n_rx, int n_users);

// H with i.i.d. standard Gaussian entries (optional override profile).
Matrix gaussian_channel_matrix(int n_rx, int n_users, Rng& rng);

// sigma_n^2 = 10^(-snr_db/10) under unit average symbol energy.
double snr_to_noise_variance(double snr_db);

// Maps symbol indices through the constellation.
std::vector<double> symbols_from_indices(const ChannelSpec& spec, const int* s);

// One channel use. Linear: y = H s + w. Quantized: mid-rise quantization of
// the linear output, q(v) = step*(floor(v/step)+0.5). Poisson:
// y_n ~ Poisson(sqrt(SNR)*(H b)_n + bias) with b = (symbol+1)/2.
std::vector<double> transmit(const ChannelSpec& spec, const int* s, Rng& rng);

// H + E with E entries i.i.d. N(0, noise_var). noise_var = 0 returns H bitwise.
Matrix perturb_csi(const Matrix& h, double noise_var, Rng& rng);

// T i.i.d. samples with uniform symbols. Sample t draws from rng.substream(t),
// so the dataset is reproducible and order-independent.
Dataset generate_dataset(const ChannelSpec& spec, int num_samples, const Rng& rng);

// CSV round trip: header row carries (N, K, M, kind, snr_db, seed), then the
// constellation, H, and one row per sample (y values then symbol indices).
void save_dataset_csv(const Dataset& ds, const std::string& path);
Dataset load_dataset_csv(const std::string& path);

}  // namespace siclab

#pragma once

#include <span>
#include <vector>

#include "siclab/channel.hpp"
#include "siclab/nn.hpp"
#include "siclab/sic.hpp"
#include "siclab/train.hpp"

namespace siclab {

// K x L grid of independently parameterized MLP blocks. Block (k, l) refines
// user k's posterior at iteration l from the received signal and the other
// users' previous-iteration posteriors.
struct DeepSicModel {
  int n_rx = 0;
  int n_users = 0;
  int n_classes = 0;
  int iters = 0;
  std::vector<std::vector<MlpParams>> blocks;  // [iters][n_users]

  int input_dim() const { return n_rx + (n_users - 1) * (n_classes - 1); }
};

// Blocks are input_dim -> hidden (ReLU) -> M (softmax).
DeepSicModel make_deepsic(int n_rx, int n_users, int n_classes, int iters, int hidden, Rng& rng);

long param_count(const DeepSicModel& model);

// Largest per-block product norm, reported as the trained rho_inner budget.
double measured_rho_inner(const DeepSicModel& model);

// Concatenates y with, for each user i != k in ascending order, the first
// M-1 entries of belief row i (the last entry is redundant).
std::vector<double> assemble_block_input(std::span<const double> y, const Matrix& beliefs,
                                         int user);

struct DeepSicForward {
  Beliefs final;
  std::vector<Matrix> trajectory;  // iters+1 entries of K x M, [0] is uniform
};

DeepSicForward deepsic_forward(const DeepSicModel& model, std::span<const double> y,
                               const std::vector<double>& symbols);

std::vector<int> deepsic_detect(const DeepSicModel& model, std::span<const double> y);

// Batched detection: Y is B x N, returns B*K symbol indices (row-major).
std::vector<int> deepsic_detect_batch(const DeepSicModel& model, const Matrix& y);

// End-to-end training: mean final-iteration cross-entropy over users,
// backpropagated through all unrolled iterations. Throws TrainingError when
// the loss stops being finite.
TrainResult train_e2e(DeepSicModel& model, const Dataset& data, const TrainConfig& cfg,
                      const Dataset* validation = nullptr);

// Sequential training: iteration columns are trained one at a time on their
// own cross-entropy, with earlier columns frozen. cfg.epochs applies per
// column.
TrainResult train_sequential(DeepSicModel& model, const Dataset& data, const TrainConfig& cfg,
                             const Dataset* validation = nullptr);

// Energy of the first-iteration block inputs over a dataset: max over users k
// of sum_t ||assemble_block_input(y_t, uniform, k)||^2. Supplies E0 for the
// generalization bound of this architecture.
double deepsic_input_energy(const Dataset& data);

}  // namespace siclab

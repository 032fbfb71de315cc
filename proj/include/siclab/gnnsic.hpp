#pragma once

#include <span>
#include <vector>

#include "siclab/channel.hpp"
#include "siclab/nn.hpp"
#include "siclab/sic.hpp"
#include "siclab/train.hpp"

namespace siclab {

// Graph message-passing detector with one shared embed/message/update MLP
// triple. The same three parameter sets serve every user and every iteration,
// so the trainable size is independent of K and of the iteration count.
struct GnnSicModel {
  int n_rx = 0;      // N
  int n_classes = 0; // M
  int latent_a = 0;  // embed output is 2a
  int edge_dim = 2;
  int iters = 0;     // message-passing iterations at inference
  MlpParams embed;   // 2N+M -> 2a, ReLU output
  MlpParams message; // 4a+edge_dim -> M, softmax head
  MlpParams update;  // 2a+M -> M, softmax head
};

// Hidden widths of 0 pick the defaults: embed 2a, message/update a+2.
GnnSicModel make_gnnsic(int n_rx, int n_classes, int latent_a, int iters, Rng& rng,
                        int hidden_embed = 0, int hidden_message = 0, int hidden_update = 0,
                        int edge_dim = 2);

long param_count(const GnnSicModel& model);

// Product norm across the composed embed/message/update stack.
double measured_rho_inner(const GnnSicModel& model);

// Edge feature between distinct users: (h_i . h_k, sigma_n^2). Constant
// across iterations. Throws on i == k (no self-loops).
std::vector<double> edge_feature(const Matrix& h, double noise_var, int i, int k);

// u_i = E(concat(y, h_i, p_i)).
std::vector<double> gnn_embed(const GnnSicModel& model, std::span<const double> y,
                              std::span<const double> h_i, std::span<const double> p_i);

// m_i = mean over k != i of softmax(M(concat(u_i, u_k, e_ik))). With a single
// user there are no neighbors and m_i is uniform.
std::vector<double> message_aggregate(const GnnSicModel& model,
                                      const std::vector<std::vector<double>>& all_u,
                                      const Matrix& h, double noise_var, int i);

// p_i' = softmax(U(concat(u_i, m_i))).
std::vector<double> gnn_update(const GnnSicModel& model, std::span<const double> u_i,
                               std::span<const double> m_i);

struct GnnSicForward {
  Beliefs final;
  std::vector<Matrix> trajectory;  // iters+1 of K x M, [0] is uniform
};

GnnSicForward gnnsic_forward(const GnnSicModel& model, std::span<const double> y, const Matrix& h,
                             double noise_var, const std::vector<double>& symbols);

std::vector<int> gnnsic_detect(const GnnSicModel& model, std::span<const double> y,
                               const Matrix& h, double noise_var);

// Batched detection: Y is B x N, returns B*K indices (row-major).
std::vector<int> gnnsic_detect_batch(const GnnSicModel& model, const Matrix& y, const Matrix& h,
                                     double noise_var);

// End-to-end training of the shared parameters: gradients from every user and
// every unrolled iteration accumulate into the single E/M/U triple. The
// channel matrix and noise variance come from data.spec.
TrainResult gnnsic_train(GnnSicModel& model, const Dataset& data, const TrainConfig& cfg,
                         const Dataset* validation = nullptr);

// Energy of the embed inputs over a dataset: max over users i of
// sum_t ||(y_t, h_i, uniform)||^2. Supplies E0 for this architecture's bound.
double gnnsic_input_energy(const Dataset& data);

}  // namespace siclab

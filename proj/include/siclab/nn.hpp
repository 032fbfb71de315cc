#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "siclab/rng.hpp"

namespace siclab {

// Dense row-major matrix of doubles. Deliberately minimal: the training loops
// below only need contiguous storage and a handful of fused kernels.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

  double* row(int r) { return data.data() + static_cast<std::size_t>(r) * cols; }
  const double* row(int r) const { return data.data() + static_cast<std::size_t>(r) * cols; }
  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  void fill(double v) { std::fill(data.begin(), data.end(), v); }
};

enum class Activation { kRelu, kIdentity, kSoftmax };

// One dense layer: y = act(W x + b), W is rows x cols.
struct DenseLayer {
  Matrix weights;
  std::vector<double> bias;
  Activation act = Activation::kRelu;
};

// An ordered stack of dense layers. Hidden layers are ReLU; the output layer
// is identity (score head) or softmax (probability head).
struct MlpParams {
  std::vector<DenseLayer> layers;

  int input_dim() const { return layers.empty() ? 0 : layers.front().weights.cols; }
  int output_dim() const { return layers.empty() ? 0 : layers.back().weights.rows; }
};

// Per-layer pre/post-activation cache from a forward pass; consumed by the
// reverse pass. `input` aliases nothing: it is a copy of the batch input.
struct MlpTape {
  Matrix input;                  // B x input_dim
  std::vector<Matrix> pre;       // per layer, B x layer_rows
  std::vector<Matrix> post;      // per layer, B x layer_rows
};

// Gradients with the same shapes as MlpParams. backward_batch accumulates
// into an existing MlpGrads so shared-parameter models can sum contributions
// from many call sites in a fixed order.
struct MlpGrads {
  std::vector<Matrix> weights;
  std::vector<std::vector<double>> bias;
};

struct AdamState {
  MlpGrads m;  // first moments
  MlpGrads v;  // second moments
  long step = 0;
  double lr = 0.005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// --- construction -----------------------------------------------------------

// Uniform init on [-s, s] with s = sqrt(6 / (fan_in + fan_out)); zero biases.
MlpParams make_mlp(const std::vector<int>& dims, Activation output_act, Rng& rng);

MlpGrads make_grads_like(const MlpParams& params);
void zero_grads(MlpGrads& grads);

AdamState make_adam(const MlpParams& params, double lr);

// --- forward / backward -----------------------------------------------------

// Batched forward: X is B x input_dim, returns B x output_dim. When `tape` is
// non-null it is filled for use by backward_batch. Throws std::invalid_argument
// naming the offending layer on a dimension mismatch.
Matrix mlp_forward_batch(const MlpParams& params, const Matrix& x, MlpTape* tape = nullptr);

// Reverse pass of <grad_out, output>: accumulates parameter gradients into
// `grads` and, when `grad_input` is non-null, writes the gradient with respect
// to the batch input. ReLU subgradient at 0 is 0.
void mlp_backward_batch(const MlpParams& params, const MlpTape& tape, const Matrix& grad_out,
                        MlpGrads& grads, Matrix* grad_input = nullptr);

// Single-sample wrappers.
std::vector<double> mlp_forward(const MlpParams& params, std::span<const double> x,
                                MlpTape* tape = nullptr);
MlpGrads mlp_backward(const MlpParams& params, const MlpTape& tape,
                      std::span<const double> grad_out,
                      std::vector<double>* grad_input = nullptr);

// --- elementwise ops --------------------------------------------------------

// Max-subtracted softmax; total on finite input.
std::vector<double> softmax(std::span<const double> v);
void softmax_rows_inplace(Matrix& m);

// -log(p[label]) with p clamped to [1e-12, 1]. Throws std::out_of_range on a
// bad label.
double cross_entropy(std::span<const double> probs, int label);

// Gradient of cross_entropy with respect to the probability vector.
std::vector<double> cross_entropy_grad(std::span<const double> probs, int label);

// --- optimizer --------------------------------------------------------------

// Standard Adam step with bias correction; mutates params and state in place.
// Deterministic: identical inputs give bitwise-identical outputs.
void adam_step(AdamState& state, MlpParams& params, const MlpGrads& grads);

// --- oracles & descriptors --------------------------------------------------

// Central-difference gradient of an arbitrary scalar loss over the parameters.
// Test oracle; O(#params) loss evaluations.
MlpGrads finite_diff_grad(const std::function<double(const MlpParams&)>& loss_fn,
                          const MlpParams& params, double eps);

// Number of weight and bias scalars.
long param_count(const MlpParams& params);

// Product norm over the layer stack: Frobenius norm of the final weight matrix
// times, for every earlier layer, the largest row 2-norm. Used to report the
// trained norm budget rho_inner of a block.
double measured_rho_inner(const MlpParams& params);
double frobenius_norm(const Matrix& m);

}  // namespace siclab

#include "siclab/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace siclab {

namespace {

std::string shape_msg(const char* fn, int layer, int expected, int got) {
  return std::string(fn) + ": layer " + std::to_string(layer) + " expects input of size " +
         std::to_string(expected) + ", got " + std::to_string(got);
}

// y = x * W^T + b, row-major everywhere. Inner loops run over contiguous
// memory in both operands.
void linear_forward(const Matrix& x, const DenseLayer& layer, Matrix& y) {
  const int b = x.rows, in = x.cols, out = layer.weights.rows;
  y = Matrix(b, out);
  for (int r = 0; r < b; ++r) {
    const double* xr = x.row(r);
    double* yr = y.row(r);
    for (int o = 0; o < out; ++o) {
      const double* w = layer.weights.row(o);
      double acc = layer.bias[o];
      for (int i = 0; i < in; ++i) acc += w[i] * xr[i];
      yr[o] = acc;
    }
  }
}

// grad_x = grad_z * W
void linear_backward_input(const Matrix& grad_z, const DenseLayer& layer, Matrix& grad_x) {
  const int b = grad_z.rows, out = grad_z.cols, in = layer.weights.cols;
  grad_x = Matrix(b, in);
  for (int r = 0; r < b; ++r) {
    const double* gz = grad_z.row(r);
    double* gx = grad_x.row(r);
    for (int o = 0; o < out; ++o) {
      const double g = gz[o];
      if (g == 0.0) continue;
      const double* w = layer.weights.row(o);
      for (int i = 0; i < in; ++i) gx[i] += g * w[i];
    }
  }
}

// grad_W += grad_z^T * x ; grad_b += column sums of grad_z.
// Sample-major accumulation order keeps results bitwise reproducible.
void linear_backward_params(const Matrix& grad_z, const Matrix& x, Matrix& grad_w,
                            std::vector<double>& grad_b) {
  const int b = grad_z.rows, out = grad_z.cols, in = x.cols;
  for (int r = 0; r < b; ++r) {
    const double* gz = grad_z.row(r);
    const double* xr = x.row(r);
    for (int o = 0; o < out; ++o) {
      const double g = gz[o];
      grad_b[o] += g;
      if (g == 0.0) continue;
      double* gw = grad_w.row(o);
      for (int i = 0; i < in; ++i) gw[i] += g * xr[i];
    }
  }
}

void apply_activation(Activation act, const Matrix& pre, Matrix& post) {
  post = pre;
  switch (act) {
    case Activation::kIdentity:
      break;
    case Activation::kRelu:
      for (double& v : post.data) v = v > 0.0 ? v : 0.0;
      break;
    case Activation::kSoftmax:
      softmax_rows_inplace(post);
      break;
  }
}

// Maps d(post) to d(pre) for one layer.
void activation_backward(Activation act, const Matrix& pre, const Matrix& post,
                         const Matrix& grad_post, Matrix& grad_pre) {
  const int b = pre.rows, n = pre.cols;
  grad_pre = Matrix(b, n);
  switch (act) {
    case Activation::kIdentity:
      grad_pre = grad_post;
      break;
    case Activation::kRelu:
      for (std::size_t i = 0; i < pre.data.size(); ++i)
        grad_pre.data[i] = pre.data[i] > 0.0 ? grad_post.data[i] : 0.0;
      break;
    case Activation::kSoftmax:
      // dz_j = p_j * (dp_j - sum_i dp_i p_i)
      for (int r = 0; r < b; ++r) {
        const double* p = post.row(r);
        const double* gp = grad_post.row(r);
        double dot = 0.0;
        for (int j = 0; j < n; ++j) dot += gp[j] * p[j];
        double* gz = grad_pre.row(r);
        for (int j = 0; j < n; ++j) gz[j] = p[j] * (gp[j] - dot);
      }
      break;
  }
}

}  // namespace

MlpParams make_mlp(const std::vector<int>& dims, Activation output_act, Rng& rng) {
  if (dims.size() < 2) throw std::invalid_argument("make_mlp: need at least input and output dims");
  MlpParams params;
  for (std::size_t i = 1; i < dims.size(); ++i) {
    DenseLayer layer;
    layer.weights = Matrix(dims[i], dims[i - 1]);
    layer.bias.assign(dims[i], 0.0);
    const double s = std::sqrt(6.0 / (dims[i - 1] + dims[i]));
    for (double& w : layer.weights.data) w = rng.uniform(-s, s);
    layer.act = (i + 1 == dims.size()) ? output_act : Activation::kRelu;
    params.layers.push_back(std::move(layer));
  }
  return params;
}

MlpGrads make_grads_like(const MlpParams& params) {
  MlpGrads g;
  for (const auto& layer : params.layers) {
    g.weights.emplace_back(layer.weights.rows, layer.weights.cols);
    g.bias.emplace_back(layer.bias.size(), 0.0);
  }
  return g;
}

void zero_grads(MlpGrads& grads) {
  for (auto& w : grads.weights) w.fill(0.0);
  for (auto& b : grads.bias) std::fill(b.begin(), b.end(), 0.0);
}

AdamState make_adam(const MlpParams& params, double lr) {
  AdamState st;
  st.m = make_grads_like(params);
  st.v = make_grads_like(params);
  st.lr = lr;
  return st;
}

Matrix mlp_forward_batch(const MlpParams& params, const Matrix& x, MlpTape* tape) {
  if (params.layers.empty()) throw std::invalid_argument("mlp_forward: empty network");
  if (x.cols != params.input_dim())
    throw std::invalid_argument(shape_msg("mlp_forward", 1, params.input_dim(), x.cols));

  if (tape) {
    tape->input = x;
    tape->pre.assign(params.layers.size(), Matrix());
    tape->post.assign(params.layers.size(), Matrix());
  }

  Matrix cur = x;
  for (std::size_t li = 0; li < params.layers.size(); ++li) {
    const auto& layer = params.layers[li];
    if (cur.cols != layer.weights.cols)
      throw std::invalid_argument(
          shape_msg("mlp_forward", static_cast<int>(li) + 1, layer.weights.cols, cur.cols));
    Matrix pre;
    linear_forward(cur, layer, pre);
    Matrix post;
    apply_activation(layer.act, pre, post);
    if (tape) {
      tape->pre[li] = pre;
      tape->post[li] = post;
    }
    cur = std::move(post);
  }
  return cur;
}

void mlp_backward_batch(const MlpParams& params, const MlpTape& tape, const Matrix& grad_out,
                        MlpGrads& grads, Matrix* grad_input) {
  const int n_layers = static_cast<int>(params.layers.size());
  if (static_cast<int>(tape.pre.size()) != n_layers ||
      static_cast<int>(grads.weights.size()) != n_layers)
    throw std::invalid_argument("mlp_backward: tape/grads do not match params");
  if (grad_out.cols != params.output_dim() || grad_out.rows != tape.input.rows)
    throw std::invalid_argument(shape_msg("mlp_backward", n_layers, params.output_dim(),
                                          grad_out.cols));

  Matrix grad_post = grad_out;
  for (int li = n_layers - 1; li >= 0; --li) {
    const auto& layer = params.layers[li];
    if (grads.weights[li].rows != layer.weights.rows ||
        grads.weights[li].cols != layer.weights.cols)
      throw std::invalid_argument("mlp_backward: gradient shape mismatch at layer " +
                                  std::to_string(li + 1));
    Matrix grad_pre;
    activation_backward(layer.act, tape.pre[li], tape.post[li], grad_post, grad_pre);
    const Matrix& layer_in = (li == 0) ? tape.input : tape.post[li - 1];
    linear_backward_params(grad_pre, layer_in, grads.weights[li], grads.bias[li]);
    if (li > 0 || grad_input) {
      Matrix grad_x;
      linear_backward_input(grad_pre, layer, grad_x);
      if (li == 0) {
        *grad_input = std::move(grad_x);
      } else {
        grad_post = std::move(grad_x);
      }
    }
  }
}

std::vector<double> mlp_forward(const MlpParams& params, std::span<const double> x, MlpTape* tape) {
  Matrix xin(1, static_cast<int>(x.size()));
  std::copy(x.begin(), x.end(), xin.data.begin());
  Matrix out = mlp_forward_batch(params, xin, tape);
  return out.data;
}

MlpGrads mlp_backward(const MlpParams& params, const MlpTape& tape,
                      std::span<const double> grad_out, std::vector<double>* grad_input) {
  Matrix g(1, static_cast<int>(grad_out.size()));
  std::copy(grad_out.begin(), grad_out.end(), g.data.begin());
  MlpGrads grads = make_grads_like(params);
  Matrix gx;
  mlp_backward_batch(params, tape, g, grads, grad_input ? &gx : nullptr);
  if (grad_input) *grad_input = gx.data;
  return grads;
}

std::vector<double> softmax(std::span<const double> v) {
  std::vector<double> out(v.begin(), v.end());
  double mx = out[0];
  for (double x : out) mx = std::max(mx, x);
  double sum = 0.0;
  for (double& x : out) {
    x = std::exp(x - mx);
    sum += x;
  }
  for (double& x : out) x /= sum;
  return out;
}

void softmax_rows_inplace(Matrix& m) {
  for (int r = 0; r < m.rows; ++r) {
    double* p = m.row(r);
    double mx = p[0];
    for (int c = 1; c < m.cols; ++c) mx = std::max(mx, p[c]);
    double sum = 0.0;
    for (int c = 0; c < m.cols; ++c) {
      p[c] = std::exp(p[c] - mx);
      sum += p[c];
    }
    for (int c = 0; c < m.cols; ++c) p[c] /= sum;
  }
}

double cross_entropy(std::span<const double> probs, int label) {
  if (label < 0 || label >= static_cast<int>(probs.size()))
    throw std::out_of_range("cross_entropy: label " + std::to_string(label) + " out of range");
  const double p = std::clamp(probs[label], 1e-12, 1.0);
  return -std::log(p);
}

std::vector<double> cross_entropy_grad(std::span<const double> probs, int label) {
  if (label < 0 || label >= static_cast<int>(probs.size()))
    throw std::out_of_range("cross_entropy_grad: label " + std::to_string(label) + " out of range");
  std::vector<double> g(probs.size(), 0.0);
  const double p = probs[label];
  if (p >= 1e-12 && p <= 1.0) g[label] = -1.0 / p;
  return g;
}

void adam_step(AdamState& state, MlpParams& params, const MlpGrads& grads) {
  if (grads.weights.size() != params.layers.size())
    throw std::invalid_argument("adam_step: gradient/param layer count mismatch");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t li = 0; li < params.layers.size(); ++li) {
    auto& layer = params.layers[li];
    const auto& gw = grads.weights[li];
    if (gw.rows != layer.weights.rows || gw.cols != layer.weights.cols)
      throw std::invalid_argument("adam_step: gradient shape mismatch at layer " +
                                  std::to_string(li + 1));
    auto update = [&](double& w, double g, double& m, double& v) {
      m = state.beta1 * m + (1.0 - state.beta1) * g;
      v = state.beta2 * v + (1.0 - state.beta2) * g * g;
      const double mhat = m / bc1;
      const double vhat = v / bc2;
      w -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    };
    for (std::size_t i = 0; i < layer.weights.data.size(); ++i)
      update(layer.weights.data[i], gw.data[i], state.m.weights[li].data[i],
             state.v.weights[li].data[i]);
    for (std::size_t i = 0; i < layer.bias.size(); ++i)
      update(layer.bias[i], grads.bias[li][i], state.m.bias[li][i], state.v.bias[li][i]);
  }
}

MlpGrads finite_diff_grad(const std::function<double(const MlpParams&)>& loss_fn,
                          const MlpParams& params, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_grad: eps must be > 0");
  MlpGrads grads = make_grads_like(params);
  MlpParams probe = params;
  for (std::size_t li = 0; li < params.layers.size(); ++li) {
    auto central = [&](double& slot, double& out) {
      const double orig = slot;
      slot = orig + eps;
      const double up = loss_fn(probe);
      slot = orig - eps;
      const double down = loss_fn(probe);
      slot = orig;
      out = (up - down) / (2.0 * eps);
    };
    for (std::size_t i = 0; i < probe.layers[li].weights.data.size(); ++i)
      central(probe.layers[li].weights.data[i], grads.weights[li].data[i]);
    for (std::size_t i = 0; i < probe.layers[li].bias.size(); ++i)
      central(probe.layers[li].bias[i], grads.bias[li][i]);
  }
  return grads;
}

long param_count(const MlpParams& params) {
  long n = 0;
  for (const auto& layer : params.layers)
    n += static_cast<long>(layer.weights.data.size()) + static_cast<long>(layer.bias.size());
  return n;
}

double frobenius_norm(const Matrix& m) {
  double s = 0.0;
  for (double v : m.data) s += v * v;
  return std::sqrt(s);
}

double measured_rho_inner(const MlpParams& params) {
  if (params.layers.empty()) return 0.0;
  double rho = frobenius_norm(params.layers.back().weights);
  for (std::size_t li = 0; li + 1 < params.layers.size(); ++li) {
    const Matrix& w = params.layers[li].weights;
    double max_row = 0.0;
    for (int r = 0; r < w.rows; ++r) {
      double s = 0.0;
      const double* row = w.row(r);
      for (int c = 0; c < w.cols; ++c) s += row[c] * row[c];
      max_row = std::max(max_row, std::sqrt(s));
    }
    rho *= max_row;
  }
  return rho;
}

}  // namespace siclab

#include "siclab/deepsic.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace siclab {

namespace {

void shuffle_indices(std::vector<int>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    const std::size_t j = rng.uniform_index(i);
    std::swap(idx[i - 1], idx[j]);
  }
}

// Batched version of assemble_block_input: Y is B x N, beliefs is B x (K*M).
Matrix assemble_batch(const Matrix& y, const Matrix& beliefs, int n_users, int n_classes,
                      int user) {
  const int b = y.rows, n = y.cols;
  const int in_dim = n + (n_users - 1) * (n_classes - 1);
  Matrix x(b, in_dim);
  for (int r = 0; r < b; ++r) {
    double* xr = x.row(r);
    const double* yr = y.row(r);
    std::copy(yr, yr + n, xr);
    int pos = n;
    const double* br = beliefs.row(r);
    for (int i = 0; i < n_users; ++i) {
      if (i == user) continue;
      for (int m = 0; m + 1 < n_classes; ++m) xr[pos++] = br[i * n_classes + m];
    }
  }
  return x;
}

Matrix uniform_belief_batch(int b, int n_users, int n_classes) {
  Matrix bel(b, n_users * n_classes);
  bel.fill(1.0 / n_classes);
  return bel;
}

struct ForwardTrace {
  std::vector<Matrix> beliefs;                // iters+1 of B x (K*M)
  std::vector<std::vector<MlpTape>> tapes;    // [iters][K]
};

// Forward through all iterations on a batch; tapes recorded only when
// `trace` is non-null.
Matrix forward_batch(const DeepSicModel& model, const Matrix& y, ForwardTrace* trace) {
  const int b = y.rows;
  Matrix bel = uniform_belief_batch(b, model.n_users, model.n_classes);
  if (trace) {
    trace->beliefs.assign(1, bel);
    trace->tapes.assign(model.iters, std::vector<MlpTape>(model.n_users));
  }
  for (int l = 0; l < model.iters; ++l) {
    Matrix next(b, model.n_users * model.n_classes);
    for (int k = 0; k < model.n_users; ++k) {
      const Matrix x = assemble_batch(y, bel, model.n_users, model.n_classes, k);
      MlpTape* tape = trace ? &trace->tapes[l][k] : nullptr;
      const Matrix p = mlp_forward_batch(model.blocks[l][k], x, tape);
      for (int r = 0; r < b; ++r)
        std::copy(p.row(r), p.row(r) + model.n_classes, next.row(r) + k * model.n_classes);
    }
    bel = std::move(next);
    if (trace) trace->beliefs.push_back(bel);
  }
  return bel;
}

// Mean cross-entropy over samples and users of a belief batch.
double batch_loss(const Matrix& bel, const std::vector<int>& labels, int n_users, int n_classes) {
  double loss = 0.0;
  for (int r = 0; r < bel.rows; ++r) {
    const double* br = bel.row(r);
    for (int k = 0; k < n_users; ++k)
      loss += cross_entropy({br + k * n_classes, static_cast<std::size_t>(n_classes)},
                            labels[static_cast<std::size_t>(r) * n_users + k]);
  }
  return loss / (static_cast<double>(bel.rows) * n_users);
}

// d(mean CE)/d(final beliefs), matching the 1/(B*K) normalization.
Matrix loss_grad(const Matrix& bel, const std::vector<int>& labels, int n_users, int n_classes) {
  Matrix g(bel.rows, bel.cols);
  const double scale = 1.0 / (static_cast<double>(bel.rows) * n_users);
  for (int r = 0; r < bel.rows; ++r) {
    const double* br = bel.row(r);
    double* gr = g.row(r);
    for (int k = 0; k < n_users; ++k) {
      const int lab = labels[static_cast<std::size_t>(r) * n_users + k];
      const double p = br[k * n_classes + lab];
      if (p >= 1e-12 && p <= 1.0) gr[k * n_classes + lab] = -scale / p;
    }
  }
  return g;
}

// Scatters the gradient of one block's input back onto y (dropped) and the
// previous iteration's beliefs.
void scatter_input_grad(const Matrix& grad_x, int n_rx, int n_users, int n_classes, int user,
                        Matrix& grad_bel_prev) {
  for (int r = 0; r < grad_x.rows; ++r) {
    const double* gx = grad_x.row(r);
    double* gb = grad_bel_prev.row(r);
    int pos = n_rx;
    for (int i = 0; i < n_users; ++i) {
      if (i == user) continue;
      for (int m = 0; m + 1 < n_classes; ++m) gb[i * n_classes + m] += gx[pos++];
    }
  }
}

Matrix slice_labels_y(const Dataset& data, const std::vector<int>& idx, int lo, int hi,
                      std::vector<int>& labels_out) {
  const int b = hi - lo;
  Matrix y(b, data.spec.n_rx);
  labels_out.resize(static_cast<std::size_t>(b) * data.spec.n_users);
  for (int r = 0; r < b; ++r) {
    const int t = idx[lo + r];
    std::copy(data.y.row(t), data.y.row(t) + data.spec.n_rx, y.row(r));
    std::copy(data.labels_row(t), data.labels_row(t) + data.spec.n_users,
              labels_out.begin() + static_cast<std::size_t>(r) * data.spec.n_users);
  }
  return y;
}

double dataset_loss(const DeepSicModel& model, const Dataset& data) {
  const int eval_batch = 128;
  double total = 0.0;
  std::vector<int> idx(data.size());
  for (int i = 0; i < data.size(); ++i) idx[i] = i;
  std::vector<int> labels;
  for (int lo = 0; lo < data.size(); lo += eval_batch) {
    const int hi = std::min(lo + eval_batch, data.size());
    const Matrix y = slice_labels_y(data, idx, lo, hi, labels);
    const Matrix bel = forward_batch(model, y, nullptr);
    total += batch_loss(bel, labels, model.n_users, model.n_classes) * (hi - lo);
  }
  return total / data.size();
}

}  // namespace

DeepSicModel make_deepsic(int n_rx, int n_users, int n_classes, int iters, int hidden, Rng& rng) {
  if (n_rx < 1 || n_users < 1 || n_classes < 2 || iters < 1 || hidden < 1)
    throw std::invalid_argument("make_deepsic: bad dimensions");
  DeepSicModel model;
  model.n_rx = n_rx;
  model.n_users = n_users;
  model.n_classes = n_classes;
  model.iters = iters;
  model.blocks.resize(iters);
  const int in_dim = model.input_dim();
  for (int l = 0; l < iters; ++l)
    for (int k = 0; k < n_users; ++k)
      model.blocks[l].push_back(make_mlp({in_dim, hidden, n_classes}, Activation::kSoftmax, rng));
  return model;
}

long param_count(const DeepSicModel& model) {
  long n = 0;
  for (const auto& col : model.blocks)
    for (const auto& block : col) n += param_count(block);
  return n;
}

double measured_rho_inner(const DeepSicModel& model) {
  double rho = 0.0;
  for (const auto& col : model.blocks)
    for (const auto& block : col) rho = std::max(rho, measured_rho_inner(block));
  return rho;
}

std::vector<double> assemble_block_input(std::span<const double> y, const Matrix& beliefs,
                                         int user) {
  const int n_users = beliefs.rows, n_classes = beliefs.cols;
  std::vector<double> x(y.begin(), y.end());
  x.reserve(y.size() + static_cast<std::size_t>(n_users - 1) * (n_classes - 1));
  for (int i = 0; i < n_users; ++i) {
    if (i == user) continue;
    const double* row = beliefs.row(i);
    for (int m = 0; m + 1 < n_classes; ++m) x.push_back(row[m]);
  }
  return x;
}

DeepSicForward deepsic_forward(const DeepSicModel& model, std::span<const double> y,
                               const std::vector<double>& symbols) {
  if (static_cast<int>(y.size()) != model.n_rx)
    throw std::invalid_argument("deepsic_forward: y must have length N");
  Matrix yb(1, model.n_rx);
  std::copy(y.begin(), y.end(), yb.data.begin());
  ForwardTrace trace;
  forward_batch(model, yb, &trace);

  DeepSicForward out;
  for (const Matrix& bel : trace.beliefs) {
    Matrix grid(model.n_users, model.n_classes);
    grid.data.assign(bel.data.begin(), bel.data.end());
    out.trajectory.push_back(std::move(grid));
  }
  out.final.probs = out.trajectory.back();
  out.final.symbols = symbols;
  return out;
}

std::vector<int> deepsic_detect(const DeepSicModel& model, std::span<const double> y) {
  std::vector<double> symbols(model.n_classes);
  const DeepSicForward fwd = deepsic_forward(model, y, symbols);
  return hard_decision(fwd.final.probs);
}

std::vector<int> deepsic_detect_batch(const DeepSicModel& model, const Matrix& y) {
  const Matrix bel = forward_batch(model, y, nullptr);
  std::vector<int> out(static_cast<std::size_t>(y.rows) * model.n_users);
  for (int r = 0; r < y.rows; ++r) {
    const double* br = bel.row(r);
    for (int k = 0; k < model.n_users; ++k) {
      int best = 0;
      for (int m = 1; m < model.n_classes; ++m)
        if (br[k * model.n_classes + m] > br[k * model.n_classes + best]) best = m;
      out[static_cast<std::size_t>(r) * model.n_users + k] = best;
    }
  }
  return out;
}

TrainResult train_e2e(DeepSicModel& model, const Dataset& data, const TrainConfig& cfg,
                      const Dataset* validation) {
  if (data.size() < 1) throw std::invalid_argument("train_e2e: empty dataset");
  if (data.spec.n_users != model.n_users || data.spec.n_rx != model.n_rx)
    throw std::invalid_argument("train_e2e: dataset does not match model dimensions");

  Rng rng(cfg.seed);
  std::vector<std::vector<AdamState>> adam(model.iters);
  std::vector<std::vector<MlpGrads>> grads(model.iters);
  for (int l = 0; l < model.iters; ++l)
    for (int k = 0; k < model.n_users; ++k) {
      adam[l].push_back(make_adam(model.blocks[l][k], cfg.lr));
      adam[l][k].beta1 = cfg.beta1;
      adam[l][k].beta2 = cfg.beta2;
      adam[l][k].eps = cfg.adam_eps;
      grads[l].push_back(make_grads_like(model.blocks[l][k]));
    }

  std::vector<int> idx(data.size());
  for (int i = 0; i < data.size(); ++i) idx[i] = i;

  TrainResult result;
  double best_val = 0.0;
  int stall = 0;
  std::vector<int> labels;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng erng = rng.substream(static_cast<std::uint64_t>(epoch));
    shuffle_indices(idx, erng);
    double epoch_loss = 0.0;
    for (int lo = 0; lo < data.size(); lo += cfg.batch) {
      const int hi = std::min(lo + cfg.batch, data.size());
      const Matrix y = slice_labels_y(data, idx, lo, hi, labels);

      ForwardTrace trace;
      const Matrix bel = forward_batch(model, y, &trace);
      epoch_loss += batch_loss(bel, labels, model.n_users, model.n_classes) * (hi - lo);

      Matrix grad_bel = loss_grad(bel, labels, model.n_users, model.n_classes);
      for (int l = model.iters - 1; l >= 0; --l) {
        Matrix grad_prev(y.rows, model.n_users * model.n_classes);
        for (int k = 0; k < model.n_users; ++k) {
          Matrix grad_p(y.rows, model.n_classes);
          for (int r = 0; r < y.rows; ++r)
            std::copy(grad_bel.row(r) + k * model.n_classes,
                      grad_bel.row(r) + (k + 1) * model.n_classes, grad_p.row(r));
          zero_grads(grads[l][k]);
          Matrix grad_x;
          mlp_backward_batch(model.blocks[l][k], trace.tapes[l][k], grad_p, grads[l][k],
                             l > 0 ? &grad_x : nullptr);
          if (l > 0)
            scatter_input_grad(grad_x, model.n_rx, model.n_users, model.n_classes, k, grad_prev);
        }
        for (int k = 0; k < model.n_users; ++k)
          adam_step(adam[l][k], model.blocks[l][k], grads[l][k]);
        grad_bel = std::move(grad_prev);
      }
    }
    epoch_loss /= data.size();
    if (!std::isfinite(epoch_loss)) throw TrainingError("train_e2e: loss diverged", epoch);
    result.train_loss.push_back(epoch_loss);
    result.epochs_run = epoch + 1;

    if (validation) {
      const double vl = dataset_loss(model, *validation);
      result.val_loss.push_back(vl);
      if (cfg.early_stop) {
        if (result.val_loss.size() == 1 || vl < best_val) {
          best_val = vl;
          stall = 0;
        } else if (++stall >= cfg.patience) {
          break;
        }
      }
    }
  }
  return result;
}

TrainResult train_sequential(DeepSicModel& model, const Dataset& data, const TrainConfig& cfg,
                             const Dataset* validation) {
  if (data.size() < 1) throw std::invalid_argument("train_sequential: empty dataset");
  if (data.spec.n_users != model.n_users || data.spec.n_rx != model.n_rx)
    throw std::invalid_argument("train_sequential: dataset does not match model dimensions");

  Rng rng(cfg.seed);
  // Beliefs feeding the column currently being trained, over the full dataset.
  Matrix bel = uniform_belief_batch(data.size(), model.n_users, model.n_classes);

  std::vector<int> idx(data.size());
  for (int i = 0; i < data.size(); ++i) idx[i] = i;

  TrainResult result;
  for (int l = 0; l < model.iters; ++l) {
    std::vector<AdamState> adam;
    std::vector<MlpGrads> grads;
    for (int k = 0; k < model.n_users; ++k) {
      adam.push_back(make_adam(model.blocks[l][k], cfg.lr));
      adam[k].beta1 = cfg.beta1;
      adam[k].beta2 = cfg.beta2;
      adam[k].eps = cfg.adam_eps;
      grads.push_back(make_grads_like(model.blocks[l][k]));
    }

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      Rng erng = rng.substream(static_cast<std::uint64_t>(l) * 1000003ULL + epoch);
      shuffle_indices(idx, erng);
      double epoch_loss = 0.0;
      std::vector<int> labels;
      for (int lo = 0; lo < data.size(); lo += cfg.batch) {
        const int hi = std::min(lo + cfg.batch, data.size());
        const int b = hi - lo;
        Matrix y = slice_labels_y(data, idx, lo, hi, labels);
        Matrix bel_batch(b, model.n_users * model.n_classes);
        for (int r = 0; r < b; ++r)
          std::copy(bel.row(idx[lo + r]), bel.row(idx[lo + r]) + bel.cols, bel_batch.row(r));

        for (int k = 0; k < model.n_users; ++k) {
          const Matrix x = assemble_batch(y, bel_batch, model.n_users, model.n_classes, k);
          MlpTape tape;
          const Matrix p = mlp_forward_batch(model.blocks[l][k], x, &tape);
          Matrix grad_p(b, model.n_classes);
          for (int r = 0; r < b; ++r) {
            const int lab = labels[static_cast<std::size_t>(r) * model.n_users + k];
            epoch_loss +=
                cross_entropy({p.row(r), static_cast<std::size_t>(model.n_classes)}, lab);
            const double pv = p.at(r, lab);
            if (pv >= 1e-12 && pv <= 1.0) grad_p.at(r, lab) = -1.0 / (pv * b);
          }
          zero_grads(grads[k]);
          mlp_backward_batch(model.blocks[l][k], tape, grad_p, grads[k], nullptr);
          adam_step(adam[k], model.blocks[l][k], grads[k]);
        }
      }
      epoch_loss /= static_cast<double>(data.size()) * model.n_users;
      if (!std::isfinite(epoch_loss))
        throw TrainingError("train_sequential: loss diverged in column " + std::to_string(l),
                            epoch);
      result.train_loss.push_back(epoch_loss);
      result.epochs_run += 1;
    }

    // Advance the dataset beliefs through the newly trained column.
    const int eval_batch = 256;
    Matrix next(data.size(), model.n_users * model.n_classes);
    for (int lo = 0; lo < data.size(); lo += eval_batch) {
      const int hi = std::min(lo + eval_batch, data.size());
      const int b = hi - lo;
      Matrix y(b, model.n_rx);
      Matrix bel_batch(b, bel.cols);
      for (int r = 0; r < b; ++r) {
        std::copy(data.y.row(lo + r), data.y.row(lo + r) + model.n_rx, y.row(r));
        std::copy(bel.row(lo + r), bel.row(lo + r) + bel.cols, bel_batch.row(r));
      }
      for (int k = 0; k < model.n_users; ++k) {
        const Matrix x = assemble_batch(y, bel_batch, model.n_users, model.n_classes, k);
        const Matrix p = mlp_forward_batch(model.blocks[l][k], x, nullptr);
        for (int r = 0; r < b; ++r)
          std::copy(p.row(r), p.row(r) + model.n_classes,
                    next.row(lo + r) + k * model.n_classes);
      }
    }
    bel = std::move(next);
  }

  if (validation) result.val_loss.push_back(dataset_loss(model, *validation));
  return result;
}

double deepsic_input_energy(const Dataset& data) {
  const int n_users = data.spec.n_users;
  const Matrix uniform = uniform_beliefs(n_users, data.spec.constellation).probs;
  double worst = 0.0;
  for (int k = 0; k < n_users; ++k) {
    double e = 0.0;
    for (int t = 0; t < data.size(); ++t) {
      const std::vector<double> x = assemble_block_input(
          {data.y.row(t), static_cast<std::size_t>(data.spec.n_rx)}, uniform, k);
      for (double v : x) e += v * v;
    }
    worst = std::max(worst, e);
  }
  return worst;
}

}  // namespace siclab

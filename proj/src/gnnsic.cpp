#include "siclab/gnnsic.hpp"

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

// Edge features for all ordered pairs, laid out K x (K * edge_dim).
Matrix all_edge_features(const Matrix& h, double noise_var) {
  const int k_users = h.cols;
  Matrix e(k_users, k_users * 2);
  for (int i = 0; i < k_users; ++i)
    for (int k = 0; k < k_users; ++k) {
      if (i == k) continue;
      double dot = 0.0;
      for (int n = 0; n < h.rows; ++n) dot += h.at(n, i) * h.at(n, k);
      e.at(i, 2 * k) = dot;
      e.at(i, 2 * k + 1) = noise_var;
    }
  return e;
}

struct IterTrace {
  MlpTape embed_tape;
  MlpTape message_tape;
  MlpTape update_tape;
  Matrix u;        // B*K x 2a
  Matrix messages; // B*K*(K-1) x M
};

struct ForwardTrace {
  std::vector<Matrix> beliefs;  // iters+1 of B x (K*M)
  std::vector<IterTrace> iters;
};

// One full forward over a batch. Y is B x N; beliefs are stored B x (K*M).
Matrix forward_batch(const GnnSicModel& model, const Matrix& y, const Matrix& h, double noise_var,
                     ForwardTrace* trace) {
  const int b = y.rows;
  const int k_users = h.cols;
  const int m = model.n_classes;
  const int two_a = 2 * model.latent_a;
  if (y.cols != model.n_rx || h.rows != model.n_rx)
    throw std::invalid_argument("gnnsic: y/H dimensions do not match the model's N");

  const Matrix edges = all_edge_features(h, noise_var);

  Matrix bel(b, k_users * m);
  bel.fill(1.0 / m);
  if (trace) {
    trace->beliefs.assign(1, bel);
    trace->iters.assign(model.iters, IterTrace());
  }

  Matrix emb_in(b * k_users, 2 * model.n_rx + m);
  for (int l = 0; l < model.iters; ++l) {
    for (int r = 0; r < b; ++r) {
      const double* yr = y.row(r);
      for (int i = 0; i < k_users; ++i) {
        double* row = emb_in.row(r * k_users + i);
        std::copy(yr, yr + model.n_rx, row);
        for (int n = 0; n < model.n_rx; ++n) row[model.n_rx + n] = h.at(n, i);
        std::copy(bel.row(r) + i * m, bel.row(r) + (i + 1) * m, row + 2 * model.n_rx);
      }
    }
    IterTrace local;
    IterTrace& it = trace ? trace->iters[l] : local;
    it.u = mlp_forward_batch(model.embed, emb_in, trace ? &it.embed_tape : nullptr);

    Matrix mbar(b * k_users, m);
    if (k_users > 1) {
      Matrix msg_in(b * k_users * (k_users - 1), 2 * two_a + model.edge_dim);
      for (int r = 0; r < b; ++r)
        for (int i = 0; i < k_users; ++i) {
          int slot = 0;
          for (int k = 0; k < k_users; ++k) {
            if (k == i) continue;
            double* row = msg_in.row((r * k_users + i) * (k_users - 1) + slot);
            const double* ui = it.u.row(r * k_users + i);
            const double* uk = it.u.row(r * k_users + k);
            std::copy(ui, ui + two_a, row);
            std::copy(uk, uk + two_a, row + two_a);
            row[2 * two_a] = edges.at(i, 2 * k);
            row[2 * two_a + 1] = edges.at(i, 2 * k + 1);
            ++slot;
          }
        }
      it.messages = mlp_forward_batch(model.message, msg_in, trace ? &it.message_tape : nullptr);
      const double inv = 1.0 / (k_users - 1);
      for (int row = 0; row < b * k_users; ++row) {
        double* out = mbar.row(row);
        for (int j = 0; j < k_users - 1; ++j) {
          const double* msg = it.messages.row(row * (k_users - 1) + j);
          for (int c = 0; c < m; ++c) out[c] += msg[c];
        }
        for (int c = 0; c < m; ++c) out[c] *= inv;
      }
    } else {
      mbar.fill(1.0 / m);  // no neighbors: information-free message
    }

    Matrix upd_in(b * k_users, two_a + m);
    for (int row = 0; row < b * k_users; ++row) {
      double* dst = upd_in.row(row);
      const double* ui = it.u.row(row);
      std::copy(ui, ui + two_a, dst);
      std::copy(mbar.row(row), mbar.row(row) + m, dst + two_a);
    }
    const Matrix p = mlp_forward_batch(model.update, upd_in, trace ? &it.update_tape : nullptr);

    for (int r = 0; r < b; ++r)
      for (int i = 0; i < k_users; ++i)
        std::copy(p.row(r * k_users + i), p.row(r * k_users + i) + m, bel.row(r) + i * m);
    if (trace) trace->beliefs.push_back(bel);
  }
  return bel;
}

double batch_loss(const Matrix& bel, const std::vector<int>& labels, int k_users, int m) {
  double loss = 0.0;
  for (int r = 0; r < bel.rows; ++r) {
    const double* br = bel.row(r);
    for (int k = 0; k < k_users; ++k)
      loss += cross_entropy({br + k * m, static_cast<std::size_t>(m)},
                            labels[static_cast<std::size_t>(r) * k_users + k]);
  }
  return loss / (static_cast<double>(bel.rows) * k_users);
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

}  // namespace

GnnSicModel make_gnnsic(int n_rx, int n_classes, int latent_a, int iters, Rng& rng,
                        int hidden_embed, int hidden_message, int hidden_update, int edge_dim) {
  if (n_rx < 1 || n_classes < 2 || latent_a < 1 || iters < 1)
    throw std::invalid_argument("make_gnnsic: bad dimensions");
  GnnSicModel model;
  model.n_rx = n_rx;
  model.n_classes = n_classes;
  model.latent_a = latent_a;
  model.edge_dim = edge_dim;
  model.iters = iters;
  const int two_a = 2 * latent_a;
  if (hidden_embed <= 0) hidden_embed = two_a;
  if (hidden_message <= 0) hidden_message = latent_a + 2;
  if (hidden_update <= 0) hidden_update = latent_a + 2;
  model.embed =
      make_mlp({2 * n_rx + n_classes, hidden_embed, two_a}, Activation::kRelu, rng);
  model.message = make_mlp({2 * two_a + edge_dim, hidden_message, n_classes},
                           Activation::kSoftmax, rng);
  model.update =
      make_mlp({two_a + n_classes, hidden_update, n_classes}, Activation::kSoftmax, rng);
  return model;
}

long param_count(const GnnSicModel& model) {
  return param_count(model.embed) + param_count(model.message) + param_count(model.update);
}

double measured_rho_inner(const GnnSicModel& model) {
  // The composed block reads embed -> message -> update with update's last
  // matrix as the readout; every other layer contributes its max row norm.
  auto max_row_norm = [](const Matrix& w) {
    double best = 0.0;
    for (int r = 0; r < w.rows; ++r) {
      double s = 0.0;
      for (int c = 0; c < w.cols; ++c) s += w.at(r, c) * w.at(r, c);
      best = std::max(best, std::sqrt(s));
    }
    return best;
  };
  double rho = frobenius_norm(model.update.layers.back().weights);
  for (const auto& layer : model.embed.layers) rho *= max_row_norm(layer.weights);
  for (const auto& layer : model.message.layers) rho *= max_row_norm(layer.weights);
  for (std::size_t i = 0; i + 1 < model.update.layers.size(); ++i)
    rho *= max_row_norm(model.update.layers[i].weights);
  return rho;
}

std::vector<double> edge_feature(const Matrix& h, double noise_var, int i, int k) {
  if (i == k) throw std::invalid_argument("edge_feature: no self-loops (i == k)");
  double dot = 0.0;
  for (int n = 0; n < h.rows; ++n) dot += h.at(n, i) * h.at(n, k);
  return {dot, noise_var};
}

std::vector<double> gnn_embed(const GnnSicModel& model, std::span<const double> y,
                              std::span<const double> h_i, std::span<const double> p_i) {
  std::vector<double> in;
  in.reserve(y.size() + h_i.size() + p_i.size());
  in.insert(in.end(), y.begin(), y.end());
  in.insert(in.end(), h_i.begin(), h_i.end());
  in.insert(in.end(), p_i.begin(), p_i.end());
  return mlp_forward(model.embed, in);
}

std::vector<double> message_aggregate(const GnnSicModel& model,
                                      const std::vector<std::vector<double>>& all_u,
                                      const Matrix& h, double noise_var, int i) {
  const int k_users = static_cast<int>(all_u.size());
  const int m = model.n_classes;
  std::vector<double> mbar(m, 0.0);
  if (k_users < 2) {
    std::fill(mbar.begin(), mbar.end(), 1.0 / m);
    return mbar;
  }
  for (int k = 0; k < k_users; ++k) {
    if (k == i) continue;
    std::vector<double> in;
    in.reserve(all_u[i].size() + all_u[k].size() + 2);
    in.insert(in.end(), all_u[i].begin(), all_u[i].end());
    in.insert(in.end(), all_u[k].begin(), all_u[k].end());
    const std::vector<double> e = edge_feature(h, noise_var, i, k);
    in.insert(in.end(), e.begin(), e.end());
    const std::vector<double> msg = mlp_forward(model.message, in);
    for (int c = 0; c < m; ++c) mbar[c] += msg[c];
  }
  for (double& v : mbar) v /= (k_users - 1);
  return mbar;
}

std::vector<double> gnn_update(const GnnSicModel& model, std::span<const double> u_i,
                               std::span<const double> m_i) {
  std::vector<double> in;
  in.reserve(u_i.size() + m_i.size());
  in.insert(in.end(), u_i.begin(), u_i.end());
  in.insert(in.end(), m_i.begin(), m_i.end());
  return mlp_forward(model.update, in);
}

GnnSicForward gnnsic_forward(const GnnSicModel& model, std::span<const double> y, const Matrix& h,
                             double noise_var, const std::vector<double>& symbols) {
  Matrix yb(1, model.n_rx);
  if (static_cast<int>(y.size()) != model.n_rx)
    throw std::invalid_argument("gnnsic_forward: y must have length N");
  std::copy(y.begin(), y.end(), yb.data.begin());
  ForwardTrace trace;
  forward_batch(model, yb, h, noise_var, &trace);

  GnnSicForward out;
  for (const Matrix& bel : trace.beliefs) {
    Matrix grid(h.cols, model.n_classes);
    grid.data.assign(bel.data.begin(), bel.data.end());
    out.trajectory.push_back(std::move(grid));
  }
  out.final.probs = out.trajectory.back();
  out.final.symbols = symbols;
  return out;
}

std::vector<int> gnnsic_detect(const GnnSicModel& model, std::span<const double> y,
                               const Matrix& h, double noise_var) {
  std::vector<double> symbols(model.n_classes);
  const GnnSicForward fwd = gnnsic_forward(model, y, h, noise_var, symbols);
  return hard_decision(fwd.final.probs);
}

std::vector<int> gnnsic_detect_batch(const GnnSicModel& model, const Matrix& y, const Matrix& h,
                                     double noise_var) {
  const Matrix bel = forward_batch(model, y, h, noise_var, nullptr);
  const int k_users = h.cols, m = model.n_classes;
  std::vector<int> out(static_cast<std::size_t>(y.rows) * k_users);
  for (int r = 0; r < y.rows; ++r) {
    const double* br = bel.row(r);
    for (int k = 0; k < k_users; ++k) {
      int best = 0;
      for (int c = 1; c < m; ++c)
        if (br[k * m + c] > br[k * m + best]) best = c;
      out[static_cast<std::size_t>(r) * k_users + k] = best;
    }
  }
  return out;
}

TrainResult gnnsic_train(GnnSicModel& model, const Dataset& data, const TrainConfig& cfg,
                         const Dataset* validation) {
  if (data.size() < 1) throw std::invalid_argument("gnnsic_train: empty dataset");
  if (data.spec.n_rx != model.n_rx)
    throw std::invalid_argument("gnnsic_train: dataset does not match the model's N");
  const int k_users = data.spec.n_users;
  const int m = model.n_classes;
  const int two_a = 2 * model.latent_a;
  const Matrix& h = data.spec.h;
  const double noise_var = data.spec.noise_variance();

  Rng rng(cfg.seed);
  AdamState adam_e = make_adam(model.embed, cfg.lr);
  AdamState adam_m = make_adam(model.message, cfg.lr);
  AdamState adam_u = make_adam(model.update, cfg.lr);
  for (AdamState* st : {&adam_e, &adam_m, &adam_u}) {
    st->beta1 = cfg.beta1;
    st->beta2 = cfg.beta2;
    st->eps = cfg.adam_eps;
  }
  MlpGrads grads_e = make_grads_like(model.embed);
  MlpGrads grads_m = make_grads_like(model.message);
  MlpGrads grads_u = make_grads_like(model.update);

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
      const int b = hi - lo;
      const Matrix y = slice_labels_y(data, idx, lo, hi, labels);

      ForwardTrace trace;
      const Matrix bel = forward_batch(model, y, h, noise_var, &trace);
      epoch_loss += batch_loss(bel, labels, k_users, m) * b;

      // d(mean CE)/d(final beliefs), laid out per user row like the tapes.
      Matrix grad_p(b * k_users, m);
      const double scale = 1.0 / (static_cast<double>(b) * k_users);
      for (int r = 0; r < b; ++r)
        for (int k = 0; k < k_users; ++k) {
          const int lab = labels[static_cast<std::size_t>(r) * k_users + k];
          const double pv = trace.beliefs.back().at(r, k * m + lab);
          if (pv >= 1e-12 && pv <= 1.0) grad_p.at(r * k_users + k, lab) = -scale / pv;
        }

      zero_grads(grads_e);
      zero_grads(grads_m);
      zero_grads(grads_u);
      for (int l = model.iters - 1; l >= 0; --l) {
        const IterTrace& it = trace.iters[l];
        // Update MLP: grad wrt its input splits into u and the mean message.
        Matrix grad_upd_in;
        mlp_backward_batch(model.update, it.update_tape, grad_p, grads_u, &grad_upd_in);
        Matrix grad_u(b * k_users, two_a);
        Matrix grad_mbar(b * k_users, m);
        for (int row = 0; row < b * k_users; ++row) {
          const double* g = grad_upd_in.row(row);
          std::copy(g, g + two_a, grad_u.row(row));
          std::copy(g + two_a, g + two_a + m, grad_mbar.row(row));
        }

        if (k_users > 1) {
          // Mean over K-1 messages distributes the gradient equally.
          Matrix grad_msg(b * k_users * (k_users - 1), m);
          const double inv = 1.0 / (k_users - 1);
          for (int row = 0; row < b * k_users; ++row)
            for (int j = 0; j < k_users - 1; ++j) {
              const double* g = grad_mbar.row(row);
              double* gm = grad_msg.row(row * (k_users - 1) + j);
              for (int c = 0; c < m; ++c) gm[c] = g[c] * inv;
            }
          Matrix grad_msg_in;
          mlp_backward_batch(model.message, it.message_tape, grad_msg, grads_m, &grad_msg_in);
          for (int r = 0; r < b; ++r)
            for (int i = 0; i < k_users; ++i) {
              int slot = 0;
              for (int k = 0; k < k_users; ++k) {
                if (k == i) continue;
                const double* g = grad_msg_in.row((r * k_users + i) * (k_users - 1) + slot);
                double* gi = grad_u.row(r * k_users + i);
                double* gk = grad_u.row(r * k_users + k);
                for (int c = 0; c < two_a; ++c) {
                  gi[c] += g[c];
                  gk[c] += g[two_a + c];
                }
                ++slot;
              }
            }
        }

        Matrix grad_emb_in;
        mlp_backward_batch(model.embed, it.embed_tape, grad_u, grads_e, &grad_emb_in);
        if (l > 0) {
          // Only the trailing M entries (the previous beliefs) carry gradient.
          grad_p = Matrix(b * k_users, m);
          for (int row = 0; row < b * k_users; ++row) {
            const double* g = grad_emb_in.row(row) + 2 * model.n_rx;
            std::copy(g, g + m, grad_p.row(row));
          }
        }
      }

      adam_step(adam_e, model.embed, grads_e);
      adam_step(adam_m, model.message, grads_m);
      adam_step(adam_u, model.update, grads_u);
    }
    epoch_loss /= data.size();
    if (!std::isfinite(epoch_loss)) throw TrainingError("gnnsic_train: loss diverged", epoch);
    result.train_loss.push_back(epoch_loss);
    result.epochs_run = epoch + 1;

    if (validation) {
      const int eval_batch = 128;
      double vl = 0.0;
      std::vector<int> vidx(validation->size());
      for (int i = 0; i < validation->size(); ++i) vidx[i] = i;
      std::vector<int> vlabels;
      for (int lo = 0; lo < validation->size(); lo += eval_batch) {
        const int hi = std::min(lo + eval_batch, validation->size());
        const Matrix vy = slice_labels_y(*validation, vidx, lo, hi, vlabels);
        const Matrix vbel = forward_batch(model, vy, validation->spec.h,
                                          validation->spec.noise_variance(), nullptr);
        vl += batch_loss(vbel, vlabels, k_users, m) * (hi - lo);
      }
      vl /= validation->size();
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

double gnnsic_input_energy(const Dataset& data) {
  const int k_users = data.spec.n_users;
  const int m = data.spec.n_classes();
  const double unif_sq = static_cast<double>(m) * (1.0 / m) * (1.0 / m);
  double worst = 0.0;
  for (int i = 0; i < k_users; ++i) {
    double h_sq = 0.0;
    for (int n = 0; n < data.spec.n_rx; ++n) h_sq += data.spec.h.at(n, i) * data.spec.h.at(n, i);
    double e = 0.0;
    for (int t = 0; t < data.size(); ++t) {
      const double* yr = data.y.row(t);
      double y_sq = 0.0;
      for (int n = 0; n < data.spec.n_rx; ++n) y_sq += yr[n] * yr[n];
      e += y_sq + h_sq + unif_sq;
    }
    worst = std::max(worst, e);
  }
  return worst;
}

}  // namespace siclab

#include "siclab/sic.hpp"

#include <cmath>
#include <stdexcept>

namespace siclab {

namespace {

// In-place Cholesky factorization, lower triangle. Throws if not SPD.
void cholesky(Matrix& c) {
  const int n = c.rows;
  for (int j = 0; j < n; ++j) {
    double d = c.at(j, j);
    for (int k = 0; k < j; ++k) d -= c.at(j, k) * c.at(j, k);
    if (!(d > 0.0)) throw std::runtime_error("soft_detect: covariance not positive definite");
    const double l = std::sqrt(d);
    c.at(j, j) = l;
    for (int i = j + 1; i < n; ++i) {
      double s = c.at(i, j);
      for (int k = 0; k < j; ++k) s -= c.at(i, k) * c.at(j, k);
      c.at(i, j) = s / l;
    }
  }
}

// Solves L x = b with L lower triangular; quadratic form follows as ||x||^2.
double quad_form_after_cholesky(const Matrix& l, std::span<const double> b) {
  const int n = l.rows;
  std::vector<double> x(b.begin(), b.end());
  for (int i = 0; i < n; ++i) {
    double s = x[i];
    for (int k = 0; k < i; ++k) s -= l.at(i, k) * x[k];
    x[i] = s / l.at(i, i);
  }
  double q = 0.0;
  for (double v : x) q += v * v;
  return q;
}

}  // namespace

Beliefs uniform_beliefs(int n_users, const std::vector<double>& symbols) {
  Beliefs b;
  b.symbols = symbols;
  b.probs = Matrix(n_users, static_cast<int>(symbols.size()));
  b.probs.fill(1.0 / static_cast<double>(symbols.size()));
  return b;
}

SymbolStats soft_symbol_stats(std::span<const double> row, std::span<const double> symbols) {
  SymbolStats st;
  double second = 0.0;
  for (std::size_t m = 0; m < row.size(); ++m) {
    st.mean += row[m] * symbols[m];
    second += row[m] * symbols[m] * symbols[m];
  }
  st.var = second - st.mean * st.mean;
  return st;
}

std::vector<double> cancel_interference(std::span<const double> y, const Matrix& h,
                                        const Beliefs& beliefs, int user) {
  std::vector<double> z(y.begin(), y.end());
  for (int k = 0; k < h.cols; ++k) {
    if (k == user) continue;
    const SymbolStats st =
        soft_symbol_stats({beliefs.probs.row(k), static_cast<std::size_t>(beliefs.probs.cols)},
                          beliefs.symbols);
    for (int n = 0; n < h.rows; ++n) z[n] -= h.at(n, k) * st.mean;
  }
  return z;
}

std::vector<double> soft_detect(std::span<const double> z, const Matrix& h,
                                std::span<const double> vars, int user, double noise_var,
                                std::span<const double> symbols) {
  const int n = h.rows;
  Matrix c(n, n);
  for (int k = 0; k < h.cols; ++k) {
    if (k == user) continue;
    const double v = vars[k];
    if (v == 0.0) continue;
    for (int r = 0; r < n; ++r)
      for (int s = 0; s < n; ++s) c.at(r, s) += h.at(r, k) * h.at(s, k) * v;
  }
  double trace = 0.0;
  for (int r = 0; r < n; ++r) trace += c.at(r, r) + noise_var;
  const double loading = 1e-9 * trace / n;
  for (int r = 0; r < n; ++r) c.at(r, r) += noise_var + loading;

  cholesky(c);

  const int m = static_cast<int>(symbols.size());
  std::vector<double> neg_half_q(m);
  std::vector<double> resid(n);
  for (int mi = 0; mi < m; ++mi) {
    for (int r = 0; r < n; ++r) resid[r] = z[r] - h.at(r, user) * symbols[mi];
    neg_half_q[mi] = -0.5 * quad_form_after_cholesky(c, resid);
  }
  return softmax(neg_half_q);
}

Beliefs run_sic(std::span<const double> y, const Matrix& h, double noise_var, int iterations,
                const std::vector<double>& symbols) {
  if (iterations < 1) throw std::invalid_argument("run_sic: need at least 1 iteration");
  const int k_users = h.cols;
  const int m = static_cast<int>(symbols.size());
  Beliefs cur = uniform_beliefs(k_users, symbols);
  std::vector<double> vars(k_users);
  for (int l = 0; l < iterations; ++l) {
    Beliefs next = cur;
    for (int k = 0; k < k_users; ++k)
      vars[k] = soft_symbol_stats({cur.probs.row(k), static_cast<std::size_t>(m)}, symbols).var;
    for (int i = 0; i < k_users; ++i) {
      const std::vector<double> z = cancel_interference(y, h, cur, i);
      const std::vector<double> p = soft_detect(z, h, vars, i, noise_var, symbols);
      std::copy(p.begin(), p.end(), next.probs.row(i));
    }
    cur = std::move(next);
  }
  return cur;
}

std::vector<int> hard_decision(const Matrix& probs) {
  std::vector<int> out(probs.rows);
  for (int k = 0; k < probs.rows; ++k) {
    const double* row = probs.row(k);
    int best = 0;
    for (int m = 1; m < probs.cols; ++m)
      if (row[m] > row[best]) best = m;
    out[k] = best;
  }
  return out;
}

}  // namespace siclab

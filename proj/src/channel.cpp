#include "siclab/channel.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace siclab {

std::string channel_kind_name(ChannelKind kind) {
  switch (kind) {
    case ChannelKind::kLinear: return "linear";
    case ChannelKind::kQuantized: return "quantized";
    case ChannelKind::kPoisson: return "poisson";
  }
  return "linear";
}

ChannelKind channel_kind_from_name(const std::string& name) {
  if (name == "linear") return ChannelKind::kLinear;
  if (name == "quantized") return ChannelKind::kQuantized;
  if (name == "poisson") return ChannelKind::kPoisson;
  throw std::invalid_argument("unknown channel kind: " + name);
}

double ChannelSpec::noise_variance() const { return snr_to_noise_variance(snr_db); }

void ChannelSpec::validate() const {
  if (n_rx < 1 || n_users < 1) throw std::invalid_argument("channel: N and K must be >= 1");
  if (h.rows != n_rx || h.cols != n_users)
    throw std::invalid_argument("channel: H must be N x K");
  for (double v : h.data)
    if (!std::isfinite(v)) throw std::invalid_argument("channel: H entries must be finite");
  if (constellation.size() < 2)
    throw std::invalid_argument("channel: constellation needs at least 2 symbols");
  for (std::size_t i = 0; i < constellation.size(); ++i)
    for (std::size_t j = i + 1; j < constellation.size(); ++j)
      if (constellation[i] == constellation[j])
        throw std::invalid_argument("channel: constellation values must be distinct");
  if (kind == ChannelKind::kQuantized && !(quant_step > 0.0))
    throw std::invalid_argument("channel: quant_step must be > 0");
  if (kind == ChannelKind::kPoisson && poisson_bias < 0.0)
    throw std::invalid_argument("channel: poisson_bias must be >= 0");
  if (csi_noise_var < 0.0) throw std::invalid_argument("channel: csi_noise_var must be >= 0");
}

double Dataset::signal_energy() const {
  double e = 0.0;
  for (double v : y.data) e += v * v;
  return e;
}

Matrix default_channel_matrix(int n_rx, int n_users) {
  if (n_rx < 1 || n_users < 1) throw std::invalid_argument("default_channel_matrix: N, K >= 1");
  Matrix h(n_rx, n_users);
  for (int n = 0; n < n_rx; ++n)
    for (int k = 0; k < n_users; ++k) h.at(n, k) = std::exp(-std::abs(n - k));
  return h;
}

Matrix gaussian_channel_matrix(int n_rx, int n_users, Rng& rng) {
  Matrix h(n_rx, n_users);
  for (double& v : h.data) v = rng.gaussian();
  return h;
}

double snr_to_noise_variance(double snr_db) { return std::pow(10.0, -snr_db / 10.0); }

std::vector<double> symbols_from_indices(const ChannelSpec& spec, const int* s) {
  std::vector<double> out(spec.n_users);
  for (int k = 0; k < spec.n_users; ++k) {
    const int idx = s[k];
    if (idx < 0 || idx >= spec.n_classes())
      throw std::out_of_range("transmit: symbol index out of range for user " + std::to_string(k));
    out[k] = spec.constellation[idx];
  }
  return out;
}

namespace {

std::vector<double> matvec(const Matrix& h, const std::vector<double>& x) {
  std::vector<double> y(h.rows, 0.0);
  for (int n = 0; n < h.rows; ++n) {
    const double* row = h.row(n);
    double acc = 0.0;
    for (int k = 0; k < h.cols; ++k) acc += row[k] * x[k];
    y[n] = acc;
  }
  return y;
}

double midrise_quantize(double v, double step) {
  return step * (std::floor(v / step) + 0.5);
}

}  // namespace

std::vector<double> transmit(const ChannelSpec& spec, const int* s, Rng& rng) {
  const std::vector<double> sym = symbols_from_indices(spec, s);
  switch (spec.kind) {
    case ChannelKind::kLinear: {
      std::vector<double> y = matvec(spec.h, sym);
      const double var = spec.noise_variance();
      for (double& v : y) v += rng.gaussian(0.0, var);
      return y;
    }
    case ChannelKind::kQuantized: {
      std::vector<double> y = matvec(spec.h, sym);
      const double var = spec.noise_variance();
      for (double& v : y) v = midrise_quantize(v + rng.gaussian(0.0, var), spec.quant_step);
      return y;
    }
    case ChannelKind::kPoisson: {
      // Intensity channel: symbols enter as on/off levels b = (symbol+1)/2.
      std::vector<double> bits(sym.size());
      for (std::size_t i = 0; i < sym.size(); ++i) bits[i] = (sym[i] + 1.0) / 2.0;
      std::vector<double> mean = matvec(spec.h, bits);
      const double gain = std::sqrt(std::pow(10.0, spec.snr_db / 10.0));
      std::vector<double> y(mean.size());
      for (std::size_t n = 0; n < mean.size(); ++n) {
        const double rate = gain * mean[n] + spec.poisson_bias;
        if (!(rate > 0.0))
          throw std::invalid_argument("transmit: poisson rate must be positive, got " +
                                      std::to_string(rate));
        y[n] = static_cast<double>(rng.poisson(rate));
      }
      return y;
    }
  }
  throw std::logic_error("transmit: unreachable");
}

Matrix perturb_csi(const Matrix& h, double noise_var, Rng& rng) {
  if (noise_var < 0.0) throw std::invalid_argument("perturb_csi: variance must be >= 0");
  if (noise_var == 0.0) return h;
  Matrix out = h;
  for (double& v : out.data) v += rng.gaussian(0.0, noise_var);
  return out;
}

Dataset generate_dataset(const ChannelSpec& spec, int num_samples, const Rng& rng) {
  spec.validate();
  if (num_samples < 1) throw std::invalid_argument("generate_dataset: need T >= 1");
  Dataset ds;
  ds.spec = spec;
  ds.seed = rng.seed();
  ds.y = Matrix(num_samples, spec.n_rx);
  ds.labels.assign(static_cast<std::size_t>(num_samples) * spec.n_users, 0);
  const int m = spec.n_classes();
  for (int t = 0; t < num_samples; ++t) {
    Rng sub = rng.substream(static_cast<std::uint64_t>(t));
    int* lab = ds.labels.data() + static_cast<std::size_t>(t) * spec.n_users;
    for (int k = 0; k < spec.n_users; ++k)
      lab[k] = static_cast<int>(sub.uniform_index(static_cast<std::uint64_t>(m)));
    const std::vector<double> y = transmit(spec, lab, sub);
    std::copy(y.begin(), y.end(), ds.y.row(t));
  }
  return ds;
}

namespace {

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void save_dataset_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_dataset_csv: cannot open " + path);
  out << "N,K,M,kind,snr_db,seed\n";
  out << ds.spec.n_rx << ',' << ds.spec.n_users << ',' << ds.spec.n_classes() << ','
      << channel_kind_name(ds.spec.kind) << ',' << fmt17(ds.spec.snr_db) << ',' << ds.seed << "\n";
  out << "constellation";
  for (double v : ds.spec.constellation) out << ',' << fmt17(v);
  out << "\n";
  for (int n = 0; n < ds.spec.h.rows; ++n) {
    out << "h";
    for (int k = 0; k < ds.spec.h.cols; ++k) out << ',' << fmt17(ds.spec.h.at(n, k));
    out << "\n";
  }
  for (int t = 0; t < ds.size(); ++t) {
    const double* yr = ds.y.row(t);
    out << "sample";
    for (int n = 0; n < ds.spec.n_rx; ++n) out << ',' << fmt17(yr[n]);
    const int* lab = ds.labels_row(t);
    for (int k = 0; k < ds.spec.n_users; ++k) out << ',' << lab[k];
    out << "\n";
  }
  if (!out) throw std::runtime_error("save_dataset_csv: write failed for " + path);
}

Dataset load_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_dataset_csv: cannot open " + path);
  std::string line;
  auto next_fields = [&](const char* what) {
    if (!std::getline(in, line)) throw std::runtime_error(std::string("load_dataset_csv: missing ") + what);
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    return fields;
  };

  next_fields("header");
  auto meta = next_fields("metadata row");
  if (meta.size() != 6) throw std::runtime_error("load_dataset_csv: bad metadata row");
  Dataset ds;
  ds.spec.n_rx = std::stoi(meta[0]);
  ds.spec.n_users = std::stoi(meta[1]);
  const int m = std::stoi(meta[2]);
  ds.spec.kind = channel_kind_from_name(meta[3]);
  ds.spec.snr_db = std::stod(meta[4]);
  ds.seed = std::stoull(meta[5]);

  auto cons = next_fields("constellation row");
  if (cons.empty() || cons[0] != "constellation" || static_cast<int>(cons.size()) != m + 1)
    throw std::runtime_error("load_dataset_csv: bad constellation row");
  ds.spec.constellation.clear();
  for (int i = 1; i <= m; ++i) ds.spec.constellation.push_back(std::stod(cons[i]));

  ds.spec.h = Matrix(ds.spec.n_rx, ds.spec.n_users);
  for (int n = 0; n < ds.spec.n_rx; ++n) {
    auto row = next_fields("H row");
    if (row.empty() || row[0] != "h" || static_cast<int>(row.size()) != ds.spec.n_users + 1)
      throw std::runtime_error("load_dataset_csv: bad H row");
    for (int k = 0; k < ds.spec.n_users; ++k) ds.spec.h.at(n, k) = std::stod(row[k + 1]);
  }

  std::vector<double> ys;
  std::vector<int> labs;
  int count = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string f;
    std::vector<std::string> fields;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (fields.empty() || fields[0] != "sample" ||
        static_cast<int>(fields.size()) != 1 + ds.spec.n_rx + ds.spec.n_users)
      throw std::runtime_error("load_dataset_csv: bad sample row");
    for (int n = 0; n < ds.spec.n_rx; ++n) ys.push_back(std::stod(fields[1 + n]));
    for (int k = 0; k < ds.spec.n_users; ++k)
      labs.push_back(std::stoi(fields[1 + ds.spec.n_rx + k]));
    ++count;
  }
  ds.y = Matrix(count, ds.spec.n_rx);
  ds.y.data = std::move(ys);
  ds.labels = std::move(labs);
  return ds;
}

}  // namespace siclab

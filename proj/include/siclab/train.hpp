#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace siclab {

struct TrainConfig {
  int epochs = 100;
  int batch = 64;
  double lr = 0.005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 1;
  bool early_stop = false;  // off by default; monitors validation loss
  int patience = 10;
};

struct TrainResult {
  std::vector<double> train_loss;  // per epoch
  std::vector<double> val_loss;    // per epoch, empty without a validation set
  int epochs_run = 0;
};

class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, int epoch)
      : std::runtime_error(what + " (epoch " + std::to_string(epoch) + ")"), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

}  // namespace siclab

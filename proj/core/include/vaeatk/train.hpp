#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "vaeatk/autodiff.hpp"
#include "vaeatk/layers.hpp"
#include "vaeatk/tensor.hpp"

namespace vaeatk {

// Defaults record the full-scale recipe: Adam from 5e-4, decayed by 0.9
// whenever validation loss fails to improve for 10 epochs, 500 epochs,
// batch size 256. Desk-scale runs override epochs/batch.
struct TrainConfig {
  double learning_rate = 5e-4;
  double plateau_factor = 0.9;
  int plateau_patience = 10;
  int epochs = 500;
  int batch_size = 256;
  double beta = 1.0;
  std::uint64_t seed = 0;
  double validation_fraction = 0.1;

  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  double train_neg_elbo = 0.0;
  double val_neg_elbo = 0.0;
  double learning_rate = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> history;
  double best_val_neg_elbo = 0.0;
};

// First-order optimizer with adaptive moment estimates (decay 0.9/0.999,
// epsilon 1e-8). Parameters are updated in place between passes.
class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);

  void set_learning_rate(double lr) { lr_ = lr; }
  double learning_rate() const { return lr_; }
  void step(const GradientMap& grads);

  // Single-buffer variant used by attack loops.
  static void update_buffer(std::vector<double>& value, const std::vector<double>& grad,
                            std::vector<double>& m, std::vector<double>& v, std::int64_t t,
                            double lr, double beta1 = 0.9, double beta2 = 0.999,
                            double eps = 1e-8);

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  std::int64_t t_ = 0;
  double lr_, beta1_, beta2_, eps_;
};

// Copies the given rows of a [N,C,H,W] batch into a new tensor.
Tensor gather_rows(const Tensor& images, std::span<const std::int64_t> rows);

// Generic minibatch driver shared by the plain and hierarchical models.
// `neg_loss` maps (batch tensor, noise seed) to the scalar training loss;
// the validation split (last `validation_fraction` of a seeded shuffle) is
// evaluated with per-epoch derived seeds. Throws NumericError with the
// offending epoch/batch if the loss turns non-finite.
TrainResult train_minibatch(ParamStore& params, const Tensor& images, const TrainConfig& cfg,
                            const std::function<Tensor(const Tensor&, std::uint64_t)>& neg_loss);

}  // namespace vaeatk

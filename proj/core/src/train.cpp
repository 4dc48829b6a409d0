#include "vaeatk/train.hpp"

#include <cmath>
#include <numeric>

namespace vaeatk {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ValueError("TrainConfig: learning_rate must be positive");
  if (!(plateau_factor > 0.0)) throw ValueError("TrainConfig: plateau_factor must be positive");
  if (plateau_patience < 1) throw ValueError("TrainConfig: plateau_patience must be >= 1");
  if (epochs < 1) throw ValueError("TrainConfig: epochs must be >= 1");
  if (batch_size < 1) throw ValueError("TrainConfig: batch_size must be >= 1");
  if (!(beta >= 0.0)) throw ValueError("TrainConfig: beta must be >= 0");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw ValueError("TrainConfig: validation_fraction must be in (0,1)");
  }
}

Adam::Adam(std::vector<Tensor> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor& p : params_) {
    m_.emplace_back(static_cast<std::size_t>(p.size()), 0.0);
    v_.emplace_back(static_cast<std::size_t>(p.size()), 0.0);
  }
}

void Adam::update_buffer(std::vector<double>& value, const std::vector<double>& grad,
                         std::vector<double>& m, std::vector<double>& v, std::int64_t t,
                         double lr, double beta1, double beta2, double eps) {
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < value.size(); ++i) {
    double g = grad[i];
    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
    v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
    double mhat = m[i] / bc1;
    double vhat = v[i] / bc2;
    value[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

void Adam::step(const GradientMap& grads) {
  ++t_;
  for (std::size_t p = 0; p < params_.size(); ++p) {
    std::vector<double> g = grads.at_or_zero(params_[p]);
    update_buffer(params_[p].data_mut(), g, m_[p], v_[p], t_, lr_, beta1_, beta2_, eps_);
  }
}

Tensor gather_rows(const Tensor& images, std::span<const std::int64_t> rows) {
  const Shape& s = images.shape();
  if (s.size() != 4) throw ShapeError("gather_rows: expected [N,C,H,W], got " + shape_str(s));
  std::int64_t stride = s[1] * s[2] * s[3];
  std::vector<double> out(static_cast<std::size_t>(stride) * rows.size());
  const auto& src = images.data();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::int64_t idx = rows[r];
    if (idx < 0 || idx >= s[0]) throw ValueError("gather_rows: row index out of range");
    std::copy_n(src.begin() + idx * stride, stride,
                out.begin() + static_cast<std::int64_t>(r) * stride);
  }
  return Tensor::from_data({static_cast<std::int64_t>(rows.size()), s[1], s[2], s[3]},
                           std::move(out));
}

TrainResult train_minibatch(ParamStore& params, const Tensor& images, const TrainConfig& cfg,
                            const std::function<Tensor(const Tensor&, std::uint64_t)>& neg_loss) {
  cfg.validate();
  const Shape& s = images.shape();
  if (s.size() != 4 || s[0] < 2) {
    throw ValueError("train: need a [N,C,H,W] batch with at least 2 images");
  }
  std::int64_t n = s[0];

  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(derive_seed(cfg.seed, "val-split"));
  split_rng.shuffle(order);
  std::int64_t n_val =
      std::max<std::int64_t>(1, static_cast<std::int64_t>(std::floor(n * cfg.validation_fraction)));
  std::int64_t n_train = n - n_val;
  if (n_train < 1) throw ValueError("train: empty training split");
  std::vector<std::int64_t> train_idx(order.begin(), order.begin() + n_train);
  std::vector<std::int64_t> val_idx(order.begin() + n_train, order.end());

  std::vector<Tensor> tensors;
  for (auto& [name, t] : params.items()) tensors.push_back(t);
  Adam opt(std::move(tensors), cfg.learning_rate);

  auto eval_split = [&](const std::vector<std::int64_t>& idx, std::uint64_t noise_seed) {
    double acc = 0.0;
    std::int64_t done = 0;
    std::uint64_t chunk = 0;
    while (done < static_cast<std::int64_t>(idx.size())) {
      std::int64_t take =
          std::min<std::int64_t>(cfg.batch_size, static_cast<std::int64_t>(idx.size()) - done);
      Tensor batch = gather_rows(
          images, std::span<const std::int64_t>(idx.data() + done, static_cast<std::size_t>(take)));
      double v = neg_loss(batch, derive_seed(noise_seed, "eval-chunk", chunk)).item();
      acc += v * static_cast<double>(take);
      done += take;
      ++chunk;
    }
    return acc / static_cast<double>(idx.size());
  };

  TrainResult result;
  double best_val = std::numeric_limits<double>::infinity();
  int stall = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng epoch_rng(derive_seed(cfg.seed, "epoch-order", static_cast<std::uint64_t>(epoch)));
    std::vector<std::int64_t> shuffled = train_idx;
    epoch_rng.shuffle(shuffled);

    double train_acc = 0.0;
    std::int64_t seen = 0;
    std::int64_t batch_index = 0;
    for (std::int64_t start = 0; start < n_train; start += cfg.batch_size, ++batch_index) {
      std::int64_t take = std::min<std::int64_t>(cfg.batch_size, n_train - start);
      Tensor batch = gather_rows(images, std::span<const std::int64_t>(
                                             shuffled.data() + start, static_cast<std::size_t>(take)));
      std::uint64_t noise_seed =
          derive_seed(cfg.seed, "train-noise",
                      static_cast<std::uint64_t>(epoch) * 1000003ULL +
                          static_cast<std::uint64_t>(batch_index));
      Tensor loss;
      try {
        loss = neg_loss(batch, noise_seed);
      } catch (const NumericError& e) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_index) + ": " + e.what());
      }
      double loss_v = loss.item();
      if (!std::isfinite(loss_v)) {
        throw NumericError("training diverged: non-finite loss at epoch " +
                           std::to_string(epoch) + ", batch " + std::to_string(batch_index));
      }
      GradientMap grads = backward(loss);
      opt.step(grads);
      train_acc += loss_v * static_cast<double>(take);
      seen += take;
    }

    // fixed evaluation noise keeps validation comparable across epochs
    double val = eval_split(val_idx, derive_seed(cfg.seed, "val-noise"));
    if (!std::isfinite(val)) {
      throw NumericError("training diverged: non-finite validation loss at epoch " +
                         std::to_string(epoch));
    }
    if (val < best_val) {
      best_val = val;
      stall = 0;
    } else {
      ++stall;
      if (stall >= cfg.plateau_patience) {
        opt.set_learning_rate(opt.learning_rate() * cfg.plateau_factor);
        stall = 0;
      }
    }
    result.history.push_back(
        {epoch, train_acc / static_cast<double>(seen), val, opt.learning_rate()});
  }
  result.best_val_neg_elbo = best_val;
  return result;
}

}  // namespace vaeatk

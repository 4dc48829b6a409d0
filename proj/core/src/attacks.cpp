#include "vaeatk/attacks.hpp"

#include <cmath>
#include <functional>

#include "vaeatk/autodiff.hpp"
#include "vaeatk/parallel.hpp"
#include "vaeatk/rng.hpp"
#include "vaeatk/train.hpp"

namespace vaeatk {

namespace {

void project_ball(std::vector<double>& eps, NormKind norm, double budget) {
  if (norm == NormKind::L2) {
    double n = l2_norm(eps);
    if (n > budget) {
      double s = budget / n;
      for (double& v : eps) v *= s;
    }
  } else {
    for (double& v : eps) v = v < -budget ? -budget : (v > budget ? budget : v);
  }
}

// Clip x_ref + eps into [0,1] and fold the clipping back into eps. Per
// coordinate this can only shrink |eps|, so the ball projection survives.
void clip_to_pixel_range(std::vector<double>& eps, const std::vector<double>& x_ref) {
  for (std::size_t i = 0; i < eps.size(); ++i) {
    double x = x_ref[i] + eps[i];
    if (x < 0.0) {
      eps[i] = -x_ref[i];
    } else if (x > 1.0) {
      eps[i] = 1.0 - x_ref[i];
    }
  }
}

Tensor clipped_sum(const Tensor& x_ref, const std::vector<double>& eps) {
  std::vector<double> x(eps.size());
  const auto& ref = x_ref.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    double v = ref[i] + eps[i];
    x[i] = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  }
  return Tensor::from_data(x_ref.shape(), std::move(x));
}

double step_scale(int t, int steps, double decay_tail) {
  if (decay_tail <= 0.0) return 1.0;
  double tail_start = (1.0 - decay_tail) * steps;
  if (t < tail_start) return 1.0;
  double tail_len = steps - tail_start;
  return (steps - t) / tail_len;
}

bool plateau_converged(const std::vector<double>& trace) {
  if (trace.size() < 20) return false;
  std::size_t tail = trace.size() / 5;
  double best_before = trace[0];
  for (std::size_t i = 0; i + tail < trace.size(); ++i) {
    best_before = std::min(best_before, trace[i]);
  }
  double best_all = best_before;
  for (std::size_t i = trace.size() - tail; i < trace.size(); ++i) {
    best_all = std::min(best_all, trace[i]);
  }
  double improvement = best_before - best_all;
  return improvement <= 1e-6 * (std::fabs(best_all) + 1e-12);
}

// Shared PGD loop. `objective` builds the scalar loss for the epsilon leaf
// at a given step; minimization, best-iterate return.
AttackResult run_pgd(const Tensor& x_ref, const AttackConfig& cfg,
                     const std::function<Tensor(const Tensor&, int)>& objective) {
  const Shape& shape = x_ref.shape();
  std::size_t d = static_cast<std::size_t>(numel(shape));
  std::vector<double> eps(d, 0.0);
  std::vector<double> m(d, 0.0), v(d, 0.0);

  AttackResult result;
  result.x_ref = x_ref;
  result.seed = cfg.seed;
  result.attacked_levels = cfg.attacked_levels;
  double best = std::numeric_limits<double>::infinity();
  std::vector<double> best_eps = eps;

  for (int t = 0; t <= cfg.steps; ++t) {
    Tensor eps_t = Tensor::from_data(shape, eps, /*requires_grad=*/true);
    Tensor obj = objective(eps_t, t);
    double obj_v = obj.item();
    if (!std::isfinite(obj_v)) {
      throw NumericError("attack objective became non-finite at step " + std::to_string(t) +
                         " (trace length " + std::to_string(result.trace.size()) + ")");
    }
    result.trace.push_back(obj_v);
    if (obj_v < best) {
      best = obj_v;
      best_eps = eps;
    }
    if (t == cfg.steps) break;

    GradientMap grads = backward(obj);
    std::vector<double> g = grads.at_or_zero(eps_t);
    double lr = cfg.step_size * step_scale(t, cfg.steps, cfg.decay_tail);
    if (cfg.step_rule == StepRule::Adam) {
      Adam::update_buffer(eps, g, m, v, t + 1, lr);
    } else {
      for (std::size_t i = 0; i < eps.size(); ++i) eps[i] -= lr * g[i];
    }
    project_ball(eps, cfg.norm, cfg.budget);
    clip_to_pixel_range(eps, x_ref.data());
    VAEATK_CHECK(cfg.norm != NormKind::L2 || l2_norm(eps) <= cfg.budget + 1e-9,
                 "attack iterate left the norm ball");
  }

  result.epsilon = Tensor::from_data(shape, best_eps);
  result.x_adv = clipped_sum(x_ref, best_eps);
  result.final_objective = best;
  result.converged = plateau_converged(result.trace);
  return result;
}

void check_input(const Tensor& x, const Shape& want, const char* what) {
  if (x.shape() != want) {
    throw ShapeError(std::string(what) + ": shape " + shape_str(x.shape()) +
                     " does not match model input " + shape_str(want));
  }
}

}  // namespace

void AttackConfig::validate(int model_levels) const {
  if (!(budget > 0.0)) throw ValueError("AttackConfig: budget must be > 0");
  if (steps < 1) throw ValueError("AttackConfig: steps must be >= 1");
  if (!(step_size > 0.0)) throw ValueError("AttackConfig: step_size must be > 0");
  if (decay_tail < 0.0 || decay_tail > 1.0) {
    throw ValueError("AttackConfig: decay_tail must be in [0,1]");
  }
  if (attacked_levels != 0 && (attacked_levels < 1 || attacked_levels > model_levels)) {
    throw ValueError("AttackConfig: attacked_levels must be in [1, levels]");
  }
}

AttackResult supervised_attack(const Encoder& model, const Tensor& x_ref, const Tensor& x_target,
                               const AttackConfig& cfg) {
  cfg.validate(1);
  Shape want = model.input_shape();
  check_input(x_ref, want, "supervised_attack reference");
  check_input(x_target, want, "supervised_attack target");

  DiagGaussian q_target = model.encode(x_target);
  AttackResult result = run_pgd(x_ref, cfg, [&](const Tensor& eps, int) {
    DiagGaussian q_adv = model.encode(add(x_ref, eps));
    return skl(q_adv, q_target);
  });
  result.x_target = x_target;
  return result;
}

AttackResult hierarchical_supervised_attack(const HierarchicalVae& model, const Tensor& x_ref,
                                            const Tensor& x_target, const AttackConfig& cfg) {
  int levels = model.levels();
  cfg.validate(levels);
  int k = cfg.attacked_levels == 0 ? levels : cfg.attacked_levels;
  if (k < 1 || k > levels) {
    throw ValueError("hierarchical attack: attacked_levels out of range");
  }
  Shape want = model.input_shape();
  check_input(x_ref, want, "hierarchical_supervised_attack reference");
  check_input(x_target, want, "hierarchical_supervised_attack target");

  AttackResult result = run_pgd(x_ref, cfg, [&](const Tensor& eps, int step) {
    std::uint64_t cond_seed = derive_seed(cfg.seed, "attack-cond", static_cast<std::uint64_t>(step));
    auto pairs = model.paired_posteriors(add(x_ref, eps), x_target, k, cond_seed);
    Tensor obj;
    for (const auto& [q_adv, q_tgt] : pairs) {
      Tensor term = skl(q_adv, q_tgt);
      obj = obj.defined() ? add(obj, term) : term;
    }
    return obj;
  });
  result.x_target = x_target;
  result.attacked_levels = k;
  return result;
}

Tensor jacobian_mu(const Encoder& model, const Tensor& x) {
  check_input(x, model.input_shape(), "jacobian_mu");
  Tensor probe = Tensor::from_data(x.shape(), x.data(), /*requires_grad=*/true);
  DiagGaussian q = model.encode(probe);
  Tensor mu = q.mean();
  std::int64_t latent = mu.size();
  std::int64_t d = numel(x.shape());
  std::vector<double> jac(static_cast<std::size_t>(latent * d));
  for (std::int64_t i = 0; i < latent; ++i) {
    GradientMap grads = backward(select(mu, i));
    std::vector<double> row = grads.at_or_zero(probe);
    std::copy(row.begin(), row.end(), jac.begin() + i * d);
  }
  return Tensor::from_data({latent, d}, std::move(jac));
}

AttackResult unsupervised_attack(const Encoder& model, const Tensor& x_ref,
                                 const AttackConfig& cfg) {
  cfg.validate(1);
  check_input(x_ref, model.input_shape(), "unsupervised_attack reference");

  Tensor jac = jacobian_mu(model, x_ref);
  const auto& j = jac.data();
  std::int64_t m = jac.shape()[0];
  std::int64_t d = jac.shape()[1];
  double fro = l2_norm(j);
  if (fro < 1e-12) {
    throw NumericError("unsupervised_attack: encoder Jacobian is numerically zero "
                       "(every perturbation scores 0)");
  }

  auto apply_j = [&](const std::vector<double>& v, std::vector<double>& out) {
    for (std::int64_t r = 0; r < m; ++r) {
      const double* row = j.data() + r * d;
      double acc = 0.0;
      for (std::int64_t c = 0; c < d; ++c) acc += row[c] * v[static_cast<std::size_t>(c)];
      out[static_cast<std::size_t>(r)] = acc;
    }
  };
  auto apply_jt = [&](const std::vector<double>& u, std::vector<double>& out) {
    std::fill(out.begin(), out.end(), 0.0);
    for (std::int64_t r = 0; r < m; ++r) {
      const double* row = j.data() + r * d;
      double uv = u[static_cast<std::size_t>(r)];
      for (std::int64_t c = 0; c < d; ++c) out[static_cast<std::size_t>(c)] += uv * row[c];
    }
  };

  AttackResult result;
  result.x_ref = x_ref;
  result.seed = cfg.seed;

  if (cfg.norm == NormKind::L2) {
    // Power iteration on J^T J; the constrained maximizer is the top right
    // singular direction scaled to the budget.
    std::vector<double> v(static_cast<std::size_t>(d));
    Rng rng(derive_seed(cfg.seed, "unsup-init"));
    rng.fill_normal(v);
    double n = l2_norm(v);
    for (double& x : v) x /= n;

    std::vector<double> u(static_cast<std::size_t>(m));
    std::vector<double> w(static_cast<std::size_t>(d));
    double rayleigh = 0.0;
    bool settled = false;
    for (int it = 0; it < 50; ++it) {
      apply_j(v, u);
      double lam = 0.0;
      for (double x : u) lam += x * x;  // ||Jv||^2 for unit v
      result.trace.push_back(lam);
      if (it > 0 && std::fabs(lam - rayleigh) <= 1e-10 * std::max(lam, 1e-300)) {
        rayleigh = lam;
        settled = true;
        break;
      }
      rayleigh = lam;
      apply_jt(u, w);
      double wn = l2_norm(w);
      if (wn == 0.0) break;  // v landed in the null space; keep previous iterate
      for (std::int64_t c = 0; c < d; ++c) v[static_cast<std::size_t>(c)] = w[c] / wn;
    }

    std::vector<double> eps(static_cast<std::size_t>(d));
    for (std::int64_t c = 0; c < d; ++c) eps[static_cast<std::size_t>(c)] =
        cfg.budget * v[static_cast<std::size_t>(c)];
    // Pick the sign whose clipped image keeps more of the perturbation.
    auto clipped_energy = [&](double sign) {
      double acc = 0.0;
      const auto& ref = x_ref.data();
      for (std::size_t i = 0; i < eps.size(); ++i) {
        double x = ref[i] + sign * eps[i];
        double e = (x < 0.0 ? -ref[i] : (x > 1.0 ? 1.0 - ref[i] : sign * eps[i]));
        acc += e * e;
      }
      return acc;
    };
    if (clipped_energy(-1.0) > clipped_energy(1.0)) {
      for (double& e : eps) e = -e;
    }
    apply_j(eps, u);
    double attained = 0.0;
    for (double x : u) attained += x * x;

    result.epsilon = Tensor::from_data(x_ref.shape(), std::move(eps));
    result.x_adv = clipped_sum(x_ref, result.epsilon.data());
    result.final_objective = attained;
    result.converged = settled;
    return result;
  }

  // Linf: projected gradient ascent on ||J eps||^2 from a seeded start.
  std::vector<double> eps(static_cast<std::size_t>(d));
  Rng rng(derive_seed(cfg.seed, "unsup-init"));
  rng.fill_uniform(eps, -1.0, 1.0);
  double n = max_abs(eps);
  if (n > 0) {
    double s = cfg.init_scale * cfg.budget / n;
    for (double& x : eps) x *= s;
  }
  clip_to_pixel_range(eps, x_ref.data());

  std::vector<double> u(static_cast<std::size_t>(m));
  std::vector<double> grad(static_cast<std::size_t>(d));
  std::vector<double> mbuf(static_cast<std::size_t>(d), 0.0), vbuf(static_cast<std::size_t>(d), 0.0);
  double best = -std::numeric_limits<double>::infinity();
  std::vector<double> best_eps = eps;
  for (int t = 0; t <= cfg.steps; ++t) {
    apply_j(eps, u);
    double obj = 0.0;
    for (double x : u) obj += x * x;
    result.trace.push_back(obj);
    if (obj > best) {
      best = obj;
      best_eps = eps;
    }
    if (t == cfg.steps) break;
    apply_jt(u, grad);
    for (double& gv : grad) gv = -2.0 * gv;  // ascend
    double lr = cfg.step_size * step_scale(t, cfg.steps, cfg.decay_tail);
    Adam::update_buffer(eps, grad, mbuf, vbuf, t + 1, lr);
    project_ball(eps, cfg.norm, cfg.budget);
    clip_to_pixel_range(eps, x_ref.data());
  }
  result.epsilon = Tensor::from_data(x_ref.shape(), std::move(best_eps));
  result.x_adv = clipped_sum(x_ref, result.epsilon.data());
  result.final_objective = best;
  // Ascent trace: reuse the plateau test on the negated trace.
  std::vector<double> neg_trace(result.trace.size());
  for (std::size_t i = 0; i < result.trace.size(); ++i) neg_trace[i] = -result.trace[i];
  result.converged = plateau_converged(neg_trace);
  return result;
}

namespace {

Tensor dataset_row(const Tensor& images, int id) {
  const Shape& s = images.shape();
  if (s.size() != 4) throw ShapeError("attack_batch: images must be [N,C,H,W]");
  if (id < 0 || id >= s[0]) {
    throw ValueError("attack_batch: image id " + std::to_string(id) + " out of range");
  }
  std::int64_t stride = s[1] * s[2] * s[3];
  std::vector<double> out(static_cast<std::size_t>(stride));
  std::copy_n(images.data().begin() + id * stride, stride, out.begin());
  return Tensor::from_data({s[1], s[2], s[3]}, std::move(out));
}

template <typename AttackFn>
std::vector<AttackResult> batch_impl(const Tensor& images, const std::vector<AttackItem>& items,
                                     const AttackConfig& cfg, std::uint64_t master_seed,
                                     int workers, AttackFn&& attack_one) {
  std::vector<AttackResult> results(items.size());
  parallel_for(
      static_cast<std::int64_t>(items.size()),
      [&](std::int64_t i) {
        const AttackItem& item = items[static_cast<std::size_t>(i)];
        AttackConfig item_cfg = cfg;
        item_cfg.seed = derive_seed(master_seed, "attack-item", static_cast<std::uint64_t>(i));
        AttackResult& slot = results[static_cast<std::size_t>(i)];
        try {
          Tensor x_ref = dataset_row(images, item.ref_id);
          slot = attack_one(x_ref, item, item_cfg);
        } catch (const std::exception& e) {
          slot.error = e.what();
          slot.seed = item_cfg.seed;
        }
        slot.ref_id = item.ref_id;
        slot.target_id = item.target_id;
        slot.init_index = item.init_index;
      },
      workers);
  return results;
}

}  // namespace

std::vector<AttackResult> attack_batch(const Encoder& model, const Tensor& images,
                                       const std::vector<AttackItem>& items,
                                       const AttackConfig& cfg, std::uint64_t master_seed,
                                       int workers) {
  return batch_impl(images, items, cfg, master_seed, workers,
                    [&](const Tensor& x_ref, const AttackItem& item, const AttackConfig& c) {
                      if (c.mode == AttackMode::Unsupervised) {
                        return unsupervised_attack(model, x_ref, c);
                      }
                      Tensor x_tgt = dataset_row(images, item.target_id);
                      return supervised_attack(model, x_ref, x_tgt, c);
                    });
}

std::vector<AttackResult> attack_batch(const HierarchicalVae& model, const Tensor& images,
                                       const std::vector<AttackItem>& items,
                                       const AttackConfig& cfg, std::uint64_t master_seed,
                                       int workers) {
  return batch_impl(images, items, cfg, master_seed, workers,
                    [&](const Tensor& x_ref, const AttackItem& item, const AttackConfig& c) {
                      Tensor x_tgt = dataset_row(images, item.target_id);
                      return hierarchical_supervised_attack(model, x_ref, x_tgt, c);
                    });
}

}  // namespace vaeatk

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vaeatk/encoder.hpp"
#include "vaeatk/hiervae.hpp"
#include "vaeatk/tensor.hpp"

namespace vaeatk {

enum class AttackMode { Supervised, Unsupervised };
enum class NormKind { L2, Linf };
// Adam moves fast on deep encoders but its per-coordinate scaling keeps a
// boundary fixed point away from the KKT point; plain projected gradient
// descent converges to the constrained optimum exactly.
enum class StepRule { Adam, Sgd };

struct AttackConfig {
  AttackMode mode = AttackMode::Supervised;
  NormKind norm = NormKind::L2;
  double budget = 1.0;   // norm ball radius, in [0,1] pixel units
  int steps = 500;
  double step_size = 1e-2;
  StepRule step_rule = StepRule::Adam;
  // Fraction of the run over which the step size decays linearly to zero;
  // 0 keeps it constant. Tight convergence (e.g. against a closed-form
  // solution) wants a decaying tail.
  double decay_tail = 0.0;
  double init_scale = 0.1;  // unsupervised init magnitude, relative to budget
  std::uint64_t seed = 0;
  int attacked_levels = 0;  // hierarchical: top k_A levels, 1..levels

  void validate(int model_levels) const;
};

struct AttackResult {
  Tensor x_ref;
  Tensor x_target;  // defined for supervised attacks only
  Tensor epsilon;   // image-shaped; for gradient attacks this is the clipped value
  Tensor x_adv;     // clip(x_ref + epsilon, 0, 1)
  std::vector<double> trace;  // objective at each evaluated iterate
  double final_objective = 0.0;
  bool converged = false;
  std::uint64_t seed = 0;

  // batch bookkeeping
  int ref_id = -1;
  int target_id = -1;
  int init_index = -1;
  int attacked_levels = 0;
  std::string error;  // non-empty when the attack failed

  bool ok() const { return error.empty(); }
};

// Projected gradient descent on SKL[q(z|x_ref + eps), q(z|x_target)] with
// adaptive-moment steps, projection onto the norm ball and pixel clipping
// after every step. Returns the best iterate by objective; the trace also
// contains the initial objective at eps = 0.
AttackResult supervised_attack(const Encoder& model, const Tensor& x_ref, const Tensor& x_target,
                               const AttackConfig& cfg);

// Same loop, but the objective sums per-level SKLs over the top
// cfg.attacked_levels levels, with both posteriors conditioned on samples
// from the adversarial-side top-down pass (shared per-step noise).
AttackResult hierarchical_supervised_attack(const HierarchicalVae& model, const Tensor& x_ref,
                                            const Tensor& x_target, const AttackConfig& cfg);

// Exact Jacobian of the encoder mean at x, one reverse pass per latent
// unit. Returns [latent_dim, numel(x)].
Tensor jacobian_mu(const Encoder& model, const Tensor& x);

// Maximizes ||J eps||^2 over the norm ball. The L2 ball is solved by power
// iteration on J^T J from a seeded start; the returned epsilon lies on the
// sphere (|‖eps‖ - budget| < 1e-9) and x_adv is the clipped sum. The Linf
// ball falls back to projected gradient ascent with per-step pixel
// clipping. Throws NumericError when J is numerically zero.
AttackResult unsupervised_attack(const Encoder& model, const Tensor& x_ref,
                                 const AttackConfig& cfg);

struct AttackItem {
  int ref_id = -1;
  int target_id = -1;   // < 0 for unsupervised items
  int init_index = -1;  // unsupervised repetition index
};

// Runs every item against the dataset rows, with per-item seeds derived
// from (master_seed, "attack-item", item index). Individual failures are
// recorded on the result and the batch continues. Items are independent
// and may run on a worker pool.
std::vector<AttackResult> attack_batch(const Encoder& model, const Tensor& images,
                                       const std::vector<AttackItem>& items,
                                       const AttackConfig& cfg, std::uint64_t master_seed,
                                       int workers = 0);

std::vector<AttackResult> attack_batch(const HierarchicalVae& model, const Tensor& images,
                                       const std::vector<AttackItem>& items,
                                       const AttackConfig& cfg, std::uint64_t master_seed,
                                       int workers = 0);

}  // namespace vaeatk

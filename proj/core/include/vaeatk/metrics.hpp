#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "vaeatk/attacks.hpp"
#include "vaeatk/encoder.hpp"
#include "vaeatk/hiervae.hpp"
#include "vaeatk/msssim.hpp"

namespace vaeatk {

// Latent-shift measure: sum over attacks of SKL between the adversarial
// and reference posteriors. Reported both as the raw sum and as the
// per-pair mean (the sum scales with experiment volume). Failed attacks
// are skipped; an effectively empty list is an error.
struct OmegaReport {
  double sum = 0.0;
  double per_pair_mean = 0.0;
  std::vector<double> per_pair;
};

OmegaReport omega(const Encoder& model, const std::vector<AttackResult>& results);

// Hierarchical variant: per-level SKLs summed over the attacked levels,
// with the same adversarial-side conditioning convention the attack
// objective uses (noise derived from each result's seed).
OmegaReport omega(const HierarchicalVae& model, const std::vector<AttackResult>& results);

struct MsssimTriple {
  double ref_adv = 0.0;               // MSSSIM[x_ref, x_adv]
  double recref_recadv = 0.0;         // MSSSIM[recon(x_ref), recon(x_adv)]
  std::optional<double> rectgt_recadv;  // MSSSIM[recon(x_tgt), recon(x_adv)]
};

// recon is decode composed with the posterior mean (deterministic).
MsssimTriple msssim_triple(const Tensor& x_ref, const Tensor& x_adv,
                           const std::optional<Tensor>& x_tgt,
                           const std::function<Tensor(const Tensor&)>& recon,
                           const MsssimConfig& cfg);

// Mean -ELBO^{>k} for k = 0..L, one curve per labeled batch, averaged over
// inputs and `num_seeds` noise seeds. Higher values flag anomalous inputs.
struct AnomalyCurves {
  std::vector<std::string> labels;
  std::vector<std::vector<double>> curves;  // [label][k]
};

AnomalyCurves elbo_above_k_curves(const HierarchicalVae& model,
                                  const std::vector<std::pair<std::string, Tensor>>& batches,
                                  int num_seeds, std::uint64_t seed);

struct MetricRow {
  std::string run_id;
  std::string mode;  // supervised | unsupervised | hier-supervised
  double beta = 1.0;
  int k_a = 0;
  int ref_id = -1;
  int target_id = -1;
  int init_id = -1;
  double epsilon_norm = 0.0;
  double skl_latent_shift = 0.0;
  std::optional<double> msssim_ref_adv;
  std::optional<double> msssim_recref_recadv;
  std::optional<double> msssim_rectgt_recadv;
  double final_objective = 0.0;
  int steps = 0;
  std::uint64_t seed = 0;
  std::string status = "ok";
  std::string error;
};

struct MetricsReport {
  std::string run_id;
  std::string mode;
  double beta = 1.0;
  int k_a = 0;
  OmegaReport omega;
  double mean_msssim_ref_adv = 0.0;
  double mean_msssim_recref_recadv = 0.0;
  std::optional<double> mean_msssim_rectgt_recadv;
  std::vector<MetricRow> rows;
};

struct ReportMeta {
  std::string run_id;
  std::string mode;
  double beta = 1.0;
  int k_a = 0;
  int steps = 0;
  NormKind norm = NormKind::L2;
};

// Assembles per-attack rows and aggregate means. latent_shift scores one
// successful attack (the omega summand); recon is the deterministic
// reconstruction map used for the MS-SSIM triple.
MetricsReport build_report(const std::vector<AttackResult>& results,
                           const std::function<double(const AttackResult&)>& latent_shift,
                           const std::function<Tensor(const Tensor&)>& recon,
                           const MsssimConfig& msssim_cfg, const ReportMeta& meta);

MetricsReport build_report(const Encoder& model, const std::vector<AttackResult>& results,
                           const std::function<Tensor(const Tensor&)>& recon,
                           const MsssimConfig& msssim_cfg, const ReportMeta& meta);

MetricsReport build_report(const HierarchicalVae& model,
                           const std::vector<AttackResult>& results,
                           const MsssimConfig& msssim_cfg, const ReportMeta& meta);

// One row per attack; deterministic float formatting, so identical inputs
// produce identical bytes.
void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows);

// Aggregate summary in the same layout as the per-configuration result
// tables (mode/beta/k_A rows with the MS-SSIM triple and omega).
std::string summary_json(const MetricsReport& report);

}  // namespace vaeatk

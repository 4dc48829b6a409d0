#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vaeatk/attacks.hpp"
#include "vaeatk/config.hpp"
#include "vaeatk/train.hpp"

namespace vaeatk {

// Everything a run needs, expressible as flat config keys (model.*,
// data.*, train.*, attack.*, harness.*). Per-stage seeds derive from
// master_seed, so a repeated run reproduces its outputs byte for byte.
struct ExperimentConfig {
  // model.*
  std::string model_kind = "vae";  // vae | hier
  std::string model_arch = "conv";  // conv | affine
  int levels = 2;
  std::int64_t latent_dim = 16;
  std::int64_t hidden = 128;  // affine trunk width
  double beta = 1.0;
  // data.*
  std::string data_kind = "synthetic";  // synthetic | idx
  std::string synthetic_kind = "shapes";
  std::int64_t synthetic_n = 2000;
  std::string idx_images;
  std::string idx_labels;
  std::int64_t data_limit = 0;  // 0 = keep everything
  double test_fraction = 0.15;
  // train.*
  TrainConfig train;
  std::string checkpoint_in;  // reuse instead of training
  // attack.*
  AttackConfig attack;
  int n_refs = 10;
  int n_targets = 5;
  int inits = 6;
  // harness.*
  std::string out_dir = "run";
  std::uint64_t master_seed = 1;
  int workers = 0;
  int nll_samples = 64;  // importance samples for the summary NLL
  int nll_images = 64;   // test images scored for the summary NLL

  static ExperimentConfig from_kv(const KvConfig& kv);
  KvConfig to_kv() const;
  void validate() const;
};

enum class Stage { Config = 0, Data, Train, Attack, Metrics, Report };

struct RunOutcome {
  std::string run_dir;
  bool ok = true;
  std::string failed_stage;
  std::string error;
};

// Executes config -> data -> train -> attack -> metrics -> report up to
// `last`, writing config.snapshot.txt, manifest.json, checkpoint.vaek,
// history.csv, attacks.bin, metrics.csv, summary.json and image grids into
// the run directory. Stages whose outputs already exist in the run
// directory (checkpoint, attack results) are loaded instead of recomputed
// when `reuse_artifacts` is set. A stage failure is recorded in the
// manifest and later stages are skipped.
RunOutcome run_experiment(const ExperimentConfig& cfg, Stage last = Stage::Report,
                          bool reuse_artifacts = false);

// Figure-style demo on a 2-D latent model: trains a small model on blob
// data, runs supervised attacks, and emits a latent scatter plus
// target/adversarial/reference strips. Requires latent_dim == 2.
RunOutcome demo2d(const ExperimentConfig& cfg);

// One full run per beta value under out_dir/beta_<value>/ plus an
// aggregate sweep_summary.json.
std::vector<RunOutcome> sweep_betas(const ExperimentConfig& cfg,
                                    const std::vector<double>& betas);

}  // namespace vaeatk

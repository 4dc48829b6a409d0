// Command line front end: train / attack / metrics / report / demo2d /
// sweep over one flat configuration (file + flag overrides).
//
// Exit codes: 0 success, 1 configuration error, 2 stage failure (the run
// manifest records which stage failed).

#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vaeatk/config.hpp"
#include "vaeatk/experiment.hpp"

namespace {

struct FlagBinding {
  std::string key;     // config key the flag mirrors
  std::string value;   // parsed text
  CLI::Option* option = nullptr;
};

void bind_common(CLI::App* cmd, std::vector<FlagBinding>& bindings, std::string& config_path) {
  cmd->add_option("--config", config_path, "flat key=value configuration file");
  static const std::vector<std::pair<std::string, std::string>> flags = {
      {"--seed", "harness.seed"},
      {"--out", "harness.out_dir"},
      {"--workers", "harness.workers"},
      {"--model.kind", "model.kind"},
      {"--model.arch", "model.arch"},
      {"--model.levels", "model.levels"},
      {"--model.latent-dim", "model.latent_dim"},
      {"--model.hidden", "model.hidden"},
      {"--model.beta", "model.beta"},
      {"--data.kind", "data.kind"},
      {"--data.synthetic-kind", "data.synthetic_kind"},
      {"--data.n", "data.n"},
      {"--data.idx-images", "data.idx_images"},
      {"--data.idx-labels", "data.idx_labels"},
      {"--data.limit", "data.limit"},
      {"--data.test-fraction", "data.test_fraction"},
      {"--train.learning-rate", "train.learning_rate"},
      {"--train.plateau-factor", "train.plateau_factor"},
      {"--train.plateau-patience", "train.plateau_patience"},
      {"--train.epochs", "train.epochs"},
      {"--train.batch-size", "train.batch_size"},
      {"--train.validation-fraction", "train.validation_fraction"},
      {"--train.checkpoint-in", "train.checkpoint_in"},
      {"--attack.mode", "attack.mode"},
      {"--attack.norm", "attack.norm"},
      {"--attack.budget", "attack.budget"},
      {"--attack.steps", "attack.steps"},
      {"--attack.step-size", "attack.step_size"},
      {"--attack.decay-tail", "attack.decay_tail"},
      {"--attack.init-scale", "attack.init_scale"},
      {"--attack.k-a", "attack.k_a"},
      {"--attack.n-refs", "attack.n_refs"},
      {"--attack.n-targets", "attack.n_targets"},
      {"--attack.inits", "attack.inits"},
      {"--nll-samples", "harness.nll_samples"},
      {"--nll-images", "harness.nll_images"},
  };
  bindings.reserve(bindings.size() + flags.size());
  for (const auto& [flag, key] : flags) {
    bindings.push_back({key, "", nullptr});
    FlagBinding& b = bindings.back();
    b.option = cmd->add_option(flag, b.value, "overrides config key " + key);
  }
}

vaeatk::ExperimentConfig build_config(const std::string& config_path,
                                      const std::vector<FlagBinding>& bindings) {
  vaeatk::KvConfig kv;
  if (!config_path.empty()) kv = vaeatk::KvConfig::parse_file(config_path);
  for (const FlagBinding& b : bindings) {
    if (b.option != nullptr && b.option->count() > 0) kv.set(b.key, b.value);
  }
  return vaeatk::ExperimentConfig::from_kv(kv);
}

int report_outcome(const vaeatk::RunOutcome& outcome) {
  if (outcome.ok) {
    std::printf("ok: %s\n", outcome.run_dir.c_str());
    return 0;
  }
  std::fprintf(stderr, "stage '%s' failed: %s\n", outcome.failed_stage.c_str(),
               outcome.error.c_str());
  std::fprintf(stderr, "manifest: %s/manifest.json\n", outcome.run_dir.c_str());
  return 2;
}

std::vector<double> parse_betas(const std::string& text) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t comma = text.find(',', pos);
    if (comma == std::string::npos) comma = text.size();
    out.push_back(std::stod(text.substr(pos, comma - pos)));
    pos = comma + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"small VAEs, adversarial perturbations against their encoders, and "
               "latent/pixel-space robustness metrics"};
  app.require_subcommand(1);

  struct Sub {
    CLI::App* cmd = nullptr;
    std::string config_path;
    std::vector<FlagBinding> bindings;
  };
  auto make_sub = [&](const char* name, const char* help) {
    Sub sub;
    sub.cmd = app.add_subcommand(name, help);
    bind_common(sub.cmd, sub.bindings, sub.config_path);
    return sub;
  };

  Sub train = make_sub("train", "train a model and write a checkpoint");
  Sub attack = make_sub("attack", "train (or reuse a checkpoint) and run the attack batch");
  Sub metrics = make_sub("metrics", "compute metrics.csv from a run directory");
  Sub report = make_sub("report", "assemble summary.json and image grids");
  Sub demo = make_sub("demo2d", "2-D latent toy scenario: scatter plus image strips");
  Sub sweep = make_sub("sweep", "one full run per beta value");

  std::string betas_text = "0.5,1,2,4,10";
  sweep.cmd->add_option("--betas", betas_text, "comma-separated beta values");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train.cmd->parsed()) {
      return report_outcome(
          vaeatk::run_experiment(build_config(train.config_path, train.bindings),
                                 vaeatk::Stage::Train));
    }
    if (attack.cmd->parsed()) {
      return report_outcome(
          vaeatk::run_experiment(build_config(attack.config_path, attack.bindings),
                                 vaeatk::Stage::Attack, /*reuse_artifacts=*/true));
    }
    if (metrics.cmd->parsed()) {
      return report_outcome(
          vaeatk::run_experiment(build_config(metrics.config_path, metrics.bindings),
                                 vaeatk::Stage::Metrics, /*reuse_artifacts=*/true));
    }
    if (report.cmd->parsed()) {
      return report_outcome(
          vaeatk::run_experiment(build_config(report.config_path, report.bindings),
                                 vaeatk::Stage::Report, /*reuse_artifacts=*/true));
    }
    if (demo.cmd->parsed()) {
      // demo defaults: tiny 2-latent affine model on blob data
      vaeatk::KvConfig kv;
      kv.set("model.kind", "vae");
      kv.set("model.arch", "affine");
      kv.set("model.latent_dim", "2");
      kv.set("model.hidden", "96");
      kv.set("data.kind", "synthetic");
      kv.set("data.synthetic_kind", "blobs");
      kv.set("data.n", "1200");
      kv.set("train.epochs", "12");
      kv.set("train.batch_size", "64");
      kv.set("train.learning_rate", "0.002");
      kv.set("attack.steps", "200");
      kv.set("attack.budget", "3.0");
      kv.set("attack.step_size", "0.02");
      kv.set("attack.n_refs", "10");
      kv.set("attack.n_targets", "1");
      if (!demo.config_path.empty()) {
        for (const auto& [k, v] : vaeatk::KvConfig::parse_file(demo.config_path).values()) {
          kv.set(k, v);
        }
      }
      for (const FlagBinding& b : demo.bindings) {
        if (b.option != nullptr && b.option->count() > 0) kv.set(b.key, b.value);
      }
      return report_outcome(vaeatk::demo2d(vaeatk::ExperimentConfig::from_kv(kv)));
    }
    if (sweep.cmd->parsed()) {
      vaeatk::ExperimentConfig cfg = build_config(sweep.config_path, sweep.bindings);
      std::vector<vaeatk::RunOutcome> outcomes =
          vaeatk::sweep_betas(cfg, parse_betas(betas_text));
      int rc = 0;
      for (const vaeatk::RunOutcome& o : outcomes) {
        int one = report_outcome(o);
        rc = rc == 0 ? one : rc;
      }
      return rc;
    }
  } catch (const vaeatk::ValueError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const vaeatk::IoError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}

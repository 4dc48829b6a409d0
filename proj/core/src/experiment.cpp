#include "vaeatk/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "vaeatk/checkpoint.hpp"
#include "vaeatk/dataset.hpp"
#include "vaeatk/imageio.hpp"
#include "vaeatk/metrics.hpp"
#include "vaeatk/parallel.hpp"

namespace vaeatk {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::uint64_t fnv1a_str(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::Config: return "config";
    case Stage::Data: return "data";
    case Stage::Train: return "train";
    case Stage::Attack: return "attack";
    case Stage::Metrics: return "metrics";
    case Stage::Report: return "report";
  }
  return "?";
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("short write on " + path);
}

// ---- attack result persistence -------------------------------------------

constexpr const char* kAttacksMagic = "VAEATKATK1\n";

void save_attacks(const std::string& path, const std::vector<AttackResult>& results,
                  const Shape& image_shape) {
  json header;
  header["format"] = "vaeatk.attacks.v1";
  header["image_shape"] = image_shape;
  json items = json::array();
  for (const AttackResult& r : results) {
    items.push_back({{"ref_id", r.ref_id},
                     {"target_id", r.target_id},
                     {"init_index", r.init_index},
                     {"seed", r.seed},
                     {"converged", r.converged},
                     {"final_objective", r.final_objective},
                     {"attacked_levels", r.attacked_levels},
                     {"error", r.error},
                     {"trace_len", r.trace.size()},
                     {"has_eps", r.ok()}});
  }
  header["items"] = items;
  std::string head = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write attack results: " + path);
  std::uint64_t head_size = head.size();
  out.write(kAttacksMagic, static_cast<std::streamsize>(std::strlen(kAttacksMagic)));
  out.write(reinterpret_cast<const char*>(&head_size), sizeof(head_size));
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  for (const AttackResult& r : results) {
    if (r.ok()) {
      const auto& e = r.epsilon.data();
      out.write(reinterpret_cast<const char*>(e.data()),
                static_cast<std::streamsize>(e.size() * sizeof(double)));
    }
    out.write(reinterpret_cast<const char*>(r.trace.data()),
              static_cast<std::streamsize>(r.trace.size() * sizeof(double)));
  }
  if (!out) throw IoError("short write on attack results: " + path);
}

std::vector<AttackResult> load_attacks(const std::string& path, const DatasetSplit& test_ds) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open attack results: " + path);
  std::string magic(std::strlen(kAttacksMagic), '\0');
  in.read(magic.data(), static_cast<std::streamsize>(magic.size()));
  if (!in || magic != kAttacksMagic) throw IoError("not an attack results file: " + path);
  std::uint64_t head_size = 0;
  in.read(reinterpret_cast<char*>(&head_size), sizeof(head_size));
  std::string head(head_size, '\0');
  in.read(head.data(), static_cast<std::streamsize>(head_size));
  if (!in) throw IoError("truncated attack results header: " + path);
  json header = json::parse(head);
  Shape shape = header.at("image_shape").get<Shape>();
  std::int64_t d = numel(shape);

  std::vector<AttackResult> results;
  for (const json& item : header.at("items")) {
    AttackResult r;
    r.ref_id = item.at("ref_id").get<int>();
    r.target_id = item.at("target_id").get<int>();
    r.init_index = item.at("init_index").get<int>();
    r.seed = item.at("seed").get<std::uint64_t>();
    r.converged = item.at("converged").get<bool>();
    r.final_objective = item.at("final_objective").get<double>();
    r.attacked_levels = item.at("attacked_levels").get<int>();
    r.error = item.at("error").get<std::string>();
    std::size_t trace_len = item.at("trace_len").get<std::size_t>();
    if (item.at("has_eps").get<bool>()) {
      std::vector<double> eps(static_cast<std::size_t>(d));
      in.read(reinterpret_cast<char*>(eps.data()),
              static_cast<std::streamsize>(eps.size() * sizeof(double)));
      r.epsilon = Tensor::from_data(shape, std::move(eps));
      r.x_ref = test_ds.image(r.ref_id);
      if (r.target_id >= 0) r.x_target = test_ds.image(r.target_id);
      std::vector<double> x(static_cast<std::size_t>(d));
      const auto& ref = r.x_ref.data();
      const auto& ev = r.epsilon.data();
      for (std::size_t i = 0; i < x.size(); ++i) {
        double v = ref[i] + ev[i];
        x[i] = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
      }
      r.x_adv = Tensor::from_data(shape, std::move(x));
    }
    r.trace.resize(trace_len);
    in.read(reinterpret_cast<char*>(r.trace.data()),
            static_cast<std::streamsize>(trace_len * sizeof(double)));
    if (!in) throw IoError("truncated attack results payload: " + path);
    results.push_back(std::move(r));
  }
  return results;
}

// ---- run context ----------------------------------------------------------

struct RunContext {
  ExperimentConfig cfg;
  std::string dir;
  std::string run_id;
  json manifest;

  DatasetSplit train_ds, test_ds;
  std::optional<VaeModel> vae;
  std::optional<HierarchicalVae> hier;
  std::optional<VaeModel> frozen_vae;
  std::optional<HierarchicalVae> frozen_hier;
  json train_meta;
  std::vector<AttackResult> results;
  std::optional<MetricsReport> report;
  json extras;  // nll / kl / curves for the summary
};

void flush_manifest(RunContext& ctx) {
  write_text(ctx.dir + "/manifest.json", ctx.manifest.dump(2) + "\n");
}

void mark_stage(RunContext& ctx, Stage s, const std::string& status,
                const std::string& error = "") {
  json entry;
  entry["name"] = stage_name(s);
  entry["status"] = status;
  if (!error.empty()) entry["error"] = error;
  ctx.manifest["stages"].push_back(entry);
  flush_manifest(ctx);
}

// Hash of the experiment content: every config key except where the run
// lives (out_dir) and how many workers execute it, neither of which may
// change results.
std::string run_identity(const ExperimentConfig& cfg) {
  KvConfig kv = cfg.to_kv();
  kv.set("harness.out_dir", "");
  kv.set("harness.workers", "");
  return hex64(fnv1a_str(kv.to_string()) ^ cfg.master_seed);
}

std::string attack_mode_label(const ExperimentConfig& cfg) {
  if (cfg.model_kind == "hier") return "hier-supervised";
  return cfg.attack.mode == AttackMode::Unsupervised ? "unsupervised" : "supervised";
}

// ---- stages ----------------------------------------------------------------

void stage_data(RunContext& ctx) {
  const ExperimentConfig& cfg = ctx.cfg;
  DatasetSplit all;
  if (cfg.data_kind == "synthetic") {
    all = make_synthetic(cfg.synthetic_kind, cfg.synthetic_n,
                         derive_seed(cfg.master_seed, "synthetic"));
  } else if (cfg.data_kind == "idx") {
    all = load_idx(cfg.idx_images, cfg.idx_labels);
  } else {
    throw ValueError("data.kind must be 'synthetic' or 'idx', got '" + cfg.data_kind + "'");
  }

  std::vector<std::int64_t> order(static_cast<std::size_t>(all.size()));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(cfg.master_seed, "test-split"));
  rng.shuffle(order);
  if (cfg.data_limit > 0 && cfg.data_limit < all.size()) {
    order.resize(static_cast<std::size_t>(cfg.data_limit));
  }
  std::int64_t n = static_cast<std::int64_t>(order.size());
  std::int64_t n_test = std::max<std::int64_t>(1, static_cast<std::int64_t>(
                                                      std::floor(n * cfg.test_fraction)));
  std::vector<std::int64_t> test_rows(order.begin(), order.begin() + n_test);
  std::vector<std::int64_t> train_rows(order.begin() + n_test, order.end());
  ctx.test_ds = all.subset(test_rows, "test");
  ctx.train_ds = all.subset(train_rows, "train");
}

void stage_train(RunContext& ctx, bool reuse) {
  ExperimentConfig& cfg = ctx.cfg;
  std::string ckpt_path = ctx.dir + "/checkpoint.vaek";
  std::string source = ckpt_path;
  bool load = false;
  if (!cfg.checkpoint_in.empty()) {
    source = cfg.checkpoint_in;
    load = true;
  } else if (reuse && fs::exists(ckpt_path)) {
    load = true;
  }

  if (load) {
    LoadedCheckpoint loaded = load_checkpoint(source);
    if (loaded.kind != cfg.model_kind) {
      throw ValueError("checkpoint holds a '" + loaded.kind + "' model but config asks for '" +
                       cfg.model_kind + "'");
    }
    ctx.vae = std::move(loaded.vae);
    ctx.hier = std::move(loaded.hier);
    ctx.train_meta = json::parse(loaded.meta_json);
    if (ctx.vae) ctx.vae->set_beta(cfg.beta);
    return;
  }

  TrainConfig tc = cfg.train;
  tc.beta = cfg.beta;
  tc.seed = derive_seed(cfg.master_seed, "train");
  TrainResult tr;
  if (cfg.model_kind == "vae") {
    Shape in_shape = {ctx.train_ds.images.shape()[1], ctx.train_ds.images.shape()[2],
                      ctx.train_ds.images.shape()[3]};
    VaeSpec spec;
    if (cfg.model_arch == "conv") {
      if (in_shape != Shape{1, 28, 28}) {
        throw ValueError("model.arch=conv expects 1x28x28 inputs; use model.arch=affine");
      }
      spec = VaeSpec::desk_default(cfg.latent_dim, cfg.beta);
    } else if (cfg.model_arch == "affine") {
      spec = VaeSpec::desk_affine(in_shape, cfg.hidden, cfg.latent_dim, cfg.beta);
    } else {
      throw ValueError("model.arch must be 'conv' or 'affine'");
    }
    ctx.vae = VaeModel::init(spec, derive_seed(cfg.master_seed, "model"));
    tr = train_vae(*ctx.vae, ctx.train_ds.images, tc);
  } else if (cfg.model_kind == "hier") {
    HierVaeSpec spec = HierVaeSpec::desk_default(cfg.levels);
    if (Shape{ctx.train_ds.images.shape()[1], ctx.train_ds.images.shape()[2],
              ctx.train_ds.images.shape()[3]} != spec.input_shape) {
      throw ValueError("hier model expects 1x28x28 inputs");
    }
    ctx.hier = HierarchicalVae::init(spec, derive_seed(cfg.master_seed, "model"));
    tr = train_hier(*ctx.hier, ctx.train_ds.images, tc);
  } else {
    throw ValueError("model.kind must be 'vae' or 'hier', got '" + cfg.model_kind + "'");
  }

  std::string hist = "epoch,train_neg_elbo,val_neg_elbo,learning_rate\n";
  for (const EpochStats& e : tr.history) {
    hist += std::to_string(e.epoch) + "," + fmt_double(e.train_neg_elbo) + "," +
            fmt_double(e.val_neg_elbo) + "," + fmt_double(e.learning_rate) + "\n";
  }
  write_text(ctx.dir + "/history.csv", hist);

  json meta;
  meta["train_config"] = {{"learning_rate", tc.learning_rate},
                          {"plateau_factor", tc.plateau_factor},
                          {"plateau_patience", tc.plateau_patience},
                          {"epochs", tc.epochs},
                          {"batch_size", tc.batch_size},
                          {"beta", tc.beta},
                          {"seed", tc.seed},
                          {"validation_fraction", tc.validation_fraction}};
  meta["metrics"] = {{"best_val_neg_elbo", tr.best_val_neg_elbo},
                     {"final_train_neg_elbo",
                      tr.history.empty() ? 0.0 : tr.history.back().train_neg_elbo}};
  ctx.train_meta = meta;
  if (ctx.vae) {
    save_checkpoint(ckpt_path, *ctx.vae, meta.dump());
  } else {
    save_checkpoint(ckpt_path, *ctx.hier, meta.dump());
  }
}

void stage_attack(RunContext& ctx, bool reuse) {
  ExperimentConfig& cfg = ctx.cfg;
  std::string path = ctx.dir + "/attacks.bin";
  if (reuse && fs::exists(path)) {
    ctx.results = load_attacks(path, ctx.test_ds);
    return;
  }

  PairSelection sel;
  std::uint64_t select_seed = derive_seed(cfg.master_seed, "select");
  if (cfg.model_kind != "hier" && cfg.attack.mode == AttackMode::Unsupervised) {
    sel = select_pairs_unsupervised(ctx.test_ds, cfg.n_refs, cfg.inits, select_seed);
  } else {
    sel = select_pairs_supervised(ctx.test_ds, cfg.n_refs, cfg.n_targets, select_seed);
  }
  std::vector<AttackItem> items = sel.items();

  AttackConfig atk = cfg.attack;
  std::uint64_t batch_seed = derive_seed(cfg.master_seed, "attack");
  if (ctx.vae) {
    ctx.frozen_vae = ctx.vae->frozen_copy();
    ctx.results = attack_batch(*ctx.frozen_vae, ctx.test_ds.images, items, atk, batch_seed,
                               cfg.workers);
  } else {
    ctx.frozen_hier = ctx.hier->frozen_copy();
    if (atk.attacked_levels == 0) atk.attacked_levels = ctx.hier->levels();
    ctx.results = attack_batch(*ctx.frozen_hier, ctx.test_ds.images, items, atk, batch_seed,
                               cfg.workers);
  }
  Shape img_shape = {ctx.test_ds.images.shape()[1], ctx.test_ds.images.shape()[2],
                     ctx.test_ds.images.shape()[3]};
  save_attacks(path, ctx.results, img_shape);
}

void stage_metrics(RunContext& ctx) {
  ExperimentConfig& cfg = ctx.cfg;
  if (!ctx.frozen_vae && ctx.vae) ctx.frozen_vae = ctx.vae->frozen_copy();
  if (!ctx.frozen_hier && ctx.hier) ctx.frozen_hier = ctx.hier->frozen_copy();

  ReportMeta meta;
  meta.run_id = ctx.run_id;
  meta.mode = attack_mode_label(cfg);
  meta.beta = cfg.beta;
  meta.k_a = ctx.hier ? (cfg.attack.attacked_levels == 0 ? ctx.hier->levels()
                                                         : cfg.attack.attacked_levels)
                      : 0;
  meta.steps = cfg.attack.steps;
  meta.norm = cfg.attack.norm;

  MsssimConfig mcfg;
  if (ctx.frozen_vae) {
    const VaeModel& m = *ctx.frozen_vae;
    ctx.report = build_report(
        m, ctx.results, [&m](const Tensor& x) { return m.reconstruct_mean(x); }, mcfg, meta);
  } else {
    ctx.report = build_report(*ctx.frozen_hier, ctx.results, mcfg, meta);
  }
  write_metrics_csv(ctx.dir + "/metrics.csv", ctx.report->rows);

  // summary extras: importance-sampled NLL and mean posterior KL on test
  // images for the plain model, anomaly curves for the hierarchical one
  if (ctx.frozen_vae) {
    const VaeModel& m = *ctx.frozen_vae;
    std::int64_t n_score = std::min<std::int64_t>(cfg.nll_images, ctx.test_ds.size());
    std::uint64_t nll_seed = derive_seed(cfg.master_seed, "nll");
    std::vector<double> nll(static_cast<std::size_t>(n_score));
    std::vector<double> kl(static_cast<std::size_t>(n_score));
    parallel_for(
        n_score,
        [&](std::int64_t i) {
          Tensor x = ctx.test_ds.image(i);
          nll[static_cast<std::size_t>(i)] =
              m.nll_importance(x, cfg.nll_samples, derive_seed(nll_seed, "img", i));
          kl[static_cast<std::size_t>(i)] =
              kl_diag(m.encode(x), DiagGaussian::standard({m.latent_dim()})).item();
        },
        cfg.workers);
    double nll_mean = 0.0, kl_mean = 0.0;
    for (std::int64_t i = 0; i < n_score; ++i) {
      nll_mean += nll[static_cast<std::size_t>(i)];
      kl_mean += kl[static_cast<std::size_t>(i)];
    }
    ctx.extras["test_nll"] = nll_mean / n_score;
    ctx.extras["test_kl"] = kl_mean / n_score;
    ctx.extras["nll_samples"] = cfg.nll_samples;
    ctx.extras["nll_images"] = n_score;
  } else {
    // labeled batches: reference inputs, targets, adversarial inputs
    auto batch_of = [&](const std::vector<Tensor>& xs) {
      const Shape& s = xs[0].shape();
      std::vector<double> data;
      data.reserve(xs.size() * static_cast<std::size_t>(numel(s)));
      for (const Tensor& x : xs) data.insert(data.end(), x.data().begin(), x.data().end());
      return Tensor::from_data({static_cast<std::int64_t>(xs.size()), s[0], s[1], s[2]},
                               std::move(data));
    };
    std::vector<Tensor> refs, tgts, advs;
    for (const AttackResult& r : ctx.results) {
      if (!r.ok()) continue;
      refs.push_back(r.x_ref);
      advs.push_back(r.x_adv);
      if (r.x_target.defined()) tgts.push_back(r.x_target);
    }
    if (!refs.empty()) {
      std::vector<std::pair<std::string, Tensor>> batches;
      batches.emplace_back("reference", batch_of(refs));
      if (!tgts.empty()) batches.emplace_back("target", batch_of(tgts));
      batches.emplace_back("adversarial", batch_of(advs));
      AnomalyCurves curves = elbo_above_k_curves(*ctx.frozen_hier, batches, 3,
                                                 derive_seed(cfg.master_seed, "curves"));
      json jc;
      for (std::size_t i = 0; i < curves.labels.size(); ++i) {
        jc[curves.labels[i]] = curves.curves[i];
      }
      ctx.extras["neg_elbo_above_k"] = jc;
    }
  }
}

void stage_report(RunContext& ctx) {
  const MetricsReport& rep = *ctx.report;
  json j = json::parse(summary_json(rep));
  j["extras"] = ctx.extras;
  j["train"] = ctx.train_meta;
  j["provenance"] = ctx.test_ds.provenance;
  write_text(ctx.dir + "/summary.json", j.dump(2) + "\n");

  auto recon = [&](const Tensor& x) {
    return ctx.frozen_vae ? ctx.frozen_vae->reconstruct_mean(x)
                          : ctx.frozen_hier->reconstruct_mean(x);
  };
  std::vector<const AttackResult*> ok;
  for (const AttackResult& r : ctx.results) {
    if (r.ok()) ok.push_back(&r);
  }
  int cols = static_cast<int>(std::min<std::size_t>(10, ok.size()));
  if (cols > 0) {
    bool supervised = ok[0]->x_target.defined();
    std::vector<Tensor> cells;
    for (int c = 0; c < cols; ++c) cells.push_back(ok[static_cast<std::size_t>(c)]->x_adv);
    for (int c = 0; c < cols; ++c) {
      cells.push_back(recon(ok[static_cast<std::size_t>(c)]->x_adv));
    }
    if (supervised) {
      for (int c = 0; c < cols; ++c) {
        cells.push_back(recon(ok[static_cast<std::size_t>(c)]->x_target));
      }
    }
    emit_grid(cells, {supervised ? 3 : 2, cols}, ctx.dir + "/grid_attacks.pgm");
  }
}

}  // namespace

// ---- config plumbing --------------------------------------------------------

ExperimentConfig ExperimentConfig::from_kv(const KvConfig& kv) {
  ExperimentConfig c;
  c.model_kind = kv.get("model.kind", c.model_kind);
  c.model_arch = kv.get("model.arch", c.model_arch);
  c.levels = static_cast<int>(kv.get_int("model.levels", c.levels));
  c.latent_dim = kv.get_int("model.latent_dim", c.latent_dim);
  c.hidden = kv.get_int("model.hidden", c.hidden);
  c.beta = kv.get_double("model.beta", c.beta);

  c.data_kind = kv.get("data.kind", c.data_kind);
  c.synthetic_kind = kv.get("data.synthetic_kind", c.synthetic_kind);
  c.synthetic_n = kv.get_int("data.n", c.synthetic_n);
  c.idx_images = kv.get("data.idx_images", c.idx_images);
  c.idx_labels = kv.get("data.idx_labels", c.idx_labels);
  c.data_limit = kv.get_int("data.limit", c.data_limit);
  c.test_fraction = kv.get_double("data.test_fraction", c.test_fraction);

  c.train.learning_rate = kv.get_double("train.learning_rate", c.train.learning_rate);
  c.train.plateau_factor = kv.get_double("train.plateau_factor", c.train.plateau_factor);
  c.train.plateau_patience =
      static_cast<int>(kv.get_int("train.plateau_patience", c.train.plateau_patience));
  c.train.epochs = static_cast<int>(kv.get_int("train.epochs", c.train.epochs));
  c.train.batch_size = static_cast<int>(kv.get_int("train.batch_size", c.train.batch_size));
  c.train.validation_fraction =
      kv.get_double("train.validation_fraction", c.train.validation_fraction);
  c.checkpoint_in = kv.get("train.checkpoint_in", c.checkpoint_in);

  std::string mode = kv.get("attack.mode", "supervised");
  if (mode == "supervised") {
    c.attack.mode = AttackMode::Supervised;
  } else if (mode == "unsupervised") {
    c.attack.mode = AttackMode::Unsupervised;
  } else {
    throw ValueError("attack.mode must be 'supervised' or 'unsupervised'");
  }
  std::string norm = kv.get("attack.norm", "l2");
  if (norm == "l2" || norm == "L2") {
    c.attack.norm = NormKind::L2;
  } else if (norm == "linf" || norm == "Linf") {
    c.attack.norm = NormKind::Linf;
  } else {
    throw ValueError("attack.norm must be 'l2' or 'linf'");
  }
  c.attack.budget = kv.get_double("attack.budget", c.attack.budget);
  c.attack.steps = static_cast<int>(kv.get_int("attack.steps", c.attack.steps));
  c.attack.step_size = kv.get_double("attack.step_size", c.attack.step_size);
  c.attack.decay_tail = kv.get_double("attack.decay_tail", c.attack.decay_tail);
  c.attack.init_scale = kv.get_double("attack.init_scale", c.attack.init_scale);
  c.attack.attacked_levels =
      static_cast<int>(kv.get_int("attack.k_a", c.attack.attacked_levels));
  c.n_refs = static_cast<int>(kv.get_int("attack.n_refs", c.n_refs));
  c.n_targets = static_cast<int>(kv.get_int("attack.n_targets", c.n_targets));
  c.inits = static_cast<int>(kv.get_int("attack.inits", c.inits));

  c.out_dir = kv.get("harness.out_dir", c.out_dir);
  c.master_seed = kv.get_u64("harness.seed", c.master_seed);
  c.workers = static_cast<int>(kv.get_int("harness.workers", c.workers));
  c.nll_samples = static_cast<int>(kv.get_int("harness.nll_samples", c.nll_samples));
  c.nll_images = static_cast<int>(kv.get_int("harness.nll_images", c.nll_images));
  return c;
}

KvConfig ExperimentConfig::to_kv() const {
  KvConfig kv;
  kv.set("model.kind", model_kind);
  kv.set("model.arch", model_arch);
  kv.set("model.levels", std::to_string(levels));
  kv.set("model.latent_dim", std::to_string(latent_dim));
  kv.set("model.hidden", std::to_string(hidden));
  kv.set("model.beta", fmt_double(beta));
  kv.set("data.kind", data_kind);
  kv.set("data.synthetic_kind", synthetic_kind);
  kv.set("data.n", std::to_string(synthetic_n));
  kv.set("data.idx_images", idx_images);
  kv.set("data.idx_labels", idx_labels);
  kv.set("data.limit", std::to_string(data_limit));
  kv.set("data.test_fraction", fmt_double(test_fraction));
  kv.set("train.learning_rate", fmt_double(train.learning_rate));
  kv.set("train.plateau_factor", fmt_double(train.plateau_factor));
  kv.set("train.plateau_patience", std::to_string(train.plateau_patience));
  kv.set("train.epochs", std::to_string(train.epochs));
  kv.set("train.batch_size", std::to_string(train.batch_size));
  kv.set("train.validation_fraction", fmt_double(train.validation_fraction));
  kv.set("train.checkpoint_in", checkpoint_in);
  kv.set("attack.mode", attack.mode == AttackMode::Unsupervised ? "unsupervised" : "supervised");
  kv.set("attack.norm", attack.norm == NormKind::Linf ? "linf" : "l2");
  kv.set("attack.budget", fmt_double(attack.budget));
  kv.set("attack.steps", std::to_string(attack.steps));
  kv.set("attack.step_size", fmt_double(attack.step_size));
  kv.set("attack.decay_tail", fmt_double(attack.decay_tail));
  kv.set("attack.init_scale", fmt_double(attack.init_scale));
  kv.set("attack.k_a", std::to_string(attack.attacked_levels));
  kv.set("attack.n_refs", std::to_string(n_refs));
  kv.set("attack.n_targets", std::to_string(n_targets));
  kv.set("attack.inits", std::to_string(inits));
  kv.set("harness.out_dir", out_dir);
  kv.set("harness.seed", std::to_string(master_seed));
  kv.set("harness.workers", std::to_string(workers));
  kv.set("harness.nll_samples", std::to_string(nll_samples));
  kv.set("harness.nll_images", std::to_string(nll_images));
  return kv;
}

void ExperimentConfig::validate() const {
  if (model_kind != "vae" && model_kind != "hier") {
    throw ValueError("model.kind must be 'vae' or 'hier'");
  }
  if (out_dir.empty()) throw ValueError("harness.out_dir must not be empty");
  if (data_kind == "idx" && (idx_images.empty() || idx_labels.empty())) {
    throw ValueError("data.kind=idx requires data.idx_images and data.idx_labels");
  }
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ValueError("data.test_fraction must be in (0,1)");
  }
  train.validate();
  attack.validate(levels);
}

RunOutcome run_experiment(const ExperimentConfig& cfg_in, Stage last, bool reuse_artifacts) {
  ExperimentConfig cfg = cfg_in;
  cfg.validate();

  RunOutcome outcome;
  RunContext ctx;
  ctx.cfg = cfg;
  ctx.dir = cfg.out_dir;
  outcome.run_dir = ctx.dir;
  fs::create_directories(ctx.dir);

  std::string snapshot = cfg.to_kv().to_string();
  ctx.run_id = run_identity(cfg);
  ctx.manifest["run_id"] = ctx.run_id;
  ctx.manifest["stages"] = json::array();

  struct StageFn {
    Stage stage;
    std::function<void()> fn;
  };
  std::vector<StageFn> stages = {
      {Stage::Config, [&] { write_text(ctx.dir + "/config.snapshot.txt", snapshot); }},
      {Stage::Data, [&] { stage_data(ctx); }},
      {Stage::Train, [&] { stage_train(ctx, reuse_artifacts); }},
      {Stage::Attack, [&] { stage_attack(ctx, reuse_artifacts); }},
      {Stage::Metrics, [&] { stage_metrics(ctx); }},
      {Stage::Report, [&] { stage_report(ctx); }},
  };

  for (const StageFn& s : stages) {
    if (static_cast<int>(s.stage) > static_cast<int>(last)) break;
    try {
      s.fn();
      mark_stage(ctx, s.stage, "ok");
    } catch (const std::exception& e) {
      mark_stage(ctx, s.stage, "failed", e.what());
      outcome.ok = false;
      outcome.failed_stage = stage_name(s.stage);
      outcome.error = e.what();
      return outcome;
    }
  }
  return outcome;
}

RunOutcome demo2d(const ExperimentConfig& cfg_in) {
  ExperimentConfig cfg = cfg_in;
  if (cfg.latent_dim != 2) {
    throw ValueError("demo2d requires model.latent_dim = 2, got " +
                     std::to_string(cfg.latent_dim));
  }
  cfg.validate();

  RunOutcome outcome;
  outcome.run_dir = cfg.out_dir;
  fs::create_directories(cfg.out_dir);

  RunContext ctx;
  ctx.cfg = cfg;
  ctx.dir = cfg.out_dir;
  std::string snapshot = cfg.to_kv().to_string();
  ctx.run_id = run_identity(cfg);
  ctx.manifest["run_id"] = ctx.run_id;
  ctx.manifest["stages"] = json::array();

  try {
    write_text(ctx.dir + "/config.snapshot.txt", snapshot);
    mark_stage(ctx, Stage::Config, "ok");
    stage_data(ctx);
    mark_stage(ctx, Stage::Data, "ok");
    stage_train(ctx, /*reuse=*/false);
    mark_stage(ctx, Stage::Train, "ok");
    stage_attack(ctx, /*reuse=*/false);
    mark_stage(ctx, Stage::Attack, "ok");

    const VaeModel frozen = ctx.vae->frozen_copy();
    // latent scatter of the training data
    std::vector<ScatterPoint> points;
    std::string points_csv = "kind,class,x,y\n";
    std::int64_t n_plot = std::min<std::int64_t>(800, ctx.train_ds.size());
    for (std::int64_t i = 0; i < n_plot; ++i) {
      DiagGaussian q = frozen.encode(ctx.train_ds.image(i));
      ScatterPoint p{q.mean().at(0), q.mean().at(1),
                     ctx.train_ds.labels[static_cast<std::size_t>(i)], 'd'};
      points.push_back(p);
      points_csv += "d," + std::to_string(p.cls) + "," + fmt_double(p.x) + "," +
                    fmt_double(p.y) + "\n";
    }

    int successes = 0, evaluated = 0;
    int pair_index = 0;
    for (const AttackResult& r : ctx.results) {
      if (!r.ok()) continue;
      DiagGaussian q_ref = frozen.encode(r.x_ref);
      DiagGaussian q_adv = frozen.encode(r.x_adv);
      DiagGaussian q_tgt = frozen.encode(r.x_target);
      auto dist2 = [](const DiagGaussian& a, const DiagGaussian& b) {
        double dx = a.mean().at(0) - b.mean().at(0);
        double dy = a.mean().at(1) - b.mean().at(1);
        return dx * dx + dy * dy;
      };
      ++evaluated;
      if (dist2(q_adv, q_tgt) < dist2(q_ref, q_tgt)) ++successes;
      for (auto [q, kind] : {std::pair<const DiagGaussian*, char>{&q_ref, 'r'},
                             {&q_tgt, 't'},
                             {&q_adv, 'a'}}) {
        ScatterPoint p{q->mean().at(0), q->mean().at(1), 0, kind};
        points.push_back(p);
        points_csv += std::string(1, kind) + ",-1," + fmt_double(p.x) + "," + fmt_double(p.y) +
                      "\n";
      }
      if (pair_index < 8) {
        std::vector<Tensor> cells = {r.x_target,
                                     r.x_adv,
                                     r.x_ref,
                                     frozen.reconstruct_mean(r.x_target),
                                     frozen.reconstruct_mean(r.x_adv),
                                     frozen.reconstruct_mean(r.x_ref)};
        emit_grid(cells, {2, 3},
                  ctx.dir + "/demo_pair_" + std::to_string(pair_index) + ".pgm");
      }
      ++pair_index;
    }
    write_scatter_ppm(points, ctx.dir + "/demo_scatter.ppm");
    write_text(ctx.dir + "/demo_points.csv", points_csv);

    json summary;
    summary["run_id"] = ctx.run_id;
    summary["pairs_evaluated"] = evaluated;
    summary["latent_target_proximity_rate"] =
        evaluated > 0 ? static_cast<double>(successes) / evaluated : 0.0;
    write_text(ctx.dir + "/demo_summary.json", summary.dump(2) + "\n");
    mark_stage(ctx, Stage::Report, "ok");
  } catch (const std::exception& e) {
    mark_stage(ctx, Stage::Report, "failed", e.what());
    outcome.ok = false;
    outcome.failed_stage = "demo2d";
    outcome.error = e.what();
  }
  return outcome;
}

std::vector<RunOutcome> sweep_betas(const ExperimentConfig& cfg,
                                    const std::vector<double>& betas) {
  if (betas.empty()) throw ValueError("sweep: need at least one beta");
  std::vector<RunOutcome> outcomes(betas.size());
  std::string base = cfg.out_dir;
  fs::create_directories(base);

  parallel_for(
      static_cast<std::int64_t>(betas.size()),
      [&](std::int64_t i) {
        ExperimentConfig sub = cfg;
        sub.beta = betas[static_cast<std::size_t>(i)];
        char tag[32];
        std::snprintf(tag, sizeof(tag), "beta_%g", sub.beta);
        sub.out_dir = base + "/" + tag;
        outcomes[static_cast<std::size_t>(i)] = run_experiment(sub);
      },
      cfg.workers);

  json rows = json::array();
  for (std::size_t i = 0; i < betas.size(); ++i) {
    json row;
    row["beta"] = betas[i];
    row["ok"] = outcomes[i].ok;
    if (outcomes[i].ok) {
      std::ifstream in(outcomes[i].run_dir + "/summary.json");
      if (in) {
        json s = json::parse(in);
        row["summary"] = s;
      }
    } else {
      row["error"] = outcomes[i].error;
    }
    rows.push_back(row);
  }
  write_text(base + "/sweep_summary.json", rows.dump(2) + "\n");
  return outcomes;
}

}  // namespace vaeatk

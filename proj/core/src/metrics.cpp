#include "vaeatk/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

namespace vaeatk {

namespace {

using nlohmann::json;

double latent_shift_plain(const Encoder& model, const AttackResult& r) {
  DiagGaussian q_adv = model.encode(r.x_adv);
  DiagGaussian q_ref = model.encode(r.x_ref);
  return skl(q_adv, q_ref).item();
}

double latent_shift_hier(const HierarchicalVae& model, const AttackResult& r) {
  int k = r.attacked_levels > 0 ? r.attacked_levels : model.levels();
  auto pairs = model.paired_posteriors(r.x_adv, r.x_ref, k, derive_seed(r.seed, "omega"));
  double acc = 0.0;
  for (const auto& [q_adv, q_ref] : pairs) acc += skl(q_adv, q_ref).item();
  return acc;
}

OmegaReport omega_impl(const std::vector<AttackResult>& results,
                       const std::function<double(const AttackResult&)>& shift) {
  OmegaReport rep;
  for (const AttackResult& r : results) {
    if (!r.ok()) continue;
    rep.per_pair.push_back(shift(r));
  }
  if (rep.per_pair.empty()) {
    throw ValueError("omega: no successful attacks to aggregate");
  }
  for (double v : rep.per_pair) rep.sum += v;
  rep.per_pair_mean = rep.sum / static_cast<double>(rep.per_pair.size());
  return rep;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

OmegaReport omega(const Encoder& model, const std::vector<AttackResult>& results) {
  return omega_impl(results, [&](const AttackResult& r) { return latent_shift_plain(model, r); });
}

OmegaReport omega(const HierarchicalVae& model, const std::vector<AttackResult>& results) {
  return omega_impl(results, [&](const AttackResult& r) { return latent_shift_hier(model, r); });
}

MsssimTriple msssim_triple(const Tensor& x_ref, const Tensor& x_adv,
                           const std::optional<Tensor>& x_tgt,
                           const std::function<Tensor(const Tensor&)>& recon,
                           const MsssimConfig& cfg) {
  MsssimTriple t;
  t.ref_adv = msssim(x_ref, x_adv, cfg);
  Tensor rec_ref = recon(x_ref);
  Tensor rec_adv = recon(x_adv);
  t.recref_recadv = msssim(rec_ref, rec_adv, cfg);
  if (x_tgt.has_value()) {
    t.rectgt_recadv = msssim(recon(*x_tgt), rec_adv, cfg);
  }
  return t;
}

AnomalyCurves elbo_above_k_curves(const HierarchicalVae& model,
                                  const std::vector<std::pair<std::string, Tensor>>& batches,
                                  int num_seeds, std::uint64_t seed) {
  if (num_seeds < 1) throw ValueError("elbo_above_k_curves: need at least one seed");
  AnomalyCurves out;
  int levels = model.levels();
  for (const auto& [label, images] : batches) {
    std::vector<double> curve(static_cast<std::size_t>(levels) + 1, 0.0);
    for (int k = 0; k <= levels; ++k) {
      double acc = 0.0;
      for (int s = 0; s < num_seeds; ++s) {
        std::uint64_t eval_seed = derive_seed(seed, "curve-" + label,
                                              static_cast<std::uint64_t>(k * num_seeds + s));
        acc += -model.elbo_above_k(images, k, eval_seed).total.item();
      }
      curve[static_cast<std::size_t>(k)] = acc / num_seeds;
    }
    out.labels.push_back(label);
    out.curves.push_back(std::move(curve));
  }
  return out;
}

MetricsReport build_report(const std::vector<AttackResult>& results,
                           const std::function<double(const AttackResult&)>& latent_shift,
                           const std::function<Tensor(const Tensor&)>& recon,
                           const MsssimConfig& msssim_cfg, const ReportMeta& meta) {
  MetricsReport rep;
  rep.run_id = meta.run_id;
  rep.mode = meta.mode;
  rep.beta = meta.beta;
  rep.k_a = meta.k_a;

  double acc_ra = 0.0, acc_rr = 0.0, acc_tr = 0.0;
  std::int64_t n_ok = 0, n_tgt = 0;
  for (const AttackResult& r : results) {
    MetricRow row;
    row.run_id = meta.run_id;
    row.mode = meta.mode;
    row.beta = meta.beta;
    row.k_a = meta.k_a;
    row.ref_id = r.ref_id;
    row.target_id = r.target_id;
    row.init_id = r.init_index;
    row.steps = meta.steps;
    row.seed = r.seed;
    if (!r.ok()) {
      row.status = "error";
      row.error = r.error;
      rep.rows.push_back(std::move(row));
      continue;
    }
    MsssimConfig cfg = msssim_cfg.adapted_for(r.x_ref.shape()[r.x_ref.shape().size() - 2],
                                              r.x_ref.shape().back());
    row.epsilon_norm =
        meta.norm == NormKind::L2 ? l2_norm(r.epsilon.data()) : max_abs(r.epsilon.data());
    row.skl_latent_shift = latent_shift(r);
    std::optional<Tensor> x_tgt;
    if (r.x_target.defined()) x_tgt = r.x_target;
    MsssimTriple t = msssim_triple(r.x_ref, r.x_adv, x_tgt, recon, cfg);
    row.msssim_ref_adv = t.ref_adv;
    row.msssim_recref_recadv = t.recref_recadv;
    row.msssim_rectgt_recadv = t.rectgt_recadv;
    row.final_objective = r.final_objective;

    acc_ra += t.ref_adv;
    acc_rr += t.recref_recadv;
    ++n_ok;
    if (t.rectgt_recadv.has_value()) {
      acc_tr += *t.rectgt_recadv;
      ++n_tgt;
    }
    rep.omega.per_pair.push_back(row.skl_latent_shift);
    rep.rows.push_back(std::move(row));
  }
  if (rep.omega.per_pair.empty()) {
    throw ValueError("build_report: no successful attacks to aggregate");
  }
  for (double v : rep.omega.per_pair) rep.omega.sum += v;
  rep.omega.per_pair_mean = rep.omega.sum / static_cast<double>(rep.omega.per_pair.size());
  rep.mean_msssim_ref_adv = acc_ra / static_cast<double>(n_ok);
  rep.mean_msssim_recref_recadv = acc_rr / static_cast<double>(n_ok);
  if (n_tgt > 0) rep.mean_msssim_rectgt_recadv = acc_tr / static_cast<double>(n_tgt);
  return rep;
}

MetricsReport build_report(const Encoder& model, const std::vector<AttackResult>& results,
                           const std::function<Tensor(const Tensor&)>& recon,
                           const MsssimConfig& msssim_cfg, const ReportMeta& meta) {
  return build_report(
      results, [&](const AttackResult& r) { return latent_shift_plain(model, r); }, recon,
      msssim_cfg, meta);
}

MetricsReport build_report(const HierarchicalVae& model,
                           const std::vector<AttackResult>& results,
                           const MsssimConfig& msssim_cfg, const ReportMeta& meta) {
  return build_report(
      results, [&](const AttackResult& r) { return latent_shift_hier(model, r); },
      [&](const Tensor& x) { return model.reconstruct_mean(x); }, msssim_cfg, meta);
}

void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write metrics csv: " + path);
  out << "run_id,mode,beta,k_A,ref_id,target_id,init_id,epsilon_norm,skl,"
         "msssim_ref_adv,msssim_recref_recadv,msssim_rectgt_recadv,"
         "final_objective,steps,seed,status,error\n";
  auto opt = [](const std::optional<double>& v) { return v ? fmt_double(*v) : std::string(); };
  for (const MetricRow& r : rows) {
    out << r.run_id << ',' << r.mode << ',' << fmt_double(r.beta) << ',' << r.k_a << ','
        << r.ref_id << ',' << r.target_id << ',' << r.init_id << ',';
    if (r.status == "ok") {
      out << fmt_double(r.epsilon_norm) << ',' << fmt_double(r.skl_latent_shift) << ','
          << opt(r.msssim_ref_adv) << ',' << opt(r.msssim_recref_recadv) << ','
          << opt(r.msssim_rectgt_recadv) << ',' << fmt_double(r.final_objective) << ',';
    } else {
      out << ",,,,,,";
    }
    out << r.steps << ',' << r.seed << ',' << r.status << ',';
    // commas in error text would break the row
    std::string err = r.error;
    for (char& c : err) {
      if (c == ',' || c == '\n') c = ';';
    }
    out << err << '\n';
  }
  if (!out) throw IoError("short write on metrics csv: " + path);
}

std::string summary_json(const MetricsReport& report) {
  json j;
  j["run_id"] = report.run_id;
  json row;
  row["mode"] = report.mode;
  row["beta"] = report.beta;
  row["k_A"] = report.k_a;
  row["msssim_ref_adv"] = report.mean_msssim_ref_adv;
  row["msssim_recref_recadv"] = report.mean_msssim_recref_recadv;
  if (report.mean_msssim_rectgt_recadv) {
    row["msssim_rectgt_recadv"] = *report.mean_msssim_rectgt_recadv;
  }
  row["omega_sum"] = report.omega.sum;
  row["omega_per_pair_mean"] = report.omega.per_pair_mean;
  row["n_pairs"] = report.omega.per_pair.size();
  j["rows"] = json::array({row});
  return j.dump(2);
}

}  // namespace vaeatk

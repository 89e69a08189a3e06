#pragma once

// Training, evaluation, reconstruction and the ablation harness.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "fsmnet/kspace.hpp"
#include "fsmnet/losses.hpp"
#include "fsmnet/metrics.hpp"
#include "fsmnet/optim.hpp"
#include "fsmnet/phantom.hpp"

namespace fsmnet {

namespace fs = std::filesystem;

struct TrainConfig {
  long long iterations = 300;
  int batch_size = 4;
  double lr = 2e-3;
  double lr_decay_factor = 0.1;
  long long lr_decay_every = 250;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.01;
  double af = 4.0;
  std::uint64_t seed = 0;
  bool paper_preset = false;
  long long checkpoint_every = 0;  ///< 0: only the initial and final checkpoints

  /// Optimizer and schedule of the original full-scale training run.
  void apply_paper_preset() {
    paper_preset = true;
    iterations = 100000;
    batch_size = 4;
    lr = 1e-4;
    lr_decay_factor = 0.1;
    lr_decay_every = 20000;
    beta1 = 0.9;
    beta2 = 0.999;
  }

  void validate() const {
    if (iterations < 0) throw ConfigError("iterations must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (!(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0)) throw ConfigError("lr_decay_factor must be in (0, 1]");
    if (lr_decay_every < 1) throw ConfigError("lr_decay_every must be >= 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must be in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
    if (!(af >= 1.0)) throw ConfigError("af must be >= 1");
    if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
  }

  [[nodiscard]] StepSchedule schedule() const {
    return {lr, lr_decay_factor, static_cast<int>(lr_decay_every)};
  }
};

inline io::json to_json(const TrainConfig& c) {
  return {{"iterations", c.iterations},   {"batch_size", c.batch_size},
          {"lr", c.lr},                   {"lr_decay_factor", c.lr_decay_factor},
          {"lr_decay_every", c.lr_decay_every}, {"beta1", c.beta1},
          {"beta2", c.beta2},             {"weight_decay", c.weight_decay},
          {"af", c.af},                   {"seed", c.seed},
          {"paper_preset", c.paper_preset}, {"checkpoint_every", c.checkpoint_every}};
}

/// Missing keys keep their defaults. `paper_preset: true` pins the preset
/// values and rejects contradicting overrides.
inline TrainConfig train_config_from_json(const io::json& j) {
  TrainConfig c;
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  try {
    if (j.value("paper_preset", false)) c.apply_paper_preset();
    const TrainConfig pinned = c;
    for (const auto& [key, value] : j.items()) {
      if (key == "iterations") c.iterations = value.get<long long>();
      else if (key == "batch_size") c.batch_size = value.get<int>();
      else if (key == "lr") c.lr = value.get<double>();
      else if (key == "lr_decay_factor") c.lr_decay_factor = value.get<double>();
      else if (key == "lr_decay_every") c.lr_decay_every = value.get<long long>();
      else if (key == "beta1") c.beta1 = value.get<double>();
      else if (key == "beta2") c.beta2 = value.get<double>();
      else if (key == "weight_decay") c.weight_decay = value.get<double>();
      else if (key == "af") c.af = value.get<double>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "paper_preset") continue;
      else if (key == "checkpoint_every") c.checkpoint_every = value.get<long long>();
      else throw ConfigError("unknown train config key '" + key + "'");
    }
    if (c.paper_preset &&
        (c.iterations != pinned.iterations || c.batch_size != pinned.batch_size || c.lr != pinned.lr ||
         c.lr_decay_factor != pinned.lr_decay_factor || c.lr_decay_every != pinned.lr_decay_every ||
         c.beta1 != pinned.beta1 || c.beta2 != pinned.beta2)) {
      throw ConfigError("paper_preset pins iterations, batch_size, lr, decay and betas");
    }
  } catch (const io::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

/// Dry-run description of the optimizer and every learning-rate step.
inline io::json schedule_dump(const TrainConfig& c) {
  c.validate();
  const StepSchedule s = c.schedule();
  io::json steps = io::json::array();
  for (long long it = 0; it < c.iterations; it += c.lr_decay_every) {
    steps.push_back({{"iter", it}, {"lr", s.at(it)}});
  }
  return {{"optimizer", "adamw"},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"weight_decay", c.weight_decay},
          {"batch_size", c.batch_size},
          {"iterations", c.iterations},
          {"lr_decay_factor", c.lr_decay_factor},
          {"lr_decay_every", c.lr_decay_every},
          {"paper_preset", c.paper_preset},
          {"lr_schedule", steps}};
}

// --- data ---------------------------------------------------------------------------

/// Min-max normalizes both contrasts of a pair to [0, 1].
inline ContrastPair normalized(ContrastPair p) {
  for (Tensor<float>* t : {&p.aux, &p.tar}) {
    const auto [lo, hi] = std::minmax_element(t->data().begin(), t->data().end());
    const float a = *lo;
    const float span = *hi - *lo;
    for (float& v : t->data()) v = span > 0.0f ? (v - a) / span : 0.0f;
  }
  return p;
}

template <typename T>
struct Batch {
  Tensor<T> zero_filled;
  Tensor<T> aux;
  Tensor<T> target;
};

/// Stacks pairs into (N, 1, H, W) tensors, undersampling each target with its own mask.
template <typename T>
Batch<T> make_batch(const std::vector<const ContrastPair*>& pairs, const std::vector<SamplingMask>& masks) {
  const Shape one = pairs.front()->tar.shape();
  const Shape s{static_cast<int>(pairs.size()), 1, one.h, one.w};
  Batch<T> b{Tensor<T>(s), Tensor<T>(s), Tensor<T>(s)};
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    require_same_shape(pairs[i]->tar.shape(), one, "make_batch");
    const Tensor<T> tar = pairs[i]->tar.template cast<T>();
    const Tensor<T> zf = zero_fill(undersample(tar, masks[i]));
    std::copy_n(zf.data().data(), one.plane(), b.zero_filled.plane(static_cast<int>(i), 0));
    std::copy_n(tar.data().data(), one.plane(), b.target.plane(static_cast<int>(i), 0));
    const Tensor<T> aux = pairs[i]->aux.template cast<T>();
    std::copy_n(aux.data().data(), one.plane(), b.aux.plane(static_cast<int>(i), 0));
  }
  return b;
}

// --- training -------------------------------------------------------------------------

struct LogRow {
  long long iter = 0;
  double lr = 0.0;
  double pixel = 0.0;
  double freq = 0.0;
  double total = 0.0;
};

struct TrainResult {
  fs::path checkpoint;
  fs::path log;
  std::vector<LogRow> rows;
};

inline std::string format_log_row(const LogRow& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%lld,%.9g,%.9g,%.9g,%.9g", r.iter, r.lr, r.pixel, r.freq, r.total);
  return buf;
}

/// Trains `net` in place. Writes `train_log.csv`, `checkpoint_init.ckpt`,
/// optional periodic `checkpoint_<iter>.ckpt`, and `model.ckpt` into `out_dir`.
/// Each sample gets a fresh random mask drawn from the seeded stream.
template <typename T>
TrainResult train(FsmNet<T>& net, const TrainConfig& cfg, const std::vector<ContrastPair>& corpus,
                  const fs::path& out_dir, const std::function<void(const LogRow&)>& on_row = {}) {
  cfg.validate();
  if (corpus.empty()) throw ConfigError("train: corpus is empty");
  std::vector<ContrastPair> pairs;
  pairs.reserve(corpus.size());
  for (const auto& p : corpus) pairs.push_back(normalized(p));
  const int h = pairs.front().tar.shape().h;
  const int w = pairs.front().tar.shape().w;

  fs::create_directories(out_dir);
  TrainResult result;
  result.log = out_dir / "train_log.csv";
  std::ofstream log(result.log, std::ios::trunc);
  if (!log) throw Error("cannot write " + result.log.string());
  log << "iter,lr,pixel,freq,total\n";

  fs::path last_good = out_dir / "checkpoint_init.ckpt";
  save(net, last_good);

  std::mt19937_64 rng(cfg.seed ^ 0xA5A5A5A5DEADBEEFULL);
  std::uniform_int_distribution<std::size_t> pick(0, pairs.size() - 1);
  AdamW<T> opt({cfg.beta1, cfg.beta2, 1e-8, cfg.weight_decay});
  const StepSchedule schedule = cfg.schedule();
  const double cf = default_center_fraction(cfg.af);

  for (long long it = 0; it < cfg.iterations; ++it) {
    std::vector<const ContrastPair*> chosen;
    std::vector<SamplingMask> masks;
    for (int b = 0; b < cfg.batch_size; ++b) {
      chosen.push_back(&pairs[pick(rng)]);
      masks.push_back(make_mask(h, w, cfg.af, cf, rng()));
    }
    const Batch<T> batch = make_batch<T>(chosen, masks);
    LogRow row;
    row.iter = it;
    row.lr = schedule.at(it);
    try {
      net.parameters().zero_grad();
      const ReconOutput<T> out = net.forward(batch.zero_filled, batch.aux);
      const LossBreakdown<T> loss = total_loss(out, ag::constant(batch.target));
      row.pixel = loss.pixel.item();
      row.freq = loss.frequency.item();
      row.total = loss.total.item();
      if (!std::isfinite(row.total)) throw NumericError("non-finite loss");
      ag::backward(loss.total);
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " at iteration " + std::to_string(it) +
                         "; last good checkpoint: " + last_good.string());
    }
    opt.step(net.parameters(), row.lr);
    log << format_log_row(row) << '\n';
    result.rows.push_back(row);
    if (on_row) on_row(row);
    if (cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0) {
      last_good = out_dir / ("checkpoint_" + std::to_string(it + 1) + ".ckpt");
      save(net, last_good);
    }
  }
  result.checkpoint = out_dir / "model.ckpt";
  save(net, result.checkpoint);
  return result;
}

// --- evaluation -----------------------------------------------------------------------

struct SliceMetrics {
  std::string id;
  double psnr = 0.0;
  double ssim = 0.0;
  double zf_psnr = 0.0;
  double zf_ssim = 0.0;
};

struct EvalReport {
  double af = 4.0;
  std::vector<SliceMetrics> slices;
  MetricSummary psnr, ssim, zf_psnr, zf_ssim;

  [[nodiscard]] io::json to_json() const {
    io::json rows = io::json::array();
    for (const auto& s : slices) {
      rows.push_back({{"id", s.id}, {"psnr", s.psnr}, {"ssim", s.ssim}, {"zf_psnr", s.zf_psnr}, {"zf_ssim", s.zf_ssim}});
    }
    // JSON has no infinity; an identical-image PSNR is written as null.
    return {{"af", af},
            {"center_fraction", default_center_fraction(af)},
            {"count", slices.size()},
            {"model", {{"psnr_mean", psnr.mean}, {"psnr_std", psnr.std}, {"ssim_mean", ssim.mean}, {"ssim_std", ssim.std}}},
            {"zero_filling", {{"psnr_mean", zf_psnr.mean}, {"psnr_std", zf_psnr.std}, {"ssim_mean", zf_ssim.mean}, {"ssim_std", zf_ssim.std}}},
            {"slices", rows}};
  }
};

/// Mask for evaluation slice `index`: seed = index.
inline SamplingMask eval_mask(int h, int w, double af, std::size_t index) {
  return make_mask(h, w, af, default_center_fraction(af), index);
}

/// Scores i_spa and the zero-filled input against the target on fixed
/// per-slice masks. With `ground_truth_as_prediction` the target itself is
/// scored (a harness self-check).
template <typename T>
EvalReport evaluate(const FsmNet<T>& net, const std::vector<ContrastPair>& corpus, double af,
                    bool ground_truth_as_prediction = false, int chunk = 16) {
  EvalReport report;
  report.af = af;
  ag::NoGradGuard no_grad;
  std::vector<ContrastPair> pairs;
  for (const auto& p : corpus) pairs.push_back(normalized(p));
  for (std::size_t start = 0; start < pairs.size(); start += static_cast<std::size_t>(chunk)) {
    const std::size_t end = std::min(pairs.size(), start + static_cast<std::size_t>(chunk));
    std::vector<const ContrastPair*> chosen;
    std::vector<SamplingMask> masks;
    for (std::size_t i = start; i < end; ++i) {
      chosen.push_back(&pairs[i]);
      masks.push_back(eval_mask(pairs[i].tar.shape().h, pairs[i].tar.shape().w, af, i));
    }
    const Batch<T> batch = make_batch<T>(chosen, masks);
    Tensor<T> pred = batch.target;
    if (!ground_truth_as_prediction) pred = net.forward(batch.zero_filled, batch.aux).i_spa.value();
    const Shape one{1, 1, batch.target.shape().h, batch.target.shape().w};
    for (std::size_t i = start; i < end; ++i) {
      const int b = static_cast<int>(i - start);
      auto slice = [&](const Tensor<T>& t) {
        return Tensor<T>(one, std::vector<T>(t.plane(b, 0), t.plane(b, 0) + one.plane()));
      };
      const Tensor<T> ref = slice(batch.target);
      const auto [xn, rn] = normalize_for_eval(slice(pred), ref);
      const auto [zn, rn2] = normalize_for_eval(slice(batch.zero_filled), ref);
      report.slices.push_back({pairs[i].id, psnr(xn, rn), ssim(xn, rn), psnr(zn, rn2), ssim(zn, rn2)});
    }
  }
  std::vector<double> p, s, zp, zs;
  for (const auto& m : report.slices) {
    p.push_back(m.psnr);
    s.push_back(m.ssim);
    zp.push_back(m.zf_psnr);
    zs.push_back(m.zf_ssim);
  }
  report.psnr = summarize(p);
  report.ssim = summarize(s);
  report.zf_psnr = summarize(zp);
  report.zf_ssim = summarize(zs);
  return report;
}

// --- reconstruction -------------------------------------------------------------------

struct ReconSummary {
  double psnr = 0.0;
  double ssim = 0.0;
  double zf_psnr = 0.0;
  double zf_ssim = 0.0;
  double error_mean = 0.0;
  double zf_error_max = 0.0;
};

/// Writes recon / zero_filled / target / error / error_zf as raw f32 plus
/// 8-bit PGM previews, and recon.json. All images are in evaluation
/// normalization (target min-max, predictions clipped to [0, 1]).
template <typename T>
ReconSummary reconstruct(const FsmNet<T>& net, const ContrastPair& raw_pair, double af,
                         std::uint64_t mask_seed, const fs::path& out_dir, bool dump_internals) {
  const ContrastPair pair = normalized(raw_pair);
  const int h = pair.tar.shape().h;
  const int w = pair.tar.shape().w;
  const SamplingMask mask = make_mask(h, w, af, default_center_fraction(af), mask_seed);
  const Batch<T> batch = make_batch<T>({&pair}, {mask});

  ag::NoGradGuard no_grad;
  Recorder<T> recorder;
  const ReconOutput<T> out = net.forward(batch.zero_filled, batch.aux, dump_internals ? &recorder : nullptr);
  const auto [recon, ref] = normalize_for_eval(out.i_spa.value(), batch.target);
  const auto [zf, ref2] = normalize_for_eval(batch.zero_filled, batch.target);

  Tensor<T> err(ref.shape());
  Tensor<T> err_zf(ref.shape());
  ReconSummary summary;
  for (std::size_t i = 0; i < err.size(); ++i) {
    err[i] = std::abs(recon[i] - ref[i]);
    err_zf[i] = std::abs(zf[i] - ref[i]);
    summary.error_mean += static_cast<double>(err[i]);
    summary.zf_error_max = std::max(summary.zf_error_max, static_cast<double>(err_zf[i]));
  }
  summary.error_mean /= static_cast<double>(err.size());
  summary.psnr = psnr(recon, ref);
  summary.ssim = ssim(recon, ref);
  summary.zf_psnr = psnr(zf, ref);
  summary.zf_ssim = ssim(zf, ref);

  fs::create_directories(out_dir);
  const std::vector<std::pair<std::string, const Tensor<T>*>> images = {
      {"recon", &recon}, {"zero_filled", &zf}, {"target", &ref}, {"error", &err}, {"error_zf", &err_zf}};
  for (const auto& [name, t] : images) {
    io::write_f32(out_dir / (name + ".f32"), t->data());
    io::write_pgm(out_dir / (name + ".pgm"), t->data(), h, w, 0.0, name.starts_with("error") ? 0.25 : 1.0);
  }
  io::json info = {{"id", pair.id},
                   {"h", h},
                   {"w", w},
                   {"af", af},
                   {"mask_seed", mask_seed},
                   {"psnr", summary.psnr},
                   {"ssim", summary.ssim},
                   {"zf_psnr", summary.zf_psnr},
                   {"zf_ssim", summary.zf_ssim},
                   {"error_mean", summary.error_mean}};
  if (dump_internals) {
    const fs::path dir = out_dir / "internals";
    fs::create_directories(dir);
    io::json index = io::json::array();
    for (const auto& [name, t] : recorder.entries) {
      io::write_f32(dir / (name + ".f32"), t.data());
      const Shape& s = t.shape();
      index.push_back({{"name", name}, {"file", name + ".f32"}, {"shape", {s.n, s.c, s.h, s.w}}});
    }
    io::write_json(dir / "index.json", index);
    info["internals"] = "internals/index.json";
  }
  io::write_json(out_dir / "recon.json", info);
  return summary;
}

// --- ablation -------------------------------------------------------------------------

struct AblationVariant {
  std::string name;
  ModelConfig config;
};

/// The four rows: concat baseline, +Fourier branch, +selective cross-modal
/// fusion, +frequency-spatial fusion (full model).
inline std::vector<AblationVariant> ablation_variants(const ModelConfig& base) {
  ModelConfig fsfe = base;
  fsfe.use_fsfe_frequency = true;
  fsfe.cms_mode = CmsMode::sum;
  fsfe.fs_mode = FsMode::sum;
  ModelConfig cms = fsfe;
  cms.cms_mode = CmsMode::selective;
  ModelConfig full = cms;
  full.fs_mode = FsMode::selective;
  return {{"baseline_concat", concat_baseline(base)}, {"fsfe", fsfe}, {"fsfe_cms", cms}, {"full", full}};
}

struct AblationRun {
  std::string variant;
  std::uint64_t seed = 0;
  EvalReport report;
  double loss_first = 0.0;  ///< median total loss, first 10 iterations
  double loss_last = 0.0;   ///< median total loss, last 10 iterations
};

inline std::pair<double, double> loss_trend(const std::vector<LogRow>& rows, std::size_t window = 10) {
  std::vector<double> first, last;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (i < window) first.push_back(rows[i].total);
    if (i + window >= rows.size()) last.push_back(rows[i].total);
  }
  return {median(first), median(last)};
}

/// Trains and evaluates each variant for each seed; writes ablation.json and
/// ablation.md into `out_dir`.
inline std::vector<AblationRun> ablate(const std::vector<AblationVariant>& variants, TrainConfig cfg,
                                       const std::vector<ContrastPair>& train_pairs,
                                       const std::vector<ContrastPair>& eval_pairs,
                                       const std::vector<std::uint64_t>& seeds, const fs::path& out_dir,
                                       const std::function<void(const AblationRun&)>& on_run = {}) {
  std::vector<AblationRun> runs;
  for (const auto& v : variants) {
    for (std::uint64_t seed : seeds) {
      cfg.seed = seed;
      FsmNet<float> net = FsmNet<float>::build(v.config, seed);
      const TrainResult tr = train(net, cfg, train_pairs, out_dir / v.name / ("seed_" + std::to_string(seed)));
      AblationRun run{v.name, seed, evaluate(net, eval_pairs, cfg.af), 0.0, 0.0};
      std::tie(run.loss_first, run.loss_last) = loss_trend(tr.rows);
      if (on_run) on_run(run);
      runs.push_back(std::move(run));
    }
  }

  io::json doc = {{"af", cfg.af}, {"train", to_json(cfg)}, {"variants", io::json::array()}};
  std::string md = "| variant | psnr median | ssim median | zero-filling psnr |\n|---|---|---|---|\n";
  for (const auto& v : variants) {
    std::vector<double> ps, ss;
    io::json per_seed = io::json::array();
    double zf = 0.0;
    for (const auto& r : runs) {
      if (r.variant != v.name) continue;
      ps.push_back(r.report.psnr.mean);
      ss.push_back(r.report.ssim.mean);
      zf = r.report.zf_psnr.mean;
      per_seed.push_back({{"seed", r.seed}, {"psnr_mean", r.report.psnr.mean}, {"ssim_mean", r.report.ssim.mean},
                          {"loss_first", r.loss_first}, {"loss_last", r.loss_last}});
    }
    doc["variants"].push_back({{"name", v.name}, {"config", to_json(v.config)}, {"psnr_median", median(ps)},
                               {"ssim_median", median(ss)}, {"zero_filling_psnr", zf}, {"runs", per_seed}});
    char line[256];
    std::snprintf(line, sizeof line, "| %s | %.3f | %.4f | %.3f |\n", v.name.c_str(), median(ps), median(ss), zf);
    md += line;
  }
  fs::create_directories(out_dir);
  io::write_json(out_dir / "ablation.json", doc);
  std::ofstream(out_dir / "ablation.md", std::ios::trunc) << md;
  return runs;
}

}  // namespace fsmnet

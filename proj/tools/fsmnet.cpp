// fsmnet command-line tool.
//
// exit codes: 0 ok, 1 other failure, 2 configuration error, 3 numeric failure

#include <cstdlib>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "fsmnet/fsmnet.hpp"

using namespace fsmnet;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string config_path;
};

struct LoadedConfig {
  ModelConfig model;
  TrainConfig train;
};

LoadedConfig load_config(const Globals& g) {
  LoadedConfig c;
  if (!g.config_path.empty()) {
    io::json doc;
    try {
      doc = io::read_json(g.config_path);
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
    if (!doc.is_object()) throw ConfigError(g.config_path + ": expected a JSON object");
    for (const auto& [key, value] : doc.items()) {
      if (key != "model" && key != "train") throw ConfigError(g.config_path + ": unknown section '" + key + "'");
    }
    if (doc.contains("model")) c.model = model_config_from_json(doc["model"]);
    if (doc.contains("train")) c.train = train_config_from_json(doc["train"]);
  }
  if (g.seed) c.train.seed = *g.seed;
  return c;
}

std::string data_dir_default() {
  const char* env = std::getenv("FSMNET_DATA_DIR");
  return env ? env : "";
}

void require_dir(const std::string& dir, const char* flag) {
  if (dir.empty()) throw ConfigError(std::string(flag) + " is required (or set FSMNET_DATA_DIR)");
}

void print_run(const AblationRun& r) {
  std::cout << r.variant << " seed " << r.seed << ": psnr " << r.report.psnr.mean << " ssim " << r.report.ssim.mean
            << " (zero-filling " << r.report.zf_psnr.mean << ")\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FSMNet multi-contrast MRI reconstruction"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "master seed");
  app.add_option("--config", g.config_path, "JSON config with optional 'model' and 'train' sections");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic contrast-pair corpus");
  std::string gen_out;
  std::size_t gen_count = 200;
  int gen_size = 32;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--count", gen_count, "number of pairs");
  gen->add_option("--size", gen_size, "image side length (even, >= 16)");

  // mask
  auto* mask = app.add_subcommand("mask", "write a Cartesian undersampling mask");
  int mask_h = 32, mask_w = 32;
  double mask_af = 4.0;
  std::optional<double> mask_cf;
  std::string mask_out;
  mask->set_help_flag("--help", "Print this help message and exit");
  mask->add_option("--h", mask_h)->required();
  mask->add_option("--w", mask_w)->required();
  mask->add_option("--af", mask_af)->required();
  mask->add_option("--center-frac", mask_cf, "default 0.32 / af");
  mask->add_option("--out", mask_out)->required();

  // train
  auto* tr = app.add_subcommand("train", "train a model on a corpus");
  std::string tr_data = data_dir_default(), tr_out;
  std::optional<long long> tr_iters;
  std::optional<double> tr_lr;
  bool tr_paper = false, tr_dry = false;
  tr->add_option("--data", tr_data, "corpus directory (default $FSMNET_DATA_DIR)");
  tr->add_option("--out", tr_out, "output directory");
  tr->add_option("--iterations", tr_iters);
  tr->add_option("--lr", tr_lr);
  tr->add_flag("--paper-preset", tr_paper, "full-scale optimizer settings");
  tr->add_flag("--dry-run", tr_dry, "print the optimizer schedule and exit");

  // eval
  auto* ev = app.add_subcommand("eval", "score a checkpoint against zero-filling");
  std::string ev_ckpt, ev_data = data_dir_default(), ev_report;
  double ev_af = 4.0;
  bool ev_gt = false;
  ev->add_option("--checkpoint", ev_ckpt)->required();
  ev->add_option("--data", ev_data, "corpus directory (default $FSMNET_DATA_DIR)");
  ev->add_option("--af", ev_af);
  ev->add_option("--report", ev_report, "report JSON path")->required();
  ev->add_flag("--ground-truth", ev_gt, "score the ground truth as the prediction");

  // recon
  auto* rc = app.add_subcommand("recon", "reconstruct one pair and write images");
  std::string rc_ckpt, rc_pair, rc_out;
  double rc_af = 4.0;
  std::uint64_t rc_mask_seed = 0;
  bool rc_dump = false;
  rc->add_option("--checkpoint", rc_ckpt)->required();
  rc->add_option("--pair", rc_pair, "pair directory")->required();
  rc->add_option("--af", rc_af);
  rc->add_option("--mask-seed", rc_mask_seed);
  rc->add_option("--out", rc_out)->required();
  rc->add_flag("--dump-internals", rc_dump, "write gate and attention maps");

  // ablate
  auto* ab = app.add_subcommand("ablate", "train and compare the four ablation variants");
  std::string ab_data = data_dir_default(), ab_eval, ab_out;
  std::vector<std::uint64_t> ab_seeds = {0, 1, 2};
  std::optional<long long> ab_iters;
  ab->add_option("--data", ab_data, "training corpus (default $FSMNET_DATA_DIR)");
  ab->add_option("--eval-data", ab_eval, "held-out evaluation corpus")->required();
  ab->add_option("--out", ab_out)->required();
  ab->add_option("--seeds", ab_seeds)->delimiter(',');
  ab->add_option("--iterations", ab_iters);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const LoadedConfig cfg = load_config(g);
    const std::uint64_t seed = g.seed.value_or(0);

    if (*gen) {
      const auto pairs = generate_corpus(gen_count, gen_size, seed);
      const io::json manifest = write_corpus(pairs, gen_out);
      std::cout << "wrote " << pairs.size() << " pairs to " << gen_out << " (gradient correlation median "
                << manifest["gradient_correlation_median"].get<double>() << ")\n";
    } else if (*mask) {
      const SamplingMask m = make_mask(mask_h, mask_w, mask_af, mask_cf.value_or(default_center_fraction(mask_af)), seed);
      write_mask(m, mask_out);
      std::cout << "wrote mask with " << m.sampled_columns() << "/" << mask_w << " columns to " << mask_out << "\n";
    } else if (*tr) {
      TrainConfig tc = cfg.train;
      if (tr_paper) tc.apply_paper_preset();
      if (tr_iters) tc.iterations = *tr_iters;
      if (tr_lr) tc.lr = *tr_lr;
      if (tc.paper_preset && (tr_iters || tr_lr)) throw ConfigError("--paper-preset pins iterations and lr");
      tc.validate();
      if (tr_dry) {
        std::cout << schedule_dump(tc).dump(2) << "\n";
        return 0;
      }
      require_dir(tr_data, "--data");
      if (tr_out.empty()) throw ConfigError("--out is required");
      FsmNet<float> net = FsmNet<float>::build(cfg.model, tc.seed);
      fs::create_directories(tr_out);
      io::write_json(fs::path(tr_out) / "config.json", {{"model", to_json(cfg.model)}, {"train", to_json(tc)}});
      const auto pairs = read_corpus(tr_data);
      const TrainResult r = train(net, tc, pairs, tr_out, [&](const LogRow& row) {
        if (row.iter % 50 == 0 || row.iter + 1 == tc.iterations) std::cout << format_log_row(row) << "\n";
      });
      std::cout << "checkpoint " << r.checkpoint.string() << "\nlog " << r.log.string() << "\n";
    } else if (*ev) {
      require_dir(ev_data, "--data");
      const FsmNet<float> net = load<float>(ev_ckpt);
      const EvalReport report = evaluate(net, read_corpus(ev_data), ev_af, ev_gt);
      io::write_json(ev_report, report.to_json());
      std::cout << "psnr " << report.psnr.mean << " +- " << report.psnr.std << ", ssim " << report.ssim.mean
                << " +- " << report.ssim.std << "; zero-filling psnr " << report.zf_psnr.mean << ", ssim "
                << report.zf_ssim.mean << "\n";
    } else if (*rc) {
      const FsmNet<float> net = load<float>(rc_ckpt);
      const ReconSummary s = reconstruct(net, read_pair(rc_pair), rc_af, rc_mask_seed, rc_out, rc_dump);
      std::cout << "psnr " << s.psnr << " ssim " << s.ssim << "; zero-filling psnr " << s.zf_psnr << " ssim "
                << s.zf_ssim << "\n";
    } else if (*ab) {
      require_dir(ab_data, "--data");
      TrainConfig tc = cfg.train;
      if (ab_iters) tc.iterations = *ab_iters;
      tc.validate();
      const auto runs = ablate(ablation_variants(cfg.model), tc, read_corpus(ab_data), read_corpus(ab_eval), ab_seeds,
                               ab_out, print_run);
      std::ifstream table(fs::path(ab_out) / "ablation.md");
      std::cout << table.rdbuf();
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

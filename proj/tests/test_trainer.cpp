#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "support.hpp"

using namespace fsmnet;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("fsmnet_trainer_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

ModelConfig tiny() {
  ModelConfig c;
  c.base_channels = 2;
  c.stages = 1;
  c.residual_blocks = 1;
  return c;
}

TrainConfig quick(long long iterations) {
  TrainConfig t;
  t.iterations = iterations;
  t.batch_size = 2;
  t.seed = 3;
  return t;
}

std::vector<float> values(const FsmNet<float>& net) {
  std::vector<float> out;
  for (const auto& [name, v] : net.parameters().entries()) out.insert(out.end(), v.value().data().begin(), v.value().data().end());
  return out;
}

}  // namespace

TEST(Train, ZeroIterationsSavesInitialization) {
  const fs::path dir = scratch("zero");
  auto net = FsmNet<float>::build(tiny(), 1);
  const auto init = values(net);
  const auto res = train(net, quick(0), generate_corpus(4, 16, 1), dir);
  EXPECT_TRUE(res.rows.empty());
  EXPECT_EQ(values(load<float>(res.checkpoint)), init);
  EXPECT_EQ(slurp(res.checkpoint), slurp(dir / "checkpoint_init.ckpt"));
  EXPECT_EQ(slurp(res.log), "iter,lr,pixel,freq,total\n");
  fs::remove_all(dir);
}

TEST(Train, LogFollowsScheduleClosedForm) {
  const fs::path dir = scratch("schedule");
  auto net = FsmNet<float>::build(tiny(), 2);
  TrainConfig cfg = quick(12);
  cfg.lr = 3e-3;
  cfg.lr_decay_every = 5;
  cfg.checkpoint_every = 4;
  const auto res = train(net, cfg, generate_corpus(6, 16, 2), dir);
  ASSERT_EQ(res.rows.size(), 12u);
  std::istringstream csv(slurp(res.log));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "iter,lr,pixel,freq,total");
  for (std::size_t i = 0; i < res.rows.size(); ++i) {
    const auto& r = res.rows[i];
    EXPECT_EQ(r.iter, static_cast<long long>(i));
    EXPECT_DOUBLE_EQ(r.lr, 3e-3 * std::pow(0.1, static_cast<double>(i / 5)));
    EXPECT_NEAR(r.total, r.pixel + 0.01 * r.freq, 1e-6 * r.total);
    ASSERT_TRUE(std::getline(csv, line));
    EXPECT_EQ(line, format_log_row(r));
  }
  for (int it : {4, 8, 12}) EXPECT_TRUE(fs::exists(dir / ("checkpoint_" + std::to_string(it) + ".ckpt"))) << it;
  fs::remove_all(dir);
}

TEST(Train, DeterministicForFixedSeed) {
  const auto corpus = generate_corpus(6, 16, 4);
  std::string logs[2];
  std::vector<float> params[2];
  for (int k = 0; k < 2; ++k) {
    const fs::path dir = scratch("det" + std::string(k == 0 ? "" : "_with_a_longer_name"));
    auto net = FsmNet<float>::build(tiny(), 5);
    const auto res = train(net, quick(6), corpus, dir);
    logs[k] = slurp(res.log);
    params[k] = values(net);
    fs::remove_all(dir);
  }
  EXPECT_EQ(logs[0], logs[1]);
  EXPECT_EQ(params[0], params[1]);
}

TEST(Train, NonFiniteLossReportsLastGoodCheckpoint) {
  const fs::path dir = scratch("nan");
  auto corpus = generate_corpus(2, 16, 6);
  for (auto& p : corpus) p.aux[7] = std::numeric_limits<float>::quiet_NaN();
  auto net = FsmNet<float>::build(tiny(), 7);
  try {
    train(net, quick(3), corpus, dir);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("iteration 0"), std::string::npos) << msg;
    EXPECT_NE(msg.find("last good checkpoint"), std::string::npos) << msg;
    EXPECT_NE(msg.find("checkpoint_init.ckpt"), std::string::npos) << msg;
  }
  EXPECT_TRUE(fs::exists(dir / "checkpoint_init.ckpt"));
  fs::remove_all(dir);
}

TEST(AdamW, SingleStepMatchesHandComputation) {
  ParameterStore<double> ps;
  ag::Var<double> p = ps.add("p", Shape{1, 1, 1, 1});
  p.mutable_value()[0] = 0.5;
  const double lr = 0.1, wd = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  AdamW<double> opt({b1, b2, eps, wd});

  // loss = 0.2 p  ->  g = 0.2
  ps.zero_grad();
  ag::backward(ag::scale(p, 0.2));
  opt.step(ps, lr);
  double x = 0.5 * (1.0 - lr * wd);
  double m = (1.0 - b1) * 0.2;
  double v = (1.0 - b2) * 0.04;
  x -= lr * (m / (1.0 - b1)) / (std::sqrt(v / (1.0 - b2)) + eps);
  EXPECT_NEAR(p.value()[0], x, 1e-15);
  EXPECT_NEAR(p.value()[0], 0.5 * 0.999 - 0.1 * 0.2 / (0.2 + 1e-8), 1e-15);

  // Second step with g = -0.3.
  ps.zero_grad();
  ag::backward(ag::scale(p, -0.3));
  opt.step(ps, lr);
  x *= 1.0 - lr * wd;
  m = b1 * m + (1.0 - b1) * -0.3;
  v = b2 * v + (1.0 - b2) * 0.09;
  x -= lr * (m / (1.0 - b1 * b1)) / (std::sqrt(v / (1.0 - b2 * b2)) + eps);
  EXPECT_NEAR(p.value()[0], x, 1e-15);
  EXPECT_EQ(opt.steps(), 2);
}

TEST(TrainConfigJson, PresetAndErrors) {
  const auto c = train_config_from_json({{"paper_preset", true}, {"seed", 9}});
  EXPECT_EQ(c.iterations, 100000);
  EXPECT_EQ(c.batch_size, 4);
  EXPECT_EQ(c.lr, 1e-4);
  EXPECT_EQ(c.lr_decay_every, 20000);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_THROW(train_config_from_json({{"paper_preset", true}, {"lr", 1e-3}}), ConfigError);
  EXPECT_THROW(train_config_from_json({{"momentum", 0.9}}), ConfigError);
  EXPECT_THROW(train_config_from_json({{"batch_size", 0}}), ConfigError);
  EXPECT_THROW(train_config_from_json({{"lr", "fast"}}), ConfigError);
  TrainConfig d;
  d.lr = 5e-4;
  d.af = 8.0;
  const auto back = train_config_from_json(to_json(d));
  EXPECT_EQ(back.lr, d.lr);
  EXPECT_EQ(back.af, d.af);
}

TEST(ScheduleDump, PaperPresetClosedForm) {
  TrainConfig c;
  c.apply_paper_preset();
  const auto d = schedule_dump(c);
  EXPECT_EQ(d.at("optimizer"), "adamw");
  EXPECT_EQ(d.at("beta1").get<double>(), 0.9);
  EXPECT_EQ(d.at("beta2").get<double>(), 0.999);
  EXPECT_EQ(d.at("batch_size").get<int>(), 4);
  EXPECT_EQ(d.at("iterations").get<long long>(), 100000);
  const auto& steps = d.at("lr_schedule");
  ASSERT_EQ(steps.size(), 5u);
  for (std::size_t k = 0; k < steps.size(); ++k) {
    EXPECT_EQ(steps[k].at("iter").get<long long>(), static_cast<long long>(20000 * k));
    const double expect = 1e-4 * std::pow(0.1, static_cast<double>(k));
    EXPECT_NEAR(steps[k].at("lr").get<double>(), expect, 1e-12 * expect);
  }
  EXPECT_EQ(c.schedule().at(19999), 1e-4);
  EXPECT_NEAR(c.schedule().at(20000), 1e-5, 1e-17);
  EXPECT_NEAR(c.schedule().at(40000), 1e-6, 1e-18);
}

TEST(Evaluate, GroundTruthAndDeterminism) {
  const fs::path dir = scratch("eval");
  const auto corpus = generate_corpus(5, 16, 8);
  const auto net = FsmNet<float>::build(tiny(), 9);
  const auto gt = evaluate(net, corpus, 4.0, true);
  EXPECT_EQ(gt.ssim.mean, 1.0);
  EXPECT_TRUE(std::isinf(gt.psnr.mean));
  EXPECT_TRUE(io::json::parse(gt.to_json().dump()).at("model").at("psnr_mean").is_null());
  EXPECT_EQ(gt.slices.size(), 5u);

  io::write_json(dir / "a.json", evaluate(net, corpus, 4.0).to_json());
  io::write_json(dir / "b.json", evaluate(net, corpus, 4.0, false, 2).to_json());
  EXPECT_EQ(slurp(dir / "a.json"), slurp(dir / "b.json"));

  // Zero-filling baseline uses the per-slice mask with seed = slice index.
  const auto rep = evaluate(net, corpus, 4.0);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto p = normalized(corpus[i]);
    const auto zf = zero_fill(undersample(p.tar, eval_mask(16, 16, 4.0, i)));
    const auto [zn, rn] = normalize_for_eval(zf, p.tar);
    EXPECT_EQ(rep.slices[i].zf_psnr, psnr(zn, rn));
  }
  fs::remove_all(dir);
}

TEST(Reconstruct, FilesAndErrorMaps) {
  const fs::path dir = scratch("recon");
  const auto pair = generate_corpus(1, 16, 10).front();
  const auto net = FsmNet<float>::build(tiny(), 11);

  const auto full = reconstruct(net, pair, 1.0, 0, dir / "full", false);
  EXPECT_LT(full.zf_error_max, 1e-4);

  const auto s = reconstruct(net, pair, 4.0, 3, dir / "af4", true);
  const std::size_t n = 16 * 16;
  for (const char* name : {"recon", "zero_filled", "target", "error", "error_zf"}) {
    EXPECT_EQ(fs::file_size(dir / "af4" / (std::string(name) + ".f32")), n * sizeof(float)) << name;
    EXPECT_TRUE(fs::exists(dir / "af4" / (std::string(name) + ".pgm"))) << name;
  }
  const auto recon = io::read_f32(dir / "af4" / "recon.f32", n);
  const auto target = io::read_f32(dir / "af4" / "target.f32", n);
  double l1 = 0.0;
  for (std::size_t i = 0; i < n; ++i) l1 += std::abs(static_cast<double>(recon[i]) - target[i]);
  EXPECT_NEAR(s.error_mean, l1 / static_cast<double>(n), 1e-6);
  const auto info = io::read_json(dir / "af4" / "recon.json");
  EXPECT_NEAR(info.at("error_mean").get<double>(), s.error_mean, 1e-12);

  const auto index = io::read_json(dir / "af4" / "internals" / "index.json");
  EXPECT_FALSE(index.empty());
  for (const auto& e : index) {
    const auto& sh = e.at("shape");
    const std::size_t count = sh[0].get<std::size_t>() * sh[1].get<std::size_t>() * sh[2].get<std::size_t>() * sh[3].get<std::size_t>();
    EXPECT_EQ(fs::file_size(dir / "af4" / "internals" / e.at("file").get<std::string>()), count * sizeof(float));
  }
  fs::remove_all(dir);
}

TEST(Ablation, VariantsAndTrend) {
  const auto v = ablation_variants(tiny());
  ASSERT_EQ(v.size(), 4u);
  EXPECT_EQ(v[0].config.cms_mode, CmsMode::concat);
  EXPECT_FALSE(v[0].config.use_fsfe_frequency);
  EXPECT_EQ(v[0].config.fs_mode, FsMode::sum);
  EXPECT_EQ(v[3].config.cms_mode, CmsMode::selective);
  EXPECT_EQ(v[3].config.fs_mode, FsMode::selective);
  EXPECT_TRUE(v[3].config.use_fsfe_frequency);

  std::vector<LogRow> rows;
  for (int i = 0; i < 25; ++i) rows.push_back({i, 0.0, 0.0, 0.0, 25.0 - i});
  const auto [first, last] = loss_trend(rows);
  EXPECT_EQ(first, 20.5);
  EXPECT_EQ(last, 5.5);
}

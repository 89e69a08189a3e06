#pragma once

// The full reconstruction network.
//
//   stems        1 -> C per modality; both branches start from the stem output
//   encoder i    FSFE (target, aux) -> CMS per branch -> FS (target)
//                -> stride-2 conv, channels x2, on all four streams
//   neck         one more encoder stage without resampling
//   decoder i    nearest x2 + 3x3 conv (channels /2) per target branch,
//                + encoder skip, FSFE, FS
//   heads        3x3 conv C -> 1 per branch, added to the zero-filled input
//
// Only the target modality is decoded.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "fsmnet/fusion.hpp"
#include "fsmnet/raw_io.hpp"

namespace fsmnet {

struct ModelConfig {
  int base_channels = 8;
  int stages = 3;
  int residual_blocks = 2;
  int heads = 1;
  bool use_fsfe_frequency = true;
  CmsMode cms_mode = CmsMode::selective;
  FsMode fs_mode = FsMode::selective;

  void validate() const {
    if (stages < 1) throw ConfigError("stages must be >= 1");
    if (base_channels < 2) throw ConfigError("base_channels must be >= 2");
    if (residual_blocks < 1) throw ConfigError("residual_blocks must be >= 1");
    if (heads < 1 || base_channels % heads != 0) {
      throw ConfigError("heads must be >= 1 and divide base_channels");
    }
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Ablation baseline: concat fusion, no Fourier branch, summed branches.
inline ModelConfig concat_baseline(ModelConfig c = ModelConfig()) {
  c.use_fsfe_frequency = false;
  c.cms_mode = CmsMode::concat;
  c.fs_mode = FsMode::sum;
  return c;
}

inline io::json to_json(const ModelConfig& c) {
  return {{"base_channels", c.base_channels},
          {"stages", c.stages},
          {"residual_blocks", c.residual_blocks},
          {"heads", c.heads},
          {"use_fsfe_frequency", c.use_fsfe_frequency},
          {"cms_mode", std::string(to_string(c.cms_mode))},
          {"fs_mode", std::string(to_string(c.fs_mode))}};
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline ModelConfig model_config_from_json(const io::json& j) {
  ModelConfig c;
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "base_channels") c.base_channels = value.get<int>();
      else if (key == "stages") c.stages = value.get<int>();
      else if (key == "residual_blocks") c.residual_blocks = value.get<int>();
      else if (key == "heads") c.heads = value.get<int>();
      else if (key == "use_fsfe_frequency") c.use_fsfe_frequency = value.get<bool>();
      else if (key == "cms_mode") c.cms_mode = parse_cms_mode(value.get<std::string>());
      else if (key == "fs_mode") c.fs_mode = parse_fs_mode(value.get<std::string>());
      else throw ConfigError("unknown model config key '" + key + "'");
    }
  } catch (const io::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

template <typename T>
struct ReconOutput {
  ag::Var<T> i_spa;  ///< spatial-branch reconstruction, the deliverable image
  ag::Var<T> i_fre;  ///< frequency-branch reconstruction
};

/// Named intermediate tensors captured during a forward pass (gates, attention).
template <typename T>
struct Recorder {
  std::vector<std::pair<std::string, Tensor<T>>> entries;

  void record_gates(const std::string& name, const GateScores<T>& g) {
    entries.emplace_back(name + ".s_primary", g.s_primary);
    entries.emplace_back(name + ".s_secondary", g.s_secondary);
  }
  void record_fs(const std::string& name, const FsFusionInternals<T>& fs) {
    entries.emplace_back(name + ".attn_spatial_query", fs.spatial_query.weights);
    entries.emplace_back(name + ".attn_frequency_query", fs.frequency_query.weights);
    record_gates(name + ".select", fs.selection);
  }
};

template <typename T>
class FsmNet {
 public:
  /// Registers every parameter for `config` and initializes them from `seed`.
  static FsmNet build(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    FsmNet net;
    net.config_ = config;
    net.create();
    initialize(net.params_, seed);
    return net;
  }

  [[nodiscard]] const ModelConfig& config() const { return config_; }
  [[nodiscard]] ParameterStore<T>& parameters() { return params_; }
  [[nodiscard]] const ParameterStore<T>& parameters() const { return params_; }

  /// Inputs are (N, 1, H, W); H and W must stay even down to the neck.
  ReconOutput<T> forward(const Tensor<T>& x_tar_zf, const Tensor<T>& x_aux,
                         Recorder<T>* recorder = nullptr) const {
    check_inputs(x_tar_zf.shape(), x_aux.shape());
    const ag::Var<T> zf = ag::constant(x_tar_zf);
    const ag::Var<T> aux_in = ag::constant(x_aux);

    const ag::Var<T> t0 = stem_tar_(zf);
    const ag::Var<T> a0 = stem_aux_(aux_in);
    BranchPair<T> tar{t0, t0};
    BranchPair<T> aux{a0, a0};

    std::vector<BranchPair<T>> skips;
    for (std::size_t i = 0; i < encoder_.size(); ++i) {
      const Stage& st = encoder_[i];
      run_stage(st, tar, aux, "enc" + std::to_string(i + 1), recorder);
      skips.push_back(tar);
      tar = {st.down_tar_spa(tar.spatial), st.down_tar_freq(tar.frequency)};
      aux = {st.down_aux_spa(aux.spatial), st.down_aux_freq(aux.frequency)};
    }
    run_stage(neck_, tar, aux, "neck", recorder);

    for (std::size_t j = 0; j < decoder_.size(); ++j) {
      const Decoder& d = decoder_[j];
      const BranchPair<T>& skip = skips[skips.size() - 1 - j];
      const BranchPair<T> up{ag::add(d.up_spa(ag::upsample_nearest2(tar.spatial)), skip.spatial),
                             ag::add(d.up_freq(ag::upsample_nearest2(tar.frequency)), skip.frequency)};
      const BranchPair<T> feat = fsfe_forward(up, d.fsfe);
      FsFusionInternals<T> fs_rec;
      tar = fs_fusion(feat.spatial, feat.frequency, d.fs,
                      recorder && d.fs.mode == FsMode::selective ? &fs_rec : nullptr);
      if (recorder && d.fs.mode == FsMode::selective) {
        recorder->record_fs("dec" + std::to_string(encoder_.size() - j) + ".fs", fs_rec);
      }
    }
    return {ag::add(zf, head_spa_(tar.spatial)), ag::add(zf, head_fre_(tar.frequency))};
  }

  /// Smallest spatial size accepted: H and W must be multiples of 2^(stages + 1).
  [[nodiscard]] int size_multiple() const { return 1 << (config_.stages + 1); }

 private:
  struct Stage {
    FsfeParams<T> fsfe_tar, fsfe_aux;
    CmsParams<T> cms_freq, cms_spa;
    FsParams<T> fs;
    Conv2d<T> down_tar_spa, down_tar_freq, down_aux_spa, down_aux_freq;
  };
  struct Decoder {
    Conv2d<T> up_spa, up_freq;
    FsfeParams<T> fsfe;
    FsParams<T> fs;
  };

  FsmNet() = default;

  Stage make_stage(const std::string& name, int c, bool downsample) {
    const ModelConfig& cf = config_;
    Stage s;
    s.fsfe_tar = FsfeParams<T>::create(params_, name + ".fsfe.tar", c, cf.residual_blocks, cf.use_fsfe_frequency);
    s.fsfe_aux = FsfeParams<T>::create(params_, name + ".fsfe.aux", c, cf.residual_blocks, cf.use_fsfe_frequency);
    s.cms_freq = CmsParams<T>::create(params_, name + ".cms.freq", c, cf.cms_mode);
    s.cms_spa = CmsParams<T>::create(params_, name + ".cms.spa", c, cf.cms_mode);
    s.fs = FsParams<T>::create(params_, name + ".fs", c, cf.heads, cf.fs_mode);
    if (downsample) {
      s.down_tar_spa = make_conv(params_, name + ".down.tar_spa", c, 2 * c, 3, 2);
      s.down_tar_freq = make_conv(params_, name + ".down.tar_freq", c, 2 * c, 3, 2);
      s.down_aux_spa = make_conv(params_, name + ".down.aux_spa", c, 2 * c, 3, 2);
      s.down_aux_freq = make_conv(params_, name + ".down.aux_freq", c, 2 * c, 3, 2);
    }
    return s;
  }

  void create() {
    const int c0 = config_.base_channels;
    stem_tar_ = make_conv(params_, "stem.tar", 1, c0, 3);
    stem_aux_ = make_conv(params_, "stem.aux", 1, c0, 3);
    for (int i = 0; i < config_.stages; ++i) {
      encoder_.push_back(make_stage("enc" + std::to_string(i + 1), c0 << i, true));
    }
    neck_ = make_stage("neck", c0 << config_.stages, false);
    for (int i = config_.stages - 1; i >= 0; --i) {
      const int c = c0 << i;
      const std::string name = "dec" + std::to_string(i + 1);
      Decoder d;
      d.up_spa = make_conv(params_, name + ".up.spa", 2 * c, c, 3);
      d.up_freq = make_conv(params_, name + ".up.freq", 2 * c, c, 3);
      d.fsfe = FsfeParams<T>::create(params_, name + ".fsfe.tar", c, config_.residual_blocks,
                                     config_.use_fsfe_frequency);
      d.fs = FsParams<T>::create(params_, name + ".fs", c, config_.heads, config_.fs_mode);
      decoder_.push_back(std::move(d));
    }
    head_spa_ = make_conv(params_, "head.spa", c0, 1, 3);
    head_fre_ = make_conv(params_, "head.fre", c0, 1, 3);
  }

  void check_inputs(const Shape& zf, const Shape& aux) const {
    require_same_shape(zf, aux, "forward(x_tar_zf, x_aux)");
    if (zf.c != 1) throw ShapeMismatch("forward: inputs must be single-channel, got " + zf.str());
    const int m = size_multiple();
    if (zf.h % m != 0 || zf.w % m != 0) {
      throw UnsupportedShape("forward: " + std::to_string(zf.h) + "x" + std::to_string(zf.w) +
                             " gives an odd intermediate resolution with " +
                             std::to_string(config_.stages) + " stages (need multiples of " +
                             std::to_string(m) + ")");
    }
  }

  static void run_stage(const Stage& st, BranchPair<T>& tar, BranchPair<T>& aux,
                        const std::string& name, Recorder<T>* recorder) {
    const BranchPair<T> t = fsfe_forward(tar, st.fsfe_tar);
    const BranchPair<T> a = fsfe_forward(aux, st.fsfe_aux);
    const bool record_cms = recorder && st.cms_freq.mode == CmsMode::selective;
    GateScores<T> g_freq, g_spa;
    const ag::Var<T> hat_f = cms_fusion(t.frequency, a.frequency, st.cms_freq, record_cms ? &g_freq : nullptr);
    const ag::Var<T> hat_s = cms_fusion(t.spatial, a.spatial, st.cms_spa, record_cms ? &g_spa : nullptr);
    const bool record_fs = recorder && st.fs.mode == FsMode::selective;
    FsFusionInternals<T> fs_rec;
    tar = fs_fusion(hat_s, hat_f, st.fs, record_fs ? &fs_rec : nullptr);
    aux = a;
    if (record_cms) {
      recorder->record_gates(name + ".cms.freq", g_freq);
      recorder->record_gates(name + ".cms.spa", g_spa);
    }
    if (record_fs) recorder->record_fs(name + ".fs", fs_rec);
  }

  ModelConfig config_;
  ParameterStore<T> params_;
  Conv2d<T> stem_tar_, stem_aux_;
  std::vector<Stage> encoder_;
  Stage neck_;
  std::vector<Decoder> decoder_;
  Conv2d<T> head_spa_, head_fre_;
};

/// Names of parameters whose gradient is identically zero after one backward
/// pass of `loss` (a diagnostic for disconnected subgraphs).
template <typename T>
std::vector<std::string> zero_gradient_parameters(const ParameterStore<T>& ps) {
  std::vector<std::string> dead;
  for (const auto& [name, var] : ps.entries()) {
    const Tensor<T>& g = var.grad();
    bool any = false;
    for (T v : g.data()) any = any || v != T(0);
    if (!any) dead.push_back(name);
  }
  return dead;
}

// --- checkpoint archive ------------------------------------------------------------
//
//   bytes 0..7   "FSMNETCK"
//   u64          header length L (little-endian)
//   L bytes      JSON header {format, version, config, dtype: "f32", arrays: [{name, shape, offset, count}]}
//   payload      raw little-endian float32 arrays in header order; offsets count floats

inline constexpr char kCheckpointMagic[8] = {'F', 'S', 'M', 'N', 'E', 'T', 'C', 'K'};
inline constexpr int kCheckpointVersion = 1;

template <typename T>
void save(const FsmNet<T>& net, const std::filesystem::path& path) {
  io::json arrays = io::json::array();
  std::size_t offset = 0;
  for (const auto& [name, var] : net.parameters().entries()) {
    const Shape& s = var.shape();
    arrays.push_back({{"name", name}, {"shape", {s.n, s.c, s.h, s.w}}, {"offset", offset}, {"count", s.size()}});
    offset += s.size();
  }
  const io::json header = {{"format", "fsmnet-checkpoint"},
                           {"version", kCheckpointVersion},
                           {"config", to_json(net.config())},
                           {"dtype", "f32"},
                           {"arrays", arrays}};
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, var] : net.parameters().entries()) {
    std::vector<float> buf(var.value().data().begin(), var.value().data().end());
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!out) throw Error("write failed: " + path.string());
}

namespace detail {

struct CheckpointFile {
  io::json header;
  std::vector<float> payload;
};

inline CheckpointFile read_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw LoadError(path.string() + " is not a checkpoint archive");
  }
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw LoadError("truncated checkpoint header in " + path.string());
  CheckpointFile f;
  try {
    f.header = io::json::parse(text);
  } catch (const io::json::exception& e) {
    throw LoadError("malformed checkpoint header in " + path.string() + ": " + e.what());
  }
  const std::streampos start = in.tellg();
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(in.tellg() - start);
  in.seekg(start);
  if (bytes % sizeof(float) != 0) throw LoadError("truncated checkpoint payload in " + path.string());
  f.payload.resize(bytes / sizeof(float));
  in.read(reinterpret_cast<char*>(f.payload.data()), static_cast<std::streamsize>(bytes));
  return f;
}

}  // namespace detail

/// Copies archive arrays into `net`. Every name and shape must match the
/// parameters `net` enumerates; offenders are listed in the error, the first
/// mismatch first.
template <typename T>
void load_into(FsmNet<T>& net, const std::filesystem::path& path) {
  const detail::CheckpointFile f = detail::read_checkpoint_file(path);
  std::vector<std::string> offenders;
  std::vector<std::pair<ag::Var<T>, std::pair<std::size_t, std::size_t>>> copies;
  try {
    const auto& arrays = f.header.at("arrays");
    const auto& entries = net.parameters().entries();
    for (std::size_t i = 0; i < std::max(arrays.size(), entries.size()); ++i) {
      if (i >= arrays.size()) {
        offenders.push_back(entries[i].first + " (missing from archive)");
        continue;
      }
      const auto& a = arrays[i];
      const std::string name = a.at("name").get<std::string>();
      if (i >= entries.size()) {
        offenders.push_back(name + " (not a model parameter)");
        continue;
      }
      const auto sh = a.at("shape").get<std::vector<int>>();
      const Shape& expect = entries[i].second.shape();
      if (name != entries[i].first) {
        offenders.push_back(name + " (expected " + entries[i].first + ")");
      } else if (sh.size() != 4 || Shape{sh[0], sh[1], sh[2], sh[3]} != expect) {
        offenders.push_back(name + " (shape mismatch, model has " + expect.str() + ")");
      } else {
        const auto offset = a.at("offset").get<std::size_t>();
        const auto count = a.at("count").get<std::size_t>();
        if (count != expect.size() || offset + count > f.payload.size()) {
          throw LoadError("checkpoint " + path.string() + ": array " + name + " lies outside the payload");
        }
        copies.push_back({entries[i].second, {offset, count}});
      }
    }
  } catch (const io::json::exception& e) {
    throw LoadError("checkpoint " + path.string() + ": " + e.what());
  }
  if (!offenders.empty()) {
    std::string msg = "checkpoint " + path.string() + " is incompatible:";
    for (const auto& o : offenders) msg += "\n  " + o;
    throw CheckpointIncompatible(msg);
  }
  for (auto& [var, range] : copies) {
    ag::Var<T> v = var;
    auto dst = v.mutable_value().data();
    for (std::size_t k = 0; k < range.second; ++k) dst[k] = static_cast<T>(f.payload[range.first + k]);
  }
}

/// Rebuilds the network described by the archive and fills its parameters.
template <typename T>
FsmNet<T> load(const std::filesystem::path& path) {
  const detail::CheckpointFile f = detail::read_checkpoint_file(path);
  if (!f.header.contains("config")) throw LoadError("checkpoint " + path.string() + " has no config");
  FsmNet<T> net = FsmNet<T>::build(model_config_from_json(f.header["config"]), 0);
  load_into(net, path);
  return net;
}

}  // namespace fsmnet

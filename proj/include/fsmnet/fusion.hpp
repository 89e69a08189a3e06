#pragma once

// Cross-modal selective fusion and frequency-spatial fusion.

#include <string>
#include <string_view>

#include "fsmnet/fsfe.hpp"

namespace fsmnet {

enum class CmsMode { selective, sum, concat };
enum class FsMode { selective, sum };

inline std::string_view to_string(CmsMode m) {
  switch (m) {
    case CmsMode::selective: return "selective";
    case CmsMode::sum: return "sum";
    case CmsMode::concat: return "concat";
  }
  return "?";
}

inline std::string_view to_string(FsMode m) {
  return m == FsMode::selective ? "selective" : "sum";
}

inline CmsMode parse_cms_mode(std::string_view s) {
  if (s == "selective") return CmsMode::selective;
  if (s == "sum") return CmsMode::sum;
  if (s == "concat") return CmsMode::concat;
  throw ConfigError("cms_mode must be selective|sum|concat, got '" + std::string(s) + "'");
}

inline FsMode parse_fs_mode(std::string_view s) {
  if (s == "selective") return FsMode::selective;
  if (s == "sum") return FsMode::sum;
  throw ConfigError("fs_mode must be selective|sum, got '" + std::string(s) + "'");
}

/// Pixel-wise sigmoid scores, each in (0, 1) and shaped like the fused features.
template <typename T>
struct GateScores {
  Tensor<T> s_primary;
  Tensor<T> s_secondary;
};

/// Softmax weights, shape (batch, head, query channel, key channel).
template <typename T>
struct AttentionMap {
  Tensor<T> weights;
};

template <typename T>
struct FsFusionInternals {
  AttentionMap<T> spatial_query;    ///< queries from the spatial branch
  AttentionMap<T> frequency_query;  ///< queries from the frequency branch
  GateScores<T> selection;
};

template <typename T>
struct CmsParams {
  CmsMode mode = CmsMode::selective;
  int channels = 0;
  Conv2d<T> conv;  // gate: 2C -> 2C (selective); merge: 2C -> C (concat)

  static CmsParams create(ParameterStore<T>& ps, const std::string& prefix, int channels,
                          CmsMode mode) {
    CmsParams p;
    p.mode = mode;
    p.channels = channels;
    if (mode == CmsMode::selective) p.conv = make_conv(ps, prefix + ".gate", 2 * channels, 2 * channels, 3);
    if (mode == CmsMode::concat) p.conv = make_conv(ps, prefix + ".merge", 2 * channels, channels, 3);
    return p;
  }
};

/// s_t, s_a = split(sigmoid(conv([f_target, f_aux]))); out = s_t * f_target + s_a * f_aux.
/// The sum and concat modes are the ablation replacements.
template <typename T>
ag::Var<T> cms_fusion(const ag::Var<T>& f_target, const ag::Var<T>& f_aux, const CmsParams<T>& p,
                      GateScores<T>* gates = nullptr) {
  require_same_shape(f_target.shape(), f_aux.shape(), "cms_fusion");
  detail::check_channels(f_target, p.channels, "cms_fusion");
  switch (p.mode) {
    case CmsMode::sum:
      return ag::add(f_target, f_aux);
    case CmsMode::concat:
      return p.conv(ag::concat_channels(f_target, f_aux));
    case CmsMode::selective:
      break;
  }
  const int c = p.channels;
  const ag::Var<T> scores = ag::sigmoid(p.conv(ag::concat_channels(f_target, f_aux)));
  const ag::Var<T> s_t = ag::slice_channels(scores, 0, c);
  const ag::Var<T> s_a = ag::slice_channels(scores, c, c);
  if (gates) *gates = {s_t.value(), s_a.value()};
  return ag::add(ag::mul(s_t, f_target), ag::mul(s_a, f_aux));
}

template <typename T>
struct FsParams {
  FsMode mode = FsMode::selective;
  int channels = 0;
  int heads = 1;
  // spatial-enhancing path: queries from the spatial branch
  Conv2d<T> q_spa, k_freq, v_freq, proj_spa;
  // frequency-enhancing path: queries from the frequency branch
  Conv2d<T> q_freq, k_spa, v_spa, proj_freq;
  CmsParams<T> select;

  static FsParams create(ParameterStore<T>& ps, const std::string& prefix, int channels, int heads,
                         FsMode mode) {
    if (heads <= 0 || channels % heads != 0) {
      throw ConfigError(prefix + ": " + std::to_string(channels) + " channels not divisible by " +
                        std::to_string(heads) + " heads");
    }
    FsParams p;
    p.mode = mode;
    p.channels = channels;
    p.heads = heads;
    if (mode == FsMode::sum) return p;
    auto conv1 = [&](const std::string& n) { return make_conv(ps, prefix + "." + n, channels, channels, 1); };
    p.q_spa = conv1("spa.query");
    p.k_freq = conv1("spa.key");
    p.v_freq = conv1("spa.value");
    p.proj_spa = conv1("spa.proj");
    p.q_freq = conv1("freq.query");
    p.k_spa = conv1("freq.key");
    p.v_spa = conv1("freq.value");
    p.proj_freq = conv1("freq.proj");
    p.select = CmsParams<T>::create(ps, prefix + ".select", channels, CmsMode::selective);
    return p;
  }
};

/// Cross-branch attention over channel tokens (d = H*W):
///   bar_s = proj(softmax(Q_s K_f^T / sqrt(d)) V_f) + f_spa
///   bar_f = proj(softmax(Q_f K_s^T / sqrt(d)) V_s) + f_freq
/// The spatial output is the selective fusion of (bar_s, bar_f); the
/// frequency output is bar_f.
template <typename T>
BranchPair<T> fs_fusion(const ag::Var<T>& f_spa, const ag::Var<T>& f_freq, const FsParams<T>& p,
                        FsFusionInternals<T>* internals = nullptr) {
  require_same_shape(f_spa.shape(), f_freq.shape(), "fs_fusion");
  detail::check_channels(f_spa, p.channels, "fs_fusion");
  if (p.mode == FsMode::sum) return {ag::add(f_spa, f_freq), f_freq};

  Tensor<T>* attn_s = internals ? &internals->spatial_query.weights : nullptr;
  Tensor<T>* attn_f = internals ? &internals->frequency_query.weights : nullptr;
  const ag::Var<T> bar_s = ag::add(
      p.proj_spa(ag::channel_attention(p.q_spa(f_spa), p.k_freq(f_freq), p.v_freq(f_freq), p.heads, attn_s)),
      f_spa);
  const ag::Var<T> bar_f = ag::add(
      p.proj_freq(ag::channel_attention(p.q_freq(f_freq), p.k_spa(f_spa), p.v_spa(f_spa), p.heads, attn_f)),
      f_freq);
  const ag::Var<T> spatial =
      cms_fusion(bar_s, bar_f, p.select, internals ? &internals->selection : nullptr);
  return {spatial, bar_f};
}

}  // namespace fsmnet

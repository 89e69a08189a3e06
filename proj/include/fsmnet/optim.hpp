#pragma once

#include <cmath>
#include <vector>

#include "fsmnet/parameters.hpp"

namespace fsmnet {

/// lr(it) = base * factor^floor(it / every)
struct StepSchedule {
  double base = 1e-3;
  double factor = 0.1;
  int every = 1000;

  [[nodiscard]] double at(long long iteration) const {
    return base * std::pow(factor, static_cast<double>(iteration / every));
  }
};

/// Adam with decoupled weight decay:
///   p <- p - lr * wd * p
///   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
///   p <- p - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
template <typename T>
class AdamW {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
  };

  explicit AdamW(Options opt) : opt_(opt) {}

  void step(ParameterStore<T>& ps, double lr) {
    const auto& entries = ps.entries();
    if (m_.size() != entries.size()) {
      m_.clear();
      v_.clear();
      for (const auto& e : entries) {
        m_.emplace_back(e.second.value().size(), 0.0);
        v_.emplace_back(e.second.value().size(), 0.0);
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < entries.size(); ++k) {
      ag::Var<T> var = entries[k].second;
      auto p = var.mutable_value().data();
      const Tensor<T>& g = var.grad();
      const bool has_grad = g.size() == p.size();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = has_grad ? static_cast<double>(g[i]) : 0.0;
        double pi = static_cast<double>(p[i]);
        pi -= lr * opt_.weight_decay * pi;
        m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * gi;
        v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * gi * gi;
        pi -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + opt_.eps);
        p[i] = static_cast<T>(pi);
      }
    }
  }

  [[nodiscard]] long long steps() const { return t_; }
  [[nodiscard]] const Options& options() const { return opt_; }

 private:
  Options opt_;
  long long t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace fsmnet

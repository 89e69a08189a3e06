#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "fsmnet/autograd.hpp"

namespace fsmnet {

/// Named, ordered collection of trainable leaves. Enumeration order is the
/// insertion order, which is also the initialization and checkpoint order.
template <typename T>
class ParameterStore {
 public:
  using Entry = std::pair<std::string, ag::Var<T>>;

  ag::Var<T> add(std::string name, Shape shape) {
    for (const auto& e : entries_) {
      if (e.first == name) throw ConfigError("duplicate parameter name " + name);
    }
    ag::Var<T> v(Tensor<T>(shape), true);
    entries_.emplace_back(std::move(name), v);
    return v;
  }

  [[nodiscard]] const std::vector<Entry>& entries() const { return entries_; }
  [[nodiscard]] std::size_t size() const { return entries_.size(); }

  [[nodiscard]] ag::Var<T> at(const std::string& name) const {
    for (const auto& e : entries_) {
      if (e.first == name) return e.second;
    }
    throw ConfigError("unknown parameter " + name);
  }

  /// Total number of scalar parameters.
  [[nodiscard]] std::size_t count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.value().size();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.second.zero_grad();
  }

  void fill(T v) {
    for (auto& e : entries_) e.second.mutable_value().fill(v);
  }

 private:
  std::vector<Entry> entries_;
};

template <typename T>
struct Conv2d {
  ag::Var<T> weight;
  ag::Var<T> bias;
  int stride = 1;
  int pad = 0;

  ag::Var<T> operator()(const ag::Var<T>& x) const { return ag::conv2d(x, weight, bias, stride, pad); }
};

/// Registers `<name>.weight` (cout, cin, k, k) and `<name>.bias`; "same" padding.
template <typename T>
Conv2d<T> make_conv(ParameterStore<T>& ps, const std::string& name, int cin, int cout, int k,
                    int stride = 1) {
  Conv2d<T> c;
  c.weight = ps.add(name + ".weight", Shape{cout, cin, k, k});
  c.bias = ps.add(name + ".bias", Shape{cout, 1, 1, 1});
  c.stride = stride;
  c.pad = k / 2;
  return c;
}

/// Fan-in scaled uniform U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights, zero biases.
template <typename T>
void initialize(ParameterStore<T>& ps, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (const auto& [name, var] : ps.entries()) {
    ag::Var<T> v = var;
    Tensor<T>& t = v.mutable_value();
    if (name.ends_with(".bias")) {
      t.fill(T(0));
      continue;
    }
    const Shape& s = t.shape();
    const double bound = 1.0 / std::sqrt(static_cast<double>(s.c) * s.h * s.w);
    std::uniform_real_distribution<double> u(-bound, bound);
    for (auto& x : t.data()) x = static_cast<T>(u(rng));
  }
}

}  // namespace fsmnet

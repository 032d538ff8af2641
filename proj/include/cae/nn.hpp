#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "cae/ops.hpp"

namespace cae {

template <typename T>
struct NamedParameter {
  std::string name;
  Var<T> var;
};

// Ordered collection of trainable leaves. Order is stable and defines the
// layout of optimizer state and checkpoint blobs.
template <typename T>
class ParameterSet {
 public:
  ParameterSet() = default;

  void add(std::string name, Var<T> var) { items_.push_back({std::move(name), std::move(var)}); }
  void append(const ParameterSet& other) { items_.insert(items_.end(), other.items_.begin(), other.items_.end()); }

  std::size_t size() const { return items_.size(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }
  const NamedParameter<T>& operator[](std::size_t i) const { return items_[i]; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : items_) n += p.var.value().size();
    return n;
  }

  void set_requires_grad(bool flag) const {
    for (const auto& p : items_) {
      Var<T> v = p.var;
      v.set_requires_grad(flag);
    }
  }

  void zero_grad() const {
    for (const auto& p : items_) {
      Var<T> v = p.var;
      v.zero_grad();
    }
  }

  // Combined content hash; changes iff some parameter value changes (up to collisions).
  std::size_t hash() const {
    std::size_t h = 0xcbf29ce484222325ULL;
    for (const auto& p : items_) h = (h ^ content_hash(p.var.value())) * 0x100000001b3ULL;
    return h;
  }

 private:
  std::vector<NamedParameter<T>> items_;
};

// Named references to every tensor that makes up a module's persistent state
// (parameters and non-learned buffers such as batch-norm statistics).
template <typename T>
using StateRefs = std::vector<std::pair<std::string, Tensor<T>*>>;

// Weight-init standard deviation for every learned projection.
inline constexpr double kInitStd = 0.02;

template <typename T>
Var<T> normal_parameter(Shape shape, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return Var<T>(std::move(t), true);
}

template <typename T>
Var<T> constant_parameter(Shape shape, T value) {
  return Var<T>(Tensor<T>(std::move(shape), value), true);
}

struct AdamOptions {
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
class Adam {
 public:
  Adam(ParameterSet<T> params, AdamOptions opt) : params_(std::move(params)), opt_(opt) {
    for (const auto& p : params_) {
      m_.emplace_back(p.var.shape());
      v_.emplace_back(p.var.shape());
    }
  }

  // Applies one update from the currently accumulated gradients. Parameters
  // without a gradient (not reached by the last backward pass) are left alone.
  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(opt_.beta1), b2 = static_cast<T>(opt_.beta2);
    const T step_size = static_cast<T>(opt_.learning_rate / c1);
    const T corr2 = static_cast<T>(std::sqrt(c2));
    const T eps = static_cast<T>(opt_.eps);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Var<T> var = params_[i].var;
      if (!var.has_grad()) continue;
      const Tensor<T>& g = var.grad();
      Tensor<T>& w = var.mutable_value();
      for (std::size_t j = 0; j < w.size(); ++j) {
        m_[i][j] = b1 * m_[i][j] + (T{1} - b1) * g[j];
        v_[i][j] = b2 * v_[i][j] + (T{1} - b2) * g[j] * g[j];
        w[j] -= step_size * m_[i][j] / (std::sqrt(v_[i][j]) / corr2 + eps);
      }
    }
  }

  const ParameterSet<T>& parameters() const { return params_; }
  std::uint64_t steps() const { return t_; }

  StateRefs<T> state(const std::string& prefix) {
    StateRefs<T> refs;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      refs.emplace_back(prefix + ".m." + params_[i].name, &m_[i]);
      refs.emplace_back(prefix + ".v." + params_[i].name, &v_[i]);
    }
    return refs;
  }
  std::uint64_t& step_counter() { return t_; }

 private:
  ParameterSet<T> params_;
  AdamOptions opt_;
  std::vector<Tensor<T>> m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace cae

#pragma once

// Named parameter tensors with per-group freeze flags, and the RMSprop update
// (uncentered, no momentum): s <- a*s + (1-a)*g^2, p <- p - lr*g/(sqrt(s)+eps).
// Frozen groups are skipped entirely, so frozen tensors stay bitwise constant.

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "seqr/tensor.hpp"

namespace seqr {

enum class ParamGroup : int { Conv = 0, Fc = 1, Relation = 2 };
constexpr int kParamGroups = 3;

inline const char* param_group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::Conv: return "conv";
    case ParamGroup::Fc: return "fc";
    case ParamGroup::Relation: return "relation";
  }
  return "?";
}

template <class S = double>
struct ParamSet {
  struct Entry {
    std::string name;
    ParamGroup group;
    Tensor<S> value;
  };

  std::vector<Entry> entries;
  std::array<bool, kParamGroups> frozen{false, false, false};

  bool is_frozen(ParamGroup g) const { return frozen[static_cast<std::size_t>(g)]; }
  void set_frozen(ParamGroup g, bool f) { frozen[static_cast<std::size_t>(g)] = f; }

  Entry& add(std::string name, ParamGroup group, Tensor<S> value) {
    entries.push_back({std::move(name), group, std::move(value)});
    return entries.back();
  }

  const Entry* find(const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return &e;
    return nullptr;
  }
  Entry* find(const std::string& name) {
    for (auto& e : entries)
      if (e.name == name) return &e;
    return nullptr;
  }

  std::int64_t total_params() const {
    std::int64_t n = 0;
    for (const auto& e : entries) n += e.value.size();
    return n;
  }
};

template <class S = double>
struct OptState {
  double lr = 1e-5;
  double alpha = 0.99;
  double eps = 1e-8;
  std::vector<Tensor<S>> sqAvg;  // aligned with ParamSet entries

  template <class PS>
  static OptState init_like(const PS& params) {
    OptState st;
    st.sqAvg.reserve(params.entries.size());
    for (const auto& e : params.entries) st.sqAvg.push_back(Tensor<S>::zeros(e.value.shape()));
    return st;
  }

  void zero() {
    for (auto& t : sqAvg)
      for (std::int64_t i = 0; i < t.size(); ++i) t[i] = S(0);
  }
};

/// One RMSprop step. `grads[i]` pairs with `params.entries[i]`; entries with a
/// null gradient (frozen or unused in the graph) are left untouched.
template <class S>
inline void rmsprop_step(ParamSet<S>& params, const std::vector<const Tensor<S>*>& grads,
                         OptState<S>& state) {
  if (grads.size() != params.entries.size() || state.sqAvg.size() != params.entries.size())
    throw shape_error("rmsprop_step: gradient/state not aligned with parameters");
  const S lr = static_cast<S>(state.lr);
  const S alpha = static_cast<S>(state.alpha);
  const S eps = static_cast<S>(state.eps);
  for (std::size_t i = 0; i < params.entries.size(); ++i) {
    auto& e = params.entries[i];
    if (params.is_frozen(e.group)) continue;
    const Tensor<S>* g = grads[i];
    if (!g) continue;
    if (!g->same_shape(e.value)) throw shape_error("rmsprop_step: gradient shape mismatch");
    Tensor<S>& s = state.sqAvg[i];
    S* sp = s.data();
    S* pp = e.value.data();
    const S* gp = g->data();
    const std::int64_t n = e.value.size();
    for (std::int64_t j = 0; j < n; ++j) {
      sp[j] = alpha * sp[j] + (S(1) - alpha) * gp[j] * gp[j];
      pp[j] -= lr * gp[j] / (std::sqrt(sp[j]) + eps);
    }
  }
}

}  // namespace seqr

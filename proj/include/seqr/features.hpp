#pragma once

// Feature-space problem generation: samples the 5-image sequence and the
// 4-choice set for any test condition, entirely in feature space. Rendering
// to pixels lives in raster.hpp.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "seqr/rng.hpp"

namespace seqr {

struct domain_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Feature : int { Color = 0, Number = 1, Size = 2, Shape = 3, Arrangement = 4 };
enum class ShapeKind : int { Circle = 0, Triangle = 1, Square = 2, Star = 3, Hexagon = 4 };
enum class Role : int { Constant = 0, Distractor = 1 };
enum class RuleKind : int { Linear = 0, Exponential = 1, Sqrt = 2, Alternating = 3 };

constexpr int kGridValues = 6;   // shade and size grids
constexpr int kMaxCount = 9;     // objects per image
constexpr int kGridCells = 9;    // 3x3 arrangement grid
constexpr int kShapeKinds = 5;

inline const char* feature_name(Feature f) {
  switch (f) {
    case Feature::Color: return "color";
    case Feature::Number: return "number";
    case Feature::Size: return "size";
    case Feature::Shape: return "shape";
    case Feature::Arrangement: return "arrangement";
  }
  return "?";
}

inline Feature feature_from_name(const std::string& s) {
  for (int i = 0; i < 5; ++i)
    if (s == feature_name(static_cast<Feature>(i))) return static_cast<Feature>(i);
  throw domain_error("unknown feature name: " + s);
}

inline const char* shape_name(ShapeKind k) {
  switch (k) {
    case ShapeKind::Circle: return "circle";
    case ShapeKind::Triangle: return "triangle";
    case ShapeKind::Square: return "square";
    case ShapeKind::Star: return "star";
    case ShapeKind::Hexagon: return "hexagon";
  }
  return "?";
}

inline const char* rule_name(RuleKind k) {
  switch (k) {
    case RuleKind::Linear: return "linear";
    case RuleKind::Exponential: return "exp";
    case RuleKind::Sqrt: return "sqrt";
    case RuleKind::Alternating: return "alternating";
  }
  return "?";
}

inline RuleKind rule_from_name(const std::string& s) {
  for (int i = 0; i < 4; ++i)
    if (s == rule_name(static_cast<RuleKind>(i))) return static_cast<RuleKind>(i);
  throw domain_error("unknown rule name: " + s);
}

/// The five non-predictive-capable features sorted by name; the canonical
/// order used for condition bitmasks and deterministic iteration.
inline const std::array<Feature, 5>& alphabetical_features() {
  static const std::array<Feature, 5> order = {Feature::Arrangement, Feature::Color,
                                               Feature::Number, Feature::Shape, Feature::Size};
  return order;
}

// ---------------------------------------------------------------------------

struct FeatureVector {
  int count = 1;                // objects per image, 1..9
  int shadeIdx = 0;             // 0..5 into the grayscale grid
  ShapeKind shapeKind = ShapeKind::Circle;
  int sizeIdx = 0;              // 0..5 into the size grid
  std::vector<int> arrangement; // permutation of 0..8; first `count` cells used

  bool operator==(const FeatureVector& o) const = default;

  void validate() const {
    if (count < 1 || count > kMaxCount) throw domain_error("FeatureVector: count out of range");
    if (shadeIdx < 0 || shadeIdx >= kGridValues) throw domain_error("FeatureVector: shadeIdx out of range");
    if (sizeIdx < 0 || sizeIdx >= kGridValues) throw domain_error("FeatureVector: sizeIdx out of range");
    if (arrangement.size() != kGridCells) throw domain_error("FeatureVector: arrangement must list 9 cells");
    std::array<bool, kGridCells> seen{};
    for (int c : arrangement) {
      if (c < 0 || c >= kGridCells || seen[static_cast<std::size_t>(c)])
        throw domain_error("FeatureVector: arrangement is not a permutation of 0..8");
      seen[static_cast<std::size_t>(c)] = true;
    }
  }

  /// Value of one of the three rule-capable features.
  int value_of(Feature f) const {
    switch (f) {
      case Feature::Color: return shadeIdx;
      case Feature::Number: return count;
      case Feature::Size: return sizeIdx;
      default: throw domain_error("value_of: feature has no scalar value");
    }
  }
};

struct Rule {
  RuleKind kind = RuleKind::Linear;
  /// For Alternating: the two alternating value indices (a != b). When unset
  /// the pair is drawn per problem.
  std::optional<std::pair<int, int>> alternating;

  bool operator==(const Rule& o) const = default;
};

inline bool rule_valid_for(const Rule& rule, Feature predictive) {
  if (predictive != Feature::Color && predictive != Feature::Number && predictive != Feature::Size)
    return false;
  if ((rule.kind == RuleKind::Exponential || rule.kind == RuleKind::Sqrt) &&
      predictive == Feature::Number)
    return false;  // no geometric spacing on the 1..9 integer grid
  return true;
}

struct TestCondition {
  Feature predictive = Feature::Color;
  Rule rule;
  std::map<Feature, Role> roles;  // exactly the 4 non-predictive features

  TestCondition() = default;
  TestCondition(Feature pf, Rule r, std::map<Feature, Role> rs)
      : predictive(pf), rule(std::move(r)), roles(std::move(rs)) {
    validate();
  }

  void validate() const {
    if (predictive == Feature::Shape || predictive == Feature::Arrangement)
      throw domain_error("TestCondition: shape and arrangement are never predictive");
    if (!rule_valid_for(rule, predictive))
      throw domain_error("TestCondition: rule not supported for this predictive feature");
    if (rule.kind == RuleKind::Alternating && rule.alternating &&
        rule.alternating->first == rule.alternating->second)
      throw domain_error("TestCondition: alternating values must differ");
    if (roles.size() != 4) throw domain_error("TestCondition: need roles for the 4 non-predictive features");
    for (Feature f : alphabetical_features()) {
      if (f == predictive) {
        if (roles.count(f)) throw domain_error("TestCondition: predictive feature cannot have a role");
      } else if (!roles.count(f)) {
        throw domain_error(std::string("TestCondition: missing role for ") + feature_name(f));
      }
    }
  }

  int difficulty() const {
    int d = 0;
    for (const auto& [f, r] : roles)
      if (r == Role::Distractor) ++d;
    return d;
  }

  bool operator==(const TestCondition& o) const = default;
};

/// Bitmask over the non-predictive features in alphabetical order
/// (bit i set = i-th name is a distractor). Stable across runs; used in CSVs.
inline int condition_bitmask(const TestCondition& c) {
  int mask = 0, bit = 0;
  for (Feature f : alphabetical_features()) {
    if (f == c.predictive) continue;
    if (c.roles.at(f) == Role::Distractor) mask |= 1 << bit;
    ++bit;
  }
  return mask;
}

inline TestCondition make_condition(Feature predictive, Rule rule, int bitmask) {
  if (bitmask < 0 || bitmask > 15) throw domain_error("make_condition: bitmask out of range");
  std::map<Feature, Role> roles;
  int bit = 0;
  for (Feature f : alphabetical_features()) {
    if (f == predictive) continue;
    roles[f] = (bitmask >> bit & 1) ? Role::Distractor : Role::Constant;
    ++bit;
  }
  return TestCondition(predictive, std::move(rule), std::move(roles));
}

/// All 2^4 constant/distractor assignments, difficulty ascending and then
/// lexicographic by distractor feature names.
inline std::vector<TestCondition> enumerate_conditions(Feature predictive, const Rule& rule) {
  if (predictive == Feature::Shape || predictive == Feature::Arrangement)
    throw domain_error("enumerate_conditions: shape and arrangement are never predictive");
  if (!rule_valid_for(rule, predictive))
    throw domain_error("enumerate_conditions: rule not supported for this predictive feature");

  std::vector<int> masks(16);
  for (int m = 0; m < 16; ++m) masks[static_cast<std::size_t>(m)] = m;
  std::sort(masks.begin(), masks.end(), [](int a, int b) {
    const int da = std::popcount(static_cast<unsigned>(a));
    const int db = std::popcount(static_cast<unsigned>(b));
    if (da != db) return da < db;
    // Lexicographic comparison of the included alphabetical positions.
    for (int bit = 0; bit < 4; ++bit) {
      const int ia = a >> bit & 1, ib = b >> bit & 1;
      if (ia != ib) return ia > ib;
    }
    return false;
  });

  std::vector<TestCondition> out;
  out.reserve(16);
  for (int m : masks) out.push_back(make_condition(predictive, rule, m));
  return out;
}

// ---------------------------------------------------------------------------
// Rule tracks.

/// The 6 predictive-feature values used by sequence positions 1..5 plus the
/// correct continuation. For Color/Size these are grid indices; for Number
/// they are object counts.
inline std::array<int, 6> rule_track(const Rule& rule, Feature feature, Rng& rng) {
  if (feature != Feature::Color && feature != Feature::Number && feature != Feature::Size)
    throw domain_error("rule_track: feature has no rule track");
  if (!rule_valid_for(rule, feature))
    throw domain_error("rule_track: rule not supported for this feature");

  std::array<int, 6> track{};
  switch (rule.kind) {
    case RuleKind::Linear:
      if (feature == Feature::Number) {
        const int start = rng.uniform_int(1, 4);  // 6 consecutive counts fit in 1..9
        for (int i = 0; i < 6; ++i) track[static_cast<std::size_t>(i)] = start + i;
      } else {
        for (int i = 0; i < 6; ++i) track[static_cast<std::size_t>(i)] = i;
      }
      break;
    case RuleKind::Exponential:
    case RuleKind::Sqrt:
      // Indices ascend the full grid; the nonlinearity lives in the re-spaced
      // value grid used at render time.
      for (int i = 0; i < 6; ++i) track[static_cast<std::size_t>(i)] = i;
      break;
    case RuleKind::Alternating: {
      int a, b;
      if (rule.alternating) {
        a = rule.alternating->first;
        b = rule.alternating->second;
        const int lo = feature == Feature::Number ? 1 : 0;
        const int hi = feature == Feature::Number ? kMaxCount : kGridValues - 1;
        if (a < lo || a > hi || b < lo || b > hi)
          throw domain_error("rule_track: alternating value out of range");
      } else if (feature == Feature::Number) {
        a = rng.uniform_int(1, kMaxCount);
        do {
          b = rng.uniform_int(1, kMaxCount);
        } while (b == a);
      } else {
        a = rng.uniform_int(0, kGridValues - 1);
        do {
          b = rng.uniform_int(0, kGridValues - 1);
        } while (b == a);
      }
      if (a == b) throw domain_error("rule_track: alternating values must differ");
      for (int i = 0; i < 6; ++i) track[static_cast<std::size_t>(i)] = (i % 2 == 0) ? a : b;
      break;
    }
  }
  return track;
}

// ---------------------------------------------------------------------------
// Problem sampling.

struct ProblemFeatures {
  std::array<FeatureVector, 5> sequence;
  std::array<FeatureVector, 4> choices;
  int answerIdx = 0;
  TestCondition condition;

  bool operator==(const ProblemFeatures& o) const = default;
};

/// Per-feature pinned values (conflict-control experiments): the feature is
/// held at exactly this value in every image regardless of its role.
/// Arrangement cannot be pinned.
using FeatureOverrides = std::map<Feature, int>;

namespace detail {

inline int draw_value(Feature f, Rng& rng) {
  switch (f) {
    case Feature::Color:
    case Feature::Size: return rng.uniform_int(0, kGridValues - 1);
    case Feature::Number: return rng.uniform_int(1, kMaxCount);
    case Feature::Shape: return rng.uniform_int(0, kShapeKinds - 1);
    default: throw domain_error("draw_value: arrangement drawn separately");
  }
}

inline void set_value(FeatureVector& fv, Feature f, int v) {
  switch (f) {
    case Feature::Color: fv.shadeIdx = v; break;
    case Feature::Number: fv.count = v; break;
    case Feature::Size: fv.sizeIdx = v; break;
    case Feature::Shape: fv.shapeKind = static_cast<ShapeKind>(v); break;
    default: throw domain_error("set_value: arrangement set separately");
  }
}

}  // namespace detail

inline ProblemFeatures sample_problem(const TestCondition& condition, Rng& rng,
                                      const FeatureOverrides& overrides = {}) {
  condition.validate();
  for (const auto& [f, v] : overrides) {
    if (f == condition.predictive) throw domain_error("sample_problem: cannot pin the predictive feature");
    if (f == Feature::Arrangement) throw domain_error("sample_problem: cannot pin the arrangement");
    (void)v;
  }

  ProblemFeatures out;
  out.condition = condition;
  const auto track = rule_track(condition.rule, condition.predictive, rng);
  out.answerIdx = rng.uniform_int(0, 3);

  // Values shared by all 9 images: pinned features and Constant-role draws,
  // in alphabetical feature order.
  std::map<Feature, int> shared;
  std::vector<int> sharedArrangement;
  for (Feature f : alphabetical_features()) {
    if (f == condition.predictive) continue;
    const auto ov = overrides.find(f);
    if (ov != overrides.end()) {
      shared[f] = ov->second;
      continue;
    }
    if (condition.roles.at(f) == Role::Constant) {
      if (f == Feature::Arrangement)
        sharedArrangement = rng.permutation(kGridCells);
      else
        shared[f] = detail::draw_value(f, rng);
    }
  }
  const bool arrangementShared = !sharedArrangement.empty();

  auto build_vector = [&](int predictiveValue) {
    FeatureVector fv;
    detail::set_value(fv, condition.predictive, predictiveValue);
    for (Feature f : alphabetical_features()) {
      if (f == condition.predictive) continue;
      if (f == Feature::Arrangement) {
        fv.arrangement = arrangementShared ? sharedArrangement : rng.permutation(kGridCells);
      } else if (auto it = shared.find(f); it != shared.end()) {
        detail::set_value(fv, f, it->second);
      } else {
        detail::set_value(fv, f, detail::draw_value(f, rng));
      }
    }
    fv.validate();
    return fv;
  };

  for (int i = 0; i < 5; ++i)
    out.sequence[static_cast<std::size_t>(i)] = build_vector(track[static_cast<std::size_t>(i)]);

  // Wrong-choice predictive values: distinct draws from the value grid with
  // the correct continuation excluded.
  std::vector<int> pool;
  if (condition.predictive == Feature::Number) {
    for (int v = 1; v <= kMaxCount; ++v)
      if (v != track[5]) pool.push_back(v);
  } else {
    for (int v = 0; v < kGridValues; ++v)
      if (v != track[5]) pool.push_back(v);
  }
  std::array<int, 3> wrong{};
  for (int k = 0; k < 3; ++k) {
    const int j = rng.uniform_int(0, static_cast<int>(pool.size()) - 1);
    wrong[static_cast<std::size_t>(k)] = pool[static_cast<std::size_t>(j)];
    pool.erase(pool.begin() + j);
  }

  constexpr int kMaxRetries = 1000;
  int wrongAt = 0;
  for (int k = 0; k < 4; ++k) {
    const int value = (k == out.answerIdx) ? track[5] : wrong[static_cast<std::size_t>(wrongAt++)];
    FeatureVector fv = build_vector(value);
    // Uniqueness backstop; distinct predictive values already separate the
    // choices, so this loop only guards future rule variants.
    int retries = 0;
    auto repeated = [&]() {
      for (int j = 0; j < k; ++j)
        if (out.choices[static_cast<std::size_t>(j)] == fv) return true;
      return false;
    };
    while (repeated()) {
      if (++retries > kMaxRetries) throw domain_error("sample_problem: choice generator exhausted");
      fv = build_vector(value);
    }
    out.choices[static_cast<std::size_t>(k)] = fv;
  }

  return out;
}

}  // namespace seqr

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <set>

#include "seqr/features.hpp"

using namespace seqr;

TEST_CASE("enumerate_conditions yields all 16 with the binomial difficulty pattern") {
  const auto conds = enumerate_conditions(Feature::Color, Rule{});
  REQUIRE(conds.size() == 16);

  std::map<int, int> byDifficulty;
  std::set<int> masks;
  for (const auto& c : conds) {
    ++byDifficulty[c.difficulty()];
    masks.insert(condition_bitmask(c));
    CHECK(c.roles.size() == 4);
    CHECK_FALSE(c.roles.count(Feature::Color));
  }
  CHECK(masks.size() == 16);
  CHECK(byDifficulty[0] == 1);
  CHECK(byDifficulty[1] == 4);
  CHECK(byDifficulty[2] == 6);
  CHECK(byDifficulty[3] == 4);
  CHECK(byDifficulty[4] == 1);

  const auto sizeConds = enumerate_conditions(Feature::Size, Rule{});
  std::map<int, int> hist;
  for (const auto& c : sizeConds) ++hist[c.difficulty()];
  CHECK(hist == std::map<int, int>{{0, 1}, {1, 4}, {2, 6}, {3, 4}, {4, 1}});
}

TEST_CASE("enumerate_conditions ordering is difficulty-then-name") {
  const auto conds = enumerate_conditions(Feature::Color, Rule{});
  for (std::size_t i = 1; i < conds.size(); ++i)
    CHECK(conds[i - 1].difficulty() <= conds[i].difficulty());
  // Difficulty 1 block: distractors in alphabetical order of the feature name.
  CHECK(conds[1].roles.at(Feature::Arrangement) == Role::Distractor);
  CHECK(conds[2].roles.at(Feature::Number) == Role::Distractor);
  CHECK(conds[3].roles.at(Feature::Shape) == Role::Distractor);
  CHECK(conds[4].roles.at(Feature::Size) == Role::Distractor);
  // Deterministic across calls.
  const auto again = enumerate_conditions(Feature::Color, Rule{});
  CHECK(conds == again);
}

TEST_CASE("shape and arrangement are never predictive") {
  CHECK_THROWS_AS(enumerate_conditions(Feature::Shape, Rule{}), domain_error);
  CHECK_THROWS_AS(enumerate_conditions(Feature::Arrangement, Rule{}), domain_error);
}

TEST_CASE("rule_track linear tracks") {
  Rng rng(1);
  const auto color = rule_track(Rule{RuleKind::Linear}, Feature::Color, rng);
  CHECK(color == std::array<int, 6>{0, 1, 2, 3, 4, 5});

  // Number: start in 1..4, six consecutive counts inside 1..9.
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng r(seed);
    const auto t = rule_track(Rule{RuleKind::Linear}, Feature::Number, r);
    CHECK(t[0] >= 1);
    CHECK(t[0] <= 4);
    for (int i = 1; i < 6; ++i) CHECK(t[i] == t[0] + i);
    CHECK(t[5] <= 9);
  }
}

TEST_CASE("rule_track alternation and validity") {
  Rng rng(2);
  Rule alt{RuleKind::Alternating, std::make_pair(1, 4)};
  const auto t = rule_track(alt, Feature::Size, rng);
  CHECK(t == std::array<int, 6>{1, 4, 1, 4, 1, 4});

  // Unset pair: drawn per call, always distinct and in range.
  Rule drawAlt{RuleKind::Alternating};
  for (int i = 0; i < 30; ++i) {
    const auto d = rule_track(drawAlt, Feature::Number, rng);
    CHECK(d[0] != d[1]);
    CHECK(d[0] >= 1);
    CHECK(d[1] <= 9);
    CHECK(d[2] == d[0]);
    CHECK(d[3] == d[1]);
  }

  CHECK_THROWS_AS(rule_track(Rule{RuleKind::Exponential}, Feature::Number, rng), domain_error);
  CHECK_THROWS_AS(rule_track(Rule{RuleKind::Sqrt}, Feature::Number, rng), domain_error);
  CHECK(rule_track(Rule{RuleKind::Exponential}, Feature::Size, rng) ==
        std::array<int, 6>{0, 1, 2, 3, 4, 5});
}

TEST_CASE("sample_problem obeys the condition contract") {
  Rng rng(42);
  for (Feature pf : {Feature::Color, Feature::Number, Feature::Size}) {
    const auto conds = enumerate_conditions(pf, Rule{});
    for (const auto& cond : conds) {
      const auto p = sample_problem(cond, rng);

      // The predictive feature walks the rule track into the right answer.
      const int step = p.sequence[1].value_of(pf) - p.sequence[0].value_of(pf);
      for (int i = 0; i + 1 < 5; ++i)
        CHECK(p.sequence[i + 1].value_of(pf) - p.sequence[i].value_of(pf) == step);
      CHECK(p.choices[p.answerIdx].value_of(pf) - p.sequence[4].value_of(pf) == step);

      // Constant features share one value across all 9 vectors; the wrong
      // choices never continue the rule.
      std::vector<const FeatureVector*> all;
      for (const auto& fv : p.sequence) all.push_back(&fv);
      for (const auto& fv : p.choices) all.push_back(&fv);
      for (const auto& [f, role] : cond.roles) {
        if (role != Role::Constant) continue;
        for (const auto* fv : all) {
          if (f == Feature::Arrangement)
            CHECK(fv->arrangement == p.sequence[0].arrangement);
          else if (f == Feature::Shape)
            CHECK(fv->shapeKind == p.sequence[0].shapeKind);
          else
            CHECK(fv->value_of(f) == p.sequence[0].value_of(f));
        }
      }
      for (int k = 0; k < 4; ++k) {
        if (k == p.answerIdx) continue;
        CHECK(p.choices[k].value_of(pf) != p.choices[p.answerIdx].value_of(pf));
      }

      // No two choices compare equal.
      for (int a = 0; a < 4; ++a)
        for (int b = a + 1; b < 4; ++b) CHECK_FALSE(p.choices[a] == p.choices[b]);
    }
  }
}

TEST_CASE("difficulty-0 condition varies only the predictive feature") {
  Rng rng(7);
  const auto cond = make_condition(Feature::Color, Rule{}, 0);
  const auto p = sample_problem(cond, rng);
  for (int i = 1; i < 5; ++i) {
    CHECK(p.sequence[i].count == p.sequence[0].count);
    CHECK(p.sequence[i].sizeIdx == p.sequence[0].sizeIdx);
    CHECK(p.sequence[i].shapeKind == p.sequence[0].shapeKind);
    CHECK(p.sequence[i].arrangement == p.sequence[0].arrangement);
    CHECK(p.sequence[i].shadeIdx != p.sequence[0].shadeIdx);
  }
}

TEST_CASE("same seed gives bit-identical problems") {
  const auto cond = make_condition(Feature::Number, Rule{}, 9);
  Rng a(123456), b(123456);
  CHECK(sample_problem(cond, a) == sample_problem(cond, b));
  Rng c(123457);
  CHECK_FALSE(sample_problem(cond, c) == sample_problem(cond, b));
}

TEST_CASE("answer index is uniform within 3 sigma") {
  const auto cond = make_condition(Feature::Size, Rule{}, 15);
  Rng rng(99);
  const int n = 10000;
  std::array<int, 4> hist{};
  for (int i = 0; i < n; ++i) ++hist[sample_problem(cond, rng).answerIdx];
  const double expect = n / 4.0;
  const double sigma = std::sqrt(n * 0.25 * 0.75);
  for (int k = 0; k < 4; ++k) CHECK(std::fabs(hist[k] - expect) <= 3.0 * sigma);
}

TEST_CASE("overrides pin a feature at one value") {
  Rng rng(5);
  const auto cond = make_condition(Feature::Size, Rule{}, 15);  // all distractors
  FeatureOverrides pin{{Feature::Number, 5}};
  const auto p = sample_problem(cond, rng, pin);
  for (const auto& fv : p.sequence) CHECK(fv.count == 5);
  for (const auto& fv : p.choices) CHECK(fv.count == 5);

  CHECK_THROWS_AS(sample_problem(cond, rng, FeatureOverrides{{Feature::Size, 3}}), domain_error);
}

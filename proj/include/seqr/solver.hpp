#pragma once

// Test-time optimization: RMSprop on the sequence loss for a fixed number of
// full-batch steps (the choices are never seen), then answer selection by the
// lowest relation score against the fifth image.

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "seqr/model.hpp"

namespace seqr {

struct OptimConfig {
  int steps = 10;
  double lr = 1e-5;
  double alpha = 0.99;
  double eps = 1e-8;
  /// When set, re-freezes the model's parameter groups before optimizing.
  std::optional<FreezeSpec> freeze;
};

struct Selection {
  std::array<double, 4> scores{};
  int chosen = -1;                // argmin of scores; ties to the lowest index
  bool correct = false;
  std::vector<double> lossTrace;  // pre-update loss at each step
  bool scored = false;            // false for sequence-only training problems
  bool aborted = false;           // non-finite loss; recorded as incorrect
  std::string diagnostic;
};

namespace detail {

template <class S>
inline void apply_optim_config(ModelState<S>& m, const OptimConfig& cfg) {
  m.opt.lr = cfg.lr;
  m.opt.alpha = cfg.alpha;
  m.opt.eps = cfg.eps;
  if (cfg.freeze) {
    if (cfg.freeze->convRemoved != m.freeze.convRemoved)
      throw model_error("OptimConfig: convRemoved cannot change after init");
    m.freeze = *cfg.freeze;
    m.params.set_frozen(ParamGroup::Conv, m.freeze.convFrozen);
    m.params.set_frozen(ParamGroup::Fc, m.freeze.fcFrozen);
    m.params.set_frozen(ParamGroup::Relation, m.freeze.relationFrozen);
  }
}

}  // namespace detail

/// cfg.steps RMSprop steps on the 5-image sequence loss. Mutates the model in
/// place and returns the per-step loss trace. Throws autodiff_error on a
/// non-finite loss.
template <class S>
inline std::vector<double> optimize_on_sequence(ModelState<S>& m, std::span<const Image> seq,
                                                const OptimConfig& cfg) {
  if (seq.size() != 5) throw model_error("optimize_on_sequence: expected 5 sequence images");
  if (cfg.steps < 0 || cfg.lr < 0.0) throw model_error("optimize_on_sequence: bad config");
  detail::apply_optim_config(m, cfg);

  std::vector<double> trace;
  trace.reserve(static_cast<std::size_t>(cfg.steps));
  if (cfg.steps == 0) return trace;

  const Tensor<S> batch = image_batch<S>(seq);
  for (int step = 0; step < cfg.steps; ++step) {
    Tape<S> tape;
    auto g = build_loss_graph(tape, m, batch, /*withGrad=*/true);
    trace.push_back(static_cast<double>(tape.value(g.loss)[0]));
    tape.backward(g.loss);
    std::vector<const Tensor<S>*> grads(m.params.entries.size(), nullptr);
    for (std::size_t i = 0; i < grads.size(); ++i) {
      const auto id = g.leaves[i];
      if (tape.has_grad(id)) grads[i] = &tape.grad(id);
    }
    rmsprop_step(m.params, grads, m.opt);
  }
  return trace;
}

/// Relation scores of the 4 choices against the last sequence image. No
/// parameter updates happen here.
template <class S>
inline std::array<double, 4> score_choices(const ModelState<S>& m, const Image& lastSeqImage,
                                           std::span<const Image> choices) {
  if (choices.size() != 4) throw model_error("score_choices: expected 4 choices");
  std::vector<Image> all;
  all.reserve(5);
  all.push_back(lastSeqImage);
  for (const auto& c : choices) all.push_back(c);

  std::array<double, 4> scores{};
  if (m.rel.kind == RelationKind::LinearOffset) {
    const auto enc = encode(m, all);
    const auto* theta = m.params.find("relation.theta");
    const double th = static_cast<double>(theta->value[0]);
    for (int k = 0; k < 4; ++k)
      scores[static_cast<std::size_t>(k)] =
          linear_relation_score(enc.latents[0], enc.latents[static_cast<std::size_t>(k) + 1], th);
  } else {
    const auto enc = encode(m, all);
    const int F = enc.convFlat.dim(1);
    const S* base = enc.convFlat.data();
    for (int k = 0; k < 4; ++k)
      scores[static_cast<std::size_t>(k)] = relation_score_conv(
          m, std::span<const S>(base, static_cast<std::size_t>(F)),
          std::span<const S>(base + static_cast<std::int64_t>(k + 1) * F,
                             static_cast<std::size_t>(F)));
  }
  return scores;
}

/// Argmin with deterministic tie-breaking (lowest index).
inline int select_lowest(std::span<const double> scores) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(scores.size()); ++i)
    if (scores[static_cast<std::size_t>(i)] < scores[static_cast<std::size_t>(best)]) best = i;
  return best;
}

/// Optimize on the sequence, then pick the choice with the lowest relation
/// value. A non-finite loss aborts the problem: it is recorded as incorrect
/// with a diagnostic instead of propagating, so fuzz statistics stay honest.
template <class S>
inline Selection solve_problem(ModelState<S>& m, const Problem& p, const OptimConfig& cfg) {
  Selection sel;
  m.opt.zero();
  try {
    sel.lossTrace = optimize_on_sequence(m, p.sequence, cfg);
  } catch (const autodiff_error& e) {
    sel.aborted = true;
    sel.diagnostic = e.what();
    sel.correct = false;
    return sel;
  }
  if (!p.has_choices()) return sel;

  sel.scores = score_choices(m, p.sequence.back(), p.choices);
  for (double s : sel.scores) {
    if (!std::isfinite(s)) {
      sel.aborted = true;
      sel.diagnostic = "non-finite relation score";
      sel.correct = false;
      return sel;
    }
  }
  sel.chosen = select_lowest(sel.scores);
  sel.correct = sel.chosen == p.answerIdx;
  sel.scored = true;
  return sel;
}

/// Solve an ordered problem stream. resetBetween=true re-initializes the
/// model before every problem (the naive protocol); false carries the weights
/// forward, which is the knowledge-crystallization mode. Problems without
/// choices are sequence-only training exposures.
template <class S>
inline std::vector<Selection> run_session(ModelState<S>& m, std::span<const Problem> problems,
                                          const OptimConfig& cfg, bool resetBetween,
                                          std::uint64_t reinitSeed = 0) {
  std::vector<Selection> out;
  out.reserve(problems.size());
  for (std::size_t i = 0; i < problems.size(); ++i) {
    if (resetBetween) {
      Rng rng(hash_combine(reinitSeed, i));
      m = init_model<S>(m.arch, m.rel, rng, m.freeze);
    }
    out.push_back(solve_problem(m, problems[i], cfg));
  }
  return out;
}

}  // namespace seqr

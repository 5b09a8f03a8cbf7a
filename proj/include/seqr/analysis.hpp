#pragma once

// Mechanism analyses: per-layer feature correlations of the encoder's FC
// neurons, and the order-covariance vs gradient-norm relationship at the conv
// output.

#include <cmath>
#include <span>
#include <vector>

#include "seqr/model.hpp"
#include "seqr/raster.hpp"
#include "seqr/stats.hpp"

namespace seqr {

struct analysis_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Feature correlation profiles.

struct CorrelationProfile {
  Feature feature = Feature::Color;
  std::vector<double> layerMeanAbsR;  // one value per FC layer, in [0,1]
  double outputAbsR = 0.0;            // |r| of the single output neuron
  int zeroVarianceNeurons = 0;        // dead units counted, correlation taken as 0
  int probes = 0;
};

/// Mean |Pearson r| per layer from recorded activations: acts[l] is [N,width],
/// values has length N. Factored out so it can be checked against hand-built
/// activations.
template <class S>
inline CorrelationProfile correlation_profile_from_activations(
    std::span<const Tensor<S>> acts, std::span<const double> values) {
  CorrelationProfile prof;
  prof.probes = static_cast<int>(values.size());
  for (const Tensor<S>& layer : acts) {
    if (layer.ndim() != 2 || layer.dim(0) != static_cast<int>(values.size()))
      throw analysis_error("correlation profile: activation shape mismatch");
    const int width = layer.dim(1);
    std::vector<double> column(values.size());
    double sum = 0.0;
    for (int k = 0; k < width; ++k) {
      for (std::size_t i = 0; i < values.size(); ++i)
        column[i] = static_cast<double>(layer[static_cast<std::int64_t>(i) * width + k]);
      bool undefined = false;
      const double r = stats::pearson(column, values, &undefined);
      if (undefined) ++prof.zeroVarianceNeurons;
      sum += std::fabs(r);
    }
    prof.layerMeanAbsR.push_back(sum / width);
  }
  if (!prof.layerMeanAbsR.empty()) prof.outputAbsR = prof.layerMeanAbsR.back();
  return prof;
}

/// The six probe values for a feature. Color and Size use their full grids;
/// Number uses the fixed window 2..7 to match the six-value protocol.
inline std::array<int, kGridValues> probe_values(Feature f) {
  std::array<int, kGridValues> v{};
  for (int i = 0; i < kGridValues; ++i)
    v[static_cast<std::size_t>(i)] = (f == Feature::Number) ? i + 2 : i;
  return v;
}

/// Renders 20 probe images per feature value (120 in total, other features
/// i.i.d.), records every FC layer's activations and averages the per-neuron
/// |r| with the feature value per layer.
template <class S>
inline CorrelationProfile feature_correlation_profile(const ModelState<S>& m, Feature feature,
                                                      Rng& rng, int imagesPerValue = 20) {
  if (feature != Feature::Color && feature != Feature::Number && feature != Feature::Size)
    throw analysis_error("feature_correlation_profile: feature must be color, number or size");
  if (m.rel.kind != RelationKind::LinearOffset)
    throw analysis_error("feature_correlation_profile: encoder has no FC layers to profile");
  if (imagesPerValue < 1) throw analysis_error("feature_correlation_profile: need probes");

  const RenderConfig cfg = RenderConfig::standard(m.arch.inputResolution);
  const auto values = probe_values(feature);

  std::vector<Image> probes;
  std::vector<double> targets;
  probes.reserve(static_cast<std::size_t>(kGridValues) * imagesPerValue);
  for (int vi = 0; vi < kGridValues; ++vi) {
    for (int rep = 0; rep < imagesPerValue; ++rep) {
      FeatureVector fv;
      fv.shadeIdx = feature == Feature::Color ? values[static_cast<std::size_t>(vi)]
                                              : rng.uniform_int(0, kGridValues - 1);
      fv.count = feature == Feature::Number ? values[static_cast<std::size_t>(vi)]
                                            : rng.uniform_int(1, kMaxCount);
      fv.sizeIdx = feature == Feature::Size ? values[static_cast<std::size_t>(vi)]
                                            : rng.uniform_int(0, kGridValues - 1);
      fv.shapeKind = static_cast<ShapeKind>(rng.uniform_int(0, kShapeKinds - 1));
      fv.arrangement = rng.permutation(kGridCells);
      probes.push_back(render(fv, cfg));
      targets.push_back(static_cast<double>(values[static_cast<std::size_t>(vi)]));
    }
  }

  const auto enc = encode(m, probes, /*wantIntermediates=*/true);
  auto prof = correlation_profile_from_activations<S>(enc.fcActs, targets);
  prof.feature = feature;
  return prof;
}

// ---------------------------------------------------------------------------
// Order covariance vs gradient norm at the conv output.

struct OrderCovResult {
  std::vector<double> orderCovariance;  // per conv-output neuron, cov with 1..5
  std::vector<double> gradNormAct;      // L2 over the 5 images of dL/da_k
  std::vector<double> gradNormW;        // secondary reading: column norm of the
                                        // first FC weight gradient (empty when
                                        // that gradient is unavailable)
  double corrAbsCovGrad = 0.0;          // pearson(|cov|, gradNormAct) across neurons
  bool corrUndefined = false;
};

/// Per-neuron covariance of activations with their image order; the
/// activations tensor is [5, F] and orders are 1..5. Factored for testing.
template <class S>
inline std::vector<double> order_covariance_from_activations(const Tensor<S>& acts) {
  if (acts.ndim() != 2) throw analysis_error("order covariance: need [B,F] activations");
  const int B = acts.dim(0), F = acts.dim(1);
  std::vector<double> orders(static_cast<std::size_t>(B));
  for (int j = 0; j < B; ++j) orders[static_cast<std::size_t>(j)] = j + 1;
  std::vector<double> column(static_cast<std::size_t>(B));
  std::vector<double> cov(static_cast<std::size_t>(F));
  for (int k = 0; k < F; ++k) {
    for (int j = 0; j < B; ++j)
      column[static_cast<std::size_t>(j)] =
          static_cast<double>(acts[static_cast<std::int64_t>(j) * F + k]);
    cov[static_cast<std::size_t>(k)] = stats::covariance(column, orders);
  }
  return cov;
}

/// At the model's current (pre-optimization) parameters: each conv-output
/// neuron's covariance with the sequence order, and the L2 norm over the 5
/// images of the loss gradient with respect to that neuron's activation.
template <class S>
inline OrderCovResult order_covariance_and_gradnorm(const ModelState<S>& m, const Problem& p) {
  if (m.freeze.convRemoved)
    throw analysis_error("order_covariance_and_gradnorm: model has no conv output");
  if (p.sequence.size() != 5)
    throw analysis_error("order_covariance_and_gradnorm: expected 5 sequence images");

  const Tensor<S> batch = image_batch<S>(p.sequence);
  Tape<S> tape;
  auto g = build_loss_graph(tape, m, batch, /*withGrad=*/true, /*retainConvFlat=*/true);
  tape.backward(g.loss);

  OrderCovResult out;
  const Tensor<S>& acts = tape.value(g.convFlat);
  out.orderCovariance = order_covariance_from_activations(acts);

  const int B = acts.dim(0), F = acts.dim(1);
  const Tensor<S>& ga = tape.grad(g.convFlat);
  out.gradNormAct.resize(static_cast<std::size_t>(F));
  for (int k = 0; k < F; ++k) {
    double s = 0.0;
    for (int j = 0; j < B; ++j) {
      const double v = static_cast<double>(ga[static_cast<std::int64_t>(j) * F + k]);
      s += v * v;
    }
    out.gradNormAct[static_cast<std::size_t>(k)] = std::sqrt(s);
  }

  // Secondary interpretation: the gradient of the weights leaving each
  // conv-output neuron (column k of the first FC weight gradient).
  if (m.rel.kind == RelationKind::LinearOffset) {
    for (std::size_t i = 0; i < m.params.entries.size(); ++i) {
      if (m.params.entries[i].name != "fc1.w") continue;
      const auto id = g.leaves[i];
      if (!tape.has_grad(id)) break;
      const Tensor<S>& gw = tape.grad(id);
      const int rows = gw.dim(0);
      out.gradNormW.resize(static_cast<std::size_t>(F));
      for (int k = 0; k < F; ++k) {
        double s = 0.0;
        for (int r = 0; r < rows; ++r) {
          const double v = static_cast<double>(gw[static_cast<std::int64_t>(r) * F + k]);
          s += v * v;
        }
        out.gradNormW[static_cast<std::size_t>(k)] = std::sqrt(s);
      }
      break;
    }
  }

  std::vector<double> absCov(out.orderCovariance.size());
  for (std::size_t i = 0; i < absCov.size(); ++i) absCov[i] = std::fabs(out.orderCovariance[i]);
  out.corrAbsCovGrad = stats::pearson(absCov, out.gradNormAct, &out.corrUndefined);
  return out;
}

}  // namespace seqr

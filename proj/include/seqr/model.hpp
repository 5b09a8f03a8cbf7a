#pragma once

// The encoder (3 conv + 2 maxpool + 5 FC) and the two relation modules: the
// linear-offset score (z_i - z_j + theta)^2 and the MLP variant that takes
// the concatenated conv outputs. Covers initialization, the sequence loss
// graph, inference-mode encoding, and model (de)serialization.

#include <array>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "seqr/autodiff.hpp"
#include "seqr/optim.hpp"
#include "seqr/raster.hpp"
#include "seqr/rng.hpp"
#include "seqr/tensor.hpp"

namespace seqr {

struct model_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EncoderArch {
  int inputResolution = 224;
  std::array<int, 3> convChannels{4, 8, 8};
  std::array<int, 3> convKernels{2, 2, 3};
  int convStride = 1;
  int convPad = 1;
  std::array<int, 2> poolKernels{4, 6};  // after conv2+relu and conv3+relu
  std::array<int, 5> fcWidths{200, 100, 50, 10, 1};

  bool operator==(const EncoderArch&) const = default;
};

enum class RelationKind : int { LinearOffset = 0, MLP = 1 };

struct RelationConfig {
  RelationKind kind = RelationKind::LinearOffset;
  std::array<int, 5> mlpWidths{200, 100, 50, 10, 1};

  bool operator==(const RelationConfig&) const = default;
};

struct FreezeSpec {
  bool convFrozen = false;
  bool fcFrozen = false;
  bool relationFrozen = false;
  bool convRemoved = false;  // FC layers connect directly to the pixels

  bool operator==(const FreezeSpec&) const = default;
};

// ---------------------------------------------------------------------------
// Size arithmetic for the conv stack. conv1+relu, conv2+relu, pool1,
// conv3+relu, pool2, flatten.

struct ConvShapes {
  std::array<int, 5> sides{};  // after conv1, conv2, pool1, conv3, pool2
  int outSide = 0;
  std::int64_t flatLen = 0;
};

inline ConvShapes conv_shapes(const EncoderArch& a) {
  if (a.convStride != 1) throw model_error("conv_shapes: only stride 1 is supported");
  ConvShapes s;
  int side = a.inputResolution;
  auto conv = [&](int k) { return side + 2 * a.convPad - k + 1; };
  side = conv(a.convKernels[0]);
  s.sides[0] = side;
  side = conv(a.convKernels[1]);
  s.sides[1] = side;
  side = side - a.poolKernels[0] + 1;
  s.sides[2] = side;
  side = conv(a.convKernels[2]);
  s.sides[3] = side;
  side = side - a.poolKernels[1] + 1;
  s.sides[4] = side;
  for (int x : s.sides)
    if (x < 1) throw model_error("conv_shapes: input resolution too small for the pools");
  s.outSide = side;
  s.flatLen = static_cast<std::int64_t>(a.convChannels[2]) * side * side;
  return s;
}

/// Flattened conv-output length (the relation MLP sees twice this).
inline std::int64_t conv_output_len(const EncoderArch& a) { return conv_shapes(a).flatLen; }

// ---------------------------------------------------------------------------

template <class S = double>
struct ModelState {
  EncoderArch arch;
  RelationConfig rel;
  FreezeSpec freeze;
  ParamSet<S> params;
  OptState<S> opt;
};

namespace detail {

template <class S>
inline Tensor<S> uniform_init(std::vector<int> shape, std::int64_t fanIn, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fanIn));
  Tensor<S> t(std::move(shape));
  for (std::int64_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<S>(rng.uniform(-bound, bound));
  return t;
}

}  // namespace detail

/// Fresh model: weights and biases ~ U(-1/sqrt(fan_in), +1/sqrt(fan_in)),
/// theta = 0, optimizer state zeroed. Same seed, same model.
template <class S = double>
inline ModelState<S> init_model(const EncoderArch& arch, const RelationConfig& rel, Rng& rng,
                                const FreezeSpec& freeze = {}) {
  if (freeze.convRemoved && rel.kind == RelationKind::MLP)
    throw model_error("init_model: the MLP relation needs the conv stack");
  for (int w : arch.fcWidths)
    if (w < 1) throw model_error("init_model: bad FC width");
  if (arch.fcWidths.back() != 1) throw model_error("init_model: final FC width must be 1");

  ModelState<S> m;
  m.arch = arch;
  m.rel = rel;
  m.freeze = freeze;

  if (!freeze.convRemoved) {
    conv_shapes(arch);  // validates pool arithmetic
    int cin = 1;
    for (int l = 0; l < 3; ++l) {
      const int cout = arch.convChannels[static_cast<std::size_t>(l)];
      const int k = arch.convKernels[static_cast<std::size_t>(l)];
      const std::int64_t fanIn = static_cast<std::int64_t>(cin) * k * k;
      const std::string base = "conv" + std::to_string(l + 1);
      m.params.add(base + ".w", ParamGroup::Conv,
                   detail::uniform_init<S>({cout, cin, k, k}, fanIn, rng));
      m.params.add(base + ".b", ParamGroup::Conv, detail::uniform_init<S>({cout}, fanIn, rng));
      cin = cout;
    }
  }

  if (rel.kind == RelationKind::LinearOffset) {
    std::int64_t in = freeze.convRemoved
                          ? static_cast<std::int64_t>(arch.inputResolution) * arch.inputResolution
                          : conv_output_len(arch);
    for (int l = 0; l < 5; ++l) {
      const int out = arch.fcWidths[static_cast<std::size_t>(l)];
      const std::string base = "fc" + std::to_string(l + 1);
      m.params.add(base + ".w", ParamGroup::Fc,
                   detail::uniform_init<S>({out, static_cast<int>(in)}, in, rng));
      m.params.add(base + ".b", ParamGroup::Fc, detail::uniform_init<S>({out}, in, rng));
      in = out;
    }
    m.params.add("relation.theta", ParamGroup::Relation, Tensor<S>::zeros({1}));
  } else {
    // Complex relation module: the encoder keeps only its conv stack and the
    // relation MLP takes the concatenation of two conv outputs.
    std::int64_t in = 2 * conv_output_len(arch);
    for (int l = 0; l < 5; ++l) {
      const int out = rel.mlpWidths[static_cast<std::size_t>(l)];
      const std::string base = "rel" + std::to_string(l + 1);
      m.params.add(base + ".w", ParamGroup::Relation,
                   detail::uniform_init<S>({out, static_cast<int>(in)}, in, rng));
      m.params.add(base + ".b", ParamGroup::Relation, detail::uniform_init<S>({out}, in, rng));
      in = out;
    }
    if (rel.mlpWidths.back() != 1) throw model_error("init_model: relation MLP must end at width 1");
  }

  m.params.set_frozen(ParamGroup::Conv, freeze.convFrozen);
  m.params.set_frozen(ParamGroup::Fc, freeze.fcFrozen);
  m.params.set_frozen(ParamGroup::Relation, freeze.relationFrozen);
  m.opt = OptState<S>::template init_like<ParamSet<S>>(m.params);
  return m;
}

// ---------------------------------------------------------------------------
// Graph construction.

template <class S>
inline Tensor<S> image_batch(std::span<const Image> images) {
  if (images.empty()) throw model_error("image_batch: no images");
  const int res = images[0].resolution;
  Tensor<S> t({static_cast<int>(images.size()), 1, res, res});
  S* p = t.data();
  for (const Image& im : images) {
    if (im.resolution != res) throw model_error("image_batch: mixed resolutions");
    for (double v : im.pixels) *p++ = static_cast<S>(v);
  }
  return t;
}

template <class S>
struct ModelGraph {
  using Id = typename Tape<S>::Id;
  std::vector<Id> leaves;   // one per ParamSet entry, in order
  Id images = -1;
  Id convFlat = -1;         // [B,F]; flattened pixels when conv is removed
  Id latent = -1;           // [B,1]; -1 in MLP mode
  std::vector<Id> fcActs;   // post-activation FC outputs, [B,width] each
  Id loss = -1;             // -1 unless a loss head was attached
};

namespace detail {

template <class S>
inline ModelGraph<S> build_encoder_graph(Tape<S>& tape, const ModelState<S>& m,
                                         const Tensor<S>& images, bool withGrad,
                                         bool retainConvFlat) {
  using Id = typename Tape<S>::Id;
  if (images.ndim() != 4 || images.dim(1) != 1 || images.dim(2) != m.arch.inputResolution ||
      images.dim(3) != m.arch.inputResolution)
    throw model_error("encoder: image batch does not match the input resolution " +
                      std::to_string(m.arch.inputResolution));
  const int B = images.dim(0);

  ModelGraph<S> g;
  g.leaves.reserve(m.params.entries.size());
  for (const auto& e : m.params.entries) {
    const bool needs = withGrad && !m.params.is_frozen(e.group);
    g.leaves.push_back(tape.input(&e.value, needs));
  }
  auto leaf = [&](const char* name) -> Id {
    for (std::size_t i = 0; i < m.params.entries.size(); ++i)
      if (m.params.entries[i].name == name) return g.leaves[i];
    throw model_error(std::string("encoder: missing parameter ") + name);
  };

  g.images = tape.input(&images, false);
  Id h = g.images;

  if (!m.freeze.convRemoved) {
    h = tape.relu(tape.conv2d(h, leaf("conv1.w"), leaf("conv1.b"), m.arch.convPad));
    h = tape.relu(tape.conv2d(h, leaf("conv2.w"), leaf("conv2.b"), m.arch.convPad));
    h = tape.maxpool(h, m.arch.poolKernels[0]);
    h = tape.relu(tape.conv2d(h, leaf("conv3.w"), leaf("conv3.b"), m.arch.convPad));
    h = tape.maxpool(h, m.arch.poolKernels[1]);
    const auto& shape = tape.value(h).shape();
    g.convFlat = tape.reshape(h, {B, static_cast<int>(shape[1]) * shape[2] * shape[3]});
  } else {
    g.convFlat = tape.reshape(h, {B, m.arch.inputResolution * m.arch.inputResolution});
  }
  if (retainConvFlat) tape.retain_grad(g.convFlat);
  h = g.convFlat;

  if (m.rel.kind == RelationKind::LinearOffset) {
    for (int l = 0; l < 5; ++l) {
      const std::string base = "fc" + std::to_string(l + 1);
      h = tape.affine(h, leaf((base + ".w").c_str()), leaf((base + ".b").c_str()));
      if (l < 4) h = tape.tanh_(h);
      g.fcActs.push_back(h);
    }
    g.latent = h;  // [B,1]
  }
  return g;
}

template <class S>
inline void attach_loss(Tape<S>& tape, const ModelState<S>& m, ModelGraph<S>& g) {
  using Id = typename Tape<S>::Id;
  auto leaf = [&](const char* name) -> Id {
    for (std::size_t i = 0; i < m.params.entries.size(); ++i)
      if (m.params.entries[i].name == name) return g.leaves[i];
    throw model_error(std::string("loss: missing parameter ") + name);
  };

  if (m.rel.kind == RelationKind::LinearOffset) {
    const int B = tape.value(g.latent).dim(0);
    Id z = tape.reshape(g.latent, {B});
    Id d = tape.seq_diff(z);                         // z_i - z_{i+1}
    Id r = tape.add_scalar(d, leaf("relation.theta"));
    g.loss = tape.mean(tape.square(r));
  } else {
    Id h = tape.pair_concat(g.convFlat);             // [B-1, 2F]
    for (int l = 0; l < 5; ++l) {
      const std::string base = "rel" + std::to_string(l + 1);
      h = tape.affine(h, leaf((base + ".w").c_str()), leaf((base + ".b").c_str()));
      if (l < 4) h = tape.tanh_(h);
    }
    g.loss = tape.mean(tape.square(h));              // positive relation scores
  }
}

}  // namespace detail

/// Loss graph over a sequence batch (the images tensor must outlive the tape).
template <class S>
inline ModelGraph<S> build_loss_graph(Tape<S>& tape, const ModelState<S>& m,
                                      const Tensor<S>& images, bool withGrad = true,
                                      bool retainConvFlat = false) {
  if (images.dim(0) < 2) throw model_error("build_loss_graph: need at least 2 images");
  auto g = detail::build_encoder_graph(tape, m, images, withGrad, retainConvFlat);
  detail::attach_loss(tape, m, g);
  return g;
}

// ---------------------------------------------------------------------------
// Inference-mode helpers.

template <class S = double>
struct EncodeResult {
  std::vector<double> latents;       // final scalar per image; empty in MLP mode
  Tensor<S> convFlat;                // [B,F]
  std::vector<Tensor<S>> fcActs;     // [B,width] per FC layer (when requested)
};

template <class S>
inline EncodeResult<S> encode(const ModelState<S>& m, std::span<const Image> images,
                              bool wantIntermediates = false) {
  Tensor<S> batch = image_batch<S>(images);
  Tape<S> tape;
  auto g = detail::build_encoder_graph(tape, m, batch, /*withGrad=*/false, false);
  EncodeResult<S> out;
  out.convFlat = tape.value(g.convFlat);
  if (g.latent >= 0) {
    const Tensor<S>& z = tape.value(g.latent);
    out.latents.resize(static_cast<std::size_t>(z.dim(0)));
    for (int i = 0; i < z.dim(0); ++i) out.latents[static_cast<std::size_t>(i)] =
        static_cast<double>(z[static_cast<std::int64_t>(i)]);
  }
  if (wantIntermediates)
    for (auto id : g.fcActs) out.fcActs.push_back(tape.value(id));
  return out;
}

template <class S>
inline double encode_scalar(const ModelState<S>& m, const Image& image) {
  if (m.rel.kind != RelationKind::LinearOffset)
    throw model_error("encode_scalar: MLP-relation models have no scalar latent");
  const Image* p = &image;
  return encode(m, std::span<const Image>(p, 1)).latents[0];
}

inline double linear_relation_score(double zi, double zj, double theta) {
  const double d = zi - zj + theta;
  return d * d;
}

/// Relation score between two latents of the same model.
template <class S>
inline double relation_score(const ModelState<S>& m, double zi, double zj) {
  if (m.rel.kind != RelationKind::LinearOffset)
    throw model_error("relation_score: scalar form needs the linear-offset module");
  const auto* theta = m.params.find("relation.theta");
  return linear_relation_score(zi, zj, static_cast<double>(theta->value[0]));
}

/// MLP relation score on two conv-output vectors.
template <class S>
inline double relation_score_conv(const ModelState<S>& m, std::span<const S> a,
                                  std::span<const S> b) {
  if (m.rel.kind != RelationKind::MLP)
    throw model_error("relation_score_conv: model has no MLP relation module");
  if (a.size() != b.size()) throw model_error("relation_score_conv: latent size mismatch");
  std::vector<S> h(a.size() + b.size());
  std::copy(a.begin(), a.end(), h.begin());
  std::copy(b.begin(), b.end(), h.begin() + static_cast<std::ptrdiff_t>(a.size()));
  std::vector<S> next;
  for (int l = 0; l < 5; ++l) {
    const std::string base = "rel" + std::to_string(l + 1);
    const auto* w = m.params.find(base + ".w");
    const auto* bb = m.params.find(base + ".b");
    if (static_cast<std::int64_t>(h.size()) != w->value.dim(1))
      throw model_error("relation_score_conv: conv output does not match MLP input");
    next.assign(static_cast<std::size_t>(w->value.dim(0)), S(0));
    kernels::affine_forward(h.data(), 1, static_cast<int>(h.size()), w->value.data(),
                            w->value.dim(0), bb->value.data(), next.data());
    if (l < 4)
      for (auto& v : next) v = std::tanh(v);
    h = next;
  }
  const double out = static_cast<double>(h[0]);
  return out * out;
}

/// Mean relation score over the 4 consecutive pairs of a 5-image sequence.
template <class S>
inline double sequence_loss(const ModelState<S>& m, std::span<const Image> seq) {
  if (seq.size() != 5) throw model_error("sequence_loss: expected 5 sequence images");
  Tensor<S> batch = image_batch<S>(seq);
  Tape<S> tape;
  auto g = build_loss_graph(tape, m, batch, /*withGrad=*/false);
  return static_cast<double>(tape.value(g.loss)[0]);
}

// ---------------------------------------------------------------------------
// Serialization: versioned little-endian binary (crystallization checkpoints).

namespace detail {

template <class T>
inline void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
inline T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw model_error("load_model: truncated file");
  return v;
}

}  // namespace detail

template <class S>
inline void save_model(const ModelState<S>& m, std::ostream& os) {
  os.write("SQRM", 4);
  detail::put<std::uint32_t>(os, 1);                        // version
  detail::put<std::uint8_t>(os, sizeof(S));                 // scalar width
  detail::put<std::int32_t>(os, m.arch.inputResolution);
  for (int v : m.arch.convChannels) detail::put<std::int32_t>(os, v);
  for (int v : m.arch.convKernels) detail::put<std::int32_t>(os, v);
  detail::put<std::int32_t>(os, m.arch.convPad);
  for (int v : m.arch.poolKernels) detail::put<std::int32_t>(os, v);
  for (int v : m.arch.fcWidths) detail::put<std::int32_t>(os, v);
  detail::put<std::uint8_t>(os, static_cast<std::uint8_t>(m.rel.kind));
  for (int v : m.rel.mlpWidths) detail::put<std::int32_t>(os, v);
  detail::put<std::uint8_t>(os, m.freeze.convFrozen);
  detail::put<std::uint8_t>(os, m.freeze.fcFrozen);
  detail::put<std::uint8_t>(os, m.freeze.relationFrozen);
  detail::put<std::uint8_t>(os, m.freeze.convRemoved);
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(m.params.entries.size()));
  for (const auto& e : m.params.entries) {
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    detail::put<std::uint8_t>(os, static_cast<std::uint8_t>(e.group));
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(e.value.ndim()));
    for (int d : e.value.shape()) detail::put<std::int32_t>(os, d);
    os.write(reinterpret_cast<const char*>(e.value.data()),
             static_cast<std::streamsize>(sizeof(S) * static_cast<std::size_t>(e.value.size())));
  }
  if (!os) throw model_error("save_model: write failed");
}

template <class S>
inline ModelState<S> load_model(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "SQRM") throw model_error("load_model: bad magic");
  if (detail::get<std::uint32_t>(is) != 1) throw model_error("load_model: unsupported version");
  if (detail::get<std::uint8_t>(is) != sizeof(S))
    throw model_error("load_model: scalar width mismatch");

  ModelState<S> m;
  m.arch.inputResolution = detail::get<std::int32_t>(is);
  for (int& v : m.arch.convChannels) v = detail::get<std::int32_t>(is);
  for (int& v : m.arch.convKernels) v = detail::get<std::int32_t>(is);
  m.arch.convPad = detail::get<std::int32_t>(is);
  for (int& v : m.arch.poolKernels) v = detail::get<std::int32_t>(is);
  for (int& v : m.arch.fcWidths) v = detail::get<std::int32_t>(is);
  m.rel.kind = static_cast<RelationKind>(detail::get<std::uint8_t>(is));
  for (int& v : m.rel.mlpWidths) v = detail::get<std::int32_t>(is);
  m.freeze.convFrozen = detail::get<std::uint8_t>(is) != 0;
  m.freeze.fcFrozen = detail::get<std::uint8_t>(is) != 0;
  m.freeze.relationFrozen = detail::get<std::uint8_t>(is) != 0;
  m.freeze.convRemoved = detail::get<std::uint8_t>(is) != 0;
  const auto nEntries = detail::get<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < nEntries; ++i) {
    const auto nameLen = detail::get<std::uint32_t>(is);
    std::string name(nameLen, '\0');
    is.read(name.data(), nameLen);
    const auto group = static_cast<ParamGroup>(detail::get<std::uint8_t>(is));
    const auto ndim = detail::get<std::uint32_t>(is);
    std::vector<int> shape(ndim);
    for (auto& d : shape) d = detail::get<std::int32_t>(is);
    Tensor<S> t(shape);
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(sizeof(S) * static_cast<std::size_t>(t.size())));
    if (!is) throw model_error("load_model: truncated tensor data");
    m.params.add(std::move(name), group, std::move(t));
  }
  m.params.set_frozen(ParamGroup::Conv, m.freeze.convFrozen);
  m.params.set_frozen(ParamGroup::Fc, m.freeze.fcFrozen);
  m.params.set_frozen(ParamGroup::Relation, m.freeze.relationFrozen);
  m.opt = OptState<S>::template init_like<ParamSet<S>>(m.params);
  return m;
}

template <class S>
inline void save_model_file(const ModelState<S>& m, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw model_error("save_model: cannot open " + path);
  save_model(m, os);
}

template <class S = double>
inline ModelState<S> load_model_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw model_error("load_model: cannot open " + path);
  return load_model<S>(is);
}

}  // namespace seqr

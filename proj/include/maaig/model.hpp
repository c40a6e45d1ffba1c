#pragma once

// Motion-conditioned encoder-decoder. Frames are flattened joint-major
// (j0.x, j0.y, j0.z, j1.x, ...) into 66 values, projected to d_model and run
// through a bidirectional transformer encoder; a causal decoder with
// cross-attention predicts instruction tokens.
//
// Two positional/normalization variants share one contract:
//   Transformer: sinusoidal absolute positions, post-layer LayerNorm, biased
//                attention projections.
//   T5Style:     bucketed relative-position bias (one table per stack shared
//                across its layers), pre-layer RMSNorm with a final norm, no
//                attention projection biases.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "maaig/autodiff.hpp"
#include "maaig/random.hpp"
#include "maaig/skeleton.hpp"
#include "maaig/tokenizer.hpp"

namespace maaig {

using ad::Matrix;

enum class Arch { Transformer, T5Style };

inline std::string_view to_string(Arch a) { return a == Arch::Transformer ? "transformer" : "t5"; }

inline Arch arch_from_string(std::string_view s) {
  if (s == "transformer") return Arch::Transformer;
  if (s == "t5" || s == "t5style") return Arch::T5Style;
  throw std::invalid_argument("unknown architecture '" + std::string(s) + "'");
}

struct ModelConfig {
  int d_model = 64;
  int n_layers_enc = 2;
  int n_layers_dec = 2;
  int n_heads = 4;
  int d_ff = 128;
  int max_frames = 64;
  int max_tokens = 32;
  int vocab_size = 0;
  double dropout = 0.1;
  Arch arch = Arch::T5Style;
  int rel_buckets = 32;
  int rel_max_distance = 128;

  static ModelConfig desk(int vocab_size, Arch arch = Arch::T5Style) {
    ModelConfig c;
    c.vocab_size = vocab_size;
    c.arch = arch;
    return c;
  }

  static ModelConfig full_scale(int vocab_size, Arch arch = Arch::T5Style) {
    ModelConfig c;
    c.d_model = 512;
    c.n_layers_enc = c.n_layers_dec = 6;
    c.n_heads = 8;
    c.d_ff = 2048;
    c.max_frames = 196;
    c.vocab_size = vocab_size;
    c.arch = arch;
    return c;
  }

  void check() const {
    if (d_model < 1 || n_layers_enc < 1 || n_layers_dec < 1 || n_heads < 1 || d_ff < 1 ||
        max_frames < 1 || max_tokens < 1 || vocab_size < 1 || rel_buckets < 2 || rel_max_distance < 2) {
      throw std::invalid_argument("model config: all counts must be >= 1");
    }
    if (d_model % n_heads != 0) throw std::invalid_argument("model config: d_model must be divisible by n_heads");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("model config: dropout must be in [0, 1)");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class InitKind { Weight, Bias, NormScale, Embedding, Zero };

struct TensorSpec {
  std::string name;
  int rows = 0;
  int cols = 0;
  InitKind init = InitKind::Weight;
  int fan_in = 1;
};

// Tensor list in a fixed order that depends only on the config.
inline std::vector<TensorSpec> tensor_specs(const ModelConfig& c) {
  const bool t5 = c.arch == Arch::T5Style;
  const int d = c.d_model;
  std::vector<TensorSpec> s;
  auto weight = [&](std::string n, int r, int k) { s.push_back({std::move(n), r, k, InitKind::Weight, r}); };
  auto bias = [&](std::string n, int k) { s.push_back({std::move(n), 1, k, InitKind::Bias, 1}); };
  auto norm = [&](const std::string& n) {
    s.push_back({n + ".scale", 1, d, InitKind::NormScale, 1});
    if (!t5) s.push_back({n + ".shift", 1, d, InitKind::Bias, 1});
  };
  auto attn = [&](const std::string& n) {
    for (const char* p : {".q", ".k", ".v", ".o"}) {
      weight(n + p + ".weight", d, d);
      if (!t5) bias(n + p + ".bias", d);
    }
  };
  auto ff = [&](const std::string& n) {
    weight(n + ".in.weight", d, c.d_ff);
    bias(n + ".in.bias", c.d_ff);
    weight(n + ".out.weight", c.d_ff, d);
    bias(n + ".out.bias", d);
  };

  weight("frame_proj.weight", static_cast<int>(kFrameDim), d);
  bias("frame_proj.bias", d);
  s.push_back({"token_embed", c.vocab_size, d, InitKind::Embedding, d});
  if (t5) {
    s.push_back({"enc.rel_bias", c.rel_buckets, c.n_heads, InitKind::Zero, 1});
    s.push_back({"dec.rel_bias", c.rel_buckets, c.n_heads, InitKind::Zero, 1});
  }
  for (int l = 0; l < c.n_layers_enc; ++l) {
    const std::string p = "enc." + std::to_string(l);
    attn(p + ".self_attn");
    norm(p + ".norm1");
    ff(p + ".ff");
    norm(p + ".norm2");
  }
  if (t5) norm("enc.final_norm");
  for (int l = 0; l < c.n_layers_dec; ++l) {
    const std::string p = "dec." + std::to_string(l);
    attn(p + ".self_attn");
    norm(p + ".norm1");
    attn(p + ".cross_attn");
    norm(p + ".norm2");
    ff(p + ".ff");
    norm(p + ".norm3");
  }
  if (t5) norm("dec.final_norm");
  weight("out_proj.weight", d, c.vocab_size);
  bias("out_proj.bias", c.vocab_size);
  return s;
}

struct NamedTensor {
  std::string name;
  Matrix value;
};

struct ModelParameters {
  ModelConfig config;
  std::vector<NamedTensor> tensors;

  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter tensor named '" + name + "'");
    return it->second;
  }
  const Matrix& at(const std::string& name) const { return tensors[index_of(name)].value; }
  Matrix& at(const std::string& name) { return tensors[index_of(name)].value; }
  bool contains(const std::string& name) const { return index_.contains(name); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += static_cast<std::size_t>(t.value.size());
    return n;
  }

  bool all_finite() const {
    return std::all_of(tensors.begin(), tensors.end(), [](const auto& t) { return t.value.allFinite(); });
  }

  void reindex() {
    index_.clear();
    for (std::size_t i = 0; i < tensors.size(); ++i) index_[tensors[i].name] = i;
  }

  // Checks names and shapes against tensor_specs(config).
  void check_layout() const {
    config.check();
    const auto specs = tensor_specs(config);
    if (specs.size() != tensors.size()) throw std::invalid_argument("parameter layout: tensor count mismatch");
    for (std::size_t i = 0; i < specs.size(); ++i) {
      const auto& t = tensors[i];
      if (t.name != specs[i].name || t.value.rows() != specs[i].rows || t.value.cols() != specs[i].cols) {
        throw std::invalid_argument("parameter layout: tensor '" + t.name + "' does not match the config");
      }
    }
  }

  friend bool operator==(const ModelParameters& a, const ModelParameters& b) {
    if (!(a.config == b.config) || a.tensors.size() != b.tensors.size()) return false;
    for (std::size_t i = 0; i < a.tensors.size(); ++i) {
      if (a.tensors[i].name != b.tensors[i].name) return false;
      const auto& x = a.tensors[i].value;
      const auto& y = b.tensors[i].value;
      if (x.rows() != y.rows() || x.cols() != y.cols()) return false;
      if (!std::equal(x.data(), x.data() + x.size(), y.data())) return false;
    }
    return true;
  }

 private:
  std::map<std::string, std::size_t> index_;
};

using Gradients = std::vector<Matrix>;

inline Gradients zero_gradients(const ModelParameters& p) {
  Gradients g;
  g.reserve(p.tensors.size());
  for (const auto& t : p.tensors) g.push_back(Matrix::Zero(t.value.rows(), t.value.cols()));
  return g;
}

// Weights ~ N(0, 1/fan_in); embeddings ~ N(0, 1/d_model); norm scales 1;
// biases and relative-position tables 0.
inline ModelParameters init_params(const ModelConfig& config, std::uint64_t seed) {
  config.check();
  ModelParameters p;
  p.config = config;
  Rng rng(seed);
  for (const auto& spec : tensor_specs(config)) {
    Matrix m(spec.rows, spec.cols);
    switch (spec.init) {
      case InitKind::Weight:
      case InitKind::Embedding: {
        const double sd = 1.0 / std::sqrt(static_cast<double>(spec.fan_in));
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = sd * rng.normal();
        break;
      }
      case InitKind::NormScale: m.setOnes(); break;
      case InitKind::Bias:
      case InitKind::Zero: m.setZero(); break;
    }
    p.tensors.push_back({spec.name, std::move(m)});
  }
  p.reindex();
  return p;
}

// ---- input preparation -----------------------------------------------------

// Indices round(i * (n - 1) / (m - 1)), halves rounded up, for i in [0, m).
inline std::vector<std::size_t> subsample_indices(std::size_t n, std::size_t m) {
  std::vector<std::size_t> idx;
  if (n <= m) {
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return idx;
  }
  if (m == 1) return {0};
  idx.reserve(m);
  for (std::size_t i = 0; i < m; ++i) idx.push_back((2 * i * (n - 1) + (m - 1)) / (2 * (m - 1)));
  return idx;
}

inline Matrix flatten_frames(const MotionClip& clip, int max_frames) {
  const auto idx = subsample_indices(clip.frames.size(), static_cast<std::size_t>(max_frames));
  Matrix x(static_cast<Eigen::Index>(idx.size()), static_cast<Eigen::Index>(kFrameDim));
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto& joints = clip.frames[idx[r]].joints;
    for (std::size_t j = 0; j < kNumJoints; ++j) {
      x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(3 * j)) = joints[j].x;
      x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(3 * j + 1)) = joints[j].y;
      x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(3 * j + 2)) = joints[j].z;
    }
  }
  return x;
}

inline Matrix sinusoidal_positions(int length, int d) {
  Matrix pe(length, d);
  for (int pos = 0; pos < length; ++pos) {
    for (int i = 0; i < d; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / d);
      pe(pos, i) = std::sin(pos * freq);
      if (i + 1 < d) pe(pos, i + 1) = std::cos(pos * freq);
    }
  }
  return pe;
}

// T5 bucketing of relative position (key - query).
inline int relative_bucket(int relative_position, bool bidirectional, int num_buckets, int max_distance) {
  int ret = 0;
  int n = -relative_position;
  if (bidirectional) {
    num_buckets /= 2;
    if (n < 0) ret += num_buckets;
    n = std::abs(n);
  } else {
    n = std::max(n, 0);
  }
  const int max_exact = num_buckets / 2;
  if (n < max_exact) return ret + n;
  const int large = max_exact + static_cast<int>(std::log(static_cast<double>(n) / max_exact) /
                                                 std::log(static_cast<double>(max_distance) / max_exact) *
                                                 (num_buckets - max_exact));
  return ret + std::min(large, num_buckets - 1);
}

inline ad::IndexMatrix bucket_matrix(int n, int m, bool bidirectional, const ModelConfig& c) {
  ad::IndexMatrix b(n, m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) b(i, j) = relative_bucket(j - i, bidirectional, c.rel_buckets, c.rel_max_distance);
  return b;
}

// One training/evaluation row: frames already subsampled, tokens BOS..EOS.
struct EncodedExample {
  Matrix frames;
  std::vector<TokenId> tokens;
};

// Motion padded to the batch's longest clip, text padded with PAD.
struct Batch {
  std::vector<Matrix> frames;
  std::vector<int> frame_lens;
  std::vector<std::vector<TokenId>> tokens;
  std::size_t rows() const { return frames.size(); }
};

inline Batch collate(std::span<const EncodedExample* const> rows) {
  Batch b;
  Eigen::Index max_f = 0;
  std::size_t max_t = 0;
  for (const auto* r : rows) {
    max_f = std::max(max_f, r->frames.rows());
    max_t = std::max(max_t, r->tokens.size());
  }
  for (const auto* r : rows) {
    Matrix f = Matrix::Zero(max_f, static_cast<Eigen::Index>(kFrameDim));
    f.topRows(r->frames.rows()) = r->frames;
    b.frames.push_back(std::move(f));
    b.frame_lens.push_back(static_cast<int>(r->frames.rows()));
    auto t = r->tokens;
    t.resize(max_t, special::kPad);
    b.tokens.push_back(std::move(t));
  }
  return b;
}

// ---- forward graph ---------------------------------------------------------

class ModelGraph {
 public:
  // `grads` may be null (no gradient sinks). `dropout_rng` null disables dropout.
  ModelGraph(ad::Tape& tape, const ModelParameters& params, Gradients* grads, Rng* dropout_rng = nullptr)
      : tape_(tape), P_(params), cfg_(params.config), grads_(grads), rng_(dropout_rng),
        bound_(params.tensors.size()) {}

  ad::Var param(const std::string& name) {
    const std::size_t i = P_.index_of(name);
    if (!bound_[i].valid()) {
      bound_[i] = tape_.parameter(P_.tensors[i].value, grads_ ? &(*grads_)[i] : nullptr);
    }
    return bound_[i];
  }

  ad::Var embed_frames(const Matrix& frames) {
    return tape_.linear(tape_.constant(frames), param("frame_proj.weight"), param("frame_proj.bias"));
  }

  // Encoder over `frames` (F x 66) of which the first `valid` rows are real.
  ad::Var encode(const Matrix& frames, int valid) {
    const int F = static_cast<int>(frames.rows());
    ad::Var x = embed_frames(frames);
    if (!t5()) x = tape_.add(x, tape_.constant(sinusoidal_positions(F, cfg_.d_model)));
    x = dropout(x);

    std::optional<Matrix> mask;
    if (valid < F) {
      mask = Matrix::Zero(F, F);
      mask->rightCols(F - valid).setConstant(ad::kNegInf);
    }
    ad::Var bias;
    if (t5()) bias = tape_.gather_bias(param("enc.rel_bias"), bucket_matrix(F, F, true, cfg_));

    for (int l = 0; l < cfg_.n_layers_enc; ++l) {
      const std::string p = "enc." + std::to_string(l);
      if (t5()) {
        ad::Var h = norm(p + ".norm1", x);
        x = tape_.add(x, dropout(attention_block(p + ".self_attn", h, h, mask ? &*mask : nullptr, bias)));
        h = norm(p + ".norm2", x);
        x = tape_.add(x, dropout(feed_forward(p + ".ff", h)));
      } else {
        ad::Var a = attention_block(p + ".self_attn", x, x, mask ? &*mask : nullptr, {});
        x = norm(p + ".norm1", tape_.add(x, dropout(a)));
        ad::Var f = feed_forward(p + ".ff", x);
        x = norm(p + ".norm2", tape_.add(x, dropout(f)));
      }
    }
    if (t5()) x = dropout(norm("enc.final_norm", x));
    return x;
  }

  // Decoder logits (T x V) for `inputs` attending to `memory` whose first
  // `memory_valid` rows are real.
  ad::Var decode(ad::Var memory, int memory_valid, const std::vector<TokenId>& inputs) {
    const int T = static_cast<int>(inputs.size());
    const int M = static_cast<int>(tape_.value(memory).rows());
    ad::Var y = tape_.embedding(param("token_embed"), std::vector<int>(inputs.begin(), inputs.end()));
    if (!t5()) {
      y = tape_.scale(y, std::sqrt(static_cast<double>(cfg_.d_model)));
      y = tape_.add(y, tape_.constant(sinusoidal_positions(T, cfg_.d_model)));
    }
    y = dropout(y);

    Matrix causal = Matrix::Zero(T, T);
    for (int i = 0; i < T; ++i)
      for (int j = i + 1; j < T; ++j) causal(i, j) = ad::kNegInf;
    std::optional<Matrix> cross_mask;
    if (memory_valid < M) {
      cross_mask = Matrix::Zero(T, M);
      cross_mask->rightCols(M - memory_valid).setConstant(ad::kNegInf);
    }
    const Matrix* cm = cross_mask ? &*cross_mask : nullptr;
    ad::Var bias;
    if (t5()) bias = tape_.gather_bias(param("dec.rel_bias"), bucket_matrix(T, T, false, cfg_));

    for (int l = 0; l < cfg_.n_layers_dec; ++l) {
      const std::string p = "dec." + std::to_string(l);
      if (t5()) {
        ad::Var h = norm(p + ".norm1", y);
        y = tape_.add(y, dropout(attention_block(p + ".self_attn", h, h, &causal, bias)));
        h = norm(p + ".norm2", y);
        y = tape_.add(y, dropout(attention_block(p + ".cross_attn", h, memory, cm, {})));
        h = norm(p + ".norm3", y);
        y = tape_.add(y, dropout(feed_forward(p + ".ff", h)));
      } else {
        ad::Var a = attention_block(p + ".self_attn", y, y, &causal, {});
        y = norm(p + ".norm1", tape_.add(y, dropout(a)));
        ad::Var c = attention_block(p + ".cross_attn", y, memory, cm, {});
        y = norm(p + ".norm2", tape_.add(y, dropout(c)));
        ad::Var f = feed_forward(p + ".ff", y);
        y = norm(p + ".norm3", tape_.add(y, dropout(f)));
      }
    }
    if (t5()) y = dropout(norm("dec.final_norm", y));
    return tape_.linear(y, param("out_proj.weight"), param("out_proj.bias"));
  }

  ad::Tape& tape() { return tape_; }

 private:
  bool t5() const { return cfg_.arch == Arch::T5Style; }

  ad::Var maybe(const std::string& name) { return P_.contains(name) ? param(name) : ad::Var{}; }

  ad::Var norm(const std::string& name, ad::Var x) {
    if (t5()) return tape_.rms_norm(x, param(name + ".scale"));
    return tape_.layer_norm(x, param(name + ".scale"), param(name + ".shift"));
  }

  ad::Var attention_block(const std::string& p, ad::Var xq, ad::Var xkv, const Matrix* mask, ad::Var bias) {
    ad::Var q = tape_.linear(xq, param(p + ".q.weight"), maybe(p + ".q.bias"));
    ad::Var k = tape_.linear(xkv, param(p + ".k.weight"), maybe(p + ".k.bias"));
    ad::Var v = tape_.linear(xkv, param(p + ".v.weight"), maybe(p + ".v.bias"));
    ad::Var o = tape_.attention(q, k, v, cfg_.n_heads, mask, bias);
    return tape_.linear(o, param(p + ".o.weight"), maybe(p + ".o.bias"));
  }

  ad::Var feed_forward(const std::string& p, ad::Var x) {
    ad::Var h = tape_.relu(tape_.linear(x, param(p + ".in.weight"), param(p + ".in.bias")));
    return tape_.linear(h, param(p + ".out.weight"), param(p + ".out.bias"));
  }

  ad::Var dropout(ad::Var x) {
    if (!rng_ || cfg_.dropout <= 0.0) return x;
    const Matrix& v = tape_.value(x);
    const double keep = 1.0 - cfg_.dropout;
    Matrix mask(v.rows(), v.cols());
    for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng_->uniform() < keep ? 1.0 / keep : 0.0;
    return tape_.mul_const(x, std::move(mask));
  }

  ad::Tape& tape_;
  const ModelParameters& P_;
  const ModelConfig& cfg_;
  Gradients* grads_;
  Rng* rng_;
  std::vector<ad::Var> bound_;
};

// ---- operations ------------------------------------------------------------

inline Matrix embed_motion(const ModelParameters& params, const MotionClip& clip) {
  require_valid(clip);
  ad::Tape tape(false);
  ModelGraph g(tape, params, nullptr);
  return tape.value(g.embed_frames(flatten_frames(clip, params.config.max_frames)));
}

inline EncodedExample encode_example(const ModelConfig& cfg, const MotionClip& clip, const TokenSequence& target) {
  require_valid(clip);
  const auto& ids = target.ids;
  std::size_t len = ids.size();
  while (len > 0 && ids[len - 1] == special::kPad) --len;
  if (len < 2 || ids.front() != special::kBos || ids[len - 1] != special::kEos) {
    throw std::invalid_argument("target must begin with BOS and end with EOS");
  }
  if (static_cast<int>(ids.size()) - 1 > cfg.max_tokens) {
    throw std::length_error("target of " + std::to_string(ids.size()) + " tokens exceeds max_tokens + 1 = " +
                            std::to_string(cfg.max_tokens + 1));
  }
  for (TokenId t : ids) {
    if (t < 0 || t >= cfg.vocab_size) throw std::out_of_range("target token outside the vocabulary");
  }
  return {flatten_frames(clip, cfg.max_frames), ids};
}

// Sum of per-row cross-entropies divided by the batch's non-PAD label count.
inline ad::Var batch_loss(ModelGraph& g, const Batch& batch) {
  std::size_t labels = 0;
  for (const auto& t : batch.tokens)
    labels += static_cast<std::size_t>(std::count_if(t.begin() + 1, t.end(), [](TokenId x) { return x != special::kPad; }));
  if (labels == 0) throw std::invalid_argument("batch has no target tokens");
  const double w = 1.0 / static_cast<double>(labels);
  ad::Var total;
  for (std::size_t r = 0; r < batch.rows(); ++r) {
    const auto& tok = batch.tokens[r];
    std::vector<TokenId> in(tok.begin(), tok.end() - 1);
    std::vector<int> out(tok.begin() + 1, tok.end());
    ad::Var mem = g.encode(batch.frames[r], batch.frame_lens[r]);
    ad::Var logits = g.decode(mem, batch.frame_lens[r], in);
    ad::Var ce = g.tape().cross_entropy(logits, std::move(out), special::kPad, w);
    total = total.valid() ? g.tape().add(total, ce) : ce;
  }
  return total;
}

struct LossResult {
  double loss = 0.0;
  Matrix logits;  // (len(target) - 1) x vocab
};

// Teacher-forced loss with no dropout; optional gradient accumulation.
inline LossResult forward_loss(const ModelParameters& params, const MotionClip& clip, const TokenSequence& target,
                               Gradients* grads = nullptr) {
  const EncodedExample ex = encode_example(params.config, clip, target);
  ad::Tape tape(grads != nullptr);
  ModelGraph g(tape, params, grads);
  const EncodedExample* row = &ex;
  const Batch batch = collate(std::span<const EncodedExample* const>(&row, 1));
  ad::Var mem = g.encode(batch.frames[0], batch.frame_lens[0]);
  const auto& tok = batch.tokens[0];
  ad::Var logits = g.decode(mem, batch.frame_lens[0], std::vector<TokenId>(tok.begin(), tok.end() - 1));
  std::vector<int> labels(tok.begin() + 1, tok.end());
  const auto n = std::count_if(labels.begin(), labels.end(), [](int t) { return t != special::kPad; });
  ad::Var loss = tape.cross_entropy(logits, labels, special::kPad, 1.0 / static_cast<double>(n));
  if (grads) tape.backward(loss);
  return {tape.scalar(loss), tape.value(logits)};
}

inline TokenId argmax_lowest(const Eigen::Ref<const ad::RowVector>& row) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < row.size(); ++i)
    if (row(i) > row(best)) best = i;
  return static_cast<TokenId>(best);
}

inline ad::RowVector log_softmax_row(const Eigen::Ref<const ad::RowVector>& row) {
  const double mx = row.maxCoeff();
  const double lse = mx + std::log((row.array() - mx).exp().sum());
  return row.array() - lse;
}

// Encoder output for inference (no dropout), kept as a plain matrix.
inline Matrix encode_memory(const ModelParameters& params, const MotionClip& clip) {
  require_valid(clip);
  const Matrix frames = flatten_frames(clip, params.config.max_frames);
  ad::Tape tape(false);
  ModelGraph g(tape, params, nullptr);
  return tape.value(g.encode(frames, static_cast<int>(frames.rows())));
}

// Logits of the last position for a decoder prefix.
inline ad::RowVector next_token_logits(const ModelParameters& params, const Matrix& memory,
                                       const std::vector<TokenId>& prefix) {
  ad::Tape tape(false);
  ModelGraph g(tape, params, nullptr);
  ad::Var mem = tape.constant(memory);
  ad::Var logits = g.decode(mem, static_cast<int>(memory.rows()), prefix);
  return tape.value(logits).bottomRows(1);
}

inline int clamp_decode_len(const ModelConfig& c, int max_tokens) {
  if (max_tokens < 1) throw std::invalid_argument("max_tokens must be >= 1");
  return std::min(max_tokens, c.max_tokens);
}

// Starts at BOS and appends the argmax (lowest id on ties) until EOS or
// max_tokens generated tokens.
inline TokenSequence greedy_decode(const ModelParameters& params, const MotionClip& clip, int max_tokens) {
  const int cap = clamp_decode_len(params.config, max_tokens);
  const Matrix memory = encode_memory(params, clip);
  TokenSequence seq{{special::kBos}};
  for (int step = 0; step < cap; ++step) {
    const TokenId next = argmax_lowest(next_token_logits(params, memory, seq.ids));
    seq.ids.push_back(next);
    if (next == special::kEos) break;
  }
  return seq;
}

// Length-normalized score: sum of token log-probabilities / generated length.
inline double sequence_score(const ModelParameters& params, const MotionClip& clip, const TokenSequence& seq) {
  const Matrix memory = encode_memory(params, clip);
  double lp = 0.0;
  std::vector<TokenId> prefix{seq.ids.front()};
  for (std::size_t i = 1; i < seq.ids.size(); ++i) {
    lp += log_softmax_row(next_token_logits(params, memory, prefix))(seq.ids[i]);
    prefix.push_back(seq.ids[i]);
  }
  return seq.ids.size() > 1 ? lp / static_cast<double>(seq.ids.size() - 1) : 0.0;
}

// Beam search under length-normalized log-probability. Each step expands all
// live hypotheses by every token and keeps the `beam` best candidates (ties:
// earlier hypothesis, then lower token id); candidates ending in EOS retire.
inline TokenSequence beam_decode(const ModelParameters& params, const MotionClip& clip, int beam, int max_tokens) {
  if (beam < 1) throw std::invalid_argument("beam must be >= 1");
  const int cap = clamp_decode_len(params.config, max_tokens);
  const Matrix memory = encode_memory(params, clip);

  struct Hyp {
    std::vector<TokenId> ids;
    double logp = 0.0;
    double score() const { return logp / static_cast<double>(ids.size() - 1); }
  };
  std::vector<Hyp> live{{{special::kBos}, 0.0}};
  std::vector<Hyp> done;
  for (int step = 0; step < cap && !live.empty(); ++step) {
    struct Cand {
      std::size_t hyp;
      TokenId tok;
      double logp;
    };
    std::vector<Cand> cands;
    for (std::size_t h = 0; h < live.size(); ++h) {
      const ad::RowVector lp = log_softmax_row(next_token_logits(params, memory, live[h].ids));
      for (Eigen::Index t = 0; t < lp.size(); ++t)
        cands.push_back({h, static_cast<TokenId>(t), live[h].logp + lp(t)});
    }
    const double len = static_cast<double>(step + 1);
    std::stable_sort(cands.begin(), cands.end(),
                     [len](const Cand& a, const Cand& b) { return a.logp / len > b.logp / len; });
    std::vector<Hyp> next;
    for (std::size_t i = 0; i < cands.size() && i < static_cast<std::size_t>(beam); ++i) {
      Hyp h{live[cands[i].hyp].ids, cands[i].logp};
      h.ids.push_back(cands[i].tok);
      (cands[i].tok == special::kEos ? done : next).push_back(std::move(h));
    }
    live = std::move(next);
  }
  for (auto& h : live) done.push_back(std::move(h));
  const auto best = std::max_element(done.begin(), done.end(),
                                     [](const Hyp& a, const Hyp& b) { return a.score() < b.score(); });
  return {best->ids};
}

}  // namespace maaig

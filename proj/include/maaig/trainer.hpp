#pragma once

// Training: Adam with linear warmup over shuffled padded batches, the
// pretrain -> finetune regime, the six-setting experiment matrix, and a
// finite-difference gradient check.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "maaig/checkpoint.hpp"
#include "maaig/dataset.hpp"
#include "maaig/metrics.hpp"
#include "maaig/model.hpp"
#include "maaig/tokenizer.hpp"

namespace maaig {

enum class Stage { Scratch, Pretrain, Finetune };

inline std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::Scratch: return "scratch";
    case Stage::Pretrain: return "pretrain";
    case Stage::Finetune: return "finetune";
  }
  return "?";
}

inline Stage stage_from_string(std::string_view s) {
  if (s == "scratch") return Stage::Scratch;
  if (s == "pretrain") return Stage::Pretrain;
  if (s == "finetune") return Stage::Finetune;
  throw std::invalid_argument("unknown stage '" + std::string(s) + "'");
}

inline constexpr double kFinetuneLrScale = 0.3;

struct TrainConfig {
  Stage stage = Stage::Scratch;
  Arch arch = Arch::T5Style;
  CoordSystem coord = CoordSystem::Local;
  int steps = 1000;
  int batch_size = 16;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  std::shared_ptr<const Checkpoint> init_from;  // required for Finetune
  ModelConfig model;                             // vocab_size and arch are filled in by train()
  double warmup_fraction = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainReport {
  std::vector<std::pair<int, double>> loss_curve;
  Checkpoint checkpoint;
  double wall_time_s = 0.0;
};

class TrainError : public std::runtime_error {
 public:
  TrainError(const std::string& msg, int step = -1) : std::runtime_error(msg), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  long t = 0;

  explicit AdamState(const ModelParameters& p) {
    for (const auto& x : p.tensors) {
      m.push_back(Matrix::Zero(x.value.rows(), x.value.cols()));
      v.push_back(Matrix::Zero(x.value.rows(), x.value.cols()));
    }
  }
};

inline void adam_step(ModelParameters& params, const Gradients& grads, AdamState& st, double lr, double b1,
                      double b2, double eps) {
  ++st.t;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(st.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(st.t));
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    st.m[i] = b1 * st.m[i] + (1.0 - b1) * grads[i];
    st.v[i] = b2 * st.v[i] + (1.0 - b2) * grads[i].cwiseProduct(grads[i]);
    params.tensors[i].value.array() -=
        lr * (st.m[i].array() / c1) / ((st.v[i].array() / c2).sqrt() + eps);
  }
}

inline double warmup_lr(double lr, int step, int total_steps, double warmup_fraction) {
  const int warm = std::max(1, static_cast<int>(std::lround(warmup_fraction * total_steps)));
  return step >= warm ? lr : lr * static_cast<double>(step) / warm;
}

inline std::vector<EncodedExample> encode_examples(const ModelConfig& cfg, const Vocabulary& vocab,
                                                   std::span<const PairedExample> data) {
  std::vector<EncodedExample> out;
  out.reserve(data.size());
  for (const auto& ex : data) out.push_back(encode_example(cfg, ex.clip, vocab.encode(ex.instruction, true)));
  return out;
}

inline void check_train_inputs(const TrainConfig& config, std::span<const PairedExample> data) {
  if (config.steps < 1) throw std::invalid_argument("train: steps must be >= 1");
  if (config.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (!(config.lr > 0.0)) throw std::invalid_argument("train: lr must be positive");
  if (config.stage == Stage::Finetune && !config.init_from) {
    throw std::invalid_argument("train: finetune stage requires init_from");
  }
  if (data.empty()) throw std::invalid_argument("train: no training examples");
  for (const auto& ex : data) {
    if (ex.split != Split::Train) {
      throw std::invalid_argument("train: refusing test-split example '" + ex.clip.clip_id + "'");
    }
    if (ex.clip.coord != config.coord) {
      throw std::invalid_argument("train: example '" + ex.clip.clip_id + "' is " +
                                  std::string(to_string(ex.clip.coord)) + " but the run expects " +
                                  std::string(to_string(config.coord)));
    }
  }
}

// Deterministic in (config, data, vocab). Finetune continues every tensor of
// init_from, including the frame projection.
inline TrainReport train(const TrainConfig& config, std::span<const PairedExample> data, const Vocabulary& vocab) {
  const auto t0 = std::chrono::steady_clock::now();
  check_train_inputs(config, data);

  ModelParameters params;
  json lineage = json::array();
  if (config.stage == Stage::Finetune) {
    const Checkpoint& init = *config.init_from;
    if (!(init.vocab == vocab)) throw std::invalid_argument("train: vocabulary differs from init_from");
    if (init.params.config.arch != config.arch) throw std::invalid_argument("train: arch differs from init_from");
    params = init.params;
    lineage = init.lineage;
  } else {
    ModelConfig mc = config.model;
    mc.vocab_size = static_cast<int>(vocab.size());
    mc.arch = config.arch;
    params = init_params(mc, config.seed);
  }

  const auto examples = encode_examples(params.config, vocab, data);
  Rng order_rng = Rng::derive(config.seed, 1);
  Rng dropout_rng = Rng::derive(config.seed, 2);
  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = order.size();

  AdamState adam(params);
  TrainReport report;
  report.loss_curve.reserve(static_cast<std::size_t>(config.steps));
  const auto batch_size = std::min<std::size_t>(static_cast<std::size_t>(config.batch_size), examples.size());

  for (int step = 1; step <= config.steps; ++step) {
    std::vector<const EncodedExample*> rows;
    while (rows.size() < batch_size) {
      if (cursor == order.size()) {
        order_rng.shuffle(order);
        cursor = 0;
      }
      rows.push_back(&examples[order[cursor++]]);
    }
    const Batch batch = collate(rows);

    Gradients grads = zero_gradients(params);
    ad::Tape tape;
    ModelGraph graph(tape, params, &grads, &dropout_rng);
    ad::Var loss = batch_loss(graph, batch);
    const double lv = tape.scalar(loss);
    if (!std::isfinite(lv)) throw TrainError("non-finite loss at step " + std::to_string(step), step);
    tape.backward(loss);
    adam_step(params, grads, adam, warmup_lr(config.lr, step, config.steps, config.warmup_fraction), config.beta1,
              config.beta2, config.eps);
    report.loss_curve.emplace_back(step, lv);
  }
  if (!params.all_finite()) throw TrainError("parameters became non-finite", config.steps);

  lineage.push_back({{"stage", std::string(to_string(config.stage))},
                     {"arch", std::string(to_string(config.arch))},
                     {"coord", std::string(to_string(config.coord))},
                     {"steps", config.steps},
                     {"batch_size", config.batch_size},
                     {"lr", config.lr},
                     {"seed", config.seed},
                     {"examples", data.size()}});
  report.checkpoint = Checkpoint{std::move(params), vocab, config.coord, std::move(lineage)};
  report.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

inline TrainReport train(const TrainConfig& config, const DatasetManifest& data, const Vocabulary& vocab) {
  const auto examples = data.select(Split::Train);
  return train(config, std::span<const PairedExample>(examples), vocab);
}

// ---- inference helpers ----------------------------------------------------

// Brings a clip into the coordinate system a checkpoint was trained on.
inline MotionClip to_model_coords(const MotionClip& clip, CoordSystem target) {
  if (clip.coord == target) return clip;
  if (target == CoordSystem::Local) return world_to_local(clip);
  throw std::invalid_argument("cannot recover world coordinates from local clip '" + clip.clip_id + "'");
}

inline std::string generate_text(const Checkpoint& ck, const MotionClip& clip, int max_tokens = -1) {
  const int cap = max_tokens > 0 ? max_tokens : ck.params.config.max_tokens;
  return ck.vocab.decode(greedy_decode(ck.params, to_model_coords(clip, ck.coord), cap));
}

struct Evaluation {
  std::vector<std::string> outputs;
  std::vector<std::string> references;
  metrics::MetricReport report;
};

inline Evaluation evaluate_model(const Checkpoint& ck, std::span<const PairedExample> test) {
  Evaluation ev;
  for (const auto& ex : test) {
    ev.outputs.push_back(generate_text(ck, ex.clip));
    ev.references.push_back(ex.instruction);
  }
  ev.report = metrics::evaluate_corpus(ev.outputs, ev.references);
  return ev;
}

inline std::vector<PairedExample> with_coords(std::vector<PairedExample> data, CoordSystem c) {
  for (auto& ex : data) ex.clip = to_model_coords(ex.clip, c);
  return data;
}

inline Vocabulary corpus_vocab(std::span<const PairedExample> a, std::span<const PairedExample> b = {}) {
  std::vector<std::string> texts;
  for (const auto& ex : a) texts.push_back(ex.instruction);
  for (const auto& ex : b) texts.push_back(ex.instruction);
  return train_vocab(texts, 1);
}

// ---- experiment matrix ----------------------------------------------------

struct MatrixConfig {
  TrainConfig base;          // arch/stage/coord/init_from are set per setting
  int pretrain_steps = 1500;
  int finetune_steps = 600;  // also the from-scratch budget
};

struct MatrixSetting {
  Arch arch;
  std::optional<CoordSystem> pretrain;  // nullopt = from scratch

  std::string model_label() const { return arch == Arch::Transformer ? "Transformer" : "T5"; }
  std::string pretrain_label() const {
    if (!pretrain) return "N/A";
    return *pretrain == CoordSystem::World ? "HumanML3D (world)" : "HumanML3D (local)";
  }
  std::string slug() const {
    return std::string(to_string(arch)) + "_" + (pretrain ? std::string(to_string(*pretrain)) : "scratch");
  }
};

inline std::vector<MatrixSetting> matrix_settings() {
  return {{Arch::Transformer, std::nullopt}, {Arch::Transformer, CoordSystem::World},
          {Arch::Transformer, CoordSystem::Local}, {Arch::T5Style, std::nullopt},
          {Arch::T5Style, CoordSystem::World}, {Arch::T5Style, CoordSystem::Local}};
}

struct MatrixRow {
  MatrixSetting setting;
  TrainReport train;
  Evaluation eval;
};

struct MatrixResult {
  Vocabulary vocab;
  std::vector<MatrixRow> rows;

  std::vector<metrics::TableRow> table() const {
    std::vector<metrics::TableRow> t;
    for (const auto& r : rows) t.push_back({r.setting.model_label(), r.setting.pretrain_label(), r.eval.report});
    return t;
  }
};

// Trains one setting: optional pretraining on the caption corpus in the given
// coordinates, then local-coordinate training on the instruction corpus.
inline MatrixRow run_setting(const MatrixConfig& mc, const MatrixSetting& s, const Vocabulary& vocab,
                             const std::vector<PairedExample>& pretrain_train,
                             const std::vector<PairedExample>& finetune_train,
                             const std::vector<PairedExample>& finetune_test) {
  TrainConfig tc = mc.base;
  tc.arch = s.arch;
  tc.init_from.reset();
  TrainReport final_report;
  if (s.pretrain) {
    TrainConfig pc = tc;
    pc.stage = Stage::Pretrain;
    pc.coord = *s.pretrain;
    pc.steps = mc.pretrain_steps;
    const auto pdata = with_coords(pretrain_train, *s.pretrain);
    TrainReport pre = train(pc, std::span<const PairedExample>(pdata), vocab);

    tc.stage = Stage::Finetune;
    tc.coord = CoordSystem::Local;
    tc.steps = mc.finetune_steps;
    tc.lr = mc.base.lr * kFinetuneLrScale;
    tc.init_from = std::make_shared<const Checkpoint>(std::move(pre.checkpoint));
    final_report = train(tc, std::span<const PairedExample>(finetune_train), vocab);
  } else {
    tc.stage = Stage::Scratch;
    tc.coord = CoordSystem::Local;
    tc.steps = mc.finetune_steps;
    final_report = train(tc, std::span<const PairedExample>(finetune_train), vocab);
  }
  Evaluation ev = evaluate_model(final_report.checkpoint, finetune_test);
  return {s, std::move(final_report), std::move(ev)};
}

struct MatrixData {
  std::vector<PairedExample> pretrain_train;  // as generated (World)
  std::vector<PairedExample> finetune_train;  // Local
  std::vector<PairedExample> finetune_test;   // Local
  Vocabulary vocab;
};

inline MatrixData prepare_matrix_data(const DatasetManifest& pretrain, const DatasetManifest& finetune) {
  MatrixData d;
  d.pretrain_train = pretrain.select(Split::Train);
  d.finetune_train = with_coords(finetune.select(Split::Train), CoordSystem::Local);
  d.finetune_test = with_coords(finetune.select(Split::Test), CoordSystem::Local);
  if (d.pretrain_train.empty() || d.finetune_train.empty() || d.finetune_test.empty()) {
    throw std::invalid_argument("matrix: pretrain train, finetune train and finetune test splits must be non-empty");
  }
  for (const auto& ex : d.pretrain_train) {
    if (ex.clip.coord != CoordSystem::World) {
      throw std::invalid_argument("matrix: pretraining clips must be world-tagged");
    }
  }
  d.vocab = corpus_vocab(d.pretrain_train, d.finetune_train);
  return d;
}

// Optional callback fires after each finished setting (progress reporting).
inline MatrixResult run_matrix(const MatrixConfig& mc, const DatasetManifest& pretrain,
                               const DatasetManifest& finetune,
                               const std::function<void(const MatrixRow&)>& on_row = {}) {
  const MatrixData d = prepare_matrix_data(pretrain, finetune);
  MatrixResult result;
  result.vocab = d.vocab;
  for (const auto& s : matrix_settings()) {
    result.rows.push_back(run_setting(mc, s, d.vocab, d.pretrain_train, d.finetune_train, d.finetune_test));
    if (on_row) on_row(result.rows.back());
  }
  return result;
}

inline json train_report_to_json(const TrainReport& r) {
  json curve = json::array();
  for (const auto& [s, l] : r.loss_curve) curve.push_back({s, l});
  return {{"loss_curve", curve}, {"wall_time_s", r.wall_time_s}, {"lineage", r.checkpoint.lineage}};
}

// Writes <dir>/<slug>/{checkpoint.json, report.json} per setting plus
// <dir>/table.json and <dir>/table.txt.
inline void save_matrix(const std::filesystem::path& dir, const MatrixResult& result) {
  json table = json::array();
  for (const auto& row : result.rows) {
    const auto sub = dir / row.setting.slug();
    save_checkpoint(sub / "checkpoint.json", row.train.checkpoint);
    json rep = {{"model", row.setting.model_label()},
                {"pretrain", row.setting.pretrain_label()},
                {"metrics", metrics::report_to_json(row.eval.report)},
                {"train", train_report_to_json(row.train)},
                {"outputs", row.eval.outputs},
                {"references", row.eval.references}};
    write_text_file(sub / "report.json", rep.dump(2) + "\n");
    table.push_back({{"model", row.setting.model_label()},
                     {"pretrain", row.setting.pretrain_label()},
                     {"metrics", metrics::report_to_json(row.eval.report)}});
  }
  write_text_file(dir / "table.json", table.dump(2) + "\n");
  write_text_file(dir / "table.txt", metrics::format_table(result.table()));
}

// ---- gradient check -------------------------------------------------------

inline constexpr double kGradCheckFloor = 1e-6;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::vector<std::pair<std::string, double>> per_tensor;  // every tensor is listed
};

inline ModelConfig tiny_config(Arch arch) {
  ModelConfig c;
  c.d_model = 8;
  c.n_layers_enc = c.n_layers_dec = 1;
  c.n_heads = 2;
  c.d_ff = 16;
  c.max_frames = 8;
  c.max_tokens = 8;
  c.vocab_size = 11;
  c.dropout = 0.0;
  c.arch = arch;
  c.rel_buckets = 8;
  c.rel_max_distance = 16;
  return c;
}

// Two rows of different length so that frame and token padding are exercised.
inline Batch grad_check_batch(const ModelConfig& c, std::uint64_t seed) {
  Rng rng = Rng::derive(seed, 99);
  std::vector<EncodedExample> rows(2);
  const int frames[2] = {std::min(5, c.max_frames), std::min(3, c.max_frames)};
  const int lens[2] = {std::min(6, c.max_tokens + 1), std::min(4, c.max_tokens + 1)};
  for (int r = 0; r < 2; ++r) {
    rows[r].frames = Matrix(frames[r], static_cast<Eigen::Index>(kFrameDim));
    for (Eigen::Index i = 0; i < rows[r].frames.size(); ++i) rows[r].frames.data()[i] = rng.uniform(-1.0, 1.0);
    rows[r].tokens.push_back(special::kBos);
    for (int t = 1; t < lens[r] - 1; ++t)
      rows[r].tokens.push_back(static_cast<TokenId>(special::kSep + rng.below(static_cast<std::uint64_t>(c.vocab_size - special::kSep))));
    rows[r].tokens.push_back(special::kEos);
  }
  const EncodedExample* ptrs[2] = {&rows[0], &rows[1]};
  return collate(std::span<const EncodedExample* const>(ptrs, 2));
}

inline double batch_loss_value(const ModelParameters& p, const Batch& b, Gradients* grads) {
  ad::Tape tape(grads != nullptr);
  ModelGraph g(tape, p, grads);
  ad::Var loss = batch_loss(g, b);
  if (grads) tape.backward(loss);
  return tape.scalar(loss);
}

// Compares analytic gradients with central differences over every element
// of every tensor. Per-tensor error is ||a - n|| / max(||a|| + ||n||, 1e-6);
// the floor matters for attention key biases, whose true gradient is zero
// (softmax ignores a per-row constant) and where both sides are round-off.
// The result is the maximum over tensors. Parameters are jittered away from
// their structured initial values first.
inline GradCheckResult grad_check(ModelConfig config, std::uint64_t seed, double step = 1e-4) {
  config.dropout = 0.0;
  ModelParameters p = init_params(config, seed);
  if (p.parameter_count() > 5000) throw std::invalid_argument("grad_check: config too large");
  Rng rng = Rng::derive(seed, 7);
  for (auto& t : p.tensors)
    for (Eigen::Index i = 0; i < t.value.size(); ++i) t.value.data()[i] += 0.1 * rng.normal();
  const Batch batch = grad_check_batch(config, seed);

  Gradients analytic = zero_gradients(p);
  batch_loss_value(p, batch, &analytic);

  GradCheckResult res;
  for (std::size_t k = 0; k < p.tensors.size(); ++k) {
    Matrix& w = p.tensors[k].value;
    Matrix numeric(w.rows(), w.cols());
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      const double orig = w.data()[i];
      w.data()[i] = orig + step;
      const double up = batch_loss_value(p, batch, nullptr);
      w.data()[i] = orig - step;
      const double down = batch_loss_value(p, batch, nullptr);
      w.data()[i] = orig;
      numeric.data()[i] = (up - down) / (2.0 * step);
    }
    const double denom = std::max(analytic[k].norm() + numeric.norm(), kGradCheckFloor);
    const double err = (analytic[k] - numeric).norm() / denom;
    res.per_tensor.emplace_back(p.tensors[k].name, err);
    res.max_relative_error = std::max(res.max_relative_error, err);
  }
  return res;
}

}  // namespace maaig

#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "support.hpp"

using namespace maaig;
using maaig::testing::TempDir;

namespace {

ModelConfig small_model() {
  ModelConfig c;
  c.d_model = 16;
  c.n_layers_enc = c.n_layers_dec = 1;
  c.n_heads = 2;
  c.d_ff = 32;
  c.max_frames = 16;
  c.max_tokens = 24;
  c.dropout = 0.1;
  return c;
}

std::vector<PairedExample> local_train(std::size_t n, std::uint64_t seed) {
  auto all = synth::gen_corpus(synth::CorpusKind::Finetune, n, seed);
  for (auto& e : all) e.split = Split::Train;
  return with_coords(std::move(all), CoordSystem::Local);
}

TrainConfig quick(Arch arch, int steps = 4) {
  TrainConfig tc;
  tc.arch = arch;
  tc.steps = steps;
  tc.batch_size = 4;
  tc.lr = 3e-3;
  tc.seed = 11;
  tc.model = small_model();
  return tc;
}

}  // namespace

TEST(Warmup, LinearRampThenFlat) {
  // 10% of 50 steps = 5 warmup steps
  for (int s = 1; s <= 50; ++s) {
    const double expect = s < 5 ? 0.01 * s / 5.0 : 0.01;
    EXPECT_DOUBLE_EQ(warmup_lr(0.01, s, 50, 0.1), expect) << s;
  }
  EXPECT_DOUBLE_EQ(warmup_lr(0.01, 1, 3, 0.1), 0.01);
}

TEST(Adam, MatchesScalarRecurrence) {
  ModelParameters p;
  p.tensors.push_back({"w", Matrix::Constant(1, 2, 0.5)});
  p.reindex();
  AdamState st(p);
  double w = 0.5, m = 0.0, v = 0.0;
  const double grads[] = {0.3, -1.2, 0.05, 2.0};
  for (int t = 1; t <= 4; ++t) {
    const double g = grads[t - 1];
    adam_step(p, {Matrix::Constant(1, 2, g)}, st, 0.01, 0.9, 0.999, 1e-8);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
    w -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
    EXPECT_NEAR(p.at("w")(0, 1), w, 1e-15) << t;
  }
  // first step moves every weight by lr * sign(g)
  ModelParameters q = p;
  AdamState s2(q);
  const double before = q.at("w")(0, 0);
  adam_step(q, {Matrix::Constant(1, 2, -7.0)}, s2, 0.01, 0.9, 0.999, 1e-8);
  EXPECT_NEAR(q.at("w")(0, 0) - before, 0.01, 1e-9);
}

TEST(Train, RejectsBadInputs) {
  auto data = local_train(6, 1);
  const auto vocab = corpus_vocab(data);
  auto tc = quick(Arch::Transformer);
  tc.stage = Stage::Finetune;
  EXPECT_THROW(train(tc, std::span<const PairedExample>(data), vocab), std::invalid_argument);

  tc = quick(Arch::Transformer);
  auto with_test = data;
  with_test[2].split = Split::Test;
  EXPECT_THROW(train(tc, std::span<const PairedExample>(with_test), vocab), std::invalid_argument);

  tc.coord = CoordSystem::World;
  EXPECT_THROW(train(tc, std::span<const PairedExample>(data), vocab), std::invalid_argument);

  tc = quick(Arch::Transformer);
  tc.steps = 0;
  EXPECT_THROW(train(tc, std::span<const PairedExample>(data), vocab), std::invalid_argument);
  EXPECT_THROW(train(quick(Arch::Transformer), std::span<const PairedExample>(), vocab), std::invalid_argument);
}

TEST(Train, ManifestOverloadUsesTrainSplitOnly) {
  DatasetManifest m;
  m.examples = local_train(8, 2);
  m.examples[0].split = Split::Test;
  const auto vocab = corpus_vocab(m.examples);
  const auto r = train(quick(Arch::T5Style, 2), m, vocab);
  EXPECT_EQ(r.loss_curve.size(), 2u);
}

TEST(Train, BitwiseDeterministic) {
  const auto data = local_train(10, 3);
  const auto vocab = corpus_vocab(data);
  for (Arch a : {Arch::Transformer, Arch::T5Style}) {
    const auto r1 = train(quick(a), std::span<const PairedExample>(data), vocab);
    const auto r2 = train(quick(a), std::span<const PairedExample>(data), vocab);
    EXPECT_EQ(r1.loss_curve, r2.loss_curve);
    EXPECT_TRUE(r1.checkpoint.params == r2.checkpoint.params);
    auto other = quick(a);
    other.seed = 12;
    EXPECT_NE(train(other, std::span<const PairedExample>(data), vocab).loss_curve, r1.loss_curve);
    ASSERT_EQ(r1.loss_curve.size(), 4u);
    EXPECT_EQ(r1.loss_curve.front().first, 1);
    for (const auto& [s, l] : r1.loss_curve) EXPECT_TRUE(std::isfinite(l) && l > 0) << s;
  }
}

TEST(Train, FinetuneContinuesFromInit) {
  const auto data = local_train(8, 4);
  const auto vocab = corpus_vocab(data);
  auto pre = quick(Arch::T5Style, 3);
  pre.stage = Stage::Pretrain;
  const auto base = train(pre, std::span<const PairedExample>(data), vocab);
  ASSERT_EQ(base.checkpoint.lineage.size(), 1u);
  EXPECT_EQ(base.checkpoint.lineage[0]["stage"], "pretrain");

  auto ft = quick(Arch::T5Style, 2);
  ft.stage = Stage::Finetune;
  ft.lr = 1e-12;
  ft.init_from = std::make_shared<const Checkpoint>(base.checkpoint);
  const auto out = train(ft, std::span<const PairedExample>(data), vocab);
  ASSERT_EQ(out.checkpoint.lineage.size(), 2u);
  EXPECT_EQ(out.checkpoint.lineage[1]["stage"], "finetune");
  for (std::size_t k = 0; k < out.checkpoint.params.tensors.size(); ++k) {
    const auto& a = out.checkpoint.params.tensors[k].value;
    const auto& b = base.checkpoint.params.tensors[k].value;
    EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-9) << out.checkpoint.params.tensors[k].name;
  }

  ft.arch = Arch::Transformer;
  EXPECT_THROW(train(ft, std::span<const PairedExample>(data), vocab), std::invalid_argument);
  ft.arch = Arch::T5Style;
  const auto other_vocab = train_vocab({"completely different words"}, 1);
  EXPECT_THROW(train(ft, std::span<const PairedExample>(data), other_vocab), std::invalid_argument);
}

TEST(Train, DivergenceIsReported) {
  const auto data = local_train(4, 5);
  const auto vocab = corpus_vocab(data);
  auto tc = quick(Arch::Transformer, 3);
  tc.lr = 1e300;
  tc.warmup_fraction = 0.0;
  try {
    train(tc, std::span<const PairedExample>(data), vocab);
    FAIL() << "expected TrainError";
  } catch (const TrainError& e) {
    EXPECT_GE(e.step(), 2);
  }
}

TEST(Train, OverfitsAFewExamples) {
  const auto data = local_train(4, 6);
  const auto vocab = corpus_vocab(data);
  auto tc = quick(Arch::T5Style, 200);
  tc.model.dropout = 0.0;
  tc.lr = 1e-2;
  const auto r = train(tc, std::span<const PairedExample>(data), vocab);
  EXPECT_LT(r.loss_curve.back().second, 0.25 * r.loss_curve.front().second);
}

TEST(GradCheck, AnalyticMatchesNumericForEveryTensor) {
  for (Arch a : {Arch::Transformer, Arch::T5Style}) {
    const auto res = grad_check(tiny_config(a), 3);
    const auto n = init_params(tiny_config(a), 3).tensors.size();
    EXPECT_EQ(res.per_tensor.size(), n);
    for (const auto& [name, err] : res.per_tensor) EXPECT_LT(err, 1e-4) << to_string(a) << " " << name;
    EXPECT_LT(res.max_relative_error, 1e-4);
  }
}

TEST(GradCheck, CoarseStepIsWorse) {
  const auto fine = grad_check(tiny_config(Arch::Transformer), 4, 1e-4);
  const auto coarse = grad_check(tiny_config(Arch::Transformer), 4, 1e-2);
  EXPECT_GT(coarse.max_relative_error, fine.max_relative_error);
  std::cout << "step 1e-4: " << fine.max_relative_error << "  step 1e-2: " << coarse.max_relative_error << "\n";
}

// A ReLU pre-activation within +-h of zero breaks central differences at
// that element; shrinking h makes it go away, an autodiff bug would not.
TEST(GradCheck, KinkSeedResolvesAtSmallerStep) {
  const auto c = tiny_config(Arch::T5Style);
  EXPECT_GT(grad_check(c, 4, 1e-4).max_relative_error, 1e-4);
  EXPECT_LT(grad_check(c, 4, 1e-5).max_relative_error, 1e-6);
}

TEST(GradCheck, LossIsAPureFunctionOfParams) {
  const auto c = tiny_config(Arch::T5Style);
  const auto p = init_params(c, 5);
  const auto b = grad_check_batch(c, 5);
  Gradients g = zero_gradients(p);
  const double with_grad = batch_loss_value(p, b, &g);
  EXPECT_EQ(with_grad, batch_loss_value(p, b, nullptr));
  EXPECT_EQ(with_grad, batch_loss_value(p, b, nullptr));
}

TEST(Matrix, SettingsAndLabels) {
  const auto s = matrix_settings();
  ASSERT_EQ(s.size(), 6u);
  const std::vector<std::pair<std::string, std::string>> want = {
      {"Transformer", "N/A"}, {"Transformer", "HumanML3D (world)"}, {"Transformer", "HumanML3D (local)"},
      {"T5", "N/A"},          {"T5", "HumanML3D (world)"},          {"T5", "HumanML3D (local)"}};
  std::set<std::string> slugs;
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(s[i].model_label(), want[i].first);
    EXPECT_EQ(s[i].pretrain_label(), want[i].second);
    slugs.insert(s[i].slug());
  }
  EXPECT_EQ(slugs.size(), 6u);
}

TEST(Matrix, TinyRunIsReproducibleAndWritesArtifacts) {
  DatasetManifest pre, fine;
  pre.examples = synth::gen_corpus(synth::CorpusKind::Pretrain, 12, 7);
  fine.examples = synth::gen_corpus(synth::CorpusKind::Finetune, 12, 8);
  MatrixConfig mc;
  mc.base = quick(Arch::T5Style);
  mc.base.model.max_tokens = 32;
  mc.pretrain_steps = 2;
  mc.finetune_steps = 2;
  int seen = 0;
  const auto a = run_matrix(mc, pre, fine, [&](const MatrixRow&) { ++seen; });
  const auto b = run_matrix(mc, pre, fine);
  EXPECT_EQ(seen, 6);
  ASSERT_EQ(a.rows.size(), 6u);
  EXPECT_EQ(metrics::format_table(a.table()), metrics::format_table(b.table()));
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_TRUE(a.rows[i].train.checkpoint.params == b.rows[i].train.checkpoint.params);
    EXPECT_EQ(a.rows[i].eval.outputs, b.rows[i].eval.outputs);
    EXPECT_EQ(a.rows[i].train.checkpoint.coord, CoordSystem::Local);
    EXPECT_EQ(a.rows[i].train.checkpoint.lineage.size(), a.rows[i].setting.pretrain ? 2u : 1u);
  }
  EXPECT_EQ(a.rows[1].train.checkpoint.lineage[0]["coord"], "world");

  TempDir dir;
  save_matrix(dir.path(), a);
  int files = 0;
  for (const auto& s : matrix_settings()) {
    files += std::filesystem::exists(dir / s.slug() / "checkpoint.json");
    files += std::filesystem::exists(dir / s.slug() / "report.json");
  }
  EXPECT_EQ(files, 12);
  EXPECT_TRUE(std::filesystem::exists(dir / "table.txt"));
  const auto table = json::parse(read_text_file(dir / "table.json"));
  EXPECT_EQ(table.size(), 6u);
}

TEST(Evaluate, WorldClipsAreConvertedForLocalCheckpoints) {
  const auto data = local_train(4, 9);
  const auto vocab = corpus_vocab(data);
  const auto r = train(quick(Arch::Transformer, 2), std::span<const PairedExample>(data), vocab);
  const auto world = synth::gen_example(synth::CorpusKind::Finetune, 9, 0).clip;
  EXPECT_EQ(generate_text(r.checkpoint, world), generate_text(r.checkpoint, world_to_local(world)));
  auto test = data;
  for (auto& e : test) e.split = Split::Test;
  const auto ev = evaluate_model(r.checkpoint, test);
  EXPECT_EQ(ev.outputs.size(), 4u);
  EXPECT_EQ(ev.references[0], data[0].instruction);
}

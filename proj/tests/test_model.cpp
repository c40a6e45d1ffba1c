#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"

using namespace maaig;
using maaig::testing::ramp_clip;
using maaig::testing::TempDir;

namespace {

ModelConfig small(Arch arch, int vocab = 12) {
  ModelConfig c;
  c.d_model = 16;
  c.n_layers_enc = c.n_layers_dec = 1;
  c.n_heads = 2;
  c.d_ff = 32;
  c.max_frames = 16;
  c.max_tokens = 8;
  c.vocab_size = vocab;
  c.dropout = 0.0;
  c.arch = arch;
  return c;
}

MotionClip jump_clip(std::uint64_t seed) {
  return synth::gen_example(synth::CorpusKind::Finetune, seed, 0).clip;
}

TokenSequence seq(std::vector<TokenId> ids) { return {std::move(ids)}; }

// Shape-sum oracle written out per component.
std::size_t expected_count(const ModelConfig& c) {
  const std::size_t d = c.d_model, f = c.d_ff, V = c.vocab_size, L = c.n_layers_enc, D = c.n_layers_dec;
  const bool t5 = c.arch == Arch::T5Style;
  const std::size_t attn = t5 ? 4 * d * d : 4 * (d * d + d);
  const std::size_t ffn = d * f + f + f * d + d;
  const std::size_t norm = t5 ? d : 2 * d;
  std::size_t n = 66 * d + d + V * d + d * V + V;
  n += L * (attn + ffn + 2 * norm);
  n += D * (2 * attn + ffn + 3 * norm);
  if (t5) n += 2 * static_cast<std::size_t>(c.rel_buckets * c.n_heads) + 2 * norm;
  return n;
}

class BothArchs : public ::testing::TestWithParam<Arch> {};

}  // namespace

INSTANTIATE_TEST_SUITE_P(Model, BothArchs, ::testing::Values(Arch::Transformer, Arch::T5Style),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(Config, PresetsAndChecks) {
  const auto desk = ModelConfig::desk(64);
  EXPECT_EQ(desk.d_model, 64);
  EXPECT_EQ(desk.n_layers_enc, 2);
  EXPECT_EQ(desk.n_heads, 4);
  EXPECT_EQ(desk.d_ff, 128);
  EXPECT_EQ(ModelConfig::full_scale(64).d_model, 512);
  auto bad = desk;
  bad.n_heads = 3;
  EXPECT_THROW(bad.check(), std::invalid_argument);
  bad = desk;
  bad.dropout = 1.0;
  EXPECT_THROW(bad.check(), std::invalid_argument);
}

TEST(Params, CountMatchesClosedForm) {
  for (Arch a : {Arch::Transformer, Arch::T5Style}) {
    const auto c = ModelConfig::desk(64, a);
    EXPECT_EQ(init_params(c, 0).parameter_count(), expected_count(c)) << to_string(a);
  }
  // d=64, 2+2 layers, 4 heads, d_ff 128, V=64 written out by hand.
  EXPECT_EQ(expected_count(ModelConfig::desk(64, Arch::Transformer)), 4288u + 4096u + 4160u + 2u * 33472u + 2u * 50240u);
}

TEST_P(BothArchs, InitIsDeterministicAndStructured) {
  const auto c = small(GetParam());
  const auto a = init_params(c, 7), b = init_params(c, 7);
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(a == init_params(c, 8));
  for (const auto& t : a.tensors) {
    const bool is_scale = t.name.size() > 6 && t.name.substr(t.name.size() - 6) == ".scale";
    const bool is_zero = t.name.find(".bias") != std::string::npos || t.name.find(".shift") != std::string::npos ||
                         t.name.find("rel_bias") != std::string::npos;
    if (is_scale) {
      EXPECT_TRUE((t.value.array() == 1.0).all()) << t.name;
    }
    if (is_zero) {
      EXPECT_TRUE((t.value.array() == 0.0).all()) << t.name;
    }
  }
  EXPECT_NO_THROW(a.check_layout());
}

TEST(Params, WeightScaleFollowsFanIn) {
  const auto p = init_params(ModelConfig::desk(64), 1);
  const Matrix& w = p.at("enc.0.ff.out.weight");  // fan_in 128
  const double var = w.squaredNorm() / static_cast<double>(w.size());
  EXPECT_NEAR(var, 1.0 / 128.0, 0.1 / 128.0);
}

TEST(Subsample, UniformIndicesIncludeEnds) {
  const auto idx = subsample_indices(300, 128);
  ASSERT_EQ(idx.size(), 128u);
  EXPECT_EQ(idx.front(), 0u);
  EXPECT_EQ(idx.back(), 299u);
  for (std::size_t i = 0; i < 128; ++i) {
    // nearest k to i*299/127, halves up, by exhaustive search
    std::size_t best = 0;
    long long best_err = -1;
    for (std::size_t k = 0; k < 300; ++k) {
      const long long e = std::llabs(static_cast<long long>(k * 127) - static_cast<long long>(i * 299));
      if (best_err < 0 || e < best_err || (e == best_err && k > best)) {
        best = k;
        best_err = e;
      }
    }
    EXPECT_EQ(idx[i], best) << i;
  }
  EXPECT_EQ(subsample_indices(10, 64).size(), 10u);
}

TEST_P(BothArchs, EmbedMotionIsAffine) {
  auto p = init_params(small(GetParam()), 3);
  auto zero = ramp_clip(1, 30, {0, 0, 0}, 0.0);
  EXPECT_TRUE((embed_motion(p, zero).array() == 0.0).all());
  p.at("frame_proj.bias").setConstant(0.25);
  const auto x = jump_clip(1), y = jump_clip(2);
  MotionClip mix = x;
  mix.frames.resize(std::min(x.size(), y.size()));
  MotionClip xs = mix, ys = mix;
  for (std::size_t f = 0; f < mix.size(); ++f)
    for (std::size_t j = 0; j < kNumJoints; ++j) {
      xs.frames[f].joints[j] = x.frames[f].joints[j];
      ys.frames[f].joints[j] = y.frames[f].joints[j];
      mix.frames[f].joints[j] = 2.0 * x.frames[f].joints[j] + (-0.5) * y.frames[f].joints[j];
    }
  const Matrix f0 = embed_motion(p, ramp_clip(mix.size(), 30, {0, 0, 0}, 0.0));
  const Matrix lhs = embed_motion(p, mix) - f0;
  const Matrix rhs = 2.0 * (embed_motion(p, xs) - f0) - 0.5 * (embed_motion(p, ys) - f0);
  EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_EQ(embed_motion(p, ramp_clip(40)).rows(), 16);
}

TEST_P(BothArchs, UniformLogitsGiveLogV) {
  auto p = init_params(small(GetParam()), 4);
  p.at("out_proj.weight").setZero();
  p.at("out_proj.bias").setZero();
  const auto r = forward_loss(p, jump_clip(3), seq({1, 5, 6, 7, 2}));
  EXPECT_NEAR(r.loss, std::log(12.0), 1e-6);
  EXPECT_EQ(r.logits.rows(), 4);
  EXPECT_EQ(r.logits.cols(), 12);
}

TEST_P(BothArchs, LossSeesTokenOrderButNotPadding) {
  const auto p = init_params(small(GetParam()), 5);
  const auto clip = jump_clip(4);
  const double a = forward_loss(p, clip, seq({1, 5, 6, 7, 2})).loss;
  EXPECT_GE(a, 0.0);
  EXPECT_NE(a, forward_loss(p, clip, seq({1, 7, 5, 6, 2})).loss);
  EXPECT_EQ(a, forward_loss(p, clip, seq({1, 5, 6, 7, 2, 0})).loss);
  EXPECT_EQ(a, forward_loss(p, clip, seq({1, 5, 6, 7, 2, 0, 0})).loss);
}

TEST_P(BothArchs, TargetValidation) {
  const auto p = init_params(small(GetParam()), 5);
  const auto clip = jump_clip(4);
  EXPECT_THROW(forward_loss(p, clip, seq({5, 6, 2})), std::invalid_argument);
  EXPECT_THROW(forward_loss(p, clip, seq({1, 5, 6})), std::invalid_argument);
  EXPECT_THROW(forward_loss(p, clip, seq({1, 5, 6, 5, 6, 5, 6, 5, 6, 2})), std::length_error);
  EXPECT_THROW(forward_loss(p, clip, seq({1, 50, 2})), std::out_of_range);
}

TEST_P(BothArchs, DecoderIsCausal) {
  const auto p = init_params(small(GetParam()), 6);
  const auto clip = jump_clip(5);
  const std::vector<TokenId> base = {1, 5, 6, 7, 8, 9, 2};
  const Matrix ref = forward_loss(p, clip, seq(base)).logits;
  for (std::size_t t = 1; t + 1 < base.size(); ++t) {
    auto changed = base;
    changed[t] = 10;
    const Matrix out = forward_loss(p, clip, seq(changed)).logits;
    // input position t is target token t; logits rows < t must not move
    for (Eigen::Index r = 0; r < static_cast<Eigen::Index>(t); ++r) EXPECT_TRUE(out.row(r) == ref.row(r)) << t;
    EXPECT_FALSE(out.row(static_cast<Eigen::Index>(t)) == ref.row(static_cast<Eigen::Index>(t)));
  }
}

TEST_P(BothArchs, PaddedFramesDoNotLeak) {
  const auto p = init_params(small(GetParam()), 7);
  const auto clip = ramp_clip(9);
  const Matrix frames = flatten_frames(clip, 16);
  Matrix padded = Matrix::Zero(14, 66);
  padded.topRows(9) = frames;
  padded.bottomRows(5).setConstant(123.0);
  const std::vector<TokenId> in = {1, 5, 6};
  auto logits = [&](const Matrix& f, int valid) {
    ad::Tape tape(false);
    ModelGraph g(tape, p, nullptr);
    return Matrix(tape.value(g.decode(g.encode(f, valid), valid, in)));
  };
  const Matrix a = logits(frames, 9), b = logits(padded, 9);
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-12);
  padded.bottomRows(5).setConstant(-7.0);
  EXPECT_LT((logits(padded, 9) - b).cwiseAbs().maxCoeff(), 1e-12);
}

TEST_P(BothArchs, BatchLossMatchesSingleExampleLoss) {
  const auto p = init_params(small(GetParam()), 8);
  const auto c1 = jump_clip(6), c2 = ramp_clip(5);
  const auto t1 = seq({1, 5, 6, 7, 2}), t2 = seq({1, 8, 2});
  const auto e1 = encode_example(p.config, c1, t1), e2 = encode_example(p.config, c2, t2);
  const EncodedExample* rows[] = {&e1, &e2};
  const Batch b = collate(rows);
  ad::Tape tape(false);
  ModelGraph g(tape, p, nullptr);
  const double mean = tape.scalar(batch_loss(g, b));
  const double l1 = forward_loss(p, c1, t1).loss, l2 = forward_loss(p, c2, t2).loss;
  EXPECT_NEAR(mean, (4 * l1 + 2 * l2) / 6.0, 1e-12);
}

TEST_P(BothArchs, WorldTranslationVanishesAfterLocalConversion) {
  const auto p = init_params(small(GetParam()), 9);
  const auto clip = ramp_clip(12);
  const auto t = seq({1, 5, 6, 2});
  const Matrix a = forward_loss(p, world_to_local(clip), t).logits;
  const Matrix b = forward_loss(p, world_to_local(translate(clip, {7, -2, 4})), t).logits;
  EXPECT_TRUE(a == b);
}

TEST_P(BothArchs, GreedyDecodeContract) {
  const auto p = init_params(small(GetParam()), 10);
  const auto clip = jump_clip(7);
  const auto a = greedy_decode(p, clip, 8);
  EXPECT_EQ(a, greedy_decode(p, clip, 8));
  EXPECT_EQ(a.ids.front(), special::kBos);
  EXPECT_LE(a.ids.size(), 9u);
  const auto one = greedy_decode(p, clip, 1);
  EXPECT_EQ(one.ids.size(), 2u);
  EXPECT_EQ(one.ids[1], a.ids[1]);
}

TEST(ArgmaxLowest, TiesGoToLowestId) {
  ad::RowVector r(4);
  r << 1.0, 3.0, 3.0, 2.0;
  EXPECT_EQ(argmax_lowest(r), 1);
}

TEST_P(BothArchs, BeamOneIsGreedy) {
  const auto p = init_params(small(GetParam()), 11);
  for (std::uint64_t i = 0; i < 20; ++i) {
    const auto clip = jump_clip(100 + i);
    EXPECT_EQ(beam_decode(p, clip, 1, 8), greedy_decode(p, clip, 8)) << i;
  }
}

TEST_P(BothArchs, WiderBeamScoresAtLeastGreedy) {
  auto p = init_params(small(GetParam()), 12);
  for (auto& t : p.tensors) t.value *= 2.0;  // sharpen the distributions a little
  for (std::uint64_t i = 0; i < 5; ++i) {
    const auto clip = jump_clip(200 + i);
    const double g = sequence_score(p, clip, greedy_decode(p, clip, 6));
    const double b = sequence_score(p, clip, beam_decode(p, clip, 4, 6));
    EXPECT_GE(b, g - 1e-12) << i;
  }
}

// Exhaustive search over every complete output of a 5-token vocabulary with
// max_tokens 3: EOS-terminated at any length, or cut at the cap.
TEST_P(BothArchs, FullBeamEqualsBruteForce) {
  auto c = small(GetParam(), 5);
  auto p = init_params(c, 13);
  for (auto& t : p.tensors) t.value *= 3.0;
  int unique = 0;
  for (std::uint64_t k = 0; k < 6; ++k) {
    const auto clip = jump_clip(300 + k);
    TokenSequence best;
    double best_score = -1e300, runner_up = -1e300;
    std::vector<std::vector<TokenId>> frontier = {{special::kBos}};
    for (int len = 1; len <= 3; ++len) {
      std::vector<std::vector<TokenId>> next;
      for (const auto& pre : frontier) {
        for (TokenId t = 0; t < 5; ++t) {
          auto s = pre;
          s.push_back(t);
          const bool finished = t == special::kEos || len == 3;
          if (!finished) {
            next.push_back(s);
            continue;
          }
          const double sc = sequence_score(p, clip, {s});
          if (sc > best_score) {
            runner_up = best_score;
            best_score = sc;
            best = {s};
          } else {
            runner_up = std::max(runner_up, sc);
          }
        }
      }
      frontier = std::move(next);
    }
    const auto beam = beam_decode(p, clip, 125, 3);
    EXPECT_NEAR(sequence_score(p, clip, beam), best_score, 1e-12);
    // sequence identity only means something when the optimum is not a near tie
    if (best_score - runner_up > 1e-9) {
      EXPECT_EQ(beam, best) << k;
      ++unique;
    }
  }
  EXPECT_GT(unique, 0);
}

TEST_P(BothArchs, CheckpointRoundTripIsExact) {
  TempDir dir;
  auto c = small(GetParam());
  Checkpoint ck{init_params(c, 14), train_vocab({"a b c d e f g"}, 1), CoordSystem::Local, json::array()};
  ASSERT_EQ(ck.vocab.size(), 12u);
  save_checkpoint(dir / "ck.json", ck);
  const auto back = load_checkpoint(dir / "ck.json");
  EXPECT_TRUE(back.params == ck.params);
  EXPECT_EQ(back.vocab, ck.vocab);
  const auto clip = jump_clip(10);
  EXPECT_TRUE(forward_loss(back.params, clip, seq({1, 5, 2})).logits ==
              forward_loss(ck.params, clip, seq({1, 5, 2})).logits);
  json bad = checkpoint_to_json(ck);
  bad["tensors"][0]["rows"] = 3;
  EXPECT_THROW(checkpoint_from_json(bad), std::invalid_argument);
}

#pragma once

// `maaig` command dispatch. dispatch() never calls exit(); it returns
// 0 on success, 1 on a runtime failure and 2 on a usage error.

#include <atomic>
#include <csignal>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "maaig/checkpoint.hpp"
#include "maaig/dataset.hpp"
#include "maaig/metrics.hpp"
#include "maaig/service.hpp"
#include "maaig/synth.hpp"
#include "maaig/trainer.hpp"

namespace maaig::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

struct ModelFlags {
  int d_model = 64;
  int layers = 2;
  int heads = 4;
  int d_ff = 128;
  int max_frames = 64;
  int max_tokens = 32;
  double dropout = 0.1;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--d-model", d_model, "hidden width")->check(CLI::PositiveNumber);
    cmd->add_option("--layers", layers, "encoder and decoder depth")->check(CLI::PositiveNumber);
    cmd->add_option("--heads", heads, "attention heads")->check(CLI::PositiveNumber);
    cmd->add_option("--d-ff", d_ff, "feed-forward width")->check(CLI::PositiveNumber);
    cmd->add_option("--max-frames", max_frames, "frames kept per clip")->check(CLI::PositiveNumber);
    cmd->add_option("--max-tokens", max_tokens, "target length cap")->check(CLI::PositiveNumber);
    cmd->add_option("--dropout", dropout, "dropout rate")->check(CLI::Range(0.0, 0.9));
  }

  ModelConfig config() const {
    ModelConfig c;
    c.d_model = d_model;
    c.n_layers_enc = c.n_layers_dec = layers;
    c.n_heads = heads;
    c.d_ff = d_ff;
    c.max_frames = max_frames;
    c.max_tokens = max_tokens;
    c.dropout = dropout;
    return c;
  }
};

inline std::vector<std::string> read_lines(const std::filesystem::path& p) {
  std::istringstream in(read_text_file(p));
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    out.push_back(line);
  }
  return out;
}

inline std::atomic<httplib::Server*> g_server{nullptr};

inline void stop_server(int) {
  if (auto* s = g_server.load()) s->stop();
}

inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"maaig: motion clips to coaching instructions"};
  app.name("maaig");
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus (clips + manifest)");
  std::string synth_kind;
  std::size_t synth_n = 0;
  std::uint64_t synth_seed = 0;
  std::string synth_out;
  synth->add_option("--kind", synth_kind, "pretrain | finetune")->required()->check(CLI::IsMember({"pretrain", "finetune"}));
  synth->add_option("--n", synth_n, "number of examples")->required()->check(CLI::PositiveNumber);
  synth->add_option("--seed", synth_seed, "corpus seed")->required();
  synth->add_option("--out", synth_out, "output directory")->required();

  // build-dataset
  auto* build = app.add_subcommand("build-dataset", "pair annotations with clips and split 90/10");
  std::string build_clips, build_ann, build_out;
  std::uint64_t build_seed = 0;
  build->add_option("--clips", build_clips, "directory of source clips")->required()->check(CLI::ExistingDirectory);
  build->add_option("--annotations", build_ann, "JSON array or .jsonl annotation log")->required()->check(CLI::ExistingFile);
  build->add_option("--seed", build_seed, "split seed")->required();
  build->add_option("--out", build_out, "output directory")->required();

  // vocab
  auto* vocab_cmd = app.add_subcommand("vocab", "build a vocabulary from the train splits of datasets");
  std::vector<std::string> vocab_data;
  std::string vocab_out;
  std::size_t vocab_min = 1;
  vocab_cmd->add_option("--data", vocab_data, "dataset directory (repeatable)")->required()->check(CLI::ExistingDirectory);
  vocab_cmd->add_option("--min-count", vocab_min, "drop rarer words");
  vocab_cmd->add_option("--out", vocab_out, "vocabulary file")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "train one stage");
  std::string tr_stage = "scratch", tr_arch = "t5", tr_coord = "local", tr_data, tr_init, tr_out, tr_vocab;
  TrainConfig tr;
  ModelFlags tr_model;
  train_cmd->add_option("--stage", tr_stage)->check(CLI::IsMember({"scratch", "pretrain", "finetune"}));
  train_cmd->add_option("--arch", tr_arch)->check(CLI::IsMember({"transformer", "t5"}));
  train_cmd->add_option("--coord", tr_coord, "world | local; world clips are converted for local runs")
      ->check(CLI::IsMember({"world", "local"}));
  train_cmd->add_option("--data", tr_data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  train_cmd->add_option("--init", tr_init, "checkpoint to continue (finetune)")->check(CLI::ExistingFile);
  train_cmd->add_option("--vocab", tr_vocab, "vocabulary file (scratch/pretrain)")->check(CLI::ExistingFile);
  train_cmd->add_option("--seed", tr.seed)->required();
  train_cmd->add_option("--out", tr_out, "output directory")->required();
  train_cmd->add_option("--steps", tr.steps)->check(CLI::PositiveNumber);
  train_cmd->add_option("--batch-size", tr.batch_size)->check(CLI::PositiveNumber);
  train_cmd->add_option("--lr", tr.lr, "learning rate (finetune default is 0.3x)")->check(CLI::PositiveNumber);
  tr_model.add_to(train_cmd);

  // matrix
  auto* matrix_cmd = app.add_subcommand("matrix", "run the six-setting experiment matrix");
  std::string mx_pre, mx_fine, mx_out;
  MatrixConfig mx;
  ModelFlags mx_model;
  matrix_cmd->add_option("--pretrain", mx_pre, "caption dataset directory")->required()->check(CLI::ExistingDirectory);
  matrix_cmd->add_option("--finetune", mx_fine, "instruction dataset directory")->required()->check(CLI::ExistingDirectory);
  matrix_cmd->add_option("--out", mx_out, "output directory")->required();
  matrix_cmd->add_option("--seed", mx.base.seed);
  matrix_cmd->add_option("--pretrain-steps", mx.pretrain_steps)->check(CLI::PositiveNumber);
  matrix_cmd->add_option("--finetune-steps", mx.finetune_steps)->check(CLI::PositiveNumber);
  matrix_cmd->add_option("--batch-size", mx.base.batch_size)->check(CLI::PositiveNumber);
  matrix_cmd->add_option("--lr", mx.base.lr)->check(CLI::PositiveNumber);
  mx_model.add_to(matrix_cmd);

  // generate
  auto* gen = app.add_subcommand("generate", "print the instruction for a clip");
  std::string gen_ckpt, gen_clip;
  std::optional<double> gen_start, gen_end;
  int gen_beam = 1;
  gen->add_option("--ckpt", gen_ckpt)->required()->check(CLI::ExistingFile);
  gen->add_option("--clip", gen_clip)->required()->check(CLI::ExistingFile);
  gen->add_option("--start", gen_start, "interval start in seconds");
  gen->add_option("--end", gen_end, "interval end in seconds");
  gen->add_option("--beam", gen_beam, "beam width (1 = greedy)")->check(CLI::PositiveNumber);

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "score predictions against references");
  std::string ev_pred, ev_ref, ev_vocab, ev_out;
  eval->add_option("--pred", ev_pred, "one prediction per line")->required()->check(CLI::ExistingFile);
  eval->add_option("--ref", ev_ref, "one reference per line")->required()->check(CLI::ExistingFile);
  eval->add_option("--vocab", ev_vocab, "vocabulary file; out-of-vocabulary words are reported")->check(CLI::ExistingFile);
  eval->add_option("--out", ev_out, "JSON report path (table goes to <out>.txt)")->required();

  // serve
  auto* serve = app.add_subcommand("serve", "run the local annotation service");
  std::optional<int> sv_port;
  std::string sv_clips, sv_ann, sv_ckpt, sv_host = "127.0.0.1";
  serve->add_option("--port", sv_port)->check(CLI::Range(0, 65535));
  serve->add_option("--clips", sv_clips, "clip directory")->required()->check(CLI::ExistingDirectory);
  serve->add_option("--annotations", sv_ann, "annotation log (.jsonl)")->required();
  serve->add_option("--ckpt", sv_ckpt, "checkpoint for /generate")->check(CLI::ExistingFile);
  serve->add_option("--host", sv_host, "bind address");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return kExitUsage;
  }

  try {
    if (*synth) {
      const auto kind = synth_kind == "pretrain" ? synth::CorpusKind::Pretrain : synth::CorpusKind::Finetune;
      DatasetManifest m;
      m.examples = synth::gen_corpus(kind, synth_n, synth_seed);
      m.seed = synth_seed;
      save_manifest(synth_out, m);
      out << "wrote " << m.examples.size() << " examples (" << m.count(Split::Train) << " train, "
          << m.count(Split::Test) << " test) to " << synth_out << "\n";
    } else if (*build) {
      const auto m = build_dataset(load_clip_dir(build_clips), load_annotation_file(build_ann), build_seed);
      save_manifest(build_out, m);
      out << "wrote " << m.examples.size() << " examples (" << m.count(Split::Train) << " train, "
          << m.count(Split::Test) << " test) to " << build_out << "\n";
    } else if (*vocab_cmd) {
      std::vector<std::string> texts;
      for (const auto& d : vocab_data)
        for (const auto& ex : load_manifest(d).select(Split::Train)) texts.push_back(ex.instruction);
      const Vocabulary v = train_vocab(texts, vocab_min);
      v.save(vocab_out);
      out << "vocabulary of " << v.size() << " entries written to " << vocab_out << "\n";
    } else if (*train_cmd) {
      tr.stage = stage_from_string(tr_stage);
      tr.arch = arch_from_string(tr_arch);
      tr.coord = coord_from_string(tr_coord);
      tr.model = tr_model.config();
      const auto data = with_coords(load_manifest(tr_data).select(Split::Train), tr.coord);
      Vocabulary vocab;
      if (!tr_init.empty()) {
        tr.init_from = std::make_shared<const Checkpoint>(load_checkpoint(tr_init));
        vocab = tr.init_from->vocab;
        if (train_cmd->count("--lr") == 0) tr.lr *= kFinetuneLrScale;
      } else if (!tr_vocab.empty()) {
        vocab = Vocabulary::load(tr_vocab);
      } else {
        vocab = corpus_vocab(data);
      }
      if (!tr_init.empty() && !tr_vocab.empty() && !(Vocabulary::load(tr_vocab) == vocab)) {
        throw std::invalid_argument("--vocab differs from the vocabulary stored in --init");
      }
      const TrainReport rep = train(tr, std::span<const PairedExample>(data), vocab);
      const std::filesystem::path dir(tr_out);
      save_checkpoint(dir / "checkpoint.json", rep.checkpoint);
      write_text_file(dir / "report.json", train_report_to_json(rep).dump(2) + "\n");
      out << "final loss " << rep.loss_curve.back().second << " after " << tr.steps << " steps ("
          << rep.wall_time_s << " s); checkpoint in " << (dir / "checkpoint.json").string() << "\n";
    } else if (*matrix_cmd) {
      mx.base.model = mx_model.config();
      const auto result = run_matrix(mx, load_manifest(mx_pre), load_manifest(mx_fine), [&](const MatrixRow& r) {
        out << "finished " << r.setting.model_label() << " / " << r.setting.pretrain_label() << " ("
            << r.train.wall_time_s << " s)\n";
        out.flush();
      });
      save_matrix(mx_out, result);
      out << metrics::format_table(result.table());
    } else if (*gen) {
      const Checkpoint ck = load_checkpoint(gen_ckpt);
      MotionClip clip = load_clip(gen_clip);
      if (gen_start || gen_end) clip = clip_by_time(clip, gen_start.value_or(0.0), gen_end.value_or(clip.duration_s()));
      clip = to_model_coords(clip, ck.coord);
      const TokenSequence seq = gen_beam > 1 ? beam_decode(ck.params, clip, gen_beam, ck.params.config.max_tokens)
                                             : greedy_decode(ck.params, clip, ck.params.config.max_tokens);
      out << ck.vocab.decode(seq) << "\n";
    } else if (*eval) {
      const auto preds = read_lines(ev_pred);
      const auto refs = read_lines(ev_ref);
      auto rep = metrics::evaluate_corpus(preds, refs);
      if (!ev_vocab.empty()) {
        const Vocabulary v = Vocabulary::load(ev_vocab);
        std::size_t oov = 0;
        for (const auto& s : preds)
          for (const auto& w : normalize_words(s)) oov += v.id_of(w) == special::kUnk && w != "<unk>";
        if (oov > 0) rep.warnings.push_back(std::to_string(oov) + " prediction words are outside the vocabulary");
      }
      write_text_file(ev_out, metrics::report_to_json(rep).dump(2) + "\n");
      const std::string table = metrics::format_table({{"-", "-", rep}});
      write_text_file(ev_out + ".txt", table);
      out << table;
      for (const auto& w : rep.warnings) err << "warning: " << w << "\n";
    } else if (*serve) {
      std::shared_ptr<const Checkpoint> ck;
      if (!sv_ckpt.empty()) ck = std::make_shared<const Checkpoint>(load_checkpoint(sv_ckpt));
      ServiceState state(sv_clips, sv_ann, ck);
      httplib::Server server;
      install_routes(server, state);
      const int port = resolve_port(sv_port);
      if (!server.bind_to_port(sv_host, port)) throw std::runtime_error("cannot bind " + sv_host + ":" + std::to_string(port));
      out << "serving on http://" << sv_host << ":" << port << "\n";
      out.flush();
      g_server = &server;
      std::signal(SIGINT, stop_server);
      std::signal(SIGTERM, stop_server);
      server.listen_after_bind();
      g_server = nullptr;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace maaig::cli

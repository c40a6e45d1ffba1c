// Small end-to-end run: synthesize jump clips, train a T5-style model in
// local coordinates, then score it on the held-out split.
//
//   build/demo/maaig_demo [steps]

#include <cstdlib>
#include <iostream>

#include "maaig/maaig.hpp"

using namespace maaig;

int main(int argc, char** argv) {
  const int steps = argc > 1 ? std::atoi(argv[1]) : 300;

  // 164 World clips with random offsets, split 148/16
  auto corpus = synth::gen_corpus(synth::CorpusKind::Finetune, 164, 2024);
  corpus = with_coords(std::move(corpus), CoordSystem::Local);
  std::vector<PairedExample> train_set, test_set;
  for (auto& ex : corpus) (ex.split == Split::Train ? train_set : test_set).push_back(ex);
  const Vocabulary vocab = corpus_vocab(train_set);
  std::cout << train_set.size() << " train / " << test_set.size() << " test, vocab " << vocab.size() << "\n";

  TrainConfig tc;
  tc.arch = Arch::T5Style;
  tc.steps = steps;
  tc.seed = 1;
  tc.model.max_frames = 32;
  const auto report = train(tc, std::span<const PairedExample>(train_set), vocab);
  for (std::size_t i = 0; i < report.loss_curve.size(); i += std::max<std::size_t>(1, report.loss_curve.size() / 5)) {
    std::cout << "step " << report.loss_curve[i].first << "  loss " << report.loss_curve[i].second << "\n";
  }
  std::cout << "final loss " << report.loss_curve.back().second << " (" << report.wall_time_s << " s)\n\n";

  const auto ev = evaluate_model(report.checkpoint, test_set);
  for (std::size_t i = 0; i < 4 && i < ev.outputs.size(); ++i) {
    std::cout << "ref: " << ev.references[i] << "\nout: " << ev.outputs[i] << "\n\n";
  }
  std::cout << metrics::format_table({{"T5", "N/A", ev.report}});
  return 0;
}

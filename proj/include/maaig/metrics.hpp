#pragma once

// Corpus BLEU-1..4 (clipped n-gram precision, brevity penalty, no smoothing),
// exact-match METEOR and LCS-based ROUGE-L, single reference per candidate.
// Scorers are templates over the token type; evaluate_corpus works on
// normalized word tokens.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "maaig/tokenizer.hpp"

namespace maaig::metrics {

template <class Token>
using Sentence = std::vector<Token>;

struct NgramStats {
  std::array<double, 4> matches{};
  std::array<double, 4> totals{};
  double cand_len = 0.0;
  double ref_len = 0.0;
};

template <class Token>
std::map<std::vector<Token>, std::size_t> count_ngrams(const Sentence<Token>& s, std::size_t n) {
  std::map<std::vector<Token>, std::size_t> counts;
  if (s.size() < n) return counts;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++counts[std::vector<Token>(s.begin() + i, s.begin() + i + n)];
  return counts;
}

template <class Token>
void accumulate_ngrams(NgramStats& st, const Sentence<Token>& cand, const Sentence<Token>& ref) {
  st.cand_len += static_cast<double>(cand.size());
  st.ref_len += static_cast<double>(ref.size());
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto c = count_ngrams(cand, n);
    const auto r = count_ngrams(ref, n);
    std::size_t total = 0, matched = 0;
    for (const auto& [g, k] : c) {
      total += k;
      if (auto it = r.find(g); it != r.end()) matched += std::min(k, it->second);
    }
    st.matches[n - 1] += static_cast<double>(matched);
    st.totals[n - 1] += static_cast<double>(total);
  }
}

inline double brevity_penalty(double c, double r) {
  if (c <= 0.0) return 0.0;
  return c > r ? 1.0 : std::exp(1.0 - r / c);
}

inline double bleu_from_stats(const NgramStats& st, int n) {
  if (st.cand_len <= 0.0) return 0.0;
  double log_sum = 0.0;
  for (int k = 0; k < n; ++k) {
    if (st.totals[k] <= 0.0 || st.matches[k] <= 0.0) return 0.0;
    log_sum += std::log(st.matches[k] / st.totals[k]);
  }
  return brevity_penalty(st.cand_len, st.ref_len) * std::exp(log_sum / n);
}

template <class Token>
double bleu_n(const std::vector<Sentence<Token>>& candidates, const std::vector<Sentence<Token>>& references, int n) {
  if (n < 1 || n > 4) throw std::invalid_argument("bleu_n: n must be in 1..4");
  if (candidates.size() != references.size()) throw std::invalid_argument("bleu_n: corpus length mismatch");
  if (candidates.empty()) throw std::invalid_argument("bleu_n: empty corpus");
  NgramStats st;
  for (std::size_t i = 0; i < candidates.size(); ++i) accumulate_ngrams(st, candidates[i], references[i]);
  return bleu_from_stats(st, n);
}

// Sentence-level diagnostic only: add-one smoothing on n >= 2 counts. Not
// the corpus score reported in MetricReport.
template <class Token>
double sentence_bleu_smoothed(const Sentence<Token>& cand, const Sentence<Token>& ref, int n) {
  NgramStats st;
  accumulate_ngrams(st, cand, ref);
  if (st.cand_len <= 0.0 || st.matches[0] <= 0.0) return 0.0;
  double log_sum = std::log(st.matches[0] / st.totals[0]);
  for (int k = 1; k < n; ++k) log_sum += std::log((st.matches[k] + 1.0) / (st.totals[k] + 1.0));
  return brevity_penalty(st.cand_len, st.ref_len) * std::exp(log_sum / n);
}

template <class Token>
std::size_t lcs_length(const Sentence<Token>& a, const Sentence<Token>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline constexpr double kRougeBeta = 1.2;

// F = (1 + beta^2) R P / (R + beta^2 P) with R = LCS/|ref|, P = LCS/|cand|.
template <class Token>
double rouge_l(const Sentence<Token>& cand, const Sentence<Token>& ref, double beta = kRougeBeta) {
  if (cand.empty() || ref.empty()) return 0.0;
  const auto lcs = static_cast<double>(lcs_length(cand, ref));
  if (lcs == 0.0) return 0.0;
  const double r = lcs / static_cast<double>(ref.size());
  const double p = lcs / static_cast<double>(cand.size());
  const double b2 = beta * beta;
  return (1.0 + b2) * r * p / (r + b2 * p);
}

struct Alignment {
  std::size_t matches = 0;
  std::size_t chunks = 0;
};

// Each candidate token, left to right, takes the leftmost unused identical
// reference token. A chunk is a maximal run of candidate positions whose
// aligned reference positions are also consecutive.
template <class Token>
Alignment align_exact(const Sentence<Token>& cand, const Sentence<Token>& ref) {
  std::vector<bool> used(ref.size(), false);
  std::vector<std::ptrdiff_t> target(cand.size(), -1);
  Alignment a;
  for (std::size_t i = 0; i < cand.size(); ++i) {
    for (std::size_t j = 0; j < ref.size(); ++j) {
      if (!used[j] && ref[j] == cand[i]) {
        used[j] = true;
        target[i] = static_cast<std::ptrdiff_t>(j);
        ++a.matches;
        break;
      }
    }
  }
  std::ptrdiff_t prev_target = -2;
  bool prev_matched = false;
  for (std::size_t i = 0; i < cand.size(); ++i) {
    if (target[i] < 0) {
      prev_matched = false;
      continue;
    }
    if (!prev_matched || target[i] != prev_target + 1) ++a.chunks;
    prev_target = target[i];
    prev_matched = true;
  }
  return a;
}

template <class Token>
double meteor(const Sentence<Token>& cand, const Sentence<Token>& ref) {
  if (cand.empty() || ref.empty()) return 0.0;
  const Alignment a = align_exact(cand, ref);
  if (a.matches == 0) return 0.0;
  const auto m = static_cast<double>(a.matches);
  const double p = m / static_cast<double>(cand.size());
  const double r = m / static_cast<double>(ref.size());
  const double fmean = 10.0 * p * r / (r + 9.0 * p);
  const double frag = static_cast<double>(a.chunks) / m;
  const double penalty = 0.5 * frag * frag * frag;
  return fmean * (1.0 - penalty);
}

struct MetricReport {
  double bleu_1 = 0.0;
  double bleu_2 = 0.0;
  double bleu_3 = 0.0;
  double bleu_4 = 0.0;
  double meteor = 0.0;
  double rouge_l = 0.0;
  std::size_t n_examples = 0;
  std::vector<std::string> warnings;

  std::array<double, 6> scores() const { return {bleu_1, bleu_2, bleu_3, bleu_4, meteor, rouge_l}; }
  double bleu(int n) const { return std::array{bleu_1, bleu_2, bleu_3, bleu_4}.at(static_cast<std::size_t>(n - 1)); }
};

inline constexpr std::array<std::string_view, 6> kMetricColumns = {"Bleu_1", "Bleu_2", "Bleu_3",
                                                                   "Bleu_4", "METEOR", "ROUGE_L"};

template <class Token>
MetricReport score_corpus(const std::vector<Sentence<Token>>& cands, const std::vector<Sentence<Token>>& refs) {
  if (cands.size() != refs.size()) throw std::invalid_argument("score_corpus: corpus length mismatch");
  if (cands.empty()) throw std::invalid_argument("score_corpus: empty corpus");
  MetricReport rep;
  rep.n_examples = cands.size();
  NgramStats st;
  double met = 0.0, rouge = 0.0;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    accumulate_ngrams(st, cands[i], refs[i]);
    if (cands[i].empty() || refs[i].empty()) {
      rep.warnings.push_back("example " + std::to_string(i) + ": empty " +
                             (cands[i].empty() ? "candidate" : "reference") + "; METEOR and ROUGE-L scored 0");
    }
    met += meteor(cands[i], refs[i]);
    rouge += rouge_l(cands[i], refs[i]);
  }
  if (st.cand_len <= 0.0) rep.warnings.push_back("all candidates empty; BLEU scored 0");
  rep.bleu_1 = bleu_from_stats(st, 1);
  rep.bleu_2 = bleu_from_stats(st, 2);
  rep.bleu_3 = bleu_from_stats(st, 3);
  rep.bleu_4 = bleu_from_stats(st, 4);
  rep.meteor = met / static_cast<double>(cands.size());
  rep.rouge_l = rouge / static_cast<double>(cands.size());
  return rep;
}

// Normalizes both sides with the tokenizer's rules and scores word tokens.
inline MetricReport evaluate_corpus(const std::vector<std::string>& outputs, const std::vector<std::string>& references) {
  if (outputs.size() != references.size()) {
    throw std::invalid_argument("evaluate_corpus: " + std::to_string(outputs.size()) + " outputs vs " +
                                std::to_string(references.size()) + " references");
  }
  std::vector<Sentence<std::string>> c, r;
  for (const auto& s : outputs) c.push_back(normalize_words(s));
  for (const auto& s : references) r.push_back(normalize_words(s));
  return score_corpus(c, r);
}

inline json report_to_json(const MetricReport& r) {
  return {{"Bleu_1", r.bleu_1}, {"Bleu_2", r.bleu_2}, {"Bleu_3", r.bleu_3},   {"Bleu_4", r.bleu_4},
          {"METEOR", r.meteor}, {"ROUGE_L", r.rouge_l}, {"n_examples", r.n_examples}, {"warnings", r.warnings}};
}

struct TableRow {
  std::string model;
  std::string pretrain;
  MetricReport report;
};

// Aligned text table: Model | Pretrain | six metric columns, 6 decimals.
inline std::string format_table(const std::vector<TableRow>& rows) {
  std::size_t wm = 5, wp = 8;
  for (const auto& r : rows) {
    wm = std::max(wm, r.model.size());
    wp = std::max(wp, r.pretrain.size());
  }
  std::ostringstream ss;
  ss << std::left << std::setw(static_cast<int>(wm)) << "Model" << "  " << std::setw(static_cast<int>(wp))
     << "Pretrain";
  for (auto c : kMetricColumns) ss << "  " << std::setw(8) << c;
  ss << "\n";
  for (const auto& r : rows) {
    ss << std::left << std::setw(static_cast<int>(wm)) << r.model << "  " << std::setw(static_cast<int>(wp))
       << r.pretrain;
    for (double v : r.report.scores()) ss << "  " << std::fixed << std::setprecision(6) << v;
    ss << "\n";
  }
  return ss.str();
}

}  // namespace maaig::metrics

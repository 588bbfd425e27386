#include "g2p/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>

#include "g2p/error.hpp"
#include "g2p/unicode.hpp"

namespace g2p {

namespace {

bool attaches_left(std::string_view cluster) {
  auto cps = unicode::code_points(cluster);
  if (cps.empty()) return false;
  for (char32_t cp : cps) {
    if (!unicode::is_modifier_letter(cp) && !unicode::is_mark(cp)) return false;
  }
  return true;
}

bool ends_with_tie(std::string_view cluster) {
  auto cps = unicode::code_points(cluster);
  return !cps.empty() && unicode::is_tie_bar(cps.back());
}

bool starts_with_tie(std::string_view cluster) {
  auto cps = unicode::code_points(cluster);
  return !cps.empty() && unicode::is_tie_bar(cps.front());
}

std::string format_fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

std::string PhoneSequence::joined() const {
  std::string out;
  for (const auto& p : phones) out += p;
  return out;
}

PhoneSequence segment_phones(std::string_view ipa) {
  PhoneSequence seq;
  if (ipa.find(' ') != std::string_view::npos) {
    std::size_t pos = 0;
    while (pos <= ipa.size()) {
      auto next = ipa.find(' ', pos);
      if (next == std::string_view::npos) next = ipa.size();
      if (next > pos) seq.phones.emplace_back(ipa.substr(pos, next - pos));
      pos = next + 1;
    }
    return seq;
  }
  bool join_next = false;
  for (auto& cluster : unicode::grapheme_clusters(ipa)) {
    const bool glue = !seq.phones.empty() &&
                      (join_next || attaches_left(cluster) || starts_with_tie(cluster));
    join_next = ends_with_tie(cluster);
    if (glue) {
      seq.phones.back() += cluster;
    } else {
      seq.phones.push_back(std::move(cluster));
    }
  }
  return seq;
}

std::size_t edit_distance(std::span<const std::string> a, std::span<const std::string> b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

ReferenceMatch best_reference(const PhoneSequence& hyp, std::span<const PhoneSequence> refs) {
  if (refs.empty()) fail(ErrorCode::kInvalidReference, "no reference pronunciations");
  ReferenceMatch best;
  bool have = false;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (refs[i].empty()) fail(ErrorCode::kInvalidReference, "empty reference pronunciation");
    ReferenceMatch m{i, edit_distance(hyp.phones, refs[i].phones), refs[i].size()};
    // Compare edits/len exactly by cross-multiplying.
    if (!have || m.edits * best.ref_length < best.edits * m.ref_length) {
      best = m;
      have = true;
    }
  }
  return best;
}

double phone_error_rate(const PhoneSequence& hyp, std::span<const PhoneSequence> refs) {
  return best_reference(hyp, refs).per();
}

double word_error_rate(std::span<const std::string> predictions,
                       std::span<const std::vector<std::string>> references) {
  if (predictions.size() != references.size()) {
    fail(ErrorCode::kInvalidInput, "prediction and reference lists differ in length");
  }
  if (predictions.empty()) fail(ErrorCode::kInvalidInput, "no predictions to score");
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (references[i].empty()) fail(ErrorCode::kInvalidReference, "empty reference set");
    const auto hyp = segment_phones(predictions[i]);
    bool hit = false;
    for (const auto& r : references[i]) hit = hit || segment_phones(r) == hyp;
    if (!hit) ++wrong;
  }
  return 100.0 * static_cast<double>(wrong) / static_cast<double>(predictions.size());
}

std::vector<double> fractional_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double spearman_rho(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) fail(ErrorCode::kInvalidInput, "spearman inputs differ in length");
  if (x.size() < 2) fail(ErrorCode::kUndefinedCorrelation, "need at least two points");
  const auto rx = fractional_ranks(x);
  const auto ry = fractional_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) fail(ErrorCode::kUndefinedCorrelation, "constant ranks");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

LanguageScore score_language(const LanguageTag& language, std::span<const ScoredWord> words) {
  if (words.empty()) {
    fail(ErrorCode::kInvalidInput, "no test words for language " + language.code());
  }
  LanguageScore s{language};
  double per_sum = 0.0;
  for (const auto& w : words) {
    std::vector<PhoneSequence> refs;
    for (const auto& r : w.references) refs.push_back(segment_phones(r));
    const auto hyp = w.failed ? PhoneSequence{} : segment_phones(w.prediction);
    const auto m = best_reference(hyp, refs);
    s.edit_ops += m.edits;
    s.reference_phones += m.ref_length;
    per_sum += m.per();
    bool hit = false;
    if (!w.failed) {
      for (const auto& r : refs) hit = hit || r == hyp;
    }
    if (!hit) ++s.wrong_words;
    if (w.failed) ++s.failed_words;
    ++s.words;
  }
  s.per = 100.0 * static_cast<double>(s.edit_ops) / static_cast<double>(s.reference_phones);
  s.wer = 100.0 * static_cast<double>(s.wrong_words) / static_cast<double>(s.words);
  s.word_averaged_per = per_sum / static_cast<double>(s.words);
  return s;
}

EvalReport make_report(std::vector<LanguageScore> rows) {
  if (rows.empty()) fail(ErrorCode::kInvalidInput, "evaluation report has no languages");
  std::sort(rows.begin(), rows.end(),
            [](const LanguageScore& a, const LanguageScore& b) { return a.language < b.language; });
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].language == rows[i - 1].language) {
      fail(ErrorCode::kInvalidInput, "duplicate language " + rows[i].language.code());
    }
  }
  EvalReport r;
  std::size_t edits = 0, phones = 0, wrong = 0, words = 0;
  for (const auto& row : rows) {
    r.per += row.per;
    r.wer += row.wer;
    edits += row.edit_ops;
    phones += row.reference_phones;
    wrong += row.wrong_words;
    words += row.words;
  }
  const double n = static_cast<double>(rows.size());
  r.per /= n;
  r.wer /= n;
  r.micro_per = 100.0 * static_cast<double>(edits) / static_cast<double>(phones);
  r.micro_wer = 100.0 * static_cast<double>(wrong) / static_cast<double>(words);
  r.rows = std::move(rows);
  return r;
}

void attach_correlation(EvalReport& report,
                        std::span<const std::pair<LanguageTag, std::size_t>> train_sizes) {
  std::map<LanguageTag, std::size_t> sizes(train_sizes.begin(), train_sizes.end());
  std::vector<double> x, y;
  for (const auto& row : report.rows) {
    auto it = sizes.find(row.language);
    if (it == sizes.end()) continue;
    x.push_back(static_cast<double>(it->second));
    y.push_back(row.per);
  }
  report.spearman = spearman_rho(x, y);
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["averaging"] = kAveragingRule;
  auto& langs = j["languages"] = nlohmann::json::array();
  for (const auto& row : rows) {
    langs.push_back({{"language", row.language.code()},
                     {"words", row.words},
                     {"per", row.per},
                     {"wer", row.wer},
                     {"edit_ops", row.edit_ops},
                     {"reference_phones", row.reference_phones},
                     {"wrong_words", row.wrong_words},
                     {"failed_words", row.failed_words},
                     {"word_averaged_per", row.word_averaged_per}});
  }
  j["aggregate"] = {{"per", per}, {"wer", wer}};
  j["micro"] = {{"per", micro_per}, {"wer", micro_wer}};
  j["spearman_rho"] = spearman ? nlohmann::json(*spearman) : nlohmann::json(nullptr);
  return j;
}

std::string EvalReport::to_text() const {
  std::size_t width = 9;
  for (const auto& row : rows) width = std::max(width, row.language.code().size());
  auto pad = [&](std::string s) {
    s.resize(width, ' ');
    return s;
  };
  auto cell = [](double p, double w) { return format_fixed(p, 1) + "/" + format_fixed(w, 1); };
  std::ostringstream out;
  out << "# " << kAveragingRule << "\n";
  out << pad("language") << "  " << "   words" << "  PER/WER(%)\n";
  char buf[32];
  for (const auto& row : rows) {
    std::snprintf(buf, sizeof buf, "%8zu", row.words);
    out << pad(row.language.code()) << "  " << buf << "  " << cell(row.per, row.wer) << "\n";
  }
  std::size_t total = 0;
  for (const auto& row : rows) total += row.words;
  std::snprintf(buf, sizeof buf, "%8zu", total);
  out << pad("aggregate") << "  " << buf << "  " << cell(per, wer) << "\n";
  out << pad("micro") << "  " << buf << "  " << cell(micro_per, micro_wer) << "\n";
  if (spearman) out << "spearman rho (train size, PER): " << format_fixed(*spearman, 3) << "\n";
  return out.str();
}

}  // namespace g2p

#include "textrec/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "textrec/errors.hpp"
#include "textrec/rng.hpp"

namespace textrec {

namespace {

// n-gram counts over one token list; tokens shorter than n contribute none.
std::map<std::vector<std::string>, std::int64_t> ngram_counts(const std::vector<std::string>& tokens,
                                                              int n) {
  std::map<std::vector<std::string>, std::int64_t> counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i) {
    ++counts[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                      tokens.begin() + static_cast<std::ptrdiff_t>(i) + n)];
  }
  return counts;
}

}  // namespace

std::int64_t FrequencyTable::count_of(const std::string& item_id) const {
  const auto it = index_.find(item_id);
  if (it == index_.end()) throw DataError("frequency table: unknown item " + item_id);
  return counts[it->second];
}

FrequencyTable item_frequency(const std::vector<SplitExample>& train, const ItemCatalog& catalog) {
  FrequencyTable table;
  table.item_ids.reserve(catalog.size());
  table.counts.assign(catalog.size(), 0);
  for (std::size_t row = 0; row < catalog.size(); ++row) {
    table.item_ids.push_back(catalog[row].item_id);
    table.index_.emplace(catalog[row].item_id, row);
  }
  for (const auto& example : train) {
    const auto it = table.index_.find(example.target);
    if (it == table.index_.end()) {
      throw DataError("item_frequency: train target missing from catalog: " + example.target);
    }
    ++table.counts[it->second];
    ++table.total;
  }
  return table;
}

TailSplit tail_split_by_ratio(const FrequencyTable& frequency, double tail_fraction) {
  if (tail_fraction <= 0.0 || tail_fraction >= 1.0) {
    throw ConfigError("tail_split_by_ratio: fraction must be in (0, 1)");
  }
  if (frequency.item_ids.empty()) throw DataError("tail_split_by_ratio: empty catalog");
  const double catalog_size = static_cast<double>(frequency.item_ids.size());

  std::vector<std::int64_t> sorted_counts = frequency.counts;
  std::sort(sorted_counts.begin(), sorted_counts.end());
  const std::size_t num_items = sorted_counts.size();
  std::int64_t threshold = sorted_counts.back();
  // smallest threshold whose cumulative item fraction reaches the target
  for (std::size_t i = 0; i < num_items; ++i) {
    const bool last_of_run = i + 1 == num_items || sorted_counts[i + 1] != sorted_counts[i];
    if (!last_of_run) continue;
    if (static_cast<double>(i + 1) / catalog_size >= tail_fraction) {
      threshold = sorted_counts[i];
      break;
    }
  }

  TailSplit split;
  split.threshold = threshold;
  for (std::size_t row = 0; row < frequency.item_ids.size(); ++row) {
    if (frequency.counts[row] <= threshold) {
      split.long_tail.insert(frequency.item_ids[row]);
    } else {
      split.head.insert(frequency.item_ids[row]);
    }
  }
  split.achieved_ratio = static_cast<double>(split.long_tail.size()) / catalog_size;
  return split;
}

GroupedMetrics grouped_metrics(const std::vector<RankingResult>& rankings,
                               const std::vector<std::string>& targets, const TailSplit& split,
                               const std::vector<int>& ks) {
  if (rankings.size() != targets.size()) {
    throw ConfigError("grouped_metrics: rankings/targets size mismatch");
  }
  std::vector<int> tail_ranks;
  std::vector<int> head_ranks;
  for (std::size_t i = 0; i < rankings.size(); ++i) {
    const bool is_tail = split.long_tail.count(targets[i]) > 0;
    if (!is_tail && split.head.count(targets[i]) == 0) {
      throw DataError("grouped_metrics: target not classified by the tail split: " + targets[i]);
    }
    (is_tail ? tail_ranks : head_ranks).push_back(rankings[i].rank_of_target);
  }
  GroupedMetrics grouped;
  grouped.long_tail = metrics_from_ranks(tail_ranks, ks);
  grouped.head = metrics_from_ranks(head_ranks, ks);
  return grouped;
}

double popular_ratio(const std::vector<RankingResult>& rankings,
                     const std::vector<std::string>& catalog_ids,
                     const std::unordered_set<std::string>& popular_set, int top_k) {
  if (top_k < 1) throw ConfigError("popular_ratio: top_k must be >= 1");
  std::int64_t popular_slots = 0;
  std::int64_t total_slots = 0;
  for (const auto& ranking : rankings) {
    const int slots = std::min<int>(top_k, static_cast<int>(ranking.ranked.size()));
    for (int i = 0; i < slots; ++i) {
      ++total_slots;
      const auto& item_id = catalog_ids[static_cast<std::size_t>(ranking.ranked[static_cast<std::size_t>(i)])];
      if (popular_set.count(item_id) > 0) ++popular_slots;
    }
  }
  return total_slots == 0 ? 0.0 : static_cast<double>(popular_slots) / static_cast<double>(total_slots);
}

double dist_n(const std::vector<std::vector<std::string>>& texts_per_user, int n) {
  if (n < 1) throw ConfigError("dist_n: n must be >= 1");
  if (texts_per_user.empty()) throw DataError("dist_n: no users");
  double ratio_sum = 0.0;
  std::size_t counted_users = 0;
  for (const auto& texts : texts_per_user) {
    std::map<std::vector<std::string>, std::int64_t> pooled;
    std::int64_t total = 0;
    for (const auto& text : texts) {
      for (const auto& [gram, count] : ngram_counts(split_tokens(text), n)) {
        pooled[gram] += count;
        total += count;
      }
    }
    if (total == 0) continue;  // all texts shorter than n
    ratio_sum += static_cast<double>(pooled.size()) / static_cast<double>(total);
    ++counted_users;
  }
  return counted_users == 0 ? 0.0 : ratio_sum / static_cast<double>(counted_users);
}

double bleu4(const std::vector<std::string>& hypothesis_tokens,
             const std::vector<std::string>& reference_tokens) {
  if (reference_tokens.empty()) throw DataError("bleu4: empty reference text");
  if (hypothesis_tokens.empty()) return 0.0;
  double log_precision_sum = 0.0;
  for (int n = 1; n <= 4; ++n) {
    const auto hyp_counts = ngram_counts(hypothesis_tokens, n);
    const auto ref_counts = ngram_counts(reference_tokens, n);
    std::int64_t matches = 0;
    std::int64_t total = 0;
    for (const auto& [gram, count] : hyp_counts) {
      total += count;
      const auto it = ref_counts.find(gram);
      if (it != ref_counts.end()) matches += std::min(count, it->second);
    }
    double precision;
    if (matches > 0) {
      precision = static_cast<double>(matches) / static_cast<double>(total);
    } else {
      precision = 1.0 / static_cast<double>(total + 1);  // add-one smoothing
    }
    log_precision_sum += 0.25 * std::log(precision);
  }
  const double hyp_len = static_cast<double>(hypothesis_tokens.size());
  const double ref_len = static_cast<double>(reference_tokens.size());
  const double brevity = hyp_len >= ref_len ? 1.0 : std::exp(1.0 - ref_len / hyp_len);
  return brevity * std::exp(log_precision_sum);
}

double bleu4_against_gold(const std::vector<std::vector<std::string>>& recommended_texts_per_user,
                          const std::vector<std::string>& gold_text_per_user) {
  if (recommended_texts_per_user.size() != gold_text_per_user.size()) {
    throw ConfigError("bleu4_against_gold: size mismatch");
  }
  if (recommended_texts_per_user.empty()) throw DataError("bleu4_against_gold: no users");
  double user_sum = 0.0;
  for (std::size_t u = 0; u < recommended_texts_per_user.size(); ++u) {
    const std::vector<std::string> reference = split_tokens(gold_text_per_user[u]);
    const auto& texts = recommended_texts_per_user[u];
    if (texts.empty()) continue;
    double text_sum = 0.0;
    for (const auto& text : texts) text_sum += bleu4(split_tokens(text), reference);
    user_sum += text_sum / static_cast<double>(texts.size());
  }
  return user_sum / static_cast<double>(recommended_texts_per_user.size());
}

EmbeddingExport select_export_embeddings(const CatalogEmbeddings& embeddings,
                                         const std::unordered_set<std::string>& popular_set,
                                         std::size_t per_group, std::uint64_t seed) {
  if (popular_set.empty()) throw DataError("select_export_embeddings: empty popular set");
  std::vector<std::size_t> popular_rows;
  std::vector<std::size_t> other_rows;
  for (std::size_t row = 0; row < embeddings.item_ids.size(); ++row) {
    if (popular_set.count(embeddings.item_ids[row]) > 0) {
      popular_rows.push_back(row);
    } else {
      other_rows.push_back(row);
    }
  }
  Rng popular_rng = Rng::stream(seed, 0x909u, 0);
  Rng other_rng = Rng::stream(seed, 0x909u, 1);
  auto pick = [&](const std::vector<std::size_t>& rows, Rng& rng) {
    std::vector<std::size_t> picked;
    const std::size_t take = std::min(per_group, rows.size());
    for (const std::size_t idx : rng.sample_without_replacement(rows.size(), take)) {
      picked.push_back(rows[idx]);
    }
    std::sort(picked.begin(), picked.end());  // keep catalog order in the file
    return picked;
  };
  const std::vector<std::size_t> popular_picked = pick(popular_rows, popular_rng);
  const std::vector<std::size_t> other_picked = pick(other_rows, other_rng);

  EmbeddingExport result;
  const auto emit = [&](const std::vector<std::size_t>& rows, const char* label) {
    for (const std::size_t row : rows) {
      result.item_ids.push_back(embeddings.item_ids[row]);
      result.labels.emplace_back(label);
    }
  };
  emit(popular_picked, "popular");
  emit(other_picked, "other");
  result.matrix.resize(static_cast<Eigen::Index>(result.item_ids.size()), embeddings.matrix.cols());
  Eigen::Index out_row = 0;
  for (const std::size_t row : popular_picked) {
    result.matrix.row(out_row++) = embeddings.matrix.row(static_cast<Eigen::Index>(row));
  }
  for (const std::size_t row : other_picked) {
    result.matrix.row(out_row++) = embeddings.matrix.row(static_cast<Eigen::Index>(row));
  }
  return result;
}

}  // namespace textrec

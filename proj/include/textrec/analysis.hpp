#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "textrec/corpus.hpp"
#include "textrec/ranker.hpp"
#include "textrec/verbalize.hpp"

namespace textrec {

// Training-target counts, zero-filled over the whole catalog.
struct FrequencyTable {
  std::vector<std::string> item_ids;   // catalog order
  std::vector<std::int64_t> counts;    // aligned with item_ids
  std::int64_t total = 0;              // == |train split|

  std::int64_t count_of(const std::string& item_id) const;

 private:
  friend FrequencyTable item_frequency(const std::vector<SplitExample>&, const ItemCatalog&);
  std::unordered_map<std::string, std::size_t> index_;
};

FrequencyTable item_frequency(const std::vector<SplitExample>& train, const ItemCatalog& catalog);

struct TailSplit {
  std::int64_t threshold = 0;  // long tail: count <= threshold
  std::unordered_set<std::string> long_tail;
  std::unordered_set<std::string> head;
  double achieved_ratio = 0.0;  // |long_tail| / |catalog|
};

// Smallest threshold whose tail fraction reaches tail_fraction.
TailSplit tail_split_by_ratio(const FrequencyTable& frequency, double tail_fraction = 0.2);

struct GroupedMetrics {
  MetricsReport long_tail;
  MetricsReport head;
};

// Test users partitioned by whether their target is long-tail or head.
GroupedMetrics grouped_metrics(const std::vector<RankingResult>& rankings,
                               const std::vector<std::string>& targets, const TailSplit& split,
                               const std::vector<int>& ks);

// Fraction of all top-k recommendation slots filled by popular-set items.
double popular_ratio(const std::vector<RankingResult>& rankings,
                     const std::vector<std::string>& catalog_ids,
                     const std::unordered_set<std::string>& popular_set, int top_k = 5);

// Unique/total n-gram ratio per user (n-grams pooled over the user's
// texts), averaged over users with at least one n-gram.
double dist_n(const std::vector<std::vector<std::string>>& texts_per_user, int n);

// Smoothed sentence BLEU-4: uniform 1..4-gram weights, add-one smoothing on
// zero matches, standard brevity penalty.
double bleu4(const std::vector<std::string>& hypothesis_tokens,
             const std::vector<std::string>& reference_tokens);

// Mean over users of mean BLEU-4 of each recommended text vs the gold text.
double bleu4_against_gold(const std::vector<std::vector<std::string>>& recommended_texts_per_user,
                          const std::vector<std::string>& gold_text_per_user);

struct EmbeddingExport {
  std::vector<std::string> item_ids;
  Mat matrix;
  std::vector<std::string> labels;  // "popular" or "other"
};

// Seeded selection of up to `per_group` popular and non-popular items.
EmbeddingExport select_export_embeddings(const CatalogEmbeddings& embeddings,
                                         const std::unordered_set<std::string>& popular_set,
                                         std::size_t per_group, std::uint64_t seed);

}  // namespace textrec

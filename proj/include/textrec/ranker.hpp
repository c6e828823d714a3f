#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_set>
#include <vector>

#include "textrec/corpus.hpp"
#include "textrec/encoder.hpp"
#include "textrec/model.hpp"
#include "textrec/verbalize.hpp"

namespace textrec {

struct CatalogEmbeddings {
  std::vector<std::string> item_ids;  // catalog file order
  Mat matrix;                         // |catalog| x d
  std::uint64_t checkpoint_fingerprint = 0;
};

CatalogEmbeddings encode_catalog(const Parameters& params, const ItemCatalog& catalog,
                                 const TokenVocab& vocab, const VerbalizeConfig& verbalize_config,
                                 std::uint64_t checkpoint_fingerprint = 0, int threads = 1);

struct RankingResult {
  std::string user_id;
  std::vector<int> ranked;  // catalog rows, best first
  int rank_of_target = 0;   // 1-based
};

// Items sorted by score descending, ties by item_id ascending. mask_rows
// (history items) are dropped from the candidate list when provided.
RankingResult full_rank(const Vec& user_embedding, const CatalogEmbeddings& catalog,
                        int target_row, const std::unordered_set<int>* mask_rows = nullptr);

double recall_at_k(int rank_of_target, int k);
double hit_at_k(int rank_of_target, int k);
double ndcg_at_k(int rank_of_target, int k);
double mrr_at_k(int rank_of_target, int k);

struct MetricsReport {
  std::map<std::string, double> values;  // Recall@K, NDCG@K, MRR@K, Hit@K
  std::size_t user_count = 0;
};

MetricsReport metrics_from_ranks(const std::vector<int>& ranks, const std::vector<int>& ks);

struct EvaluateOptions {
  std::vector<int> ks = {10, 20};
  bool mask_history = false;
  int threads = 1;
};

struct EvaluationOutput {
  MetricsReport report;
  std::vector<RankingResult> rankings;  // split order
};

// Full-catalog ranking per split example; metrics macro-averaged over users.
EvaluationOutput evaluate(const Parameters& params, const ItemCatalog& catalog,
                          const TokenVocab& vocab, const VerbalizeConfig& verbalize_config,
                          const std::vector<SplitExample>& split, const EvaluateOptions& options,
                          std::uint64_t checkpoint_fingerprint = 0);

// Same, against a prebuilt catalog matrix.
EvaluationOutput evaluate_with_catalog(const Parameters& params, const CatalogEmbeddings& embeddings,
                                       const ItemCatalog& catalog, const TokenVocab& vocab,
                                       const VerbalizeConfig& verbalize_config,
                                       const std::vector<SplitExample>& split,
                                       const EvaluateOptions& options);

// Embedding export: header "N D", then one line per item:
// item_id v1 .. vD [label]
void write_embedding_file(const std::string& path, const std::vector<std::string>& ids,
                          const Mat& matrix, const std::vector<std::string>* labels = nullptr);

}  // namespace textrec

#include "textrec/ranker.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <numeric>

#include "textrec/errors.hpp"

namespace textrec {

namespace {

// Deterministic chunked parallel map: slot i always receives fn(i).
template <typename Fn>
void parallel_for(std::size_t count, int threads, Fn&& fn) {
  if (threads <= 1 || count < 2) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), count);
  std::vector<std::future<void>> futures;
  futures.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    futures.push_back(std::async(std::launch::async, [&, w] {
      for (std::size_t i = w; i < count; i += workers) fn(i);
    }));
  }
  for (auto& future : futures) future.get();
}

int session_count_for(const ModelConfig& config) { return config.num_sessions; }

}  // namespace

CatalogEmbeddings encode_catalog(const Parameters& params, const ItemCatalog& catalog,
                                 const TokenVocab& vocab, const VerbalizeConfig& verbalize_config,
                                 std::uint64_t checkpoint_fingerprint, int threads) {
  if (catalog.empty()) throw DataError("encode_catalog: empty catalog");
  CatalogEmbeddings embeddings;
  embeddings.checkpoint_fingerprint = checkpoint_fingerprint;
  embeddings.item_ids.reserve(catalog.size());
  for (const auto& item : catalog.items()) embeddings.item_ids.push_back(item.item_id);
  embeddings.matrix.resize(static_cast<Eigen::Index>(catalog.size()), params.config.hidden_dim);
  parallel_for(catalog.size(), threads, [&](std::size_t row) {
    const auto& item = catalog[row];
    const TokenSequence tokens = tokenize(verbalize_item(item, verbalize_config), vocab,
                                          static_cast<std::size_t>(verbalize_config.item_max_tokens));
    const int id_row = params.config.id_fusion == IdFusion::kEmbed ? static_cast<int>(row) : -1;
    embeddings.matrix.row(static_cast<Eigen::Index>(row)) =
        encode_item(params, tokens, id_row).transpose();
  });
  return embeddings;
}

RankingResult full_rank(const Vec& user_embedding, const CatalogEmbeddings& catalog, int target_row,
                        const std::unordered_set<int>* mask_rows) {
  if (user_embedding.size() != catalog.matrix.cols()) {
    throw ConfigError("full_rank: embedding dimension mismatch");
  }
  const Vec scores = catalog.matrix * user_embedding;
  RankingResult result;
  result.ranked.reserve(static_cast<std::size_t>(catalog.matrix.rows()));
  for (int row = 0; row < static_cast<int>(catalog.matrix.rows()); ++row) {
    if (mask_rows != nullptr && row != target_row && mask_rows->count(row) > 0) continue;
    result.ranked.push_back(row);
  }
  std::sort(result.ranked.begin(), result.ranked.end(), [&](int a, int b) {
    const double sa = scores(a);
    const double sb = scores(b);
    if (sa != sb) return sa > sb;
    return catalog.item_ids[static_cast<std::size_t>(a)] < catalog.item_ids[static_cast<std::size_t>(b)];
  });
  const auto it = std::find(result.ranked.begin(), result.ranked.end(), target_row);
  if (it == result.ranked.end()) {
    throw DataError("full_rank: target row not in candidate list");
  }
  result.rank_of_target = static_cast<int>(it - result.ranked.begin()) + 1;
  return result;
}

double recall_at_k(int rank_of_target, int k) { return rank_of_target <= k ? 1.0 : 0.0; }

double hit_at_k(int rank_of_target, int k) { return recall_at_k(rank_of_target, k); }

double ndcg_at_k(int rank_of_target, int k) {
  // single relevant item: ideal DCG is 1
  if (rank_of_target > k) return 0.0;
  return 1.0 / std::log2(static_cast<double>(rank_of_target) + 1.0);
}

double mrr_at_k(int rank_of_target, int k) {
  if (rank_of_target > k) return 0.0;
  return 1.0 / static_cast<double>(rank_of_target);
}

MetricsReport metrics_from_ranks(const std::vector<int>& ranks, const std::vector<int>& ks) {
  MetricsReport report;
  report.user_count = ranks.size();
  for (const int k : ks) {
    double recall = 0.0, ndcg = 0.0, mrr = 0.0, hit = 0.0;
    for (const int rank : ranks) {
      recall += recall_at_k(rank, k);
      ndcg += ndcg_at_k(rank, k);
      mrr += mrr_at_k(rank, k);
      hit += hit_at_k(rank, k);
    }
    const double denom = ranks.empty() ? 1.0 : static_cast<double>(ranks.size());
    report.values["Recall@" + std::to_string(k)] = recall / denom;
    report.values["NDCG@" + std::to_string(k)] = ndcg / denom;
    report.values["MRR@" + std::to_string(k)] = mrr / denom;
    report.values["Hit@" + std::to_string(k)] = hit / denom;
  }
  return report;
}

EvaluationOutput evaluate_with_catalog(const Parameters& params, const CatalogEmbeddings& embeddings,
                                       const ItemCatalog& catalog, const TokenVocab& vocab,
                                       const VerbalizeConfig& verbalize_config,
                                       const std::vector<SplitExample>& split,
                                       const EvaluateOptions& options) {
  if (split.empty()) throw DataError("evaluate: empty split");
  const auto& config = params.config;

  // user rows for the embed id-fusion variant: sorted user ids
  std::unordered_map<std::string, int> user_rows;
  if (config.id_fusion == IdFusion::kEmbed && config.num_users > 0) {
    std::vector<std::string> users;
    {
      std::unordered_set<std::string> seen;
      for (const auto& example : split) {
        if (seen.insert(example.user_id).second) users.push_back(example.user_id);
      }
    }
    std::sort(users.begin(), users.end());
    for (std::size_t i = 0; i < users.size(); ++i) user_rows.emplace(users[i], static_cast<int>(i));
  }

  EvaluationOutput output;
  output.rankings.resize(split.size());
  parallel_for(split.size(), options.threads, [&](std::size_t i) {
    const auto& example = split[i];
    if (!catalog.contains(example.target)) {
      throw DataError("evaluate: target missing from catalog for user " + example.user_id + ": " +
                      example.target);
    }
    const std::string text =
        verbalize_history(example.prefix, catalog, example.user_id, verbalize_config);
    const TokenSequence tokens =
        tokenize(text, vocab, static_cast<std::size_t>(verbalize_config.history_max_tokens));
    const SessionBatch sessions =
        split_sessions(tokens, session_count_for(config), config.max_session_len);
    int user_row = -1;
    if (!user_rows.empty()) {
      const auto it = user_rows.find(example.user_id);
      if (it != user_rows.end() && it->second < config.num_users) user_row = it->second;
    }
    const Vec user_embedding = encode_history(params, sessions, user_row);
    const int target_row = static_cast<int>(catalog.row_of(example.target));
    std::unordered_set<int> mask;
    const std::unordered_set<int>* mask_ptr = nullptr;
    if (options.mask_history) {
      for (const auto& item_id : example.prefix) {
        if (catalog.contains(item_id)) mask.insert(static_cast<int>(catalog.row_of(item_id)));
      }
      mask_ptr = &mask;
    }
    RankingResult ranking = full_rank(user_embedding, embeddings, target_row, mask_ptr);
    ranking.user_id = example.user_id;
    output.rankings[i] = std::move(ranking);
  });

  std::vector<int> ranks;
  ranks.reserve(output.rankings.size());
  for (const auto& ranking : output.rankings) ranks.push_back(ranking.rank_of_target);
  output.report = metrics_from_ranks(ranks, options.ks);
  return output;
}

EvaluationOutput evaluate(const Parameters& params, const ItemCatalog& catalog,
                          const TokenVocab& vocab, const VerbalizeConfig& verbalize_config,
                          const std::vector<SplitExample>& split, const EvaluateOptions& options,
                          std::uint64_t checkpoint_fingerprint) {
  const CatalogEmbeddings embeddings = encode_catalog(params, catalog, vocab, verbalize_config,
                                                      checkpoint_fingerprint, options.threads);
  return evaluate_with_catalog(params, embeddings, catalog, vocab, verbalize_config, split, options);
}

void write_embedding_file(const std::string& path, const std::vector<std::string>& ids,
                          const Mat& matrix, const std::vector<std::string>* labels) {
  if (static_cast<Eigen::Index>(ids.size()) != matrix.rows()) {
    throw ConfigError("write_embedding_file: id/matrix row mismatch");
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot write embedding file: " + path);
  out << matrix.rows() << ' ' << matrix.cols() << '\n';
  char buffer[64];
  for (Eigen::Index row = 0; row < matrix.rows(); ++row) {
    out << ids[static_cast<std::size_t>(row)];
    for (Eigen::Index col = 0; col < matrix.cols(); ++col) {
      std::snprintf(buffer, sizeof(buffer), "%.17g", matrix(row, col));
      out << ' ' << buffer;
    }
    if (labels != nullptr) out << ' ' << (*labels)[static_cast<std::size_t>(row)];
    out << '\n';
  }
}

}  // namespace textrec

#pragma once

#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "textrec/corpus.hpp"
#include "textrec/encoder.hpp"
#include "textrec/model.hpp"
#include "textrec/rng.hpp"
#include "textrec/verbalize.hpp"

namespace textrec {

enum class NegativeKind { kInbatchOnly, kRandom, kPopular, kHard };

std::string to_string(NegativeKind kind);
NegativeKind negative_kind_from_string(const std::string& text);

// How item popularity is counted when building the popular set.
enum class PopularityCounting { kFullDataset, kTrainTargets };

struct NegativeStrategy {
  NegativeKind kind = NegativeKind::kRandom;
  int negatives_per_example = 9;
  int popular_set_size = 500;
  int hard_pool_size = 100;
  PopularityCounting counting = PopularityCounting::kFullDataset;
  int remine_every = 0;  // steps between hard-negative re-mining; 0 = mine once

  void validate() const;
};

struct TrainConfig {
  int batch_size = 8;
  double learning_rate = 1e-4;
  double warmup_proportion = 0.1;
  int total_steps = 1000;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double gradient_clip_norm = 0.0;  // 0 = off
  // restrict each example's softmax to its own sampled negatives plus the
  // in-batch positives instead of the full shared candidate pool
  bool per_example_negatives = false;

  void validate(NegativeKind kind) const;
};

// ---- negative sampling ----

// k distinct items drawn uniformly from catalog_ids minus exclusions.
std::vector<std::string> sample_random_negatives(const std::vector<std::string>& catalog_ids,
                                                 const std::unordered_set<std::string>& exclude,
                                                 int k, Rng& rng);

// Items ranked by count descending, ties by item_id ascending; top_n kept.
std::vector<std::string> build_popular_set(const std::map<std::string, std::int64_t>& counts,
                                           std::size_t top_n);

std::map<std::string, std::int64_t> count_train_targets(const std::vector<SplitExample>& train);
std::map<std::string, std::int64_t> count_item_occurrences(
    const std::vector<std::vector<std::string>>& sequences);

std::vector<std::string> sample_popular_negatives(const std::vector<std::string>& popular_set,
                                                  const std::unordered_set<std::string>& exclude,
                                                  int k, Rng& rng);

// ---- batch assembly ----

struct BatchAssembly {
  std::vector<std::string> candidate_ids;  // deduplicated union
  std::vector<int> positives;              // per example index into candidate_ids
  // per example: candidate indices of its own sampled negatives
  std::vector<std::vector<int>> own_negatives;
};

BatchAssembly assemble_batch(const std::vector<std::string>& targets,
                             const std::vector<std::vector<std::string>>& negatives);

// ---- schedule & optimizer ----

// Linear 0 -> peak over warmup_proportion * total_steps, then linear to 0.
double lr_schedule(int step, int total_steps, double peak_lr, double warmup_proportion);

class AdamOptimizer {
 public:
  AdamOptimizer(const Parameters& params, double beta1, double beta2, double eps);
  void step(Parameters& params, const Gradients& grads, double lr);

 private:
  Parameters first_moment_;
  Parameters second_moment_;
  double beta1_, beta2_, eps_;
  int step_count_ = 0;
};

double global_grad_norm(const Gradients& grads);
// Scales all gradients so the global norm is at most max_norm (off when <= 0).
void clip_gradients(Gradients& grads, double max_norm);

// ---- training data & loop ----

struct TrainingData {
  const ItemCatalog* catalog = nullptr;
  std::vector<std::string> catalog_ids;
  std::vector<SplitExample> examples;
  std::vector<TokenSequence> history_tokens;  // per example
  std::vector<TokenSequence> item_tokens;     // per catalog row
  std::vector<std::unordered_set<std::string>> exclusions;  // history plus target, per example
  std::vector<int> user_rows;  // per example; -1 when id fusion is off
  std::map<std::string, std::int64_t> full_counts;
  std::map<std::string, std::int64_t> target_counts;
  std::unordered_map<std::string, int> user_row_index;
};

// full_histories: user -> full item sequence (used for exclusion filtering
// and full-dataset popularity). Empty map falls back to prefix + target.
TrainingData prepare_training_data(
    const ItemCatalog& catalog, const TokenVocab& vocab, const VerbalizeConfig& verbalize_config,
    const std::vector<SplitExample>& train_examples,
    const std::unordered_map<std::string, std::vector<std::string>>& full_histories,
    bool with_user_rows = false);

// Per-example hard-negative pools: top pool_size catalog items by dot
// product under params, with the user's history and target removed.
std::vector<std::vector<std::string>> mine_hard_negatives(const Parameters& params,
                                                          const TrainingData& data, int pool_size);

struct StepLog {
  int step;
  double lr;
  double loss;
};

struct TrainResult {
  Parameters params;
  std::vector<StepLog> log;
};

// Deterministic given (data, configs, seed). Hard-negative training
// requires init (a prior checkpoint's parameters).
TrainResult train(const ModelConfig& model_config, const TrainConfig& train_config,
                  const NegativeStrategy& strategy, const TrainingData& data,
                  const Parameters* init = nullptr, std::ostream* log_stream = nullptr);

}  // namespace textrec

#include "textrec/training.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "textrec/errors.hpp"

namespace textrec {

namespace {

using json = nlohmann::ordered_json;

std::vector<std::string> sample_from_pool(const std::vector<std::string>& pool,
                                          const std::unordered_set<std::string>& exclude, int k,
                                          Rng& rng, const char* what) {
  std::vector<std::string> eligible;
  eligible.reserve(pool.size());
  for (const auto& id : pool) {
    if (exclude.find(id) == exclude.end()) eligible.push_back(id);
  }
  if (static_cast<int>(eligible.size()) < k) {
    throw DataError(std::string(what) + ": insufficient candidates after exclusion (" +
                    std::to_string(eligible.size()) + " < " + std::to_string(k) + ")");
  }
  std::vector<std::string> picked;
  picked.reserve(static_cast<std::size_t>(k));
  for (const std::size_t idx : rng.sample_without_replacement(eligible.size(), static_cast<std::size_t>(k))) {
    picked.push_back(eligible[idx]);
  }
  return picked;
}

}  // namespace

std::string to_string(NegativeKind kind) {
  switch (kind) {
    case NegativeKind::kInbatchOnly: return "inbatch";
    case NegativeKind::kRandom: return "random";
    case NegativeKind::kPopular: return "popular";
    case NegativeKind::kHard: return "hard";
  }
  return "random";
}

NegativeKind negative_kind_from_string(const std::string& text) {
  if (text == "inbatch") return NegativeKind::kInbatchOnly;
  if (text == "random") return NegativeKind::kRandom;
  if (text == "popular") return NegativeKind::kPopular;
  if (text == "hard") return NegativeKind::kHard;
  throw ConfigError("unknown negative strategy: " + text);
}

void NegativeStrategy::validate() const {
  if (negatives_per_example < 0) throw ConfigError("negatives_per_example must be >= 0");
  if (kind == NegativeKind::kPopular && popular_set_size < negatives_per_example) {
    throw ConfigError("popular_set_size must be >= negatives_per_example");
  }
  if (kind == NegativeKind::kHard && hard_pool_size < negatives_per_example) {
    throw ConfigError("hard_pool_size must be >= negatives_per_example");
  }
  if (remine_every < 0) throw ConfigError("remine_every must be >= 0");
}

void TrainConfig::validate(NegativeKind kind) const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (kind == NegativeKind::kInbatchOnly && batch_size < 2) {
    throw ConfigError("inbatch strategy needs batch_size >= 2 for negatives to exist");
  }
  if (warmup_proportion < 0.0 || warmup_proportion > 1.0) {
    throw ConfigError("warmup_proportion must be in [0, 1]");
  }
  if (total_steps < 1) throw ConfigError("total_steps must be >= 1");
  if (learning_rate <= 0.0) throw ConfigError("learning_rate must be > 0");
  if (gradient_clip_norm < 0.0) throw ConfigError("gradient_clip_norm must be >= 0");
}

std::vector<std::string> sample_random_negatives(const std::vector<std::string>& catalog_ids,
                                                 const std::unordered_set<std::string>& exclude,
                                                 int k, Rng& rng) {
  return sample_from_pool(catalog_ids, exclude, k, rng, "sample_random_negatives");
}

std::vector<std::string> build_popular_set(const std::map<std::string, std::int64_t>& counts,
                                           std::size_t top_n) {
  std::vector<std::pair<std::string, std::int64_t>> ranked(counts.begin(), counts.end());
  // map iteration is id-ascending; stable sort keeps that order for ties
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  const std::size_t keep = std::min(top_n, ranked.size());
  std::vector<std::string> popular;
  popular.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) popular.push_back(ranked[i].first);
  return popular;
}

std::map<std::string, std::int64_t> count_train_targets(const std::vector<SplitExample>& train) {
  std::map<std::string, std::int64_t> counts;
  for (const auto& example : train) ++counts[example.target];
  return counts;
}

std::map<std::string, std::int64_t> count_item_occurrences(
    const std::vector<std::vector<std::string>>& sequences) {
  std::map<std::string, std::int64_t> counts;
  for (const auto& sequence : sequences) {
    for (const auto& item : sequence) ++counts[item];
  }
  return counts;
}

std::vector<std::string> sample_popular_negatives(const std::vector<std::string>& popular_set,
                                                  const std::unordered_set<std::string>& exclude,
                                                  int k, Rng& rng) {
  return sample_from_pool(popular_set, exclude, k, rng, "sample_popular_negatives");
}

BatchAssembly assemble_batch(const std::vector<std::string>& targets,
                             const std::vector<std::vector<std::string>>& negatives) {
  if (negatives.size() != targets.size()) {
    throw ConfigError("assemble_batch: one negative list per example required");
  }
  BatchAssembly assembly;
  std::unordered_map<std::string, int> index;
  auto intern = [&](const std::string& id) {
    const auto [it, inserted] = index.emplace(id, static_cast<int>(assembly.candidate_ids.size()));
    if (inserted) assembly.candidate_ids.push_back(id);
    return it->second;
  };
  assembly.positives.reserve(targets.size());
  for (const auto& target : targets) assembly.positives.push_back(intern(target));
  assembly.own_negatives.resize(targets.size());
  for (std::size_t e = 0; e < targets.size(); ++e) {
    for (const auto& neg : negatives[e]) {
      if (neg == targets[e]) throw DataError("assemble_batch: negative equals the target");
      assembly.own_negatives[e].push_back(intern(neg));
    }
  }
  return assembly;
}

double lr_schedule(int step, int total_steps, double peak_lr, double warmup_proportion) {
  const double warmup = warmup_proportion * static_cast<double>(total_steps);
  if (warmup > 0.0 && static_cast<double>(step) < warmup) {
    return peak_lr * static_cast<double>(step) / warmup;
  }
  if (static_cast<double>(total_steps) <= warmup) return peak_lr;
  return peak_lr * (static_cast<double>(total_steps) - static_cast<double>(step)) /
         (static_cast<double>(total_steps) - warmup);
}

AdamOptimizer::AdamOptimizer(const Parameters& params, double beta1, double beta2, double eps)
    : first_moment_(params.zeros_like()),
      second_moment_(params.zeros_like()),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps) {}

void AdamOptimizer::step(Parameters& params, const Gradients& grads, double lr) {
  ++step_count_;
  const double bias1 = 1.0 - std::pow(beta1_, step_count_);
  const double bias2 = 1.0 - std::pow(beta2_, step_count_);
  auto param_views = params.tensor_views();
  const auto grad_views = grads.tensor_views();
  auto m_views = first_moment_.tensor_views();
  auto v_views = second_moment_.tensor_views();
  for (std::size_t t = 0; t < param_views.size(); ++t) {
    double* p = param_views[t].data;
    const double* g = grad_views[t].data;
    double* m = m_views[t].data;
    double* v = v_views[t].data;
    const std::int64_t size = param_views[t].size();
    for (std::int64_t i = 0; i < size; ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      const double m_hat = m[i] / bias1;
      const double v_hat = v[i] / bias2;
      p[i] -= lr * m_hat / (std::sqrt(v_hat) + eps_);
    }
  }
}

double global_grad_norm(const Gradients& grads) {
  double sum_squares = 0.0;
  for (const auto& view : grads.tensor_views()) {
    for (std::int64_t i = 0; i < view.size(); ++i) sum_squares += view.data[i] * view.data[i];
  }
  return std::sqrt(sum_squares);
}

void clip_gradients(Gradients& grads, double max_norm) {
  if (max_norm <= 0.0) return;
  const double norm = global_grad_norm(grads);
  if (norm <= max_norm) return;
  const double scale = max_norm / norm;
  for (auto& view : grads.tensor_views()) {
    for (std::int64_t i = 0; i < view.size(); ++i) view.data[i] *= scale;
  }
}

TrainingData prepare_training_data(
    const ItemCatalog& catalog, const TokenVocab& vocab, const VerbalizeConfig& verbalize_config,
    const std::vector<SplitExample>& train_examples,
    const std::unordered_map<std::string, std::vector<std::string>>& full_histories,
    bool with_user_rows) {
  TrainingData data;
  data.catalog = &catalog;
  data.catalog_ids.reserve(catalog.size());
  for (const auto& item : catalog.items()) data.catalog_ids.push_back(item.item_id);

  data.item_tokens.reserve(catalog.size());
  for (const auto& item : catalog.items()) {
    data.item_tokens.push_back(tokenize(verbalize_item(item, verbalize_config), vocab,
                                        static_cast<std::size_t>(verbalize_config.item_max_tokens)));
  }

  data.examples = train_examples;
  data.history_tokens.reserve(train_examples.size());
  data.exclusions.reserve(train_examples.size());
  for (const auto& example : train_examples) {
    const std::string text = verbalize_history(example.prefix, catalog, example.user_id, verbalize_config);
    data.history_tokens.push_back(
        tokenize(text, vocab, static_cast<std::size_t>(verbalize_config.history_max_tokens)));
    std::unordered_set<std::string> exclude;
    if (full_histories.empty()) {
      exclude.insert(example.prefix.begin(), example.prefix.end());
    } else {
      const auto it = full_histories.find(example.user_id);
      if (it == full_histories.end()) {
        throw DataError("prepare_training_data: no full history for user " + example.user_id);
      }
      exclude.insert(it->second.begin(), it->second.end());
    }
    exclude.insert(example.target);
    data.exclusions.push_back(std::move(exclude));
  }

  data.target_counts = count_train_targets(train_examples);
  if (full_histories.empty()) {
    data.full_counts = data.target_counts;
  } else {
    std::vector<std::vector<std::string>> sequences;
    sequences.reserve(full_histories.size());
    std::vector<std::string> users;
    users.reserve(full_histories.size());
    for (const auto& [user, _] : full_histories) users.push_back(user);
    std::sort(users.begin(), users.end());
    for (const auto& user : users) sequences.push_back(full_histories.at(user));
    data.full_counts = count_item_occurrences(sequences);
  }

  if (with_user_rows) {
    std::vector<std::string> users;
    if (full_histories.empty()) {
      std::unordered_set<std::string> seen;
      for (const auto& example : train_examples) {
        if (seen.insert(example.user_id).second) users.push_back(example.user_id);
      }
    } else {
      for (const auto& [user, _] : full_histories) users.push_back(user);
    }
    std::sort(users.begin(), users.end());
    for (std::size_t i = 0; i < users.size(); ++i) {
      data.user_row_index.emplace(users[i], static_cast<int>(i));
    }
    data.user_rows.reserve(train_examples.size());
    for (const auto& example : train_examples) {
      const auto it = data.user_row_index.find(example.user_id);
      if (it == data.user_row_index.end()) {
        throw DataError("prepare_training_data: user missing from id table: " + example.user_id);
      }
      data.user_rows.push_back(it->second);
    }
  } else {
    data.user_rows.assign(train_examples.size(), -1);
  }
  return data;
}

std::vector<std::vector<std::string>> mine_hard_negatives(const Parameters& params,
                                                          const TrainingData& data, int pool_size) {
  if (pool_size < 1) throw ConfigError("mine_hard_negatives: pool_size must be >= 1");
  const auto& config = params.config;
  const std::size_t num_items = data.item_tokens.size();
  Mat item_matrix(static_cast<Eigen::Index>(num_items), config.hidden_dim);
  for (std::size_t row = 0; row < num_items; ++row) {
    const int id_row = config.id_fusion == IdFusion::kEmbed ? static_cast<int>(row) : -1;
    item_matrix.row(static_cast<Eigen::Index>(row)) =
        encode_item(params, data.item_tokens[row], id_row).transpose();
  }

  std::vector<std::vector<std::string>> pools;
  pools.reserve(data.examples.size());
  for (std::size_t e = 0; e < data.examples.size(); ++e) {
    const SessionBatch sessions =
        split_sessions(data.history_tokens[e], config.num_sessions, config.max_session_len);
    const Vec user = encode_history(params, sessions, data.user_rows[e]);
    const Vec scores = item_matrix * user;

    std::vector<std::size_t> order;
    order.reserve(num_items);
    for (std::size_t i = 0; i < num_items; ++i) {
      if (data.exclusions[e].find(data.catalog_ids[i]) != data.exclusions[e].end()) continue;
      order.push_back(i);
    }
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const double sa = scores(static_cast<Eigen::Index>(a));
      const double sb = scores(static_cast<Eigen::Index>(b));
      if (sa != sb) return sa > sb;
      return data.catalog_ids[a] < data.catalog_ids[b];
    });
    if (order.size() > static_cast<std::size_t>(pool_size)) order.resize(static_cast<std::size_t>(pool_size));
    std::vector<std::string> pool;
    pool.reserve(order.size());
    for (const std::size_t i : order) pool.push_back(data.catalog_ids[i]);
    pools.push_back(std::move(pool));
  }
  return pools;
}

TrainResult train(const ModelConfig& model_config, const TrainConfig& train_config,
                  const NegativeStrategy& strategy, const TrainingData& data,
                  const Parameters* init, std::ostream* log_stream) {
  strategy.validate();
  train_config.validate(strategy.kind);
  model_config.validate();
  if (data.examples.empty()) throw DataError("train: empty training split");
  if (strategy.kind == NegativeKind::kHard && init == nullptr) {
    throw ConfigError("hard negatives require an initial checkpoint to mine from");
  }
  if (init != nullptr && !(init->config == model_config)) {
    throw ConfigError("train: init checkpoint config does not match model config");
  }

  TrainResult result{init != nullptr ? *init : init_params(model_config, train_config.seed), {}};
  Parameters& params = result.params;

  std::vector<std::string> popular_set;
  if (strategy.kind == NegativeKind::kPopular) {
    const auto& counts = strategy.counting == PopularityCounting::kFullDataset ? data.full_counts
                                                                               : data.target_counts;
    popular_set = build_popular_set(counts, static_cast<std::size_t>(strategy.popular_set_size));
  }
  std::vector<std::vector<std::string>> hard_pools;
  if (strategy.kind == NegativeKind::kHard) {
    hard_pools = mine_hard_negatives(params, data, strategy.hard_pool_size);
  }

  AdamOptimizer optimizer(params, train_config.adam_beta1, train_config.adam_beta2,
                          train_config.adam_eps);
  Rng dropout_rng = Rng::stream(train_config.seed, 0x9d0u);
  Rng* dropout = model_config.dropout_rate > 0.0 ? &dropout_rng : nullptr;

  const std::size_t num_examples = data.examples.size();
  std::vector<std::size_t> order(num_examples);
  std::uint64_t epoch = 0;
  std::size_t cursor = num_examples;  // forces a shuffle before the first batch

  for (int step = 0; step < train_config.total_steps; ++step) {
    if (cursor >= num_examples) {
      for (std::size_t i = 0; i < num_examples; ++i) order[i] = i;
      Rng shuffle_rng = Rng::stream(train_config.seed, 0x5f1eu, epoch);
      shuffle_rng.shuffle(order);
      cursor = 0;
      ++epoch;
    }
    const std::size_t batch_size =
        std::min<std::size_t>(static_cast<std::size_t>(train_config.batch_size), num_examples - cursor);
    std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                                   order.begin() + static_cast<std::ptrdiff_t>(cursor + batch_size));
    cursor += batch_size;

    std::vector<std::string> targets;
    std::vector<std::vector<std::string>> negatives(batch.size());
    targets.reserve(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const std::size_t example_index = batch[b];
      targets.push_back(data.examples[example_index].target);
      const int k = strategy.negatives_per_example;
      if (strategy.kind == NegativeKind::kInbatchOnly || k == 0) continue;
      Rng example_rng = Rng::stream(train_config.seed, epoch, example_index);
      switch (strategy.kind) {
        case NegativeKind::kRandom:
          negatives[b] =
              sample_random_negatives(data.catalog_ids, data.exclusions[example_index], k, example_rng);
          break;
        case NegativeKind::kPopular:
          negatives[b] =
              sample_popular_negatives(popular_set, data.exclusions[example_index], k, example_rng);
          break;
        case NegativeKind::kHard: {
          const auto& pool = hard_pools[example_index];
          const int k_eff = std::min<int>(k, static_cast<int>(pool.size()));
          for (const std::size_t idx :
               example_rng.sample_without_replacement(pool.size(), static_cast<std::size_t>(k_eff))) {
            negatives[b].push_back(pool[idx]);
          }
          break;
        }
        default:
          break;
      }
    }

    const BatchAssembly assembly = assemble_batch(targets, negatives);

    BatchInputs inputs;
    inputs.positives = assembly.positives;
    inputs.user_sessions.reserve(batch.size());
    for (const std::size_t example_index : batch) {
      inputs.user_sessions.push_back(split_sessions(data.history_tokens[example_index],
                                                    model_config.num_sessions,
                                                    model_config.max_session_len));
      if (model_config.id_fusion == IdFusion::kEmbed) {
        inputs.user_id_rows.push_back(data.user_rows[example_index]);
      }
    }
    inputs.candidate_tokens.reserve(assembly.candidate_ids.size());
    for (const auto& candidate_id : assembly.candidate_ids) {
      const std::size_t row = data.catalog->row_of(candidate_id);
      inputs.candidate_tokens.push_back(data.item_tokens[row]);
      if (model_config.id_fusion == IdFusion::kEmbed) {
        inputs.candidate_id_rows.push_back(static_cast<int>(row));
      }
    }
    if (train_config.per_example_negatives) {
      inputs.active.assign(batch.size(),
                           std::vector<std::uint8_t>(assembly.candidate_ids.size(), 0));
      for (std::size_t b = 0; b < batch.size(); ++b) {
        for (const int pos : assembly.positives) inputs.active[b][static_cast<std::size_t>(pos)] = 1;
        for (const int neg : assembly.own_negatives[b]) inputs.active[b][static_cast<std::size_t>(neg)] = 1;
      }
    }

    const LossForward fwd = forward_loss(params, inputs, dropout);
    if (!std::isfinite(fwd.loss)) {
      throw NumericError("train: loss diverged (non-finite) at step " + std::to_string(step + 1));
    }
    Gradients grads = backward(params, fwd);
    clip_gradients(grads, train_config.gradient_clip_norm);
    const double lr = lr_schedule(step, train_config.total_steps, train_config.learning_rate,
                                  train_config.warmup_proportion);
    optimizer.step(params, grads, lr);

    result.log.push_back(StepLog{step + 1, lr, fwd.loss});
    if (log_stream != nullptr) {
      json line;
      line["step"] = step + 1;
      line["lr"] = lr;
      line["loss"] = fwd.loss;
      (*log_stream) << line.dump() << '\n';
    }

    if (strategy.kind == NegativeKind::kHard && strategy.remine_every > 0 &&
        (step + 1) % strategy.remine_every == 0 && step + 1 < train_config.total_steps) {
      hard_pools = mine_hard_negatives(params, data, strategy.hard_pool_size);
    }
  }
  return result;
}

}  // namespace textrec

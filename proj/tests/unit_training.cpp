#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "support/fixtures.hpp"
#include "support/oracles.hpp"
#include "textrec/errors.hpp"
#include "textrec/training.hpp"

using namespace textrec;
using textrec::testing::item_name;

namespace {

std::vector<std::string> letter_catalog() {
  return {"a", "b", "c", "d", "e", "f", "g", "h", "i", "j"};
}

}  // namespace

TEST_CASE("sample_random_negatives returns the forced set when exclusion pins it") {
  Rng rng(1);
  const auto picked = sample_random_negatives(letter_catalog(), {"a"}, 9, rng);
  CHECK(picked.size() == 9);
  const std::set<std::string> as_set(picked.begin(), picked.end());
  CHECK(as_set == std::set<std::string>{"b", "c", "d", "e", "f", "g", "h", "i", "j"});
}

TEST_CASE("sample_random_negatives never intersects the exclusion set") {
  const auto catalog = letter_catalog();
  const std::unordered_set<std::string> exclude{"c", "f", "j"};
  for (int trial = 0; trial < 2000; ++trial) {
    Rng rng = Rng::stream(99, static_cast<std::uint64_t>(trial));
    const auto picked = sample_random_negatives(catalog, exclude, 4, rng);
    CHECK(picked.size() == 4);
    std::set<std::string> distinct(picked.begin(), picked.end());
    CHECK(distinct.size() == 4);
    for (const auto& id : picked) CHECK(exclude.count(id) == 0);
  }
}

TEST_CASE("sample_random_negatives rejects an over-constrained draw") {
  Rng rng(2);
  CHECK_THROWS_AS(sample_random_negatives(letter_catalog(), {"a", "b"}, 9, rng), DataError);
}

TEST_CASE("sample_random_negatives is empirically uniform") {
  std::vector<std::string> catalog;
  for (int i = 0; i < 20; ++i) catalog.push_back(item_name(i));
  std::map<std::string, int> counts;
  const int draws = 100000;
  Rng rng(12345);
  for (int t = 0; t < draws; ++t) {
    ++counts[sample_random_negatives(catalog, {}, 1, rng)[0]];
  }
  const double p = 1.0 / 20.0;
  const double sigma = std::sqrt(draws * p * (1.0 - p));
  for (const auto& id : catalog) {
    CHECK(std::abs(counts[id] - draws * p) <= 3.0 * sigma);
  }
}

TEST_CASE("build_popular_set ranks by count, ties by item id") {
  std::map<std::string, std::int64_t> counts{{"x", 5}, {"y", 2}, {"z", 9}};
  CHECK(build_popular_set(counts, 2) == std::vector<std::string>{"z", "x"});
  // saturation: top_n beyond the distinct items returns them all
  CHECK(build_popular_set(counts, 10).size() == 3);
  // tie at the cutoff goes to the smaller id
  std::map<std::string, std::int64_t> tied{{"q", 4}, {"p", 4}, {"r", 7}};
  CHECK(build_popular_set(tied, 2) == std::vector<std::string>{"r", "p"});
}

TEST_CASE("count helpers") {
  const std::vector<SplitExample> train = {
      {"u1", {"a"}, "a"}, {"u1", {"a", "b"}, "a"}, {"u2", {"c"}, "b"}};
  const auto targets = count_train_targets(train);
  CHECK(targets.at("a") == 2);
  CHECK(targets.at("b") == 1);
  const auto full = count_item_occurrences({{"a", "b", "a"}, {"b", "c"}});
  CHECK(full.at("a") == 2);
  CHECK(full.at("b") == 2);
  CHECK(full.at("c") == 1);
}

TEST_CASE("sample_popular_negatives stays inside the popular set") {
  const std::vector<std::string> popular{"p1", "p2", "p3", "p4", "p5"};
  Rng rng(3);
  const auto forced = sample_popular_negatives(popular, {"p1"}, 4, rng);
  CHECK(std::set<std::string>(forced.begin(), forced.end()) ==
        std::set<std::string>{"p2", "p3", "p4", "p5"});
  const std::set<std::string> popular_set(popular.begin(), popular.end());
  for (int trial = 0; trial < 500; ++trial) {
    Rng trial_rng = Rng::stream(7, static_cast<std::uint64_t>(trial));
    for (const auto& id : sample_popular_negatives(popular, {}, 3, trial_rng)) {
      CHECK(popular_set.count(id) == 1);
    }
  }
  CHECK_THROWS_AS(sample_popular_negatives(popular, {"p1", "p2"}, 4, rng), DataError);
}

TEST_CASE("sample_popular_negatives is empirically uniform over the set") {
  std::vector<std::string> popular;
  for (int i = 0; i < 10; ++i) popular.push_back(item_name(i));
  std::map<std::string, int> counts;
  const int draws = 50000;
  Rng rng(777);
  for (int t = 0; t < draws; ++t) ++counts[sample_popular_negatives(popular, {}, 1, rng)[0]];
  const double p = 0.1;
  const double sigma = std::sqrt(draws * p * (1.0 - p));
  for (const auto& id : popular) CHECK(std::abs(counts[id] - draws * p) <= 3.0 * sigma);
}

TEST_CASE("assemble_batch: 8 examples with 9 distinct negatives each spans 80 candidates") {
  std::vector<std::string> targets;
  std::vector<std::vector<std::string>> negatives;
  int next = 0;
  for (int e = 0; e < 8; ++e) {
    targets.push_back("t" + std::to_string(e));
    std::vector<std::string> negative_list;
    for (int k = 0; k < 9; ++k) negative_list.push_back("n" + std::to_string(next++));
    negatives.push_back(std::move(negative_list));
  }
  const BatchAssembly assembly = assemble_batch(targets, negatives);
  CHECK(assembly.candidate_ids.size() == 80);
  for (int e = 0; e < 8; ++e) {
    CHECK(assembly.candidate_ids[static_cast<std::size_t>(assembly.positives[static_cast<std::size_t>(e)])] ==
          targets[static_cast<std::size_t>(e)]);
  }
}

TEST_CASE("assemble_batch with k=0 keeps only the in-batch positives") {
  const BatchAssembly assembly = assemble_batch({"x", "y"}, {{}, {}});
  CHECK(assembly.candidate_ids == std::vector<std::string>{"x", "y"});
  CHECK(assembly.positives == std::vector<int>{0, 1});
}

TEST_CASE("assemble_batch deduplicates shared candidates") {
  const BatchAssembly assembly =
      assemble_batch({"t1", "t2", "t1"}, {{"n", "m"}, {"n"}, {"m", "q"}});
  CHECK(assembly.candidate_ids == std::vector<std::string>{"t1", "t2", "n", "m", "q"});
  CHECK(assembly.positives == std::vector<int>{0, 1, 0});
}

TEST_CASE("candidate arithmetic: candidates = B + B*k - duplicates, exactly") {
  const std::vector<std::string> targets{"a", "b", "c"};
  const std::vector<std::vector<std::string>> negatives{{"x", "y"}, {"x", "z"}, {"y", "a"}};
  // duplicates: second x, second y, and "a" already present as a positive
  const BatchAssembly assembly = assemble_batch(targets, negatives);
  CHECK(assembly.candidate_ids.size() == 3 + 6 - 3);
}

TEST_CASE("deduplicated batch loss equals the scalar oracle over the union") {
  // three-example fixture with a shared sampled negative
  std::vector<ItemRecord> items;
  for (int i = 0; i < 8; ++i) {
    ItemRecord item;
    item.item_id = item_name(i);
    item.attributes.emplace_back("title", "w" + std::to_string(i));
    items.push_back(std::move(item));
  }
  const ItemCatalog catalog(items);
  VerbalizeConfig verbalize_config;
  verbalize_config.attribute_names = {"title"};
  verbalize_config.finalize();
  std::vector<std::string> texts;
  for (const auto& item : catalog.items()) texts.push_back(verbalize_item(item, verbalize_config));
  texts.push_back("Here is the visit history list of user: recommend next item");
  const TokenVocab vocab = build_vocab(texts, 256);

  const std::vector<std::string> targets{item_name(0), item_name(1), item_name(2)};
  const std::vector<std::vector<std::string>> negatives{
      {item_name(5)}, {item_name(5)}, {item_name(6)}};  // item 5 duplicated
  const BatchAssembly assembly = assemble_batch(targets, negatives);
  CHECK(assembly.candidate_ids.size() == 5);

  ModelConfig config;
  config.vocab_size = vocab.size();
  config.hidden_dim = 8;
  config.num_heads = 2;
  config.ffn_dim = 16;
  config.encoder_layers = 1;
  config.decoder_layers = 1;
  config.num_sessions = 2;
  config.max_session_len = 16;
  const Parameters params = init_params(config, 404);

  BatchInputs inputs;
  inputs.positives = assembly.positives;
  std::vector<std::vector<std::string>> prefixes{{item_name(3)}, {item_name(4)}, {item_name(3), item_name(4)}};
  for (std::size_t u = 0; u < prefixes.size(); ++u) {
    const std::string text = verbalize_history(prefixes[u], catalog, "u", verbalize_config);
    inputs.user_sessions.push_back(split_sessions(tokenize(text, vocab, 64), 2, 16));
  }
  for (const auto& id : assembly.candidate_ids) {
    inputs.candidate_tokens.push_back(
        tokenize(verbalize_item(catalog.at(id), verbalize_config), vocab, 32));
  }
  const LossForward fwd = forward_loss(params, inputs);

  std::vector<std::vector<double>> scores(3, std::vector<double>(assembly.candidate_ids.size()));
  for (std::size_t u = 0; u < 3; ++u) {
    const Vec user = encode_history(params, inputs.user_sessions[u]);
    for (std::size_t c = 0; c < assembly.candidate_ids.size(); ++c) {
      scores[u][c] = score(user, encode_item(params, inputs.candidate_tokens[c]));
    }
  }
  const double oracle = textrec::testing::scalar_cross_entropy_oracle(scores, assembly.positives);
  CHECK(fwd.loss == doctest::Approx(oracle).epsilon(1e-10));
}

TEST_CASE("lr_schedule hits the apex, the terminus, and the zero-warmup start") {
  CHECK(lr_schedule(10, 100, 2.0, 0.1) == 2.0);   // warmup end: exactly peak
  CHECK(lr_schedule(0, 100, 2.0, 0.0) == 2.0);    // no warmup: starts at peak
  CHECK(lr_schedule(100, 100, 2.0, 0.1) == 0.0);  // terminus
  CHECK(lr_schedule(0, 100, 2.0, 0.1) == 0.0);    // ramp starts at zero
  CHECK(lr_schedule(5, 100, 2.0, 0.1) == doctest::Approx(1.0));
  CHECK(lr_schedule(55, 100, 2.0, 0.1) == doctest::Approx(1.0));
}

TEST_CASE("lr_schedule is a ramp then a decay") {
  double previous = -1.0;
  for (int step = 0; step <= 20; ++step) {
    const double lr = lr_schedule(step, 200, 1.0, 0.1);
    CHECK(lr >= previous);
    previous = lr;
  }
  previous = 2.0;
  for (int step = 20; step <= 200; step += 10) {
    const double lr = lr_schedule(step, 200, 1.0, 0.1);
    CHECK(lr <= previous);
    previous = lr;
  }
}

namespace {

struct ToySetup {
  ItemCatalog catalog{std::vector<ItemRecord>{}};
  TokenVocab vocab;
  VerbalizeConfig verbalize_config;
  ModelConfig model_config;
  TrainingData data;
};

ToySetup make_toy(int num_items, const std::vector<SplitExample>& examples) {
  ToySetup setup;
  std::vector<ItemRecord> items;
  for (int i = 0; i < num_items; ++i) {
    ItemRecord item;
    item.item_id = item_name(i);
    item.attributes.emplace_back("title", "w" + std::to_string(i));
    items.push_back(std::move(item));
  }
  setup.catalog = ItemCatalog(std::move(items));
  setup.verbalize_config.attribute_names = {"title"};
  setup.verbalize_config.finalize();
  std::vector<std::string> texts;
  for (const auto& item : setup.catalog.items()) {
    texts.push_back(verbalize_item(item, setup.verbalize_config));
  }
  for (const auto& example : examples) {
    texts.push_back(
        verbalize_history(example.prefix, setup.catalog, example.user_id, setup.verbalize_config));
  }
  setup.vocab = build_vocab(texts, 512);
  setup.model_config.vocab_size = setup.vocab.size();
  setup.model_config.hidden_dim = 8;
  setup.model_config.num_heads = 2;
  setup.model_config.ffn_dim = 16;
  setup.model_config.encoder_layers = 1;
  setup.model_config.decoder_layers = 1;
  setup.model_config.num_sessions = 2;
  setup.model_config.max_session_len = 32;
  setup.data =
      prepare_training_data(setup.catalog, setup.vocab, setup.verbalize_config, examples, {});
  return setup;
}

}  // namespace

TEST_CASE("train is deterministic: same seed gives bit-identical parameters") {
  const std::vector<SplitExample> examples = {
      {"u1", {item_name(0)}, item_name(1)},
      {"u2", {item_name(2)}, item_name(3)},
      {"u3", {item_name(1), item_name(2)}, item_name(4)},
  };
  ToySetup setup = make_toy(8, examples);
  TrainConfig train_config;
  train_config.batch_size = 2;
  train_config.total_steps = 12;
  train_config.learning_rate = 1e-3;
  train_config.seed = 5150;
  NegativeStrategy strategy;
  strategy.negatives_per_example = 2;

  const TrainResult a = train(setup.model_config, train_config, strategy, setup.data);
  const TrainResult b = train(setup.model_config, train_config, strategy, setup.data);
  const auto views_a = a.params.tensor_views();
  const auto views_b = b.params.tensor_views();
  for (std::size_t t = 0; t < views_a.size(); ++t) {
    for (std::int64_t i = 0; i < views_a[t].size(); ++i) {
      CHECK(views_a[t].data[i] == views_b[t].data[i]);
    }
  }
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t s = 0; s < a.log.size(); ++s) CHECK(a.log[s].loss == b.log[s].loss);

  TrainConfig other_seed = train_config;
  other_seed.seed = 5151;
  const TrainResult c = train(setup.model_config, other_seed, strategy, setup.data);
  CHECK(c.log.back().loss != a.log.back().loss);
}

TEST_CASE("the one-example toy converges below 0.01 within 500 steps") {
  const std::vector<SplitExample> examples = {{"u1", {item_name(0)}, item_name(1)}};
  ToySetup setup = make_toy(6, examples);
  TrainConfig train_config;
  train_config.batch_size = 1;
  train_config.total_steps = 500;
  train_config.learning_rate = 1e-3;
  train_config.warmup_proportion = 0.0;
  train_config.seed = 11;
  NegativeStrategy strategy;
  strategy.negatives_per_example = 1;

  const TrainResult result = train(setup.model_config, train_config, strategy, setup.data);
  CHECK(result.log.back().loss < 0.01);

  // loss decreases across 50-step windows until it has converged
  std::vector<double> window_means;
  for (std::size_t start = 0; start + 50 <= result.log.size(); start += 50) {
    double sum = 0.0;
    for (std::size_t i = start; i < start + 50; ++i) sum += result.log[i].loss;
    window_means.push_back(sum / 50.0);
  }
  for (std::size_t w = 1; w < window_means.size(); ++w) {
    CHECK((window_means[w] < window_means[w - 1] || window_means[w] < 0.01));
  }
}

TEST_CASE("hard negatives require an initial checkpoint") {
  const std::vector<SplitExample> examples = {{"u1", {item_name(0)}, item_name(1)}};
  ToySetup setup = make_toy(6, examples);
  TrainConfig train_config;
  train_config.batch_size = 1;
  train_config.total_steps = 2;
  train_config.seed = 1;
  NegativeStrategy strategy;
  strategy.kind = NegativeKind::kHard;
  strategy.negatives_per_example = 2;
  strategy.hard_pool_size = 3;
  CHECK_THROWS_AS(train(setup.model_config, train_config, strategy, setup.data, nullptr), ConfigError);

  const Parameters init = init_params(setup.model_config, 77);
  const TrainResult result = train(setup.model_config, train_config, strategy, setup.data, &init);
  CHECK(result.log.size() == 2);
}

TEST_CASE("mine_hard_negatives matches a brute-force full ranking") {
  std::vector<SplitExample> examples = {
      {"u1", {item_name(0), item_name(1)}, item_name(2)},
      {"u2", {item_name(3)}, item_name(4)},
  };
  ToySetup setup = make_toy(12, examples);
  const Parameters params = init_params(setup.model_config, 88);
  const int pool_size = 5;
  const auto pools = mine_hard_negatives(params, setup.data, pool_size);
  REQUIRE(pools.size() == 2);

  for (std::size_t e = 0; e < 2; ++e) {
    // brute force: score every item, selection-sort, drop exclusions
    const SessionBatch sessions = split_sessions(setup.data.history_tokens[e], 2, 32);
    const Vec user = encode_history(params, sessions);
    std::vector<double> scores;
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < setup.catalog.size(); ++i) {
      scores.push_back(score(user, encode_item(params, setup.data.item_tokens[i])));
      ids.push_back(setup.catalog[i].item_id);
    }
    const auto order = textrec::testing::brute_force_rank_oracle(scores, ids);
    std::vector<std::string> expected;
    for (const int row : order) {
      const std::string& id = ids[static_cast<std::size_t>(row)];
      if (setup.data.exclusions[e].count(id) > 0) continue;
      expected.push_back(id);
      if (expected.size() == pool_size) break;
    }
    CHECK(pools[e] == expected);
    // the target never appears
    for (const auto& id : pools[e]) CHECK(id != examples[e].target);
  }
}

TEST_CASE("mine_hard_negatives saturates when the catalog is small") {
  const std::vector<SplitExample> examples = {{"u1", {item_name(0)}, item_name(1)}};
  ToySetup setup = make_toy(5, examples);
  const Parameters params = init_params(setup.model_config, 66);
  const auto pools = mine_hard_negatives(params, setup.data, 100);
  // catalog 5 minus prefix item minus target = 3 remaining
  CHECK(pools[0].size() == 3);
}

TEST_CASE("sampled negatives never intersect the exclusions across strategies") {
  std::vector<SplitExample> examples;
  for (int u = 0; u < 6; ++u) {
    examples.push_back({"u" + std::to_string(u),
                        {item_name(u), item_name(u + 1)},
                        item_name((u + 2) % 12)});
  }
  ToySetup setup = make_toy(12, examples);
  const Parameters params = init_params(setup.model_config, 55);
  const auto pools = mine_hard_negatives(params, setup.data, 6);
  for (int trial = 0; trial < 300; ++trial) {
    for (std::size_t e = 0; e < examples.size(); ++e) {
      Rng rng = Rng::stream(42, static_cast<std::uint64_t>(trial), e);
      const auto& exclude = setup.data.exclusions[e];
      for (const auto& id : sample_random_negatives(setup.data.catalog_ids, exclude, 3, rng)) {
        CHECK(exclude.count(id) == 0);
      }
      for (const auto& id : pools[e]) CHECK(exclude.count(id) == 0);
    }
  }
}

TEST_CASE("per-example negatives restrict each softmax to its own pool") {
  const std::vector<SplitExample> examples = {
      {"u1", {item_name(0)}, item_name(1)},
      {"u2", {item_name(2)}, item_name(3)},
  };
  ToySetup setup = make_toy(10, examples);
  TrainConfig shared;
  shared.batch_size = 2;
  shared.total_steps = 3;
  shared.learning_rate = 1e-3;
  shared.seed = 21;
  TrainConfig restricted = shared;
  restricted.per_example_negatives = true;
  NegativeStrategy strategy;
  strategy.negatives_per_example = 3;
  const TrainResult a = train(setup.model_config, shared, strategy, setup.data);
  const TrainResult b = train(setup.model_config, restricted, strategy, setup.data);
  // smaller softmax support gives a different (typically smaller) loss
  CHECK(a.log[0].loss != b.log[0].loss);
}

TEST_CASE("train aborts with a diagnostic when the loss is not finite") {
  const std::vector<SplitExample> examples = {{"u1", {item_name(0)}, item_name(1)}};
  ToySetup setup = make_toy(6, examples);
  TrainConfig train_config;
  train_config.batch_size = 1;
  train_config.total_steps = 5;
  train_config.seed = 3;
  NegativeStrategy strategy;
  strategy.negatives_per_example = 1;
  Parameters poisoned = init_params(setup.model_config, 12);
  poisoned.token_embedding(3, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_WITH_AS(
      train(setup.model_config, train_config, strategy, setup.data, &poisoned),
      doctest::Contains("step 1"), NumericError);
}

TEST_CASE("gradient clipping caps the global norm") {
  ModelConfig config;
  config.vocab_size = 10;
  config.hidden_dim = 4;
  config.num_heads = 2;
  config.ffn_dim = 8;
  config.encoder_layers = 1;
  config.decoder_layers = 1;
  config.num_sessions = 1;
  config.max_session_len = 4;
  Gradients grads = init_params(config, 9);
  const double before = global_grad_norm(grads);
  CHECK(before > 1.0);
  clip_gradients(grads, 1.0);
  CHECK(global_grad_norm(grads) == doctest::Approx(1.0).epsilon(1e-9));
  // below the cap nothing changes
  Gradients small = grads;
  clip_gradients(small, 10.0);
  CHECK(global_grad_norm(small) == doctest::Approx(global_grad_norm(grads)).epsilon(1e-12));
}

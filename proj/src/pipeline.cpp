#include "textrec/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "textrec/analysis.hpp"
#include "textrec/corpus.hpp"
#include "textrec/encoder.hpp"
#include "textrec/errors.hpp"
#include "textrec/model.hpp"
#include "textrec/ranker.hpp"
#include "textrec/training.hpp"
#include "textrec/verbalize.hpp"

namespace textrec {

namespace {

using json = nlohmann::ordered_json;

void ensure_workdir(const RunConfig& config) {
  const std::string dir = config.get_string("paths.workdir");
  if (!dir.empty()) std::filesystem::create_directories(dir);
}

void write_json_file(const std::string& path, const json& value) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write file: " + path);
  out << value.dump(2) << '\n';
}

json config_echo(const RunConfig& config) {
  std::ostringstream buffer;
  config.print_effective(buffer);
  json echo = json::object();
  std::istringstream lines(buffer.str());
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) continue;
    echo[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return echo;
}

struct LoadedArtifacts {
  TokenVocab vocab;
  std::uint64_t vocab_fingerprint = 0;
  ItemCatalog catalog;
  Checkpoint checkpoint;
  std::uint64_t checkpoint_fingerprint = 0;
};

LoadedArtifacts load_model_artifacts(const RunConfig& config) {
  LoadedArtifacts loaded;
  const std::string vocab_path = config.workdir_path("vocab.txt");
  loaded.vocab = TokenVocab::load(vocab_path);
  loaded.vocab_fingerprint = fingerprint_file(vocab_path);
  loaded.catalog = ingest_items(config.get_string("paths.items"));
  const std::string checkpoint_path = config.workdir_path("checkpoint.bin");
  loaded.checkpoint = load_checkpoint(checkpoint_path);
  loaded.checkpoint_fingerprint = fingerprint_file(checkpoint_path);
  if (loaded.checkpoint.vocab_fingerprint != loaded.vocab_fingerprint) {
    throw DataError("stale artifacts: checkpoint was trained against a different vocab file");
  }
  if (loaded.checkpoint.params.config.vocab_size != loaded.vocab.size()) {
    throw DataError("stale artifacts: checkpoint vocab size " +
                    std::to_string(loaded.checkpoint.params.config.vocab_size) +
                    " != vocab file size " + std::to_string(loaded.vocab.size()));
  }
  if (loaded.checkpoint.params.config.id_fusion == IdFusion::kEmbed &&
      loaded.checkpoint.params.config.num_items != static_cast<int>(loaded.catalog.size())) {
    throw DataError("stale artifacts: checkpoint id table does not match the catalog size");
  }
  return loaded;
}

// The user's full interaction sequence is the test prefix plus test target.
std::unordered_map<std::string, std::vector<std::string>> full_histories_from_test(
    const std::vector<SplitExample>& test) {
  std::unordered_map<std::string, std::vector<std::string>> histories;
  for (const auto& example : test) {
    std::vector<std::string> sequence = example.prefix;
    sequence.push_back(example.target);
    histories.emplace(example.user_id, std::move(sequence));
  }
  return histories;
}

json metrics_to_json(const MetricsReport& report) {
  json out = json::object();
  for (const auto& [name, value] : report.values) out[name] = value;
  return out;
}

}  // namespace

void cmd_preprocess(const RunConfig& config, std::ostream& out) {
  config.print_effective(out);
  config.require_seed();
  ensure_workdir(config);

  std::vector<InteractionRecord> records = ingest_interactions(config.get_string("paths.interactions"));
  const ItemCatalog catalog = ingest_items(config.get_string("paths.items"));

  const std::string min_ts = config.get_string("preprocess.min_timestamp");
  const std::string max_ts = config.get_string("preprocess.max_timestamp");
  if (!min_ts.empty() || !max_ts.empty()) {
    const std::int64_t low = min_ts.empty() ? 0 : std::stoll(min_ts);
    const std::int64_t high =
        max_ts.empty() ? std::numeric_limits<std::int64_t>::max() : std::stoll(max_ts);
    records = date_filter(records, low, high);
  }
  records = k_core_filter(records, config.get_int("preprocess.min_count"));
  for (const auto& record : records) {
    if (!catalog.contains(record.item_id)) {
      throw DataError("preprocess: interaction item missing from catalog: " + record.item_id);
    }
  }
  const std::vector<UserHistory> histories = build_histories(records);
  const DatasetSplit split = leave_one_out_split(histories);
  if (split.train.size() + 3 * histories.size() != records.size()) {
    throw DataError("preprocess: split identity violated: train + 3*users != actions");
  }

  write_split_file(config.workdir_path("train.jsonl"), split.train);
  write_split_file(config.workdir_path("dev.jsonl"), split.dev);
  write_split_file(config.workdir_path("test.jsonl"), split.test);

  std::unordered_set<std::string> item_ids;
  for (const auto& record : records) item_ids.insert(record.item_id);

  json stats;
  stats["users"] = histories.size();
  stats["items"] = item_ids.size();
  stats["actions"] = records.size();
  stats["train"] = split.train.size();
  stats["dev"] = split.dev.size();
  stats["test"] = split.test.size();
  stats["config"] = config_echo(config);
  write_json_file(config.workdir_path("stats.json"), stats);

  out << "preprocess: users=" << histories.size() << " items=" << item_ids.size()
      << " actions=" << records.size() << " train=" << split.train.size()
      << " dev=" << split.dev.size() << " test=" << split.test.size() << '\n';
}

void cmd_build_vocab(const RunConfig& config, std::ostream& out) {
  config.print_effective(out);
  config.require_seed();
  ensure_workdir(config);

  const ItemCatalog catalog = ingest_items(config.get_string("paths.items"));
  const std::vector<SplitExample> train = read_split_file(config.workdir_path("train.jsonl"));
  const VerbalizeConfig verbalize_config = config.verbalize_config();

  std::unordered_set<std::string> train_items;
  for (const auto& example : train) {
    train_items.insert(example.prefix.begin(), example.prefix.end());
    train_items.insert(example.target);
  }
  std::vector<std::string> texts;
  texts.reserve(train.size() + train_items.size());
  for (const auto& example : train) {
    texts.push_back(verbalize_history(example.prefix, catalog, example.user_id, verbalize_config));
  }
  for (const auto& item : catalog.items()) {
    if (train_items.count(item.item_id) > 0) texts.push_back(verbalize_item(item, verbalize_config));
  }

  const TokenVocab vocab = build_vocab(texts, static_cast<std::size_t>(config.get_int("vocab.max_size")));
  vocab.save(config.workdir_path("vocab.txt"));
  out << "build-vocab: tokens=" << vocab.size() << '\n';
}

void cmd_train(const RunConfig& config, std::ostream& out) {
  config.print_effective(out);
  ensure_workdir(config);

  const std::string vocab_path = config.workdir_path("vocab.txt");
  const TokenVocab vocab = TokenVocab::load(vocab_path);
  const std::uint64_t vocab_fingerprint = fingerprint_file(vocab_path);
  const ItemCatalog catalog = ingest_items(config.get_string("paths.items"));
  const std::vector<SplitExample> train_split = read_split_file(config.workdir_path("train.jsonl"));
  const std::vector<SplitExample> test_split = read_split_file(config.workdir_path("test.jsonl"));
  const VerbalizeConfig verbalize_config = config.verbalize_config();
  const NegativeStrategy strategy = config.negative_strategy();
  const TrainConfig train_config = config.train_config();

  const auto full_histories = full_histories_from_test(test_split);
  const bool embed_ids = config.get_string("model.id_fusion") == "embed";
  const TrainingData data = prepare_training_data(catalog, vocab, verbalize_config, train_split,
                                                  full_histories, embed_ids);
  const ModelConfig model_config =
      config.model_config(vocab.size(), static_cast<int>(catalog.size()),
                          static_cast<int>(data.user_row_index.size()));

  Parameters init_params_storage = Parameters::zeros(model_config);
  const Parameters* init = nullptr;
  const std::string init_path = config.get_string("train.init_checkpoint");
  if (strategy.kind == NegativeKind::kHard && init_path.empty()) {
    throw ConfigError("strategy=hard requires --init-checkpoint (a prior checkpoint to mine from)");
  }
  if (!init_path.empty()) {
    Checkpoint loaded = load_checkpoint(init_path);
    if (loaded.vocab_fingerprint != vocab_fingerprint) {
      throw DataError("stale artifacts: init checkpoint was trained against a different vocab file");
    }
    if (!(loaded.params.config == model_config)) {
      throw ConfigError("init checkpoint config does not match the requested model config");
    }
    init_params_storage = std::move(loaded.params);
    init = &init_params_storage;
  }

  std::ofstream log_stream(config.workdir_path("train_log.jsonl"));
  if (!log_stream) throw DataError("cannot write training log");
  const TrainResult result = train(model_config, train_config, strategy, data, init, &log_stream);

  save_checkpoint(config.workdir_path("checkpoint.bin"), result.params, vocab_fingerprint);
  out << "train: steps=" << result.log.size()
      << " final_loss=" << (result.log.empty() ? 0.0 : result.log.back().loss) << '\n';
}

void cmd_encode(const RunConfig& config, std::ostream& out) {
  config.print_effective(out);
  config.require_seed();
  const LoadedArtifacts loaded = load_model_artifacts(config);
  const CatalogEmbeddings embeddings =
      encode_catalog(loaded.checkpoint.params, loaded.catalog, loaded.vocab,
                     config.verbalize_config(), loaded.checkpoint_fingerprint,
                     config.get_int("threads"));
  write_embedding_file(config.workdir_path("catalog_embeddings.txt"), embeddings.item_ids,
                       embeddings.matrix);
  out << "encode: items=" << embeddings.item_ids.size() << '\n';
}

void cmd_evaluate(const RunConfig& config, std::ostream& out) {
  config.print_effective(out);
  config.require_seed();
  const LoadedArtifacts loaded = load_model_artifacts(config);
  const std::string which = config.get_string("eval.split");
  if (which != "test" && which != "dev") throw ConfigError("eval.split must be 'test' or 'dev'");
  const std::vector<SplitExample> split =
      read_split_file(config.workdir_path(which == "test" ? "test.jsonl" : "dev.jsonl"));

  EvaluateOptions options;
  options.ks = config.get_int_list("eval.ks");
  options.mask_history = config.get_bool("eval.mask_history");
  options.threads = config.get_int("threads");
  const EvaluationOutput evaluation =
      evaluate(loaded.checkpoint.params, loaded.catalog, loaded.vocab, config.verbalize_config(),
               split, options, loaded.checkpoint_fingerprint);

  json report;
  report["split"] = which;
  report["user_count"] = evaluation.report.user_count;
  report["mask_history"] = options.mask_history;
  report["checkpoint_fingerprint"] = fingerprint_hex(loaded.checkpoint_fingerprint);
  report["metrics"] = metrics_to_json(evaluation.report);
  report["config"] = config_echo(config);
  write_json_file(config.workdir_path(which == "test" ? "metrics.json" : "metrics_dev.json"), report);

  out << "evaluate:";
  for (const auto& [name, value] : evaluation.report.values) out << ' ' << name << '=' << value;
  out << '\n';
}

void cmd_analyze(const RunConfig& config, std::ostream& out) {
  config.print_effective(out);
  config.require_seed();
  const LoadedArtifacts loaded = load_model_artifacts(config);
  const VerbalizeConfig verbalize_config = config.verbalize_config();
  const std::vector<SplitExample> train_split = read_split_file(config.workdir_path("train.jsonl"));
  const std::vector<SplitExample> test_split = read_split_file(config.workdir_path("test.jsonl"));

  EvaluateOptions options;
  options.ks = config.get_int_list("eval.ks");
  options.threads = config.get_int("threads");
  const EvaluationOutput evaluation =
      evaluate(loaded.checkpoint.params, loaded.catalog, loaded.vocab, verbalize_config, test_split,
               options, loaded.checkpoint_fingerprint);

  const FrequencyTable frequency = item_frequency(train_split, loaded.catalog);
  const TailSplit tail = tail_split_by_ratio(frequency, config.get_double("analysis.tail_fraction"));
  std::vector<std::string> targets;
  targets.reserve(test_split.size());
  for (const auto& example : test_split) targets.push_back(example.target);
  const GroupedMetrics grouped = grouped_metrics(evaluation.rankings, targets, tail, options.ks);

  // popularity of recommendations: train-target counting (analysis default)
  const std::vector<std::string> popular_list = build_popular_set(
      count_train_targets(train_split), static_cast<std::size_t>(config.get_int("analysis.popular_set_size")));
  const std::unordered_set<std::string> popular_set(popular_list.begin(), popular_list.end());
  std::vector<std::string> catalog_ids;
  catalog_ids.reserve(loaded.catalog.size());
  for (const auto& item : loaded.catalog.items()) catalog_ids.push_back(item.item_id);
  const int top_k = config.get_int("analysis.top_k");
  const double popular = popular_ratio(evaluation.rankings, catalog_ids, popular_set, top_k);

  // text behavior of the top-k recommendations
  std::vector<std::vector<std::string>> texts_per_user;
  std::vector<std::string> gold_texts;
  texts_per_user.reserve(evaluation.rankings.size());
  gold_texts.reserve(evaluation.rankings.size());
  for (std::size_t i = 0; i < evaluation.rankings.size(); ++i) {
    const auto& ranking = evaluation.rankings[i];
    std::vector<std::string> texts;
    const int slots = std::min<int>(top_k, static_cast<int>(ranking.ranked.size()));
    for (int slot = 0; slot < slots; ++slot) {
      const auto row = static_cast<std::size_t>(ranking.ranked[static_cast<std::size_t>(slot)]);
      texts.push_back(verbalize_item(loaded.catalog[row], verbalize_config));
    }
    texts_per_user.push_back(std::move(texts));
    gold_texts.push_back(verbalize_item(loaded.catalog.at(test_split[i].target), verbalize_config));
  }
  const double dist1 = dist_n(texts_per_user, 1);
  const double dist2 = dist_n(texts_per_user, 2);
  const double bleu = bleu4_against_gold(texts_per_user, gold_texts);

  json report;
  report["checkpoint_fingerprint"] = fingerprint_hex(loaded.checkpoint_fingerprint);
  report["frequency"] = {{"total", frequency.total},
                         {"distinct_target_items",
                          std::count_if(frequency.counts.begin(), frequency.counts.end(),
                                        [](std::int64_t c) { return c > 0; })},
                         {"max_count", *std::max_element(frequency.counts.begin(), frequency.counts.end())}};
  report["tail_split"] = {{"threshold", tail.threshold},
                          {"requested_tail_fraction", config.get_double("analysis.tail_fraction")},
                          {"achieved_ratio", tail.achieved_ratio},
                          {"long_tail_items", tail.long_tail.size()},
                          {"head_items", tail.head.size()}};
  report["grouped_metrics"] = {{"long_tail",
                                {{"user_count", grouped.long_tail.user_count},
                                 {"metrics", metrics_to_json(grouped.long_tail)}}},
                               {"head",
                                {{"user_count", grouped.head.user_count},
                                 {"metrics", metrics_to_json(grouped.head)}}}};
  report["popular_ratio"] = popular;
  report["dist_protocol"] = "per_user_mean";
  report["dist_1"] = dist1;
  report["dist_2"] = dist2;
  report["bleu_4"] = bleu;
  report["overall_metrics"] = metrics_to_json(evaluation.report);
  report["config"] = config_echo(config);
  write_json_file(config.workdir_path("analysis.json"), report);

  out << "analyze: threshold=" << tail.threshold << " achieved_ratio=" << tail.achieved_ratio
      << " popular_ratio=" << popular << " dist1=" << dist1 << " dist2=" << dist2
      << " bleu4=" << bleu << '\n';
}

void cmd_export_embeddings(const RunConfig& config, std::ostream& out) {
  config.print_effective(out);
  const std::uint64_t seed = config.require_seed();
  const LoadedArtifacts loaded = load_model_artifacts(config);
  const std::vector<SplitExample> train_split = read_split_file(config.workdir_path("train.jsonl"));

  const CatalogEmbeddings embeddings =
      encode_catalog(loaded.checkpoint.params, loaded.catalog, loaded.vocab,
                     config.verbalize_config(), loaded.checkpoint_fingerprint,
                     config.get_int("threads"));
  const std::vector<std::string> popular_list = build_popular_set(
      count_train_targets(train_split), static_cast<std::size_t>(config.get_int("analysis.popular_set_size")));
  const std::unordered_set<std::string> popular_set(popular_list.begin(), popular_list.end());
  const EmbeddingExport selection = select_export_embeddings(
      embeddings, popular_set, static_cast<std::size_t>(config.get_int("analysis.export_per_group")), seed);
  write_embedding_file(config.workdir_path("embedding_export.txt"), selection.item_ids,
                       selection.matrix, &selection.labels);
  out << "export-embeddings: rows=" << selection.item_ids.size() << '\n';
}

}  // namespace textrec

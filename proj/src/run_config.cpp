#include "textrec/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>

#include "textrec/errors.hpp"

namespace textrec {

namespace {

const std::map<std::string, std::string>& default_values() {
  static const std::map<std::string, std::string> defaults = {
      {"paths.interactions", ""},
      {"paths.items", ""},
      {"paths.workdir", "work"},
      {"preprocess.min_count", "5"},
      {"preprocess.min_timestamp", ""},
      {"preprocess.max_timestamp", ""},
      {"verbalize.attributes", ""},
      {"verbalize.include_item_id", "true"},
      {"verbalize.include_user_id", "false"},
      {"verbalize.item_max_tokens", "32"},
      {"verbalize.history_max_tokens", "512"},
      {"vocab.max_size", "20000"},
      {"model.hidden_dim", "64"},
      {"model.num_heads", "4"},
      {"model.ffn_dim", "256"},
      {"model.encoder_layers", "2"},
      {"model.decoder_layers", "1"},
      {"model.sessions", "2x256"},
      {"model.dropout", "0"},
      {"model.id_fusion", "off"},
      {"train.batch_size", "8"},
      {"train.learning_rate", "1e-4"},
      {"train.warmup_proportion", "0.1"},
      {"train.total_steps", "1000"},
      {"train.gradient_clip_norm", "0"},
      {"train.adam_beta1", "0.9"},
      {"train.adam_beta2", "0.999"},
      {"train.adam_eps", "1e-8"},
      {"train.per_example_negatives", "false"},
      {"train.init_checkpoint", ""},
      {"negatives.kind", "random"},
      {"negatives.per_example", "9"},
      {"negatives.popular_set_size", "500"},
      {"negatives.hard_pool_size", "100"},
      {"negatives.counting", "full"},
      {"negatives.remine_every", "0"},
      {"eval.ks", "10,20"},
      {"eval.split", "test"},
      {"eval.mask_history", "false"},
      {"analysis.tail_fraction", "0.2"},
      {"analysis.top_k", "5"},
      {"analysis.popular_set_size", "500"},
      {"analysis.export_per_group", "50"},
      {"seed", ""},
      {"threads", "1"},
  };
  return defaults;
}

std::string trim(const std::string& text) {
  const auto begin = text.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = text.find_last_not_of(" \t\r");
  return text.substr(begin, end - begin + 1);
}

std::pair<int, int> parse_sessions(const std::string& value) {
  const auto x = value.find('x');
  if (x == std::string::npos) {
    throw ConfigError("model.sessions must look like NxM (e.g. 2x256): " + value);
  }
  try {
    const int n = std::stoi(value.substr(0, x));
    const int m = std::stoi(value.substr(x + 1));
    if (n < 1 || m < 1) throw ConfigError("model.sessions values must be >= 1");
    return {n, m};
  } catch (const std::invalid_argument&) {
    throw ConfigError("model.sessions must look like NxM (e.g. 2x256): " + value);
  } catch (const std::out_of_range&) {
    throw ConfigError("model.sessions out of range: " + value);
  }
}

}  // namespace

RunConfig::RunConfig() : values_(default_values()) {}

void RunConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key = value");
    }
    set(trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)));
  }
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key: " + key);
  it->second = value;
  explicit_.insert(key);
}

bool RunConfig::is_set(const std::string& key) const { return explicit_.count(key) > 0; }

const std::string& RunConfig::get_string(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key: " + key);
  return it->second;
}

int RunConfig::get_int(const std::string& key) const {
  const std::string& value = get_string(key);
  try {
    return std::stoi(value);
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " must be an integer, got '" + value + "'");
  }
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  const std::string& value = get_string(key);
  try {
    return std::stoull(value);
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " must be a non-negative integer, got '" + value + "'");
  }
}

double RunConfig::get_double(const std::string& key) const {
  const std::string& value = get_string(key);
  try {
    return std::stod(value);
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " must be a number, got '" + value + "'");
  }
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& value = get_string(key);
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("config key " + key + " must be a boolean, got '" + value + "'");
}

std::vector<int> RunConfig::get_int_list(const std::string& key) const {
  std::vector<int> out;
  for (const auto& piece : get_string_list(key)) {
    try {
      out.push_back(std::stoi(piece));
    } catch (const std::exception&) {
      throw ConfigError("config key " + key + " must be a comma-separated integer list");
    }
  }
  return out;
}

std::vector<std::string> RunConfig::get_string_list(const std::string& key) const {
  const std::string& value = get_string(key);
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= value.size()) {
    const auto comma = value.find(',', start);
    const std::string piece =
        trim(comma == std::string::npos ? value.substr(start) : value.substr(start, comma - start));
    if (!piece.empty()) out.push_back(piece);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

std::uint64_t RunConfig::require_seed() const {
  if (get_string("seed").empty()) {
    throw ConfigError("seed is required (set seed = N in the config or pass --seed)");
  }
  return get_u64("seed");
}

void RunConfig::print_effective(std::ostream& out) const {
  out << "# effective config\n";
  for (const auto& [key, value] : values_) {
    out << key << " = " << value << '\n';
  }
}

VerbalizeConfig RunConfig::verbalize_config() const {
  VerbalizeConfig config;
  config.attribute_names = get_string_list("verbalize.attributes");
  config.include_item_id = get_bool("verbalize.include_item_id");
  config.include_user_id = get_bool("verbalize.include_user_id");
  config.item_max_tokens = get_int("verbalize.item_max_tokens");
  config.history_max_tokens = get_int("verbalize.history_max_tokens");
  config.finalize();
  return config;
}

ModelConfig RunConfig::model_config(int vocab_size, int num_items, int num_users) const {
  ModelConfig config;
  config.vocab_size = vocab_size;
  config.hidden_dim = get_int("model.hidden_dim");
  config.num_heads = get_int("model.num_heads");
  config.ffn_dim = get_int("model.ffn_dim");
  config.encoder_layers = get_int("model.encoder_layers");
  config.decoder_layers = get_int("model.decoder_layers");
  const auto [n, m] = parse_sessions(get_string("model.sessions"));
  config.num_sessions = n;
  config.max_session_len = std::max(m, get_int("verbalize.item_max_tokens"));
  config.dropout_rate = get_double("model.dropout");
  config.id_fusion = id_fusion_from_string(get_string("model.id_fusion"));
  config.num_items = config.id_fusion == IdFusion::kEmbed ? num_items : 0;
  config.num_users = config.id_fusion == IdFusion::kEmbed ? num_users : 0;
  config.validate();
  return config;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig config;
  config.batch_size = get_int("train.batch_size");
  const bool hard = get_string("negatives.kind") == "hard";
  // the hard-negative stage defaults to lr 5e-5 and no warmup
  config.learning_rate =
      !is_set("train.learning_rate") && hard ? 5e-5 : get_double("train.learning_rate");
  config.warmup_proportion =
      !is_set("train.warmup_proportion") && hard ? 0.0 : get_double("train.warmup_proportion");
  config.total_steps = get_int("train.total_steps");
  config.seed = require_seed();
  config.adam_beta1 = get_double("train.adam_beta1");
  config.adam_beta2 = get_double("train.adam_beta2");
  config.adam_eps = get_double("train.adam_eps");
  config.gradient_clip_norm = get_double("train.gradient_clip_norm");
  config.per_example_negatives = get_bool("train.per_example_negatives");
  return config;
}

NegativeStrategy RunConfig::negative_strategy() const {
  NegativeStrategy strategy;
  strategy.kind = negative_kind_from_string(get_string("negatives.kind"));
  strategy.negatives_per_example = get_int("negatives.per_example");
  strategy.popular_set_size = get_int("negatives.popular_set_size");
  strategy.hard_pool_size = get_int("negatives.hard_pool_size");
  const std::string counting = get_string("negatives.counting");
  if (counting == "full") {
    strategy.counting = PopularityCounting::kFullDataset;
  } else if (counting == "targets") {
    strategy.counting = PopularityCounting::kTrainTargets;
  } else {
    throw ConfigError("negatives.counting must be 'full' or 'targets'");
  }
  strategy.remine_every = get_int("negatives.remine_every");
  strategy.validate();
  return strategy;
}

std::string RunConfig::workdir_path(const std::string& artifact) const {
  std::string dir = get_string("paths.workdir");
  if (dir.empty()) dir = ".";
  if (dir.back() != '/') dir += '/';
  return dir + artifact;
}

}  // namespace textrec

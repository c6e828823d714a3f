#include "textrec/verbalize.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include "textrec/errors.hpp"

namespace textrec {

namespace {

std::size_t count_occurrences(const std::string& text, const std::string& needle) {
  std::size_t count = 0;
  for (std::size_t pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + needle.size())) {
    ++count;
  }
  return count;
}

std::string replace_once(std::string text, const std::string& placeholder, const std::string& value) {
  const std::size_t pos = text.find(placeholder);
  if (pos != std::string::npos) text.replace(pos, placeholder.size(), value);
  return text;
}

bool is_punct(unsigned char c) {
  return std::ispunct(c) != 0;
}

bool is_space(unsigned char c) {
  return std::isspace(c) != 0;
}

}  // namespace

void VerbalizeConfig::finalize() {
  if (history_template.empty()) {
    history_template = include_user_id ? kHistoryTemplateWithUser : kHistoryTemplate;
  }
  if (count_occurrences(history_template, "{history}") != 1) {
    throw ConfigError("history_template must contain {history} exactly once");
  }
  const bool has_user = count_occurrences(history_template, "{user}") > 0;
  if (has_user != include_user_id) {
    throw ConfigError("history_template must contain {user} iff include_user_id is set");
  }
  if (item_max_tokens < 1 || history_max_tokens < 1) {
    throw ConfigError("token caps must be >= 1");
  }
}

std::string verbalize_item(const ItemRecord& item, const VerbalizeConfig& config) {
  std::string text;
  if (config.include_item_id) {
    text = "id: " + item.item_id;
  }
  for (const auto& name : config.attribute_names) {
    const std::string* value = item.attribute(name);
    if (value == nullptr) continue;  // configured attributes missing on the item are skipped
    if (!text.empty()) text += ' ';
    text += name + ": " + *value;
  }
  return text;
}

std::string verbalize_history(const std::vector<std::string>& item_ids_oldest_first,
                              const ItemCatalog& catalog,
                              const std::string& user_id,
                              const VerbalizeConfig& config) {
  if (item_ids_oldest_first.empty()) {
    throw DataError("verbalize_history: empty history");
  }
  std::string joined;
  // newest first, so truncation later drops the oldest interactions
  for (auto it = item_ids_oldest_first.rbegin(); it != item_ids_oldest_first.rend(); ++it) {
    if (!joined.empty()) joined += ", ";
    joined += verbalize_item(catalog.at(*it), config);
  }
  std::string text = config.history_template;
  if (config.include_user_id) text = replace_once(std::move(text), "{user}", user_id);
  return replace_once(std::move(text), "{history}", joined);
}

std::vector<std::string> split_tokens(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (const char c : text) {
    const auto uc = static_cast<unsigned char>(c);
    if (is_space(uc)) {
      if (!current.empty()) {
        tokens.push_back(std::move(current));
        current.clear();
      }
    } else if (is_punct(uc)) {
      if (!current.empty()) {
        tokens.push_back(std::move(current));
        current.clear();
      }
      tokens.emplace_back(1, c);
    } else {
      current.push_back(c);
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

TokenVocab::TokenVocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  token_to_id_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    token_to_id_.emplace(tokens_[i], static_cast<int>(i) + kNumSpecials);
  }
}

int TokenVocab::id_of(const std::string& token) const {
  const auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& TokenVocab::token_at(int id) const {
  return tokens_.at(static_cast<std::size_t>(id - kNumSpecials));
}

void TokenVocab::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write vocab file: " + path);
  out << "#specials PAD UNK DECODER_START\n";
  for (const auto& token : tokens_) out << token << '\n';
}

TokenVocab TokenVocab::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocab file: " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("#specials", 0) != 0) {
    throw DataError("vocab file missing #specials header: " + path);
  }
  std::vector<std::string> tokens;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    tokens.push_back(line);
  }
  return TokenVocab(std::move(tokens));
}

TokenVocab build_vocab(const std::vector<std::string>& texts, std::size_t max_size) {
  if (max_size < 4) throw ConfigError("build_vocab: max_size must be >= 4");
  std::map<std::string, std::size_t> counts;  // ordered map gives the lexicographic tie-break
  for (const auto& text : texts) {
    for (auto& token : split_tokens(text)) ++counts[std::move(token)];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  const std::size_t keep = std::min(ranked.size(), max_size - TokenVocab::kNumSpecials);
  std::vector<std::string> tokens;
  tokens.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) tokens.push_back(ranked[i].first);
  return TokenVocab(std::move(tokens));
}

TokenSequence tokenize(const std::string& text, const TokenVocab& vocab, std::size_t max_len) {
  if (max_len < 1) throw ConfigError("tokenize: max_len must be >= 1");
  const std::vector<std::string> tokens = split_tokens(text);
  TokenSequence sequence;
  sequence.original_length = tokens.size();
  const std::size_t keep = std::min(tokens.size(), max_len);
  sequence.ids.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) sequence.ids.push_back(vocab.id_of(tokens[i]));
  return sequence;
}

std::size_t SessionBatch::real_token_count() const {
  std::size_t count = 0;
  for (const auto& row : attention_mask) {
    for (const auto flag : row) count += flag != 0;
  }
  return count;
}

SessionBatch split_sessions(const TokenSequence& tokens, int num_sessions, int session_len) {
  if (num_sessions < 1 || session_len < 1) {
    throw ConfigError("split_sessions: n and m must be >= 1");
  }
  SessionBatch batch;
  batch.num_sessions = num_sessions;
  batch.session_len = session_len;
  batch.sessions.assign(static_cast<std::size_t>(num_sessions),
                        std::vector<int>(static_cast<std::size_t>(session_len), TokenVocab::kPad));
  batch.attention_mask.assign(static_cast<std::size_t>(num_sessions),
                              std::vector<std::uint8_t>(static_cast<std::size_t>(session_len), 0));
  const std::size_t capacity = static_cast<std::size_t>(num_sessions) * static_cast<std::size_t>(session_len);
  const std::size_t used = std::min(tokens.ids.size(), capacity);
  for (std::size_t i = 0; i < used; ++i) {
    const std::size_t row = i / static_cast<std::size_t>(session_len);
    const std::size_t col = i % static_cast<std::size_t>(session_len);
    batch.sessions[row][col] = tokens.ids[i];
    batch.attention_mask[row][col] = 1;
  }
  return batch;
}

SessionBatch single_session(const TokenSequence& tokens) {
  if (tokens.ids.empty()) throw DataError("single_session: empty token sequence");
  SessionBatch batch;
  batch.num_sessions = 1;
  batch.session_len = static_cast<int>(tokens.ids.size());
  batch.sessions.push_back(tokens.ids);
  batch.attention_mask.emplace_back(tokens.ids.size(), 1);
  return batch;
}

}  // namespace textrec

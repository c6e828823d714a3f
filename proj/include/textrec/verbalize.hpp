#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "textrec/corpus.hpp"

namespace textrec {

inline constexpr const char* kHistoryTemplate =
    "Here is the visit history list of user: {history} recommend next item";
inline constexpr const char* kHistoryTemplateWithUser =
    "Here is the visit history list of user_{user}: {history} recommend next item";

// Controls how items and histories are rendered as text.
struct VerbalizeConfig {
  std::vector<std::string> attribute_names;  // template order
  bool include_item_id = true;
  bool include_user_id = false;
  std::string history_template;  // defaulted from include_user_id when empty
  int item_max_tokens = 32;
  int history_max_tokens = 512;

  // Resolves the default template and checks placeholder rules:
  // {history} exactly once, {user} present iff include_user_id.
  void finalize();
};

std::string verbalize_item(const ItemRecord& item, const VerbalizeConfig& config);

// Items newest-first, joined by ", ", substituted into the template.
std::string verbalize_history(const std::vector<std::string>& item_ids_oldest_first,
                              const ItemCatalog& catalog,
                              const std::string& user_id,
                              const VerbalizeConfig& config);

// Whitespace split, then punctuation characters become their own tokens.
std::vector<std::string> split_tokens(std::string_view text);

class TokenVocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kDecoderStart = 2;
  static constexpr int kNumSpecials = 3;

  TokenVocab() = default;
  explicit TokenVocab(std::vector<std::string> tokens);

  int size() const { return static_cast<int>(tokens_.size()) + kNumSpecials; }
  int id_of(const std::string& token) const;  // kUnk when absent
  const std::string& token_at(int id) const;  // id >= kNumSpecials
  const std::vector<std::string>& tokens() const { return tokens_; }

  void save(const std::string& path) const;
  static TokenVocab load(const std::string& path);

 private:
  std::vector<std::string> tokens_;  // id = index + kNumSpecials
  std::unordered_map<std::string, int> token_to_id_;
};

// Frequency-descending, ties lexicographic ascending; top max_size - 3 kept.
TokenVocab build_vocab(const std::vector<std::string>& texts, std::size_t max_size);

struct TokenSequence {
  std::vector<int> ids;
  std::size_t original_length = 0;  // before truncation
};

// Unknown tokens map to UNK; keeps the first max_len tokens.
TokenSequence tokenize(const std::string& text, const TokenVocab& vocab, std::size_t max_len);

// n rows of m token ids; PAD-filled, mask marks real tokens.
struct SessionBatch {
  int num_sessions = 0;
  int session_len = 0;
  std::vector<std::vector<int>> sessions;
  std::vector<std::vector<std::uint8_t>> attention_mask;

  std::size_t real_token_count() const;
};

// Contiguous chunking into n rows of m; tokens beyond n*m are dropped.
SessionBatch split_sessions(const TokenSequence& tokens, int num_sessions, int session_len);

// Single session holding the whole (short) sequence, no padding.
SessionBatch single_session(const TokenSequence& tokens);

}  // namespace textrec

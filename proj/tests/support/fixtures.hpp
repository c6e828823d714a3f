#pragma once

// Synthetic corpora for tests. The rotation corpus is built so that the
// history text predicts the target: user u interacts with consecutive items
// s, s+1, ... (mod catalog), so every next item is succ(newest item).

#include <cstdint>
#include <string>
#include <vector>

#include "textrec/corpus.hpp"

namespace textrec::testing {

inline std::string item_name(int index) {
  char buffer[16];
  std::snprintf(buffer, sizeof(buffer), "i%03d", index);
  return buffer;
}

inline std::string user_name(int index) {
  char buffer[16];
  std::snprintf(buffer, sizeof(buffer), "u%03d", index);
  return buffer;
}

struct SyntheticCorpus {
  std::vector<InteractionRecord> interactions;
  std::vector<ItemRecord> items;
};

// history_len_min..history_len_max interactions per user (cycled), items
// visited consecutively modulo the catalog starting at user_index.
inline SyntheticCorpus make_rotation_corpus(int num_users, int num_items, int history_len_min,
                                            int history_len_max) {
  SyntheticCorpus corpus;
  corpus.items.reserve(static_cast<std::size_t>(num_items));
  for (int i = 0; i < num_items; ++i) {
    ItemRecord item;
    item.item_id = item_name(i);
    item.attributes.emplace_back("title", "w" + std::to_string(i));
    corpus.items.push_back(std::move(item));
  }
  const int spread = history_len_max - history_len_min + 1;
  for (int u = 0; u < num_users; ++u) {
    const int length = history_len_min + (u % spread);
    const int start = u % num_items;
    for (int t = 0; t < length; ++t) {
      InteractionRecord record;
      record.user_id = user_name(u);
      record.item_id = item_name((start + t) % num_items);
      record.timestamp = 1000 + t;
      corpus.interactions.push_back(std::move(record));
    }
  }
  return corpus;
}

}  // namespace textrec::testing

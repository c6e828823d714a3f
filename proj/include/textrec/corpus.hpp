#pragma once

#include <cstdint>
#include <istream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace textrec {

// One implicit-feedback event: the user interacted with the item at a time.
struct InteractionRecord {
  std::string user_id;
  std::string item_id;
  std::int64_t timestamp = 0;
};

// Item identity plus its attributes in input order (order drives templating).
struct ItemRecord {
  std::string item_id;
  std::vector<std::pair<std::string, std::string>> attributes;

  const std::string* attribute(const std::string& name) const;
};

// Time-ordered interaction sequence of one user, oldest first.
struct UserHistory {
  std::string user_id;
  std::vector<std::string> items;
};

// One next-item example: predict `target` from the contiguous `prefix`.
struct SplitExample {
  std::string user_id;
  std::vector<std::string> prefix;
  std::string target;
};

struct DatasetSplit {
  std::vector<SplitExample> train;
  std::vector<SplitExample> dev;
  std::vector<SplitExample> test;
};

// Item catalog preserving file order, with id lookup.
class ItemCatalog {
 public:
  ItemCatalog() = default;
  explicit ItemCatalog(std::vector<ItemRecord> items);

  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  const ItemRecord& operator[](std::size_t row) const { return items_[row]; }
  const std::vector<ItemRecord>& items() const { return items_; }

  bool contains(const std::string& item_id) const;
  // Catalog row of the item; throws DataError when absent.
  std::size_t row_of(const std::string& item_id) const;
  const ItemRecord& at(const std::string& item_id) const;

 private:
  std::vector<ItemRecord> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Tab-separated interactions: user_id, item_id, timestamp. Malformed lines
// are an error, not skipped.
std::vector<InteractionRecord> parse_interactions(std::istream& in, const std::string& origin);
std::vector<InteractionRecord> ingest_interactions(const std::string& path);

// JSONL item catalog: {"item_id": "...", "attributes": [["name","value"], ...]}.
std::vector<ItemRecord> parse_items(std::istream& in, const std::string& origin);
ItemCatalog ingest_items(const std::string& path);

// Keeps records with min_timestamp <= t <= max_timestamp (both inclusive).
std::vector<InteractionRecord> date_filter(const std::vector<InteractionRecord>& records,
                                           std::int64_t min_timestamp,
                                           std::int64_t max_timestamp);

// Iterates to fixpoint: removes every record of any user or item whose
// current count is below min_count, until nothing changes. Preserves order.
std::vector<InteractionRecord> k_core_filter(const std::vector<InteractionRecord>& records,
                                             int min_count = 5);

// One history per user, items sorted by timestamp, ties by input order.
// Histories come out in order of each user's first appearance.
std::vector<UserHistory> build_histories(const std::vector<InteractionRecord>& records);

// Leave-one-out: test = (v1..vT-1 -> vT), dev = (v1..vT-2 -> vT-1),
// train = {(v1..vi-1 -> vi) : 2 <= i <= T-2}. Requires every T >= 4.
DatasetSplit leave_one_out_split(const std::vector<UserHistory>& histories);

// Split files: one JSON object per line {"user_id", "prefix", "target"}.
void write_split_file(const std::string& path, const std::vector<SplitExample>& examples);
std::vector<SplitExample> read_split_file(const std::string& path);

void write_items_file(const std::string& path, const std::vector<ItemRecord>& items);
void write_interactions_file(const std::string& path, const std::vector<InteractionRecord>& records);

}  // namespace textrec

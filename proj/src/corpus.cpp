#include "textrec/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "textrec/errors.hpp"

namespace textrec {

namespace {

using json = nlohmann::ordered_json;

std::ifstream open_or_throw(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file: " + path);
  return in;
}

std::int64_t parse_timestamp(const std::string& field, const std::string& origin, std::size_t line_no) {
  std::int64_t value = 0;
  const char* begin = field.data();
  const char* end = begin + field.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end) {
    throw DataError(origin + ":" + std::to_string(line_no) + ": non-integer timestamp '" + field + "'");
  }
  if (value < 0) {
    throw DataError(origin + ":" + std::to_string(line_no) + ": negative timestamp");
  }
  return value;
}

}  // namespace

const std::string* ItemRecord::attribute(const std::string& name) const {
  for (const auto& [attr_name, attr_value] : attributes) {
    if (attr_name == name) return &attr_value;
  }
  return nullptr;
}

ItemCatalog::ItemCatalog(std::vector<ItemRecord> items) : items_(std::move(items)) {
  index_.reserve(items_.size());
  for (std::size_t row = 0; row < items_.size(); ++row) {
    const auto [_, inserted] = index_.emplace(items_[row].item_id, row);
    if (!inserted) throw DataError("duplicate item_id in catalog: " + items_[row].item_id);
  }
}

bool ItemCatalog::contains(const std::string& item_id) const {
  return index_.find(item_id) != index_.end();
}

std::size_t ItemCatalog::row_of(const std::string& item_id) const {
  const auto it = index_.find(item_id);
  if (it == index_.end()) throw DataError("item not in catalog: " + item_id);
  return it->second;
}

const ItemRecord& ItemCatalog::at(const std::string& item_id) const {
  return items_[row_of(item_id)];
}

std::vector<InteractionRecord> parse_interactions(std::istream& in, const std::string& origin) {
  std::vector<InteractionRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::size_t tab1 = line.find('\t');
    const std::size_t tab2 = tab1 == std::string::npos ? std::string::npos : line.find('\t', tab1 + 1);
    if (tab1 == std::string::npos || tab2 == std::string::npos ||
        line.find('\t', tab2 + 1) != std::string::npos) {
      throw DataError(origin + ":" + std::to_string(line_no) +
                      ": expected 3 tab-separated fields (user_id, item_id, timestamp)");
    }
    InteractionRecord record;
    record.user_id = line.substr(0, tab1);
    record.item_id = line.substr(tab1 + 1, tab2 - tab1 - 1);
    if (record.user_id.empty() || record.item_id.empty()) {
      throw DataError(origin + ":" + std::to_string(line_no) + ": empty user_id or item_id");
    }
    record.timestamp = parse_timestamp(line.substr(tab2 + 1), origin, line_no);
    records.push_back(std::move(record));
  }
  return records;
}

std::vector<InteractionRecord> ingest_interactions(const std::string& path) {
  std::ifstream in = open_or_throw(path);
  return parse_interactions(in, path);
}

std::vector<ItemRecord> parse_items(std::istream& in, const std::string& origin) {
  std::vector<ItemRecord> items;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    json parsed;
    try {
      parsed = json::parse(line);
    } catch (const json::parse_error& err) {
      throw DataError(origin + ":" + std::to_string(line_no) + ": invalid JSON: " + err.what());
    }
    if (!parsed.is_object() || !parsed.contains("item_id") || !parsed["item_id"].is_string()) {
      throw DataError(origin + ":" + std::to_string(line_no) + ": missing string field 'item_id'");
    }
    ItemRecord item;
    item.item_id = parsed["item_id"].get<std::string>();
    if (item.item_id.empty()) {
      throw DataError(origin + ":" + std::to_string(line_no) + ": empty item_id");
    }
    if (parsed.contains("attributes")) {
      if (!parsed["attributes"].is_array()) {
        throw DataError(origin + ":" + std::to_string(line_no) + ": 'attributes' must be an array of pairs");
      }
      for (const auto& entry : parsed["attributes"]) {
        if (!entry.is_array() || entry.size() != 2 || !entry[0].is_string() || !entry[1].is_string()) {
          throw DataError(origin + ":" + std::to_string(line_no) + ": attribute entries must be [name, value] string pairs");
        }
        const std::string name = entry[0].get<std::string>();
        if (item.attribute(name) != nullptr) {
          throw DataError(origin + ":" + std::to_string(line_no) + ": duplicate attribute name '" + name + "'");
        }
        item.attributes.emplace_back(name, entry[1].get<std::string>());
      }
    }
    items.push_back(std::move(item));
  }
  return items;
}

ItemCatalog ingest_items(const std::string& path) {
  std::ifstream in = open_or_throw(path);
  return ItemCatalog(parse_items(in, path));
}

std::vector<InteractionRecord> date_filter(const std::vector<InteractionRecord>& records,
                                           std::int64_t min_timestamp,
                                           std::int64_t max_timestamp) {
  if (min_timestamp > max_timestamp) {
    throw ConfigError("date_filter: min_timestamp > max_timestamp");
  }
  std::vector<InteractionRecord> kept;
  kept.reserve(records.size());
  for (const auto& record : records) {
    if (record.timestamp >= min_timestamp && record.timestamp <= max_timestamp) {
      kept.push_back(record);
    }
  }
  return kept;
}

std::vector<InteractionRecord> k_core_filter(const std::vector<InteractionRecord>& records,
                                             int min_count) {
  if (min_count < 1) throw ConfigError("k_core_filter: min_count must be >= 1");
  std::vector<InteractionRecord> current = records;
  bool changed = true;
  while (changed) {
    changed = false;
    std::unordered_map<std::string, int> user_counts;
    std::unordered_map<std::string, int> item_counts;
    for (const auto& record : current) {
      ++user_counts[record.user_id];
      ++item_counts[record.item_id];
    }
    std::vector<InteractionRecord> next;
    next.reserve(current.size());
    for (auto& record : current) {
      if (user_counts[record.user_id] >= min_count && item_counts[record.item_id] >= min_count) {
        next.push_back(std::move(record));
      } else {
        changed = true;
      }
    }
    current = std::move(next);
  }
  return current;
}

std::vector<UserHistory> build_histories(const std::vector<InteractionRecord>& records) {
  std::vector<std::string> user_order;
  std::unordered_map<std::string, std::vector<std::size_t>> per_user;
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto [it, inserted] = per_user.try_emplace(records[i].user_id);
    if (inserted) user_order.push_back(records[i].user_id);
    it->second.push_back(i);
  }
  std::vector<UserHistory> histories;
  histories.reserve(user_order.size());
  for (const auto& user_id : user_order) {
    auto& indices = per_user[user_id];
    // stable sort keeps file order for equal timestamps
    std::stable_sort(indices.begin(), indices.end(), [&](std::size_t a, std::size_t b) {
      return records[a].timestamp < records[b].timestamp;
    });
    UserHistory history;
    history.user_id = user_id;
    history.items.reserve(indices.size());
    for (const std::size_t idx : indices) history.items.push_back(records[idx].item_id);
    histories.push_back(std::move(history));
  }
  return histories;
}

DatasetSplit leave_one_out_split(const std::vector<UserHistory>& histories) {
  DatasetSplit split;
  for (const auto& history : histories) {
    const std::size_t length = history.items.size();
    if (length < 4) {
      throw DataError("leave_one_out_split: user " + history.user_id + " has history length " +
                      std::to_string(length) + " < 4");
    }
    const auto& items = history.items;
    // train: predict v_i from v_1..v_{i-1} for 2 <= i <= T-2
    for (std::size_t i = 2; i + 2 <= length; ++i) {
      SplitExample example;
      example.user_id = history.user_id;
      example.prefix.assign(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(i - 1));
      example.target = items[i - 1];
      split.train.push_back(std::move(example));
    }
    SplitExample dev_example;
    dev_example.user_id = history.user_id;
    dev_example.prefix.assign(items.begin(), items.end() - 2);
    dev_example.target = items[length - 2];
    split.dev.push_back(std::move(dev_example));

    SplitExample test_example;
    test_example.user_id = history.user_id;
    test_example.prefix.assign(items.begin(), items.end() - 1);
    test_example.target = items[length - 1];
    split.test.push_back(std::move(test_example));
  }
  return split;
}

void write_split_file(const std::string& path, const std::vector<SplitExample>& examples) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write file: " + path);
  for (const auto& example : examples) {
    json row;
    row["user_id"] = example.user_id;
    row["prefix"] = example.prefix;
    row["target"] = example.target;
    out << row.dump() << '\n';
  }
}

std::vector<SplitExample> read_split_file(const std::string& path) {
  std::ifstream in = open_or_throw(path);
  std::vector<SplitExample> examples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json row;
    try {
      row = json::parse(line);
    } catch (const json::parse_error& err) {
      throw DataError(path + ":" + std::to_string(line_no) + ": invalid JSON: " + err.what());
    }
    SplitExample example;
    example.user_id = row.at("user_id").get<std::string>();
    example.prefix = row.at("prefix").get<std::vector<std::string>>();
    example.target = row.at("target").get<std::string>();
    if (example.prefix.empty()) {
      throw DataError(path + ":" + std::to_string(line_no) + ": empty prefix");
    }
    examples.push_back(std::move(example));
  }
  return examples;
}

void write_items_file(const std::string& path, const std::vector<ItemRecord>& items) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write file: " + path);
  for (const auto& item : items) {
    json row;
    row["item_id"] = item.item_id;
    json attrs = json::array();
    for (const auto& [name, value] : item.attributes) {
      attrs.push_back(json::array({name, value}));
    }
    row["attributes"] = attrs;
    out << row.dump() << '\n';
  }
}

void write_interactions_file(const std::string& path, const std::vector<InteractionRecord>& records) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write file: " + path);
  for (const auto& record : records) {
    out << record.user_id << '\t' << record.item_id << '\t' << record.timestamp << '\n';
  }
}

}  // namespace textrec

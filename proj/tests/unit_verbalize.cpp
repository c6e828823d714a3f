#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "textrec/errors.hpp"
#include "textrec/verbalize.hpp"

using namespace textrec;

namespace {

VerbalizeConfig yelp_config() {
  VerbalizeConfig config;
  config.attribute_names = {"title", "address"};
  config.finalize();
  return config;
}

ItemRecord domazing() {
  ItemRecord item;
  item.item_id = "5908";
  item.attributes = {{"title", "DoMazing"},
                     {"address", "6659 S Las Vegas Blvd, Ste B-101 Las Vegas NV"}};
  return item;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

}  // namespace

TEST_CASE("verbalize_item renders id and attributes in config order") {
  CHECK(verbalize_item(domazing(), yelp_config()) ==
        "id: 5908 title: DoMazing address: 6659 S Las Vegas Blvd, Ste B-101 Las Vegas NV");
}

TEST_CASE("verbalize_item with a name-only catalog") {
  ItemRecord item;
  item.item_id = "10918";
  item.attributes = {{"title", "Nivea 3-in-1 Pure Impact Body Wash for Men, 16.9 Ounce (Pack of 3)"}};
  VerbalizeConfig config;
  config.attribute_names = {"title"};
  config.finalize();
  CHECK(verbalize_item(item, config) ==
        "id: 10918 title: Nivea 3-in-1 Pure Impact Body Wash for Men, 16.9 Ounce (Pack of 3)");
}

TEST_CASE("verbalize_item with no configured attributes") {
  ItemRecord item;
  item.item_id = "42";
  item.attributes = {{"title", "ignored"}};
  VerbalizeConfig config;
  config.finalize();
  CHECK(verbalize_item(item, config) == "id: 42");
}

TEST_CASE("verbalize_item skips attributes missing from the item") {
  ItemRecord item;
  item.item_id = "7";
  item.attributes = {{"title", "T"}};
  VerbalizeConfig config;
  config.attribute_names = {"category", "title"};
  config.finalize();
  CHECK(verbalize_item(item, config) == "id: 7 title: T");
}

TEST_CASE("verbalize_history reverses the item order") {
  std::vector<ItemRecord> items;
  for (int i = 1; i <= 2; ++i) {
    ItemRecord item;
    item.item_id = "v" + std::to_string(i);
    items.push_back(item);
  }
  const ItemCatalog catalog(items);
  VerbalizeConfig config;
  config.finalize();
  CHECK(verbalize_history({"v1", "v2"}, catalog, "u", config) ==
        "Here is the visit history list of user: id: v2, id: v1 recommend next item");
}

TEST_CASE("verbalize_history with the user-id prompt variant") {
  ItemRecord item;
  item.item_id = "v1";
  const ItemCatalog catalog({item});
  VerbalizeConfig config;
  config.include_user_id = true;
  config.finalize();
  CHECK(verbalize_history({"v1"}, catalog, "1401", config) ==
        "Here is the visit history list of user_1401: id: v1 recommend next item");
}

TEST_CASE("verbalize_history wraps a single item") {
  ItemRecord item;
  item.item_id = "only";
  item.attributes = {{"title", "T"}};
  const ItemCatalog catalog({item});
  VerbalizeConfig config;
  config.attribute_names = {"title"};
  config.finalize();
  CHECK(verbalize_history({"only"}, catalog, "u", config) ==
        "Here is the visit history list of user: id: only title: T recommend next item");
}

TEST_CASE("verbalize_history rejects an empty history") {
  const ItemCatalog catalog(std::vector<ItemRecord>{});
  VerbalizeConfig config;
  config.finalize();
  CHECK_THROWS_AS(verbalize_history({}, catalog, "u", config), DataError);
}

TEST_CASE("reversal law: k-th item text corresponds to history item T-k") {
  std::vector<ItemRecord> items;
  for (int i = 0; i < 7; ++i) {
    ItemRecord item;
    item.item_id = "x" + std::to_string(i);
    items.push_back(item);
  }
  const ItemCatalog catalog(items);
  VerbalizeConfig config;
  config.finalize();
  for (int length = 1; length <= 7; ++length) {
    std::vector<std::string> history;
    for (int i = 0; i < length; ++i) history.push_back("x" + std::to_string(i));
    const std::string text = verbalize_history(history, catalog, "u", config);
    const auto colon = text.find(": ");
    const auto tail = text.rfind(" recommend next item");
    const std::string joined = text.substr(colon + 2, tail - colon - 2);
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (true) {
      const auto sep = joined.find(", id", start);
      if (sep == std::string::npos) {
        parts.push_back(joined.substr(start));
        break;
      }
      parts.push_back(joined.substr(start, sep - start));
      start = sep + 2;
    }
    REQUIRE(parts.size() == history.size());
    for (std::size_t k = 0; k < parts.size(); ++k) {
      CHECK(parts[k] == "id: " + history[history.size() - 1 - k]);
    }
  }
}

TEST_CASE("config placeholder rules are validated") {
  VerbalizeConfig missing_history;
  missing_history.history_template = "no placeholder";
  CHECK_THROWS_AS(missing_history.finalize(), ConfigError);

  VerbalizeConfig stray_user;
  stray_user.history_template = "user {user} sees {history}";
  stray_user.include_user_id = false;
  CHECK_THROWS_AS(stray_user.finalize(), ConfigError);
}

TEST_CASE("split_tokens separates punctuation") {
  CHECK(split_tokens("id: 5908 title: DoMazing") ==
        std::vector<std::string>{"id", ":", "5908", "title", ":", "DoMazing"});
  CHECK(split_tokens("3-in-1") == std::vector<std::string>{"3", "-", "in", "-", "1"});
  CHECK(split_tokens("") == std::vector<std::string>{});
  CHECK(split_tokens("  spaced   out ") == std::vector<std::string>{"spaced", "out"});
}

TEST_CASE("build_vocab ranks by frequency then lexicographic") {
  const TokenVocab vocab = build_vocab({"a b", "a"}, 5);
  CHECK(vocab.size() == 5);
  CHECK(vocab.id_of("a") == 3);
  CHECK(vocab.id_of("b") == 4);
}

TEST_CASE("build_vocab of an empty corpus holds only the specials") {
  const TokenVocab vocab = build_vocab({}, 100);
  CHECK(vocab.size() == 3);
  CHECK(vocab.id_of("anything") == TokenVocab::kUnk);
}

TEST_CASE("build_vocab tie at equal frequency goes to the smaller token") {
  const TokenVocab vocab = build_vocab({"zed apple", "zed apple"}, 4);  // room for one
  CHECK(vocab.size() == 4);
  CHECK(vocab.id_of("apple") == 3);
  CHECK(vocab.id_of("zed") == TokenVocab::kUnk);
}

TEST_CASE("build_vocab caps the size") {
  const TokenVocab vocab = build_vocab({"a b c d e f g"}, 6);
  CHECK(vocab.size() == 6);  // 3 specials + 3 kept
}

TEST_CASE("vocab file round trip is byte identical and deterministic") {
  const std::vector<std::string> corpus = {"the cat, sat", "the mat"};
  const TokenVocab vocab1 = build_vocab(corpus, 64);
  const TokenVocab vocab2 = build_vocab(corpus, 64);
  vocab1.save("vocab_a.txt");
  vocab2.save("vocab_b.txt");
  CHECK(read_file("vocab_a.txt") == read_file("vocab_b.txt"));
  const TokenVocab loaded = TokenVocab::load("vocab_a.txt");
  CHECK(loaded.size() == vocab1.size());
  CHECK(loaded.id_of("the") == vocab1.id_of("the"));
  CHECK(loaded.id_of(",") == vocab1.id_of(","));
  std::remove("vocab_a.txt");
  std::remove("vocab_b.txt");
}

TEST_CASE("tokenize truncates to the first max_len tokens") {
  std::string text;
  for (int i = 0; i < 40; ++i) text += "tok" + std::to_string(i) + " ";
  const TokenVocab vocab = build_vocab({text}, 100);
  const TokenSequence sequence = tokenize(text, vocab, 32);
  CHECK(sequence.ids.size() == 32);
  CHECK(sequence.original_length == 40);
  CHECK(sequence.ids[0] == vocab.id_of("tok0"));
  CHECK(sequence.ids[31] == vocab.id_of("tok31"));
}

TEST_CASE("tokenize maps unknown words to UNK") {
  const TokenVocab vocab = build_vocab({"known"}, 10);
  const TokenSequence sequence = tokenize("alien words here", vocab, 16);
  REQUIRE(sequence.ids.size() == 3);
  for (const int id : sequence.ids) CHECK(id == TokenVocab::kUnk);
}

TEST_CASE("tokenize of empty text is empty") {
  const TokenVocab vocab = build_vocab({"x"}, 10);
  const TokenSequence sequence = tokenize("", vocab, 8);
  CHECK(sequence.ids.empty());
  CHECK(sequence.original_length == 0);
}

namespace {

TokenSequence range_tokens(int count) {
  TokenSequence tokens;
  for (int i = 0; i < count; ++i) tokens.ids.push_back(3 + (i % 50));
  tokens.original_length = static_cast<std::size_t>(count);
  return tokens;
}

}  // namespace

TEST_CASE("split_sessions: 512 tokens into 2 x 256 full sessions") {
  const SessionBatch batch = split_sessions(range_tokens(512), 2, 256);
  CHECK(batch.num_sessions == 2);
  CHECK(batch.session_len == 256);
  CHECK(batch.real_token_count() == 512);
  for (const auto& row : batch.attention_mask) {
    for (const auto flag : row) CHECK(flag == 1);
  }
}

TEST_CASE("split_sessions: 300 tokens into 2 x 256 pads the second session") {
  const SessionBatch batch = split_sessions(range_tokens(300), 2, 256);
  std::size_t first_real = 0, second_real = 0;
  for (const auto flag : batch.attention_mask[0]) first_real += flag;
  for (const auto flag : batch.attention_mask[1]) second_real += flag;
  CHECK(first_real == 256);
  CHECK(second_real == 44);
  for (std::size_t i = 44; i < 256; ++i) {
    CHECK(batch.sessions[1][i] == TokenVocab::kPad);
    CHECK(batch.attention_mask[1][i] == 0);
  }
}

TEST_CASE("split_sessions with n=1 equals plain truncation") {
  const TokenSequence tokens = range_tokens(20);
  const SessionBatch batch = split_sessions(tokens, 1, 8);
  REQUIRE(batch.sessions.size() == 1);
  for (int i = 0; i < 8; ++i) {
    CHECK(batch.sessions[0][static_cast<std::size_t>(i)] == tokens.ids[static_cast<std::size_t>(i)]);
    CHECK(batch.attention_mask[0][static_cast<std::size_t>(i)] == 1);
  }
}

TEST_CASE("split_sessions preserves the truncated token multiset in order") {
  for (const int count : {0, 5, 16, 23, 100}) {
    const TokenSequence tokens = range_tokens(count);
    const SessionBatch batch = split_sessions(tokens, 3, 8);
    std::vector<int> reassembled;
    for (int s = 0; s < batch.num_sessions; ++s) {
      for (int i = 0; i < batch.session_len; ++i) {
        if (batch.attention_mask[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)] != 0) {
          reassembled.push_back(batch.sessions[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)]);
        }
      }
    }
    const std::size_t expected = std::min<std::size_t>(tokens.ids.size(), 24);
    REQUIRE(reassembled.size() == expected);
    for (std::size_t i = 0; i < expected; ++i) CHECK(reassembled[i] == tokens.ids[i]);
  }
}

TEST_CASE("tokenizing a verbalized item never exceeds max_len") {
  VerbalizeConfig config = yelp_config();
  const TokenVocab vocab = build_vocab({verbalize_item(domazing(), config)}, 100);
  for (int max_len : {1, 4, 32}) {
    const TokenSequence sequence =
        tokenize(verbalize_item(domazing(), config), vocab, static_cast<std::size_t>(max_len));
    CHECK(sequence.ids.size() <= static_cast<std::size_t>(max_len));
  }
}

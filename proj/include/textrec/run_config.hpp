#pragma once

#include <cstdint>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "textrec/model.hpp"
#include "textrec/training.hpp"
#include "textrec/verbalize.hpp"

namespace textrec {

// Flat key = value run configuration with section dotting
// (model.hidden_dim = 64). File keys are overridden by CLI flags.
class RunConfig {
 public:
  RunConfig();  // defaults only

  void load_file(const std::string& path);
  void set(const std::string& key, const std::string& value);
  bool is_set(const std::string& key) const;  // explicitly provided

  const std::string& get_string(const std::string& key) const;
  int get_int(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;
  std::vector<std::string> get_string_list(const std::string& key) const;

  // All commands require an explicit seed.
  std::uint64_t require_seed() const;

  void print_effective(std::ostream& out) const;

  VerbalizeConfig verbalize_config() const;
  ModelConfig model_config(int vocab_size, int num_items, int num_users) const;
  // Applies the hard-negative stage defaults (lr 5e-5, warmup 0) when the
  // strategy is hard and the keys were not set explicitly.
  TrainConfig train_config() const;
  NegativeStrategy negative_strategy() const;

  std::string workdir_path(const std::string& artifact) const;

 private:
  std::map<std::string, std::string> values_;
  std::set<std::string> explicit_;
};

}  // namespace textrec

#include "textrec/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "textrec/errors.hpp"
#include "textrec/rng.hpp"

namespace textrec {

namespace {

using json = nlohmann::ordered_json;

template <typename Params>
void collect_views(Params& params, std::vector<TensorView>& views) {
  auto add_mat = [&](const std::string& name, auto& mat) {
    views.push_back(TensorView{name, const_cast<double*>(mat.data()), mat.rows(), mat.cols()});
  };
  auto add_vec = [&](const std::string& name, auto& vec) {
    views.push_back(TensorView{name, const_cast<double*>(vec.data()), vec.size(), 1});
  };
  auto add_ln = [&](const std::string& prefix, auto& ln) {
    add_vec(prefix + ".gain", ln.gain);
    add_vec(prefix + ".bias", ln.bias);
  };
  auto add_attn = [&](const std::string& prefix, auto& attn) {
    add_mat(prefix + ".wq", attn.wq);
    add_mat(prefix + ".wk", attn.wk);
    add_mat(prefix + ".wv", attn.wv);
    add_mat(prefix + ".wo", attn.wo);
  };
  auto add_ffn = [&](const std::string& prefix, auto& ffn) {
    add_mat(prefix + ".w1", ffn.w1);
    add_vec(prefix + ".b1", ffn.b1);
    add_mat(prefix + ".w2", ffn.w2);
    add_vec(prefix + ".b2", ffn.b2);
  };

  add_mat("token_embedding", params.token_embedding);
  add_mat("positional_embedding", params.positional_embedding);
  add_vec("decoder_start", params.decoder_start);
  for (std::size_t l = 0; l < params.encoder.size(); ++l) {
    const std::string prefix = "encoder." + std::to_string(l);
    add_ln(prefix + ".ln_attn", params.encoder[l].ln_attn);
    add_attn(prefix + ".attn", params.encoder[l].attn);
    add_ln(prefix + ".ln_ffn", params.encoder[l].ln_ffn);
    add_ffn(prefix + ".ffn", params.encoder[l].ffn);
  }
  add_ln("encoder_norm", params.encoder_norm);
  for (std::size_t l = 0; l < params.decoder.size(); ++l) {
    const std::string prefix = "decoder." + std::to_string(l);
    add_ln(prefix + ".ln_self", params.decoder[l].ln_self);
    add_attn(prefix + ".self_attn", params.decoder[l].self_attn);
    add_ln(prefix + ".ln_cross", params.decoder[l].ln_cross);
    add_attn(prefix + ".cross_attn", params.decoder[l].cross_attn);
    add_ln(prefix + ".ln_ffn", params.decoder[l].ln_ffn);
    add_ffn(prefix + ".ffn", params.decoder[l].ffn);
  }
  add_ln("decoder_norm", params.decoder_norm);
  if (params.config.id_fusion == IdFusion::kEmbed) {
    add_mat("item_id_embedding", params.item_id_embedding);
    add_mat("user_id_embedding", params.user_id_embedding);
  }
}

void write_u32(std::ostream& out, std::uint32_t value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(value));
}

std::uint32_t read_u32(std::istream& in, const std::string& path) {
  std::uint32_t value = 0;
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(value))) {
    throw DataError("truncated checkpoint: " + path);
  }
  return value;
}

json config_to_json(const ModelConfig& config) {
  json out;
  out["vocab_size"] = config.vocab_size;
  out["hidden_dim"] = config.hidden_dim;
  out["num_heads"] = config.num_heads;
  out["ffn_dim"] = config.ffn_dim;
  out["encoder_layers"] = config.encoder_layers;
  out["decoder_layers"] = config.decoder_layers;
  out["num_sessions"] = config.num_sessions;
  out["max_session_len"] = config.max_session_len;
  out["dropout_rate"] = config.dropout_rate;
  out["id_fusion"] = to_string(config.id_fusion);
  out["num_items"] = config.num_items;
  out["num_users"] = config.num_users;
  return out;
}

ModelConfig config_from_json(const json& in) {
  ModelConfig config;
  config.vocab_size = in.at("vocab_size").get<int>();
  config.hidden_dim = in.at("hidden_dim").get<int>();
  config.num_heads = in.at("num_heads").get<int>();
  config.ffn_dim = in.at("ffn_dim").get<int>();
  config.encoder_layers = in.at("encoder_layers").get<int>();
  config.decoder_layers = in.at("decoder_layers").get<int>();
  config.num_sessions = in.at("num_sessions").get<int>();
  config.max_session_len = in.at("max_session_len").get<int>();
  config.dropout_rate = in.at("dropout_rate").get<double>();
  config.id_fusion = id_fusion_from_string(in.at("id_fusion").get<std::string>());
  config.num_items = in.at("num_items").get<int>();
  config.num_users = in.at("num_users").get<int>();
  return config;
}

}  // namespace

std::string to_string(IdFusion fusion) {
  return fusion == IdFusion::kEmbed ? "embed" : "off";
}

IdFusion id_fusion_from_string(const std::string& text) {
  if (text == "off") return IdFusion::kOff;
  if (text == "embed") return IdFusion::kEmbed;
  throw ConfigError("unknown id_fusion value: " + text);
}

void ModelConfig::validate() const {
  if (vocab_size < 4) throw ConfigError("vocab_size must cover the 3 special tokens plus one");
  if (hidden_dim < 1 || num_heads < 1 || ffn_dim < 1) throw ConfigError("model dims must be >= 1");
  if (encoder_layers < 1 || decoder_layers < 1) throw ConfigError("layer counts must be >= 1");
  if (num_sessions < 1 || max_session_len < 1) throw ConfigError("session geometry must be >= 1");
  if (hidden_dim % num_heads != 0) throw ConfigError("hidden_dim must be divisible by num_heads");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw ConfigError("dropout_rate must be in [0, 1)");
  if (id_fusion == IdFusion::kEmbed && (num_items < 1)) {
    throw ConfigError("embed id fusion requires num_items >= 1");
  }
}

Parameters Parameters::zeros(const ModelConfig& config) {
  config.validate();
  const int d = config.hidden_dim;
  Parameters params;
  params.config = config;
  params.token_embedding = Mat::Zero(config.vocab_size, d);
  params.positional_embedding = Mat::Zero(config.max_session_len, d);
  params.decoder_start = Vec::Zero(d);
  auto make_ln = [&] { return LayerNormWeights{Vec::Zero(d), Vec::Zero(d)}; };
  auto make_attn = [&] {
    return AttentionWeights{Mat::Zero(d, d), Mat::Zero(d, d), Mat::Zero(d, d), Mat::Zero(d, d)};
  };
  auto make_ffn = [&] {
    return FeedForwardWeights{Mat::Zero(d, config.ffn_dim), Mat::Zero(config.ffn_dim, d),
                              Vec::Zero(config.ffn_dim), Vec::Zero(d)};
  };
  params.encoder.reserve(static_cast<std::size_t>(config.encoder_layers));
  for (int l = 0; l < config.encoder_layers; ++l) {
    params.encoder.push_back(EncoderLayerWeights{make_ln(), make_attn(), make_ln(), make_ffn()});
  }
  params.encoder_norm = make_ln();
  params.decoder.reserve(static_cast<std::size_t>(config.decoder_layers));
  for (int l = 0; l < config.decoder_layers; ++l) {
    params.decoder.push_back(
        DecoderLayerWeights{make_ln(), make_attn(), make_ln(), make_attn(), make_ln(), make_ffn()});
  }
  params.decoder_norm = make_ln();
  const int item_rows = config.id_fusion == IdFusion::kEmbed ? config.num_items : 0;
  const int user_rows = config.id_fusion == IdFusion::kEmbed ? config.num_users : 0;
  params.item_id_embedding = Mat::Zero(item_rows, d);
  params.user_id_embedding = Mat::Zero(user_rows, d);
  return params;
}

std::vector<TensorView> Parameters::tensor_views() {
  std::vector<TensorView> views;
  collect_views(*this, views);
  return views;
}

std::vector<TensorView> Parameters::tensor_views() const {
  std::vector<TensorView> views;
  collect_views(*this, views);
  return views;
}

std::int64_t Parameters::parameter_count() const {
  std::int64_t count = 0;
  for (const auto& view : tensor_views()) count += view.size();
  return count;
}

bool Parameters::all_finite() const {
  for (const auto& view : tensor_views()) {
    for (std::int64_t i = 0; i < view.size(); ++i) {
      if (!std::isfinite(view.data[i])) return false;
    }
  }
  return true;
}

double init_scale_for(const std::string& tensor_name, const ModelConfig& config) {
  const double d = static_cast<double>(config.hidden_dim);
  auto ends_with = [&](const char* suffix) {
    const std::string s(suffix);
    return tensor_name.size() >= s.size() &&
           tensor_name.compare(tensor_name.size() - s.size(), s.size(), s) == 0;
  };
  if (ends_with(".gain") || ends_with(".bias") || ends_with(".b1") || ends_with(".b2")) return 0.0;
  if (ends_with(".w2")) return 1.0 / std::sqrt(static_cast<double>(config.ffn_dim));
  // embeddings, decoder_start, attention projections, ffn.w1: fan-in d
  return 1.0 / std::sqrt(d);
}

Parameters init_params(const ModelConfig& config, std::uint64_t seed) {
  Parameters params = Parameters::zeros(config);
  Rng rng(seed);
  for (auto& view : params.tensor_views()) {
    const double scale = init_scale_for(view.name, config);
    if (scale == 0.0) continue;  // biases stay 0, gains set below
    for (std::int64_t i = 0; i < view.size(); ++i) view.data[i] = rng.normal(0.0, scale);
  }
  auto set_ones = [](LayerNormWeights& ln) { ln.gain.setOnes(); };
  for (auto& layer : params.encoder) {
    set_ones(layer.ln_attn);
    set_ones(layer.ln_ffn);
  }
  set_ones(params.encoder_norm);
  for (auto& layer : params.decoder) {
    set_ones(layer.ln_self);
    set_ones(layer.ln_cross);
    set_ones(layer.ln_ffn);
  }
  set_ones(params.decoder_norm);
  return params;
}

void save_checkpoint(const std::string& path, const Parameters& params,
                     std::uint64_t vocab_fingerprint) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out.write(kCheckpointMagic, static_cast<std::streamsize>(std::strlen(kCheckpointMagic)));
  out.put('\n');

  json header = config_to_json(params.config);
  header["vocab_fingerprint"] = fingerprint_hex(vocab_fingerprint);
  const std::string header_text = header.dump();
  write_u32(out, static_cast<std::uint32_t>(header_text.size()));
  out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));

  const auto views = params.tensor_views();
  write_u32(out, static_cast<std::uint32_t>(views.size()));
  for (const auto& view : views) {
    write_u32(out, static_cast<std::uint32_t>(view.name.size()));
    out.write(view.name.data(), static_cast<std::streamsize>(view.name.size()));
    write_u32(out, static_cast<std::uint32_t>(view.rows));
    write_u32(out, static_cast<std::uint32_t>(view.cols));
    out.write(reinterpret_cast<const char*>(view.data),
              static_cast<std::streamsize>(view.size() * static_cast<std::int64_t>(sizeof(double))));
  }
  if (!out) throw DataError("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  std::string magic(std::strlen(kCheckpointMagic), '\0');
  if (!in.read(magic.data(), static_cast<std::streamsize>(magic.size())) || magic != kCheckpointMagic ||
      in.get() != '\n') {
    throw DataError("not a checkpoint (bad magic): " + path);
  }
  const std::uint32_t header_len = read_u32(in, path);
  std::string header_text(header_len, '\0');
  if (!in.read(header_text.data(), header_len)) throw DataError("truncated checkpoint: " + path);
  json header;
  try {
    header = json::parse(header_text);
  } catch (const json::parse_error& err) {
    throw DataError("corrupt checkpoint header: " + path + ": " + err.what());
  }

  Checkpoint checkpoint;
  checkpoint.params = Parameters::zeros(config_from_json(header));
  if (header.contains("vocab_fingerprint")) {
    checkpoint.vocab_fingerprint =
        std::stoull(header["vocab_fingerprint"].get<std::string>(), nullptr, 16);
  }

  const std::uint32_t tensor_count = read_u32(in, path);
  auto views = checkpoint.params.tensor_views();
  if (tensor_count != views.size()) {
    throw DataError("checkpoint tensor count mismatch: " + path);
  }
  for (auto& view : views) {
    const std::uint32_t name_len = read_u32(in, path);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw DataError("truncated checkpoint: " + path);
    const std::uint32_t rows = read_u32(in, path);
    const std::uint32_t cols = read_u32(in, path);
    if (name != view.name || rows != static_cast<std::uint32_t>(view.rows) ||
        cols != static_cast<std::uint32_t>(view.cols)) {
      throw DataError("checkpoint tensor mismatch at '" + name + "' in " + path);
    }
    if (!in.read(reinterpret_cast<char*>(view.data),
                 static_cast<std::streamsize>(view.size() * static_cast<std::int64_t>(sizeof(double))))) {
      throw DataError("truncated checkpoint: " + path);
    }
  }
  return checkpoint;
}

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  std::uint64_t hash = seed;
  for (std::size_t i = 0; i < size; ++i) {
    hash ^= bytes[i];
    hash *= 0x100000001b3ull;
  }
  return hash;
}

std::uint64_t fingerprint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file for fingerprinting: " + path);
  std::uint64_t hash = 0xcbf29ce484222325ull;
  char buffer[1 << 16];
  while (in.read(buffer, sizeof(buffer)) || in.gcount() > 0) {
    hash = fnv1a(buffer, static_cast<std::size_t>(in.gcount()), hash);
    if (in.eof()) break;
  }
  return hash;
}

std::string fingerprint_hex(std::uint64_t fingerprint) {
  std::ostringstream out;
  out << std::hex;
  out.width(16);
  out.fill('0');
  out << fingerprint;
  return out.str();
}

}  // namespace textrec

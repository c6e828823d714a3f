#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace textrec {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

enum class IdFusion { kOff, kEmbed };

std::string to_string(IdFusion fusion);
IdFusion id_fusion_from_string(const std::string& text);

struct ModelConfig {
  int vocab_size = 0;
  int hidden_dim = 64;
  int num_heads = 4;
  int ffn_dim = 256;
  int encoder_layers = 2;
  int decoder_layers = 1;
  int num_sessions = 2;     // history sequence is split into this many sessions
  int max_session_len = 64; // session length m; also the positional table size
  double dropout_rate = 0.0;
  IdFusion id_fusion = IdFusion::kOff;
  int num_items = 0;  // id embedding rows under embed fusion
  int num_users = 0;

  int head_dim() const { return hidden_dim / num_heads; }
  void validate() const;  // throws ConfigError

  bool operator==(const ModelConfig&) const = default;
};

struct LayerNormWeights {
  Vec gain;
  Vec bias;
};

struct AttentionWeights {
  Mat wq, wk, wv, wo;
};

struct FeedForwardWeights {
  Mat w1, w2;
  Vec b1, b2;
};

struct EncoderLayerWeights {
  LayerNormWeights ln_attn;
  AttentionWeights attn;
  LayerNormWeights ln_ffn;
  FeedForwardWeights ffn;
};

struct DecoderLayerWeights {
  LayerNormWeights ln_self;
  AttentionWeights self_attn;
  LayerNormWeights ln_cross;
  AttentionWeights cross_attn;
  LayerNormWeights ln_ffn;
  FeedForwardWeights ffn;
};

// Flat view over one named tensor, row-major.
struct TensorView {
  std::string name;
  double* data;
  std::int64_t rows;
  std::int64_t cols;
  std::int64_t size() const { return rows * cols; }
};

struct Parameters {
  ModelConfig config;
  Mat token_embedding;       // vocab_size x d
  Mat positional_embedding;  // max_session_len x d, positions restart per session
  Vec decoder_start;         // d
  std::vector<EncoderLayerWeights> encoder;
  LayerNormWeights encoder_norm;
  std::vector<DecoderLayerWeights> decoder;
  LayerNormWeights decoder_norm;
  Mat item_id_embedding;  // num_items x d (0 x d when fusion off)
  Mat user_id_embedding;  // num_users x d

  static Parameters zeros(const ModelConfig& config);
  Parameters zeros_like() const { return zeros(config); }

  std::vector<TensorView> tensor_views();
  std::vector<TensorView> tensor_views() const;  // views are read-only by convention

  std::int64_t parameter_count() const;
  bool all_finite() const;
};

using Gradients = Parameters;

// Seeded scaled-normal init; layernorm gains 1, all biases 0.
Parameters init_params(const ModelConfig& config, std::uint64_t seed);

// The per-tensor init scale (stddev target used by init_params).
double init_scale_for(const std::string& tensor_name, const ModelConfig& config);

inline constexpr const char* kCheckpointMagic = "TASTE-CKPT-1";

void save_checkpoint(const std::string& path, const Parameters& params,
                     std::uint64_t vocab_fingerprint);

struct Checkpoint {
  Parameters params;
  std::uint64_t vocab_fingerprint = 0;
};

Checkpoint load_checkpoint(const std::string& path);

// FNV-1a 64-bit over raw bytes / file contents.
std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed = 0xcbf29ce484222325ull);
std::uint64_t fingerprint_file(const std::string& path);
std::string fingerprint_hex(std::uint64_t fingerprint);

}  // namespace textrec

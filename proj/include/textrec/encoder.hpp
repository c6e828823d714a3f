#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "textrec/model.hpp"
#include "textrec/rng.hpp"
#include "textrec/verbalize.hpp"

namespace textrec {

// Concatenated per-session encoder outputs; masked rows are zeroed and
// excluded from cross-attention.
struct EncoderStates {
  Mat states;                       // (n*m) x d
  std::vector<std::uint8_t> mask;   // n*m, 1 on real tokens
};

// ---- activation caches (training path) ----

struct LayerNormCache {
  Mat input;       // residual stream entering the norm
  Mat normalized;  // (x - mean) * rstd
  Vec rstd;        // per row
};

struct SelfAttentionCache {
  Mat q, k, v;              // m x d
  std::vector<Mat> probs;   // per head, m x m
  Mat heads_concat;         // m x d
};

struct CrossAttentionCache {
  Mat q;                    // 1 x d
  Mat k, v;                 // S x d
  std::vector<Mat> probs;   // per head, 1 x S
  Mat heads_concat;         // 1 x d
};

struct FeedForwardCache {
  Mat input;    // LN output fed to w1
  Mat pre_act;  // before relu
  std::vector<std::uint8_t> dropout_mask;  // empty when dropout off
};

struct ResidualDropout {
  std::vector<std::uint8_t> mask;  // empty when dropout off
};

struct EncoderLayerCache {
  LayerNormCache ln_attn;
  SelfAttentionCache attn;
  ResidualDropout attn_dropout;
  LayerNormCache ln_ffn;
  FeedForwardCache ffn;
  ResidualDropout ffn_dropout;
};

struct DecoderLayerCache {
  LayerNormCache ln_self;
  SelfAttentionCache self_attn;
  ResidualDropout self_dropout;
  LayerNormCache ln_cross;
  CrossAttentionCache cross;
  ResidualDropout cross_dropout;
  LayerNormCache ln_ffn;
  FeedForwardCache ffn;
  ResidualDropout ffn_dropout;
};

struct SessionCache {
  std::vector<int> token_ids;
  std::vector<std::uint8_t> mask;
  bool skipped = false;  // session had no real tokens
  Mat x0;
  std::vector<EncoderLayerCache> layers;
  LayerNormCache final_ln;
};

struct DecodeCache {
  std::vector<DecoderLayerCache> layers;
  LayerNormCache final_ln;
};

// Everything needed to backpropagate through one encoded sequence.
struct SequenceCache {
  std::vector<SessionCache> sessions;
  EncoderStates states;
  DecodeCache decode;
  Vec text_output;  // before id fusion
  Vec output;
  int id_row = -1;  // row added from an id table, -1 = none
  bool user_side = false;
};

// ---- forward ----

// Encode each session independently; attention is confined to a session's
// real tokens and positions restart at 0 per session.
EncoderStates encode_sessions(const Parameters& params, const SessionBatch& batch);

// One decoder step from the start embedding, cross-attending over all
// unmasked encoder states.
Vec decode_representation(const Parameters& params, const EncoderStates& states);

Vec encode_item(const Parameters& params, const TokenSequence& tokens, int item_row = -1);
Vec encode_history(const Parameters& params, const SessionBatch& sessions, int user_row = -1);

double score(const Vec& user, const Vec& item);

// Cached forward used by training; rng enables dropout (nullptr = off).
SequenceCache encode_sequence_cached(const Parameters& params, const SessionBatch& batch,
                                     int id_row, bool user_side, Rng* dropout_rng = nullptr);

// Accumulates d(loss)/d(params) for one sequence given d(loss)/d(output).
void backward_sequence(const Parameters& params, const SequenceCache& cache, const Vec& d_output,
                       Gradients& grads);

// ---- batch loss ----

struct BatchInputs {
  std::vector<SessionBatch> user_sessions;
  std::vector<int> user_id_rows;            // empty or per user; -1 = none
  std::vector<TokenSequence> candidate_tokens;
  std::vector<int> candidate_id_rows;       // empty or per candidate
  std::vector<int> positives;               // per user, index into candidates
  // optional per-user candidate mask; empty = every candidate active
  std::vector<std::vector<std::uint8_t>> active;
};

struct LossForward {
  std::vector<SequenceCache> users;
  std::vector<SequenceCache> candidates;
  Mat user_embeddings;       // B x d
  Mat candidate_embeddings;  // C x d
  Mat scores;                // B x C
  Mat probs;                 // masked softmax rows
  std::vector<int> positives;
  std::vector<std::vector<std::uint8_t>> active;
  double loss = 0.0;
};

// Softmax cross-entropy over dot-product scores, averaged over the batch.
LossForward forward_loss(const Parameters& params, const BatchInputs& inputs,
                         Rng* dropout_rng = nullptr);

Gradients backward(const Parameters& params, const LossForward& forward);

// Multiply-accumulate count of encoder self-attention (forward only).
std::uint64_t attention_mac_count();
void reset_attention_mac_count();

}  // namespace textrec

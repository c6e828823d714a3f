#include "textrec/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "textrec/errors.hpp"

namespace textrec {

namespace {

constexpr double kLayerNormEps = 1e-5;

thread_local std::uint64_t g_attention_macs = 0;

Mat layer_norm_forward(const Mat& x, const LayerNormWeights& w, LayerNormCache* cache) {
  const Eigen::Index rows = x.rows();
  Mat normalized(rows, x.cols());
  Vec rstd(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().mean();
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    normalized.row(r) = ((x.row(r).array() - mean) * inv).matrix();
    rstd(r) = inv;
  }
  Mat y = (normalized.array().rowwise() * w.gain.transpose().array()).matrix();
  y.array().rowwise() += w.bias.transpose().array();
  if (cache != nullptr) {
    cache->input = x;
    cache->normalized = normalized;
    cache->rstd = rstd;
  }
  return y;
}

Mat layer_norm_output(const LayerNormCache& cache, const LayerNormWeights& w) {
  Mat y = (cache.normalized.array().rowwise() * w.gain.transpose().array()).matrix();
  y.array().rowwise() += w.bias.transpose().array();
  return y;
}

Mat layer_norm_backward(const LayerNormCache& cache, const LayerNormWeights& w, const Mat& dy,
                        LayerNormWeights& dw) {
  dw.gain += (dy.array() * cache.normalized.array()).colwise().sum().matrix().transpose();
  dw.bias += dy.colwise().sum().transpose();
  Mat dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const Eigen::ArrayXd h = dy.row(r).transpose().array() * w.gain.array();
    const Eigen::ArrayXd norm_row = cache.normalized.row(r).transpose().array();
    const double mean_h = h.mean();
    const double mean_hn = (h * norm_row).mean();
    dx.row(r) = (cache.rstd(r) * (h - mean_h - norm_row * mean_hn)).matrix().transpose();
  }
  return dx;
}

Mat masked_softmax_rows(const Mat& scores, const std::vector<std::uint8_t>& key_mask) {
  Mat probs = Mat::Zero(scores.rows(), scores.cols());
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    double max_score = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < scores.cols(); ++c) {
      if (key_mask[static_cast<std::size_t>(c)] != 0) max_score = std::max(max_score, scores(r, c));
    }
    double sum = 0.0;
    for (Eigen::Index c = 0; c < scores.cols(); ++c) {
      if (key_mask[static_cast<std::size_t>(c)] == 0) continue;
      const double e = std::exp(scores(r, c) - max_score);
      probs(r, c) = e;
      sum += e;
    }
    if (sum > 0.0) probs.row(r) /= sum;
  }
  return probs;
}

Mat softmax_backward(const Mat& probs, const Mat& dprobs) {
  Mat dscores(probs.rows(), probs.cols());
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    const double dot = (probs.row(r).array() * dprobs.row(r).array()).sum();
    dscores.row(r) = (probs.row(r).array() * (dprobs.row(r).array() - dot)).matrix();
  }
  return dscores;
}

// x: query rows, keys/values from the same x, keys restricted by key_mask.
Mat self_attention_forward(const Mat& x, const AttentionWeights& w,
                           const std::vector<std::uint8_t>& key_mask, int num_heads,
                           SelfAttentionCache* cache, bool count_macs) {
  const Eigen::Index m = x.rows();
  const Eigen::Index d = x.cols();
  const Eigen::Index hd = d / num_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  Mat q = x * w.wq;
  Mat k = x * w.wk;
  Mat v = x * w.wv;
  Mat concat(m, d);
  std::vector<Mat> probs(static_cast<std::size_t>(num_heads));
  for (int h = 0; h < num_heads; ++h) {
    const auto qh = q.middleCols(h * hd, hd);
    const auto kh = k.middleCols(h * hd, hd);
    Mat scores = (qh * kh.transpose()) * scale;
    probs[static_cast<std::size_t>(h)] = masked_softmax_rows(scores, key_mask);
    concat.middleCols(h * hd, hd) = probs[static_cast<std::size_t>(h)] * v.middleCols(h * hd, hd);
  }
  if (count_macs) {
    g_attention_macs += 2ull * static_cast<std::uint64_t>(m) * static_cast<std::uint64_t>(m) *
                        static_cast<std::uint64_t>(d);
  }
  Mat out = concat * w.wo;
  if (cache != nullptr) {
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->probs = std::move(probs);
    cache->heads_concat = std::move(concat);
  }
  return out;
}

Mat self_attention_backward(const Mat& x, const AttentionWeights& w, const SelfAttentionCache& cache,
                            const Mat& dout, int num_heads, AttentionWeights& dw) {
  const Eigen::Index m = dout.rows();
  const Eigen::Index d = dout.cols();
  const Eigen::Index hd = d / num_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  dw.wo += cache.heads_concat.transpose() * dout;
  Mat dconcat = dout * w.wo.transpose();
  Mat dq(m, d), dk(m, d), dv(m, d);
  for (int h = 0; h < num_heads; ++h) {
    const auto& ph = cache.probs[static_cast<std::size_t>(h)];
    const auto dconcat_h = dconcat.middleCols(h * hd, hd);
    Mat dp = dconcat_h * cache.v.middleCols(h * hd, hd).transpose();
    dv.middleCols(h * hd, hd) = ph.transpose() * dconcat_h;
    Mat dscores = softmax_backward(ph, dp);
    dq.middleCols(h * hd, hd) = (dscores * cache.k.middleCols(h * hd, hd)) * scale;
    dk.middleCols(h * hd, hd) = (dscores.transpose() * cache.q.middleCols(h * hd, hd)) * scale;
  }
  dw.wq += x.transpose() * dq;
  dw.wk += x.transpose() * dk;
  dw.wv += x.transpose() * dv;
  return dq * w.wq.transpose() + dk * w.wk.transpose() + dv * w.wv.transpose();
}

Mat cross_attention_forward(const Mat& q_in, const EncoderStates& states, const AttentionWeights& w,
                            int num_heads, CrossAttentionCache* cache) {
  const Eigen::Index d = q_in.cols();
  const Eigen::Index hd = d / num_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  Mat q = q_in * w.wq;
  Mat k = states.states * w.wk;
  Mat v = states.states * w.wv;
  Mat concat(1, d);
  std::vector<Mat> probs(static_cast<std::size_t>(num_heads));
  for (int h = 0; h < num_heads; ++h) {
    Mat scores = (q.middleCols(h * hd, hd) * k.middleCols(h * hd, hd).transpose()) * scale;
    probs[static_cast<std::size_t>(h)] = masked_softmax_rows(scores, states.mask);
    concat.middleCols(h * hd, hd) = probs[static_cast<std::size_t>(h)] * v.middleCols(h * hd, hd);
  }
  Mat out = concat * w.wo;
  if (cache != nullptr) {
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->probs = std::move(probs);
    cache->heads_concat = std::move(concat);
  }
  return out;
}

Mat cross_attention_backward(const Mat& q_in, const Mat& states, const AttentionWeights& w,
                             const CrossAttentionCache& cache, const Mat& dout, int num_heads,
                             AttentionWeights& dw, Mat& dstates) {
  const Eigen::Index d = dout.cols();
  const Eigen::Index s_rows = states.rows();
  const Eigen::Index hd = d / num_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  dw.wo += cache.heads_concat.transpose() * dout;
  Mat dconcat = dout * w.wo.transpose();
  Mat dq(1, d);
  Mat dk = Mat::Zero(s_rows, d);
  Mat dv = Mat::Zero(s_rows, d);
  for (int h = 0; h < num_heads; ++h) {
    const auto& ph = cache.probs[static_cast<std::size_t>(h)];
    const auto dconcat_h = dconcat.middleCols(h * hd, hd);
    Mat dp = dconcat_h * cache.v.middleCols(h * hd, hd).transpose();
    dv.middleCols(h * hd, hd) = ph.transpose() * dconcat_h;
    Mat dscores = softmax_backward(ph, dp);
    dq.middleCols(h * hd, hd) = (dscores * cache.k.middleCols(h * hd, hd)) * scale;
    dk.middleCols(h * hd, hd) = (dscores.transpose() * cache.q.middleCols(h * hd, hd)) * scale;
  }
  dw.wq += q_in.transpose() * dq;
  dw.wk += states.transpose() * dk;
  dw.wv += states.transpose() * dv;
  dstates += dk * w.wk.transpose() + dv * w.wv.transpose();
  return dq * w.wq.transpose();
}

Mat ffn_forward(const Mat& x, const FeedForwardWeights& w, FeedForwardCache* cache) {
  Mat pre = x * w.w1;
  pre.array().rowwise() += w.b1.transpose().array();
  Mat act = pre.cwiseMax(0.0);
  Mat out = act * w.w2;
  out.array().rowwise() += w.b2.transpose().array();
  if (cache != nullptr) {
    cache->input = x;
    cache->pre_act = std::move(pre);
  }
  return out;
}

Mat ffn_backward(const FeedForwardWeights& w, const FeedForwardCache& cache, const Mat& dout,
                 FeedForwardWeights& dw) {
  dw.b2 += dout.colwise().sum().transpose();
  const Mat act = cache.pre_act.cwiseMax(0.0);
  dw.w2 += act.transpose() * dout;
  Mat dact = dout * w.w2.transpose();
  Mat dpre = (dact.array() * (cache.pre_act.array() > 0.0).cast<double>()).matrix();
  dw.b1 += dpre.colwise().sum().transpose();
  dw.w1 += cache.input.transpose() * dpre;
  return dpre * w.w1.transpose();
}

void apply_dropout(Mat& x, double rate, Rng* rng, std::vector<std::uint8_t>& mask_out) {
  if (rng == nullptr || rate <= 0.0) {
    mask_out.clear();
    return;
  }
  const double keep = 1.0 - rate;
  mask_out.resize(static_cast<std::size_t>(x.size()));
  double* data = x.data();
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const bool kept = rng->uniform01() < keep;
    mask_out[static_cast<std::size_t>(i)] = kept ? 1 : 0;
    data[i] = kept ? data[i] / keep : 0.0;
  }
}

void dropout_backward(Mat& dx, double rate, const std::vector<std::uint8_t>& mask) {
  if (mask.empty()) return;
  const double keep = 1.0 - rate;
  double* data = dx.data();
  for (Eigen::Index i = 0; i < dx.size(); ++i) {
    data[i] = mask[static_cast<std::size_t>(i)] != 0 ? data[i] / keep : 0.0;
  }
}

void validate_batch(const Parameters& params, const SessionBatch& batch) {
  const auto& config = params.config;
  if (batch.num_sessions < 1) throw ConfigError("encode: batch has no sessions");
  if (batch.session_len < 1) throw ConfigError("encode: session length must be >= 1");
  if (batch.session_len > config.max_session_len) {
    throw ConfigError("encode: session length " + std::to_string(batch.session_len) +
                      " exceeds max_session_len " + std::to_string(config.max_session_len));
  }
  if (batch.sessions.size() != static_cast<std::size_t>(batch.num_sessions) ||
      batch.attention_mask.size() != batch.sessions.size()) {
    throw ConfigError("encode: inconsistent session batch");
  }
  for (std::size_t s = 0; s < batch.sessions.size(); ++s) {
    if (batch.sessions[s].size() != static_cast<std::size_t>(batch.session_len) ||
        batch.attention_mask[s].size() != batch.sessions[s].size()) {
      throw ConfigError("encode: session length mismatch in row " + std::to_string(s));
    }
    for (const int id : batch.sessions[s]) {
      if (id < 0 || id >= config.vocab_size) {
        throw DataError("encode: token id " + std::to_string(id) + " outside vocab");
      }
    }
  }
}

Vec decode_with_cache(const Parameters& params, const EncoderStates& states, DecodeCache& cache,
                      Rng* dropout_rng) {
  const bool any_unmasked =
      std::any_of(states.mask.begin(), states.mask.end(), [](std::uint8_t f) { return f != 0; });
  if (states.states.rows() == 0 || !any_unmasked) {
    throw DataError("decode_representation: all encoder positions masked");
  }
  const auto& config = params.config;
  const double rate = config.dropout_rate;
  Mat y = params.decoder_start.transpose();
  cache.layers.resize(params.decoder.size());
  const std::vector<std::uint8_t> self_mask{1};
  for (std::size_t l = 0; l < params.decoder.size(); ++l) {
    const auto& w = params.decoder[l];
    auto& lc = cache.layers[l];

    Mat self_in = layer_norm_forward(y, w.ln_self, &lc.ln_self);
    Mat self_out = self_attention_forward(self_in, w.self_attn, self_mask, config.num_heads,
                                          &lc.self_attn, /*count_macs=*/false);
    apply_dropout(self_out, rate, dropout_rng, lc.self_dropout.mask);
    y += self_out;

    Mat cross_in = layer_norm_forward(y, w.ln_cross, &lc.ln_cross);
    Mat cross_out = cross_attention_forward(cross_in, states, w.cross_attn, config.num_heads, &lc.cross);
    apply_dropout(cross_out, rate, dropout_rng, lc.cross_dropout.mask);
    y += cross_out;

    Mat ffn_in = layer_norm_forward(y, w.ln_ffn, &lc.ln_ffn);
    Mat ffn_out = ffn_forward(ffn_in, w.ffn, &lc.ffn);
    apply_dropout(ffn_out, rate, dropout_rng, lc.ffn_dropout.mask);
    y += ffn_out;
  }
  Mat out = layer_norm_forward(y, params.decoder_norm, &cache.final_ln);
  return out.row(0).transpose();
}

}  // namespace

SequenceCache encode_sequence_cached(const Parameters& params, const SessionBatch& batch, int id_row,
                                     bool user_side, Rng* dropout_rng) {
  validate_batch(params, batch);
  const auto& config = params.config;
  const int n = batch.num_sessions;
  const int m = batch.session_len;
  const int d = config.hidden_dim;
  const double rate = config.dropout_rate;

  SequenceCache seq;
  seq.states.states = Mat::Zero(static_cast<Eigen::Index>(n) * m, d);
  seq.states.mask.assign(static_cast<std::size_t>(n) * static_cast<std::size_t>(m), 0);
  seq.sessions.resize(static_cast<std::size_t>(n));

  for (int s = 0; s < n; ++s) {
    auto& sc = seq.sessions[static_cast<std::size_t>(s)];
    sc.token_ids = batch.sessions[static_cast<std::size_t>(s)];
    sc.mask = batch.attention_mask[static_cast<std::size_t>(s)];
    const bool any_real =
        std::any_of(sc.mask.begin(), sc.mask.end(), [](std::uint8_t f) { return f != 0; });
    if (!any_real) {
      sc.skipped = true;
      continue;
    }
    Mat x(m, d);
    for (int pos = 0; pos < m; ++pos) {
      x.row(pos) = params.token_embedding.row(sc.token_ids[static_cast<std::size_t>(pos)]) +
                   params.positional_embedding.row(pos);
    }
    sc.x0 = x;
    sc.layers.resize(params.encoder.size());
    for (std::size_t l = 0; l < params.encoder.size(); ++l) {
      const auto& w = params.encoder[l];
      auto& lc = sc.layers[l];
      Mat attn_in = layer_norm_forward(x, w.ln_attn, &lc.ln_attn);
      Mat attn_out = self_attention_forward(attn_in, w.attn, sc.mask, config.num_heads, &lc.attn,
                                            /*count_macs=*/true);
      apply_dropout(attn_out, rate, dropout_rng, lc.attn_dropout.mask);
      x += attn_out;
      Mat ffn_in = layer_norm_forward(x, w.ln_ffn, &lc.ln_ffn);
      Mat ffn_out = ffn_forward(ffn_in, w.ffn, &lc.ffn);
      apply_dropout(ffn_out, rate, dropout_rng, lc.ffn_dropout.mask);
      x += ffn_out;
    }
    Mat session_states = layer_norm_forward(x, params.encoder_norm, &sc.final_ln);
    for (int pos = 0; pos < m; ++pos) {
      if (sc.mask[static_cast<std::size_t>(pos)] == 0) continue;  // masked rows carry no state
      const Eigen::Index row = static_cast<Eigen::Index>(s) * m + pos;
      seq.states.states.row(row) = session_states.row(pos);
      seq.states.mask[static_cast<std::size_t>(row)] = 1;
    }
  }

  seq.text_output = decode_with_cache(params, seq.states, seq.decode, dropout_rng);
  seq.output = seq.text_output;
  seq.id_row = id_row;
  seq.user_side = user_side;
  if (config.id_fusion == IdFusion::kEmbed && id_row >= 0) {
    const Mat& table = user_side ? params.user_id_embedding : params.item_id_embedding;
    if (id_row >= table.rows()) {
      throw DataError("id row " + std::to_string(id_row) + " outside id embedding table");
    }
    seq.output += table.row(id_row).transpose();
  }
  return seq;
}

EncoderStates encode_sessions(const Parameters& params, const SessionBatch& batch) {
  validate_batch(params, batch);
  const auto& config = params.config;
  const int n = batch.num_sessions;
  const int m = batch.session_len;
  EncoderStates states;
  states.states = Mat::Zero(static_cast<Eigen::Index>(n) * m, config.hidden_dim);
  states.mask.assign(static_cast<std::size_t>(n) * static_cast<std::size_t>(m), 0);
  for (int s = 0; s < n; ++s) {
    const auto& ids = batch.sessions[static_cast<std::size_t>(s)];
    const auto& mask = batch.attention_mask[static_cast<std::size_t>(s)];
    const bool any_real = std::any_of(mask.begin(), mask.end(), [](std::uint8_t f) { return f != 0; });
    if (!any_real) continue;
    Mat x(m, config.hidden_dim);
    for (int pos = 0; pos < m; ++pos) {
      x.row(pos) = params.token_embedding.row(ids[static_cast<std::size_t>(pos)]) +
                   params.positional_embedding.row(pos);
    }
    for (const auto& w : params.encoder) {
      Mat attn_in = layer_norm_forward(x, w.ln_attn, nullptr);
      x += self_attention_forward(attn_in, w.attn, mask, config.num_heads, nullptr, /*count_macs=*/true);
      Mat ffn_in = layer_norm_forward(x, w.ln_ffn, nullptr);
      x += ffn_forward(ffn_in, w.ffn, nullptr);
    }
    Mat session_states = layer_norm_forward(x, params.encoder_norm, nullptr);
    for (int pos = 0; pos < m; ++pos) {
      if (mask[static_cast<std::size_t>(pos)] == 0) continue;
      const Eigen::Index row = static_cast<Eigen::Index>(s) * m + pos;
      states.states.row(row) = session_states.row(pos);
      states.mask[static_cast<std::size_t>(row)] = 1;
    }
  }
  return states;
}

Vec decode_representation(const Parameters& params, const EncoderStates& states) {
  DecodeCache cache;
  return decode_with_cache(params, states, cache, nullptr);
}

Vec encode_item(const Parameters& params, const TokenSequence& tokens, int item_row) {
  if (tokens.ids.empty()) throw DataError("encode_item: empty token sequence");
  const SessionBatch batch = single_session(tokens);
  return encode_sequence_cached(params, batch, item_row, /*user_side=*/false).output;
}

Vec encode_history(const Parameters& params, const SessionBatch& sessions, int user_row) {
  return encode_sequence_cached(params, sessions, user_row, /*user_side=*/true).output;
}

double score(const Vec& user, const Vec& item) {
  if (user.size() != item.size()) throw ConfigError("score: embedding dimension mismatch");
  return user.dot(item);
}

void backward_sequence(const Parameters& params, const SequenceCache& cache, const Vec& d_output,
                       Gradients& grads) {
  const auto& config = params.config;
  const double rate = config.dropout_rate;

  if (config.id_fusion == IdFusion::kEmbed && cache.id_row >= 0) {
    Mat& table = cache.user_side ? grads.user_id_embedding : grads.item_id_embedding;
    table.row(cache.id_row) += d_output.transpose();
  }

  // decoder, in reverse
  Mat dy = layer_norm_backward(cache.decode.final_ln, params.decoder_norm, d_output.transpose(),
                               grads.decoder_norm);
  Mat dstates = Mat::Zero(cache.states.states.rows(), cache.states.states.cols());
  for (std::size_t li = params.decoder.size(); li-- > 0;) {
    const auto& w = params.decoder[li];
    auto& gw = grads.decoder[li];
    const auto& lc = cache.decode.layers[li];

    Mat branch = dy;
    dropout_backward(branch, rate, lc.ffn_dropout.mask);
    Mat d_ffn_in = ffn_backward(w.ffn, lc.ffn, branch, gw.ffn);
    dy += layer_norm_backward(lc.ln_ffn, w.ln_ffn, d_ffn_in, gw.ln_ffn);

    branch = dy;
    dropout_backward(branch, rate, lc.cross_dropout.mask);
    const Mat cross_in = layer_norm_output(lc.ln_cross, w.ln_cross);
    Mat d_cross_in = cross_attention_backward(cross_in, cache.states.states, w.cross_attn, lc.cross,
                                              branch, config.num_heads, gw.cross_attn, dstates);
    dy += layer_norm_backward(lc.ln_cross, w.ln_cross, d_cross_in, gw.ln_cross);

    branch = dy;
    dropout_backward(branch, rate, lc.self_dropout.mask);
    const Mat self_in = layer_norm_output(lc.ln_self, w.ln_self);
    Mat d_self_in = self_attention_backward(self_in, w.self_attn, lc.self_attn, branch,
                                            config.num_heads, gw.self_attn);
    dy += layer_norm_backward(lc.ln_self, w.ln_self, d_self_in, gw.ln_self);
  }
  grads.decoder_start += dy.row(0).transpose();

  // encoder sessions, in reverse through each stack
  const int m = cache.sessions.empty() ? 0 : static_cast<int>(cache.sessions[0].mask.size());
  for (std::size_t s = 0; s < cache.sessions.size(); ++s) {
    const auto& sc = cache.sessions[s];
    if (sc.skipped) continue;
    Mat dx = dstates.middleRows(static_cast<Eigen::Index>(s) * m, m);
    dx = layer_norm_backward(sc.final_ln, params.encoder_norm, dx, grads.encoder_norm);
    for (std::size_t li = params.encoder.size(); li-- > 0;) {
      const auto& w = params.encoder[li];
      auto& gw = grads.encoder[li];
      const auto& lc = sc.layers[li];

      Mat branch = dx;
      dropout_backward(branch, rate, lc.ffn_dropout.mask);
      Mat d_ffn_in = ffn_backward(w.ffn, lc.ffn, branch, gw.ffn);
      dx += layer_norm_backward(lc.ln_ffn, w.ln_ffn, d_ffn_in, gw.ln_ffn);

      branch = dx;
      dropout_backward(branch, rate, lc.attn_dropout.mask);
      const Mat attn_in = layer_norm_output(lc.ln_attn, w.ln_attn);
      Mat d_attn_in =
          self_attention_backward(attn_in, w.attn, lc.attn, branch, config.num_heads, gw.attn);
      dx += layer_norm_backward(lc.ln_attn, w.ln_attn, d_attn_in, gw.ln_attn);
    }
    for (int pos = 0; pos < m; ++pos) {
      grads.token_embedding.row(sc.token_ids[static_cast<std::size_t>(pos)]) += dx.row(pos);
      grads.positional_embedding.row(pos) += dx.row(pos);
    }
  }
}

LossForward forward_loss(const Parameters& params, const BatchInputs& inputs, Rng* dropout_rng) {
  const std::size_t batch = inputs.user_sessions.size();
  const std::size_t num_candidates = inputs.candidate_tokens.size();
  if (batch == 0 || num_candidates == 0) throw ConfigError("forward_loss: empty batch");
  if (inputs.positives.size() != batch) throw ConfigError("forward_loss: one positive per user required");
  for (const int pos : inputs.positives) {
    if (pos < 0 || static_cast<std::size_t>(pos) >= num_candidates) {
      throw ConfigError("forward_loss: positive index out of range");
    }
  }
  if (!inputs.active.empty() && inputs.active.size() != batch) {
    throw ConfigError("forward_loss: active mask shape mismatch");
  }

  const int d = params.config.hidden_dim;
  LossForward fwd;
  fwd.positives = inputs.positives;
  fwd.users.reserve(batch);
  fwd.user_embeddings.resize(static_cast<Eigen::Index>(batch), d);
  for (std::size_t u = 0; u < batch; ++u) {
    const int user_row = inputs.user_id_rows.empty() ? -1 : inputs.user_id_rows[u];
    fwd.users.push_back(
        encode_sequence_cached(params, inputs.user_sessions[u], user_row, /*user_side=*/true, dropout_rng));
    fwd.user_embeddings.row(static_cast<Eigen::Index>(u)) = fwd.users.back().output.transpose();
  }
  fwd.candidates.reserve(num_candidates);
  fwd.candidate_embeddings.resize(static_cast<Eigen::Index>(num_candidates), d);
  for (std::size_t c = 0; c < num_candidates; ++c) {
    const int item_row = inputs.candidate_id_rows.empty() ? -1 : inputs.candidate_id_rows[c];
    const SessionBatch session = single_session(inputs.candidate_tokens[c]);
    fwd.candidates.push_back(
        encode_sequence_cached(params, session, item_row, /*user_side=*/false, dropout_rng));
    fwd.candidate_embeddings.row(static_cast<Eigen::Index>(c)) = fwd.candidates.back().output.transpose();
  }

  fwd.scores = fwd.user_embeddings * fwd.candidate_embeddings.transpose();
  fwd.active = inputs.active;
  fwd.probs = Mat::Zero(fwd.scores.rows(), fwd.scores.cols());
  double total_loss = 0.0;
  for (std::size_t u = 0; u < batch; ++u) {
    const auto row = static_cast<Eigen::Index>(u);
    const std::vector<std::uint8_t>* active_row = fwd.active.empty() ? nullptr : &fwd.active[u];
    if (active_row != nullptr && active_row->size() != num_candidates) {
      throw ConfigError("forward_loss: active mask shape mismatch");
    }
    auto is_active = [&](std::size_t c) { return active_row == nullptr || (*active_row)[c] != 0; };
    if (!is_active(static_cast<std::size_t>(fwd.positives[u]))) {
      throw ConfigError("forward_loss: positive candidate is masked out");
    }
    double max_score = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < num_candidates; ++c) {
      if (is_active(c)) max_score = std::max(max_score, fwd.scores(row, static_cast<Eigen::Index>(c)));
    }
    double sum = 0.0;
    for (std::size_t c = 0; c < num_candidates; ++c) {
      if (!is_active(c)) continue;
      const double e = std::exp(fwd.scores(row, static_cast<Eigen::Index>(c)) - max_score);
      fwd.probs(row, static_cast<Eigen::Index>(c)) = e;
      sum += e;
    }
    fwd.probs.row(row) /= sum;
    const double log_prob =
        fwd.scores(row, fwd.positives[u]) - max_score - std::log(sum);
    total_loss -= log_prob;
  }
  fwd.loss = total_loss / static_cast<double>(batch);
  return fwd;
}

Gradients backward(const Parameters& params, const LossForward& forward) {
  Gradients grads = params.zeros_like();
  const auto batch = forward.user_embeddings.rows();
  Mat dscores = forward.probs / static_cast<double>(batch);
  for (Eigen::Index u = 0; u < batch; ++u) {
    dscores(u, forward.positives[static_cast<std::size_t>(u)]) -= 1.0 / static_cast<double>(batch);
  }
  const Mat d_users = dscores * forward.candidate_embeddings;
  const Mat d_candidates = dscores.transpose() * forward.user_embeddings;
  for (Eigen::Index u = 0; u < batch; ++u) {
    backward_sequence(params, forward.users[static_cast<std::size_t>(u)], d_users.row(u).transpose(),
                      grads);
  }
  for (Eigen::Index c = 0; c < d_candidates.rows(); ++c) {
    backward_sequence(params, forward.candidates[static_cast<std::size_t>(c)],
                      d_candidates.row(c).transpose(), grads);
  }
  return grads;
}

std::uint64_t attention_mac_count() { return g_attention_macs; }

void reset_attention_mac_count() { g_attention_macs = 0; }

}  // namespace textrec

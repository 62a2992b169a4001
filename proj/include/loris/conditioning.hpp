#pragma once

// Conditioning encoders: Bi-LSTM over visual features, Hawkes-encoded
// rhythm tokens through one pre-norm transformer decoder block, genre
// embedding, and serial assembly into a single key/value sequence.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "loris/errors.hpp"
#include "loris/nn.hpp"
#include "loris/rhythm.hpp"
#include "loris/tensor.hpp"

namespace loris {

// Sinusoidal ladder with a learnable per-channel time coupling: channel k
// of peak (i, t_i) is sin/cos(omega_k * i + w_k * t_i), which shifts the
// effective position to i' = i + (w_k/omega_k) * t_i. w = 0 recovers the
// standard positional encoding of the index i.
template <typename S>
struct HawkesParams {
  Tensor<S> omega;  // [C], fixed geometric ladder, omega_k > 0
  Tensor<S> phase;  // [C], 0 on even channels, pi/2 on odd (sin -> cos)
  Tensor<S> w;      // [C], learnable time coupling

  static HawkesParams init(int c) {
    HawkesParams p;
    std::vector<S> om(c), ph(c);
    for (int k = 0; k < c; ++k) {
      om[k] = S(std::pow(10000.0, -2.0 * (k / 2) / c));
      ph[k] = (k % 2 == 0) ? S(0) : S(M_PI / 2);
    }
    p.omega = Tensor<S>::from({c}, std::move(om));
    p.phase = Tensor<S>::from({c}, std::move(ph));
    p.w = Tensor<S>::zeros({c});
    return p;
  }

  void params(ParamList<S>& out, const std::string& prefix) const {
    append_param(out, prefix + ".w", w);
  }
};

// Row i encodes peak i at timestamp times[i]; output [T_r, C].
template <typename S>
Tensor<S> hawkes_encoding(const std::vector<S>& times,
                          const HawkesParams<S>& p) {
  int t = static_cast<int>(times.size());
  int c = static_cast<int>(p.omega.size());
  if (t == 0) return Tensor<S>::zeros({0, c});
  std::vector<S> idx(t);
  for (int i = 0; i < t; ++i) idx[i] = S(i);
  Tensor<S> iv = Tensor<S>::from({t, 1}, std::move(idx));
  Tensor<S> tv = Tensor<S>::from({t, 1}, times);
  Tensor<S> arg = add(add(mul(iv, p.omega), mul(tv, p.w)), p.phase);
  return sin(arg);
}

template <typename S>
std::vector<S> peak_times(const RhythmPeaks& peaks, S frame_rate) {
  if (frame_rate <= S(0)) throw ConfigError("peak_times: frame_rate must be > 0");
  std::vector<S> t(peaks.peak_indices.size());
  for (size_t i = 0; i < t.size(); ++i)
    t[i] = S(peaks.peak_indices[i]) / frame_rate;
  return t;
}

// Pre-norm transformer decoder block: self-attention and feed-forward,
// each behind a residual.
template <typename S>
struct DecoderBlock {
  LayerNormParams<S> ln1, ln2;
  AttentionWeights<S> attn;
  LinearLayer<S> ff1, ff2;

  template <typename Rng>
  static DecoderBlock init(int c, int heads, Rng& rng) {
    DecoderBlock b;
    b.ln1 = LayerNormParams<S>::init(c);
    b.ln2 = LayerNormParams<S>::init(c);
    b.attn = AttentionWeights<S>::init(c, c, c, heads, rng);
    b.ff1 = LinearLayer<S>::init(c, 4 * c, rng);
    b.ff2 = LinearLayer<S>::init(4 * c, c, rng);
    return b;
  }

  Tensor<S> operator()(const Tensor<S>& x) const {
    Tensor<S> n = ln1(x);
    Tensor<S> a = add(x, attention(attn, n, n));
    return add(a, ff2(silu(ff1(ln2(a)))));
  }

  void params(ParamList<S>& out, const std::string& prefix) const {
    ln1.params(out, prefix + ".ln1");
    ln2.params(out, prefix + ".ln2");
    attn.params(out, prefix + ".attn");
    ff1.params(out, prefix + ".ff1");
    ff2.params(out, prefix + ".ff2");
  }
};

// Bidirectional LSTM over [T, D_in] features, both directions' hidden
// sequences concatenated and projected to C. Initial states are zeros.
template <typename S>
struct BiLstmEncoder {
  LstmWeights<S> fwd, bwd;
  LinearLayer<S> proj;  // [2H, C]

  template <typename Rng>
  static BiLstmEncoder init(int d_in, int hidden, int c, Rng& rng) {
    BiLstmEncoder e;
    e.fwd = LstmWeights<S>::init(d_in, hidden, rng);
    e.bwd = LstmWeights<S>::init(d_in, hidden, rng);
    e.proj = LinearLayer<S>::init(2 * hidden, c, rng);
    return e;
  }

  Tensor<S> operator()(const Tensor<S>& x) const {
    if (x.dim() != 2)
      throw DimensionError("BiLstmEncoder expects [T, D], got " +
                           shape_str(x.shape()));
    int t = x.shape()[0];
    if (t < 1) throw DimensionError("BiLstmEncoder: empty feature sequence");
    int h = fwd.hidden;

    auto run = [&](const LstmWeights<S>& w, bool reverse) {
      LstmState<S> st{Tensor<S>::zeros({1, h}), Tensor<S>::zeros({1, h})};
      std::vector<Tensor<S>> rows(t);
      for (int step = 0; step < t; ++step) {
        int i = reverse ? t - 1 - step : step;
        st = lstm_cell(slice(x, 0, i, i + 1), st, w);
        rows[i] = st.h;
      }
      return concat(rows, 0);  // [T, H]
    };
    Tensor<S> hf = run(fwd, false);
    Tensor<S> hb = run(bwd, true);
    return proj(concat(std::vector<Tensor<S>>{hf, hb}, 1));
  }

  void params(ParamList<S>& out, const std::string& prefix) const {
    fwd.params(out, prefix + ".fwd");
    bwd.params(out, prefix + ".bwd");
    proj.params(out, prefix + ".proj");
  }
};

// Rhythm encoder: every peak shares one learned token (the projection of
// a binary 1-entry), differentiated only by its Hawkes position.
template <typename S>
struct RhythmEncoder {
  Tensor<S> token;  // [C]
  HawkesParams<S> hawkes;
  DecoderBlock<S> dec;

  template <typename Rng>
  static RhythmEncoder init(int c, int heads, Rng& rng) {
    RhythmEncoder e;
    e.token = Tensor<S>::randn({c}, rng, S(1) / std::sqrt(S(c)));
    e.hawkes = HawkesParams<S>::init(c);
    e.dec = DecoderBlock<S>::init(c, heads, rng);
    return e;
  }

  // times are the peak timestamps in seconds; empty -> empty [0, C].
  Tensor<S> operator()(const std::vector<S>& times) const {
    int c = static_cast<int>(token.size());
    if (times.empty()) return Tensor<S>::zeros({0, c});
    Tensor<S> x = add(hawkes_encoding(times, hawkes), token);
    return dec(x);
  }

  void params(ParamList<S>& out, const std::string& prefix) const {
    append_param(out, prefix + ".token", token);
    hawkes.params(out, prefix + ".hawkes");
    dec.params(out, prefix + ".dec");
  }
};

template <typename S>
Tensor<S> encode_genre(int label, const Tensor<S>& table) {
  return embedding(table, {label});  // [1, C]
}

template <typename S>
struct ConditioningSet {
  Tensor<S> seq;  // [L, C] serial key/value sequence
  bool null_flag = false;
};

// Serial order is fixed: [genre; visual; rhythm]. Undefined or empty
// parts are skipped; drop replaces everything with the learned null token.
template <typename S>
ConditioningSet<S> assemble(const Tensor<S>& c_v, const Tensor<S>& c_r,
                            const Tensor<S>& c_g, bool drop,
                            const Tensor<S>& null_token) {
  if (drop) return {reshape(null_token, {1, static_cast<int>(null_token.size())}), true};
  std::vector<Tensor<S>> parts;
  for (const Tensor<S>* p : {&c_g, &c_v, &c_r})
    if (p->defined() && p->shape()[0] > 0) parts.push_back(*p);
  if (parts.empty())
    throw DimensionError("assemble: no conditioning parts and drop=false");
  int c = parts[0].shape()[1];
  for (auto& p : parts)
    if (p.shape()[1] != c)
      throw DimensionError("assemble: channel width mismatch, " +
                           shape_str(parts[0].shape()) + " vs " +
                           shape_str(p.shape()));
  return {parts.size() == 1 ? parts[0] : concat(parts, 0), false};
}

template <typename S>
struct ConditioningEncoders {
  BiLstmEncoder<S> visual;
  RhythmEncoder<S> rhythm;
  Tensor<S> genre_table;  // [n_genres, C]
  Tensor<S> null_token;   // [C]

  template <typename Rng>
  static ConditioningEncoders init(int d_in, int hidden, int c, int heads,
                                   int n_genres, Rng& rng) {
    ConditioningEncoders e;
    e.visual = BiLstmEncoder<S>::init(d_in, hidden, c, rng);
    e.rhythm = RhythmEncoder<S>::init(c, heads, rng);
    e.genre_table = Tensor<S>::randn({n_genres, c}, rng, S(1) / std::sqrt(S(c)));
    e.null_token = Tensor<S>::randn({c}, rng, S(1) / std::sqrt(S(c)));
    return e;
  }

  void params(ParamList<S>& out, const std::string& prefix) const {
    visual.params(out, prefix + ".visual");
    rhythm.params(out, prefix + ".rhythm");
    append_param(out, prefix + ".genre_table", genre_table);
    append_param(out, prefix + ".null_token", null_token);
  }

  ConditioningSet<S> null_set() const {
    return {reshape(null_token, {1, static_cast<int>(null_token.size())}), true};
  }
};

}  // namespace loris

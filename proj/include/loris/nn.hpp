#pragma once

// Small neural building blocks on top of the tensor engine: linear and
// layer-norm parameter bundles, an LSTM cell, and multi-head attention
// over unbatched [T, C] sequences. Templated on scalar so gradient
// checks can run in double while training runs in float.

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "loris/errors.hpp"
#include "loris/tensor.hpp"

namespace loris {

template <typename S>
struct NamedParam {
  std::string name;
  Tensor<S> tensor;
};

template <typename S>
using ParamList = std::vector<NamedParam<S>>;

template <typename S>
void append_param(ParamList<S>& out, const std::string& name, Tensor<S> t) {
  out.push_back({name, std::move(t)});
}

template <typename S>
struct LinearLayer {
  Tensor<S> weight;  // [in, out]
  Tensor<S> bias;    // [out]

  template <typename Rng>
  static LinearLayer init(int in, int out, Rng& rng) {
    LinearLayer l;
    l.weight = Tensor<S>::randn({in, out}, rng, S(1) / std::sqrt(S(in)));
    l.bias = Tensor<S>::zeros({out});
    return l;
  }
  static LinearLayer zeros(int in, int out) {
    return {Tensor<S>::zeros({in, out}), Tensor<S>::zeros({out})};
  }

  Tensor<S> operator()(const Tensor<S>& x) const {
    return add(matmul(x, weight), bias);
  }

  void params(ParamList<S>& out, const std::string& prefix) const {
    append_param(out, prefix + ".weight", weight);
    append_param(out, prefix + ".bias", bias);
  }
};

template <typename S>
struct LayerNormParams {
  Tensor<S> gamma;  // [C]
  Tensor<S> beta;   // [C]

  static LayerNormParams init(int c) {
    return {Tensor<S>::ones({c}), Tensor<S>::zeros({c})};
  }

  Tensor<S> operator()(const Tensor<S>& x) const {
    return layer_norm(x, gamma, beta);
  }

  void params(ParamList<S>& out, const std::string& prefix) const {
    append_param(out, prefix + ".gamma", gamma);
    append_param(out, prefix + ".beta", beta);
  }
};

// One LSTM step. Gate layout along the 4H axis: input, forget, candidate,
// output.
template <typename S>
struct LstmWeights {
  Tensor<S> w_ih;  // [D_in, 4H]
  Tensor<S> w_hh;  // [H, 4H]
  Tensor<S> bias;  // [4H]
  int hidden = 0;

  template <typename Rng>
  static LstmWeights init(int in, int hidden, Rng& rng) {
    LstmWeights w;
    w.w_ih = Tensor<S>::randn({in, 4 * hidden}, rng, S(1) / std::sqrt(S(in)));
    w.w_hh =
        Tensor<S>::randn({hidden, 4 * hidden}, rng, S(1) / std::sqrt(S(hidden)));
    w.bias = Tensor<S>::zeros({4 * hidden});
    w.hidden = hidden;
    return w;
  }

  void params(ParamList<S>& out, const std::string& prefix) const {
    append_param(out, prefix + ".w_ih", w_ih);
    append_param(out, prefix + ".w_hh", w_hh);
    append_param(out, prefix + ".bias", bias);
  }
};

template <typename S>
struct LstmState {
  Tensor<S> h;  // [1, H]
  Tensor<S> c;  // [1, H]
};

template <typename S>
LstmState<S> lstm_cell(const Tensor<S>& x_t, const LstmState<S>& st,
                       const LstmWeights<S>& w) {
  int H = w.hidden;
  Tensor<S> gates = add(add(matmul(x_t, w.w_ih), matmul(st.h, w.w_hh)), w.bias);
  Tensor<S> i = sigmoid(slice(gates, 1, 0, H));
  Tensor<S> f = sigmoid(slice(gates, 1, H, 2 * H));
  Tensor<S> g = tanh(slice(gates, 1, 2 * H, 3 * H));
  Tensor<S> o = sigmoid(slice(gates, 1, 3 * H, 4 * H));
  Tensor<S> c = add(mul(f, st.c), mul(i, g));
  Tensor<S> h = mul(o, tanh(c));
  return {h, c};
}

// Multi-head attention, queries from q_in [Tq, Cq], keys/values from
// kv [Tk, Ck], output [Tq, Cq]. No residual; callers add their own.
template <typename S>
struct AttentionWeights {
  Tensor<S> wq;  // [Cq, C]
  Tensor<S> wk;  // [Ck, C]
  Tensor<S> wv;  // [Ck, C]
  Tensor<S> wo;  // [C, Cq]
  int heads = 1;

  template <typename Rng>
  static AttentionWeights init(int cq, int ck, int c, int heads, Rng& rng) {
    if (c % heads != 0)
      throw ConfigError("attention width " + std::to_string(c) +
                        " not divisible by heads " + std::to_string(heads));
    AttentionWeights w;
    S sq = S(1) / std::sqrt(S(cq)), sk = S(1) / std::sqrt(S(ck)),
      sc = S(1) / std::sqrt(S(c));
    w.wq = Tensor<S>::randn({cq, c}, rng, sq);
    w.wk = Tensor<S>::randn({ck, c}, rng, sk);
    w.wv = Tensor<S>::randn({ck, c}, rng, sk);
    w.wo = Tensor<S>::randn({c, cq}, rng, sc);
    w.heads = heads;
    return w;
  }

  void params(ParamList<S>& out, const std::string& prefix) const {
    append_param(out, prefix + ".wq", wq);
    append_param(out, prefix + ".wk", wk);
    append_param(out, prefix + ".wv", wv);
    append_param(out, prefix + ".wo", wo);
  }
};

template <typename S>
Tensor<S> attention(const AttentionWeights<S>& w, const Tensor<S>& q_in,
                    const Tensor<S>& kv) {
  if (q_in.dim() != 2 || kv.dim() != 2)
    throw DimensionError("attention expects 2D sequences, got " +
                         shape_str(q_in.shape()) + " and " +
                         shape_str(kv.shape()));
  int tq = q_in.shape()[0], tk = kv.shape()[0];
  if (tk < 1) throw DimensionError("attention needs a non-empty key sequence");
  int c = w.wq.shape()[1];
  int h = w.heads, dh = c / h;

  auto split = [&](const Tensor<S>& proj, int t) {
    // [T, C] -> [H, T, dh]
    return transpose(reshape(proj, {t, h, dh}), 0, 1);
  };
  Tensor<S> q = split(matmul(q_in, w.wq), tq);
  Tensor<S> k = split(matmul(kv, w.wk), tk);
  Tensor<S> v = split(matmul(kv, w.wv), tk);

  Tensor<S> scores =
      mul(matmul(q, transpose(k, 1, 2)), S(1) / std::sqrt(S(dh)));
  Tensor<S> att = softmax(scores, -1);
  Tensor<S> o = matmul(att, v);  // [H, Tq, dh]
  o = reshape(transpose(o, 0, 1), {tq, c});
  return matmul(o, w.wo);
}

}  // namespace loris

#pragma once

// Network architecture: the waveform <-> latent codec and the 1D U-Net
// denoiser with residual conv blocks and cross-modal attention over the
// serial conditioning sequence.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "loris/conditioning.hpp"
#include "loris/errors.hpp"
#include "loris/nn.hpp"
#include "loris/tensor.hpp"

namespace loris {

struct ModelConfig {
  int audio_channels = 2;  // mono inputs are duplicated to binaural
  int latent_channels = 32;
  int patch_factor = 32;  // codec downsampling, power of two
  int base_channels = 128;
  std::vector<int> multipliers{1, 2, 4, 4, 4, 4, 4};
  std::vector<int> factors{4, 4, 4, 2, 2, 2};
  std::vector<int> num_blocks{2, 2, 2, 2, 2, 2};
  int heads = 16;
  int cond_width = 64;     // channel width C of the conditioning sequence
  int sigma_emb_width = 64;
  // When > 0, cross-attention query positions are expressed as
  // pos * (query_pos_span / L) so every U-Net level and the conditioning
  // timestamps share one unit (seconds); 0 keeps raw indices.
  double query_pos_span = 0.0;

  static ModelConfig canonical() { return ModelConfig{}; }

  static ModelConfig toy() {
    ModelConfig c;
    c.audio_channels = 2;
    c.latent_channels = 16;
    c.patch_factor = 4;
    c.base_channels = 64;
    c.multipliers = {1, 2, 2};
    c.factors = {2, 2};
    c.num_blocks = {1, 1};
    c.heads = 4;
    c.cond_width = 64;
    c.sigma_emb_width = 32;
    return c;
  }

  // Total length divisibility required of the latent sequence.
  int unet_divisibility() const {
    int d = 1;
    for (int f : factors) d *= f;
    return d;
  }

  void validate() const {
    if (multipliers.size() != factors.size() + 1 ||
        num_blocks.size() != factors.size())
      throw ConfigError(
          "ModelConfig: need len(multipliers) == len(factors)+1 == "
          "len(num_blocks)+1");
    if (patch_factor < 1 || (patch_factor & (patch_factor - 1)) != 0)
      throw ConfigError("ModelConfig: patch_factor must be a power of two");
    for (int f : factors)
      if (f < 2 || f % 2 != 0)
        throw ConfigError("ModelConfig: factors must be even and >= 2");
  }
};

namespace detail {
inline int norm_groups(int channels) {
  for (int g = std::min(8, channels); g > 1; --g)
    if (channels % g == 0) return g;
  return 1;
}
}  // namespace detail

// Sinusoidal embedding of a scalar (used for c_noise); constant, no grad.
template <typename S>
Tensor<S> sinusoidal_embedding(S x, int width) {
  std::vector<S> v(width);
  for (int k = 0; k < width; ++k) {
    S omega = S(std::pow(10000.0, -2.0 * (k / 2) / width));
    v[k] = (k % 2 == 0) ? std::sin(omega * x) : std::cos(omega * x);
  }
  return Tensor<S>::from({width}, std::move(v));
}

template <typename S>
struct GroupNormLayer {
  Tensor<S> gamma, beta;
  int groups = 1;

  static GroupNormLayer init(int channels) {
    return {Tensor<S>::ones({channels}), Tensor<S>::zeros({channels}),
            detail::norm_groups(channels)};
  }
  Tensor<S> operator()(const Tensor<S>& x) const {
    return group_norm(x, groups, gamma, beta);
  }
  void params(ParamList<S>& out, const std::string& prefix) const {
    append_param(out, prefix + ".gamma", gamma);
    append_param(out, prefix + ".beta", beta);
  }
};

template <typename S>
struct Conv1dLayer {
  Tensor<S> weight;  // [Cout, Cin, K]
  Tensor<S> bias;    // [Cout]
  int stride = 1, pad = 0;

  template <typename Rng>
  static Conv1dLayer init(int cin, int cout, int k, Rng& rng, int stride = 1,
                          int pad = 0) {
    Conv1dLayer l;
    l.weight = Tensor<S>::randn({cout, cin, k}, rng, S(1) / std::sqrt(S(cin * k)));
    l.bias = Tensor<S>::zeros({cout});
    l.stride = stride;
    l.pad = pad;
    return l;
  }
  void zero_init() {
    std::fill(weight.values().begin(), weight.values().end(), S(0));
    std::fill(bias.values().begin(), bias.values().end(), S(0));
  }
  Tensor<S> operator()(const Tensor<S>& x) const {
    return conv1d(x, weight, bias, stride, pad);
  }
  void params(ParamList<S>& out, const std::string& prefix) const {
    append_param(out, prefix + ".weight", weight);
    append_param(out, prefix + ".bias", bias);
  }
};

template <typename S>
struct ConvT1dLayer {
  Tensor<S> weight;  // [Cin, Cout, K]
  Tensor<S> bias;    // [Cout]
  int stride = 1, pad = 0;

  template <typename Rng>
  static ConvT1dLayer init(int cin, int cout, int k, Rng& rng, int stride = 1,
                           int pad = 0) {
    ConvT1dLayer l;
    l.weight = Tensor<S>::randn({cin, cout, k}, rng, S(1) / std::sqrt(S(cin * k)));
    l.bias = Tensor<S>::zeros({cout});
    l.stride = stride;
    l.pad = pad;
    return l;
  }
  Tensor<S> operator()(const Tensor<S>& x) const {
    return conv_transpose1d(x, weight, bias, stride, pad);
  }
  void params(ParamList<S>& out, const std::string& prefix) const {
    append_param(out, prefix + ".weight", weight);
    append_param(out, prefix + ".bias", bias);
  }
};

// Residual block of three norm->SiLU->conv stages. The sigma embedding
// (when given) is projected and added channelwise after the first conv.
// Codec instances run without any sigma input.
template <typename S>
struct ResnetBlock1d {
  GroupNormLayer<S> gn1, gn2, gn3;
  Conv1dLayer<S> conv1, conv2, conv3;
  Conv1dLayer<S> skip;  // 1x1, only when cin != cout
  LinearLayer<S> emb_proj;
  bool has_skip = false, has_emb = false;

  template <typename Rng>
  static ResnetBlock1d init(int cin, int cout, int emb_width, Rng& rng) {
    ResnetBlock1d b;
    b.gn1 = GroupNormLayer<S>::init(cin);
    b.gn2 = GroupNormLayer<S>::init(cout);
    b.gn3 = GroupNormLayer<S>::init(cout);
    b.conv1 = Conv1dLayer<S>::init(cin, cout, 3, rng, 1, 1);
    b.conv2 = Conv1dLayer<S>::init(cout, cout, 3, rng, 1, 1);
    b.conv3 = Conv1dLayer<S>::init(cout, cout, 3, rng, 1, 1);
    if (cin != cout) {
      b.skip = Conv1dLayer<S>::init(cin, cout, 1, rng);
      b.has_skip = true;
    }
    if (emb_width > 0) {
      b.emb_proj = LinearLayer<S>::init(emb_width, cout, rng);
      b.has_emb = true;
    }
    return b;
  }

  Tensor<S> operator()(const Tensor<S>& x, const Tensor<S>& emb = {}) const {
    Tensor<S> h = conv1(silu(gn1(x)));
    if (has_emb) {
      if (!emb.defined())
        throw ContractError("ResnetBlock1d: sigma embedding expected");
      int cout = conv1.weight.shape()[0];
      Tensor<S> e = reshape(emb_proj(reshape(emb, {1, static_cast<int>(emb.size())})),
                            {cout, 1});
      h = add(h, e);
    }
    h = conv2(silu(gn2(h)));
    h = conv3(silu(gn3(h)));
    return add(h, has_skip ? skip(x) : x);
  }

  void params(ParamList<S>& out, const std::string& prefix) const {
    gn1.params(out, prefix + ".gn1");
    gn2.params(out, prefix + ".gn2");
    gn3.params(out, prefix + ".gn3");
    conv1.params(out, prefix + ".conv1");
    conv2.params(out, prefix + ".conv2");
    conv3.params(out, prefix + ".conv3");
    if (has_skip) skip.params(out, prefix + ".skip");
    if (has_emb) emb_proj.params(out, prefix + ".emb_proj");
  }
};

// Cross attention from a feature map onto the conditioning sequence.
// A fixed sinusoidal encoding of the latent position is added to the
// query input so convolutional features see absolute time; residual add.
template <typename S>
struct CrossAttention1d {
  AttentionWeights<S> w;
  double pos_span = 0.0;  // see ModelConfig::query_pos_span

  template <typename Rng>
  static CrossAttention1d init(int feat_ch, int cond_width, int heads, Rng& rng,
                               double pos_span = 0.0) {
    int inner = feat_ch;
    if (inner % heads != 0)
      throw ConfigError("CrossAttention1d: channels not divisible by heads");
    return {AttentionWeights<S>::init(feat_ch, cond_width, inner, heads, rng),
            pos_span};
  }

  Tensor<S> operator()(const Tensor<S>& x, const ConditioningSet<S>& cond) const {
    if (x.dim() != 3)
      throw DimensionError("CrossAttention1d expects [B,C,L], got " +
                           shape_str(x.shape()));
    int b = x.shape()[0], c = x.shape()[1], l = x.shape()[2];
    double step = pos_span > 0.0 ? pos_span / l : 1.0;
    Tensor<S> pe = positional(l, c, step);
    std::vector<Tensor<S>> outs;
    outs.reserve(b);
    for (int i = 0; i < b; ++i) {
      Tensor<S> xi = reshape(slice(x, 0, i, i + 1), {c, l});
      Tensor<S> q = add(transpose(xi, 0, 1), pe);  // [L, C]
      Tensor<S> a = attention(w, q, cond.seq);
      outs.push_back(reshape(transpose(a, 0, 1), {1, c, l}));
    }
    Tensor<S> att = b == 1 ? outs[0] : concat(outs, 0);
    return add(x, att);
  }

  static Tensor<S> positional(int l, int c, double step = 1.0) {
    std::vector<S> v(static_cast<size_t>(l) * c);
    for (int i = 0; i < l; ++i)
      for (int k = 0; k < c; ++k) {
        double omega = std::pow(10000.0, -2.0 * (k / 2) / c);
        double arg = omega * i * step;
        v[static_cast<size_t>(i) * c + k] =
            S((k % 2 == 0) ? std::sin(arg) : std::cos(arg));
      }
    return Tensor<S>::from({l, c}, std::move(v));
  }

  void params(ParamList<S>& out, const std::string& prefix) const {
    w.params(out, prefix + ".attn");
  }
};

// Waveform codec: stride-2 conv stages down to L/patch_factor and a
// mirrored transposed-conv decoder. No conditioning interaction.
template <typename S>
struct LatentCodec {
  std::vector<Conv1dLayer<S>> down;       // stride 2 each
  std::vector<ResnetBlock1d<S>> down_res;
  std::vector<ConvT1dLayer<S>> up;
  std::vector<ResnetBlock1d<S>> up_res;
  Conv1dLayer<S> head;   // -> latent_channels
  ConvT1dLayer<S> tail;  // latent_channels -> codec width
  Conv1dLayer<S> out;    // -> audio channels
  int patch_factor = 1;
  int audio_channels = 2;

  template <typename Rng>
  static LatentCodec init(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    LatentCodec c;
    c.patch_factor = cfg.patch_factor;
    c.audio_channels = cfg.audio_channels;
    int stages = 0;
    for (int p = cfg.patch_factor; p > 1; p /= 2) stages++;
    int ch = cfg.base_channels / 2;
    int prev = cfg.audio_channels;
    for (int s = 0; s < stages; ++s) {
      c.down.push_back(Conv1dLayer<S>::init(prev, ch, 4, rng, 2, 1));
      c.down_res.push_back(ResnetBlock1d<S>::init(ch, ch, 0, rng));
      prev = ch;
    }
    c.head = Conv1dLayer<S>::init(prev, cfg.latent_channels, 3, rng, 1, 1);
    c.tail = ConvT1dLayer<S>::init(cfg.latent_channels, ch, 3, rng, 1, 1);
    prev = ch;
    for (int s = 0; s < stages; ++s) {
      c.up_res.push_back(ResnetBlock1d<S>::init(prev, prev, 0, rng));
      int cout = (s + 1 == stages) ? ch : ch;
      c.up.push_back(ConvT1dLayer<S>::init(prev, cout, 4, rng, 2, 1));
      prev = cout;
    }
    c.out = Conv1dLayer<S>::init(prev, cfg.audio_channels, 3, rng, 1, 1);
    return c;
  }

  Tensor<S> encode(const Tensor<S>& x) const {
    if (x.dim() != 3)
      throw DimensionError("LatentCodec::encode expects [B,C,L]");
    if (x.shape()[2] < 1) throw InputError("LatentCodec: zero-length input");
    if (x.shape()[2] % patch_factor != 0)
      throw DimensionError("LatentCodec: length " + std::to_string(x.shape()[2]) +
                           " not divisible by patch factor " +
                           std::to_string(patch_factor));
    Tensor<S> h = x;
    for (size_t s = 0; s < down.size(); ++s) h = down_res[s](down[s](h));
    return head(h);
  }

  Tensor<S> decode(const Tensor<S>& z) const {
    Tensor<S> h = tail(z);
    for (size_t s = 0; s < up.size(); ++s) h = up[s](up_res[s](h));
    return out(h);
  }

  void params(ParamList<S>& out_list, const std::string& prefix) const {
    for (size_t s = 0; s < down.size(); ++s) {
      down[s].params(out_list, prefix + ".down" + std::to_string(s));
      down_res[s].params(out_list, prefix + ".down_res" + std::to_string(s));
    }
    head.params(out_list, prefix + ".head");
    tail.params(out_list, prefix + ".tail");
    for (size_t s = 0; s < up.size(); ++s) {
      up_res[s].params(out_list, prefix + ".up_res" + std::to_string(s));
      up[s].params(out_list, prefix + ".up" + std::to_string(s));
    }
    out.params(out_list, prefix + ".out");
  }
};

// f_theta: the conditional 1D U-Net. Every residual block is followed by
// one cross-attention onto the serial conditioning sequence.
template <typename S>
struct UNet1d {
  struct Stage {
    std::vector<ResnetBlock1d<S>> blocks;
    std::vector<CrossAttention1d<S>> attns;
  };

  ModelConfig cfg;
  Conv1dLayer<S> stem;
  std::vector<Stage> down_stages;
  std::vector<Conv1dLayer<S>> downsample;
  Stage mid;
  std::vector<ConvT1dLayer<S>> upsample;
  std::vector<Stage> up_stages;
  GroupNormLayer<S> out_norm;
  Conv1dLayer<S> out_conv;  // zero-initialized
  LinearLayer<S> emb1, emb2;

  template <typename Rng>
  static UNet1d init(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    UNet1d u;
    u.cfg = cfg;
    int n = static_cast<int>(cfg.factors.size());
    auto ch = [&](int level) { return cfg.base_channels * cfg.multipliers[level]; };

    u.emb1 = LinearLayer<S>::init(cfg.sigma_emb_width, cfg.sigma_emb_width, rng);
    u.emb2 = LinearLayer<S>::init(cfg.sigma_emb_width, cfg.sigma_emb_width, rng);
    u.stem = Conv1dLayer<S>::init(cfg.latent_channels, ch(0), 3, rng, 1, 1);

    auto make_stage = [&](int cin, int cout, int blocks) {
      Stage st;
      for (int b = 0; b < blocks; ++b) {
        st.blocks.push_back(
            ResnetBlock1d<S>::init(b == 0 ? cin : cout, cout,
                                   cfg.sigma_emb_width, rng));
        st.attns.push_back(CrossAttention1d<S>::init(
            cout, cfg.cond_width, cfg.heads, rng, cfg.query_pos_span));
      }
      return st;
    };

    for (int i = 0; i < n; ++i) {
      u.down_stages.push_back(make_stage(ch(i), ch(i), cfg.num_blocks[i]));
      int f = cfg.factors[i];
      u.downsample.push_back(
          Conv1dLayer<S>::init(ch(i), ch(i + 1), 2 * f, rng, f, f / 2));
    }
    u.mid = make_stage(ch(n), ch(n), 1);
    for (int i = n - 1; i >= 0; --i) {
      int f = cfg.factors[i];
      u.upsample.push_back(
          ConvT1dLayer<S>::init(ch(i + 1), ch(i), 2 * f, rng, f, f / 2));
      // skip concat doubles the input channels of the first block
      u.up_stages.push_back(make_stage(2 * ch(i), ch(i), cfg.num_blocks[i]));
    }
    u.out_norm = GroupNormLayer<S>::init(ch(0));
    u.out_conv = Conv1dLayer<S>::init(ch(0), cfg.latent_channels, 3, rng, 1, 1);
    u.out_conv.zero_init();
    return u;
  }

  Tensor<S> operator()(const Tensor<S>& z, S c_noise,
                       const ConditioningSet<S>& cond) const {
    if (z.dim() != 3 || z.shape()[1] != cfg.latent_channels)
      throw DimensionError("UNet1d expects [B," +
                           std::to_string(cfg.latent_channels) + ",L], got " +
                           shape_str(z.shape()));
    int div = cfg.unet_divisibility();
    if (z.shape()[2] % div != 0)
      throw ConfigError("UNet1d: latent length " + std::to_string(z.shape()[2]) +
                        " must be divisible by " + std::to_string(div));

    Tensor<S> emb = reshape(
        emb2(silu(emb1(reshape(sinusoidal_embedding(c_noise, cfg.sigma_emb_width),
                               {1, cfg.sigma_emb_width})))),
        {cfg.sigma_emb_width});

    auto run_stage = [&](const Stage& st, Tensor<S> h) {
      for (size_t b = 0; b < st.blocks.size(); ++b)
        h = st.attns[b](st.blocks[b](h, emb), cond);
      return h;
    };

    Tensor<S> h = stem(z);
    std::vector<Tensor<S>> skips;
    for (size_t i = 0; i < down_stages.size(); ++i) {
      h = run_stage(down_stages[i], h);
      skips.push_back(h);
      h = downsample[i](h);
    }
    h = run_stage(mid, h);
    for (size_t i = 0; i < up_stages.size(); ++i) {
      h = upsample[i](h);
      Tensor<S> skip = skips[skips.size() - 1 - i];
      h = run_stage(up_stages[i], concat(std::vector<Tensor<S>>{h, skip}, 1));
    }
    return out_conv(silu(out_norm(h)));
  }

  void params(ParamList<S>& out, const std::string& prefix) const {
    emb1.params(out, prefix + ".emb1");
    emb2.params(out, prefix + ".emb2");
    stem.params(out, prefix + ".stem");
    auto stage_params = [&](const Stage& st, const std::string& p) {
      for (size_t b = 0; b < st.blocks.size(); ++b) {
        st.blocks[b].params(out, p + ".block" + std::to_string(b));
        st.attns[b].params(out, p + ".xattn" + std::to_string(b));
      }
    };
    for (size_t i = 0; i < down_stages.size(); ++i) {
      stage_params(down_stages[i], prefix + ".down" + std::to_string(i));
      downsample[i].params(out, prefix + ".downsample" + std::to_string(i));
    }
    stage_params(mid, prefix + ".mid");
    for (size_t i = 0; i < up_stages.size(); ++i) {
      upsample[i].params(out, prefix + ".upsample" + std::to_string(i));
      stage_params(up_stages[i], prefix + ".up" + std::to_string(i));
    }
    out_norm.params(out, prefix + ".out_norm");
    out_conv.params(out, prefix + ".out_conv");
  }
};

// Full generative model bundle.
template <typename S>
struct LorisModel {
  ModelConfig cfg;
  LatentCodec<S> codec;
  UNet1d<S> unet;
  ConditioningEncoders<S> cond;
  // Latents are multiplied by this before diffusion so their std matches
  // sigma_data; fitted after codec training, inverted at generation time.
  S latent_scale = S(1);

  template <typename Rng>
  static LorisModel init(const ModelConfig& cfg, int visual_dim, int n_genres,
                         Rng& rng) {
    LorisModel m;
    m.cfg = cfg;
    m.codec = LatentCodec<S>::init(cfg, rng);
    m.unet = UNet1d<S>::init(cfg, rng);
    m.cond = ConditioningEncoders<S>::init(visual_dim, cfg.cond_width / 2,
                                           cfg.cond_width, cfg.heads, n_genres,
                                           rng);
    return m;
  }

  ParamList<S> params() const {
    ParamList<S> out;
    codec.params(out, "codec");
    unet.params(out, "unet");
    cond.params(out, "cond");
    return out;
  }
};

}  // namespace loris

#pragma once

// Optimization harness: AdamW with grouped learning rates, global-norm
// gradient clipping, the warmup schedule, the synthetic rhythmic corpus,
// and the two-phase (codec, then diffusion) training loop.

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "loris/audio.hpp"
#include "loris/diffusion.hpp"
#include "loris/errors.hpp"
#include "loris/model.hpp"
#include "loris/rhythm.hpp"

namespace loris {

struct TrainConfig {
  double beta1 = 0.9;
  double beta2 = 0.96;
  double weight_decay = 4.5e-2;
  double lr_pretrained = 3e-6;
  double lr_fresh = 3e-3;
  double warmup_lr = 2e-4;
  long warmup_iters = 1000;
  double grad_clip = 0.5;
  int batch_size = 1;
  long codec_steps = 600;
  long diffusion_steps = 2000;
  double cond_dropout = 0.1;
  bool per_sample_dropout = false;
  double norm_factor = 0.95;
  double gain_lo = 0.8;
  double gain_hi = 1.1;
  long snapshot_every = 100;

  void validate() const {
    if (beta1 <= 0 || beta2 <= 0 || lr_fresh <= 0 || warmup_lr <= 0)
      throw ConfigError("TrainConfig: rates must be > 0");
    if (cond_dropout < 0 || cond_dropout > 1)
      throw ConfigError("TrainConfig: cond_dropout must be in [0,1]");
  }
};

// Learning rates (pretrained tier, fresh tier) at a given iteration.
inline std::pair<double, double> lr_schedule(long iter, const TrainConfig& cfg) {
  if (iter < cfg.warmup_iters) return {cfg.warmup_lr, cfg.warmup_lr};
  return {cfg.lr_pretrained, cfg.lr_fresh};
}

// Scales all gradients so the global L2 norm is at most max_norm;
// returns the applied scale (1 when already within bounds).
template <typename S>
double clip_gradients(ParamList<S>& params, double max_norm) {
  double sq = 0;
  for (auto& p : params) {
    const S* g = p.tensor.grad();
    for (long i = 0; i < p.tensor.size(); ++i)
      sq += static_cast<double>(g[i]) * g[i];
  }
  double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0) return 1.0;
  double scale = max_norm / norm;
  for (auto& p : params) {
    S* g = p.tensor.grad();
    for (long i = 0; i < p.tensor.size(); ++i) g[i] = S(g[i] * scale);
  }
  return scale;
}

// Decoupled-weight-decay Adam. Moments are kept in double regardless of
// the parameter scalar type.
template <typename S>
class AdamW {
 public:
  explicit AdamW(const ParamList<S>& params) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(params[i].tensor.size(), 0.0);
      v_[i].assign(params[i].tensor.size(), 0.0);
    }
  }

  long step_count() const { return t_; }

  // groups[i] selects the learning rate for params[i]; callers with one
  // tier pass an all-zero vector.
  void step(ParamList<S>& params, const std::vector<int>& groups,
            const std::vector<double>& lrs, const TrainConfig& cfg) {
    if (params.size() != m_.size() || groups.size() != params.size())
      throw ContractError("AdamW: parameter list changed size");
    t_++;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < params.size(); ++i) {
      Tensor<S>& p = params[i].tensor;
      double lr = lrs[groups[i]];
      const S* g = p.grad();
      S* w = p.data();
      for (long j = 0; j < p.size(); ++j) {
        double gj = static_cast<double>(g[j]);
        if (std::isnan(gj))
          throw ContractError("AdamW: NaN gradient in " + params[i].name);
        m_[i][j] = cfg.beta1 * m_[i][j] + (1.0 - cfg.beta1) * gj;
        v_[i][j] = cfg.beta2 * v_[i][j] + (1.0 - cfg.beta2) * gj * gj;
        double mhat = m_[i][j] / bc1;
        double vhat = v_[i][j] / bc2;
        double wj = static_cast<double>(w[j]);
        wj *= 1.0 - lr * cfg.weight_decay;
        wj -= lr * mhat / (std::sqrt(vhat) + 1e-8);
        w[j] = S(wj);
      }
    }
  }

 private:
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

// ---------------------------------------------------------------------------
// Synthetic rhythmic corpus: click-burst waveforms whose onsets coincide
// with pose jerks, genre = burst carrier class.

struct SynthConfig {
  int sample_rate = 22050;
  double duration = 4.0;
  double pose_fps = 30.0;
  int joints = 8;
  int n_genres = 3;
  int min_beats = 4;
  int max_beats = 8;
  double min_spacing = 0.35;
  double burst_amp = 0.6;
  double burst_decay = 25.0;   // 1/s
  double burst_length = 0.15;  // s
  double background_amp = 0.01;
  double jerk_pixels = 25.0;
  // carrier frequency of genre g = carrier_frac[g] * sample_rate
  std::vector<double> carrier_frac{0.05, 0.11, 0.23};
};

struct SyntheticSample {
  Waveform wav;
  PoseSequence pose;
  int genre = 0;
  std::vector<double> times;  // planted rhythm times, seconds
};

std::vector<SyntheticSample> make_synthetic_corpus(int n, unsigned seed,
                                                   const SynthConfig& cfg = {});

// Planted times in visual envelope frames (motion row of the jerk).
std::vector<int> planted_pose_frames(const std::vector<double>& times,
                                     double fps);
// Planted times in audio envelope frames for the given STFT hop.
std::vector<int> planted_audio_frames(const std::vector<double>& times,
                                      int sample_rate, int hop);

// ---------------------------------------------------------------------------
// Training loops.

template <typename S>
Tensor<S> waveform_to_tensor(const Waveform& w, int channels, S gain) {
  long n = w.num_samples();
  Tensor<S> x = Tensor<S>::zeros({1, channels, static_cast<int>(n)});
  for (int c = 0; c < channels; ++c) {
    const Eigen::VectorXf& src =
        w.channels[std::min<size_t>(c, w.channels.size() - 1)];
    for (long i = 0; i < n; ++i)
      x.data()[static_cast<long>(c) * n + i] = S(src[i]) * gain;
  }
  return x;
}

template <typename S>
Waveform tensor_to_waveform(const Tensor<S>& x, int sample_rate, S gain) {
  if (x.dim() != 3 || x.shape()[0] != 1)
    throw DimensionError("tensor_to_waveform expects [1,C,L]");
  Waveform w;
  w.sample_rate = sample_rate;
  int ch = x.shape()[1];
  long n = x.shape()[2];
  for (int c = 0; c < ch; ++c) {
    Eigen::VectorXf v(n);
    for (long i = 0; i < n; ++i)
      v[i] = static_cast<float>(x.data()[static_cast<long>(c) * n + i] * gain);
    w.channels.push_back(std::move(v));
  }
  return w;
}

// Per-frame joint speeds, the stand-in for precomputed visual features.
template <typename S>
Tensor<S> pose_velocity_features(const PoseSequence& pose) {
  int t = pose.frames(), j = pose.joints();
  Tensor<S> f = Tensor<S>::zeros({t, j});
  for (int i = 1; i < t; ++i)
    for (int k = 0; k < j; ++k) {
      double dx = pose.x(i, k) - pose.x(i - 1, k);
      double dy = pose.y(i, k) - pose.y(i - 1, k);
      f.data()[static_cast<long>(i) * j + k] = S(std::sqrt(dx * dx + dy * dy));
    }
  return f;
}

template <typename S>
struct PreparedSample {
  Tensor<S> visual;        // [T, J]
  std::vector<S> times;    // rhythm peak timestamps, seconds
  int genre = 0;
  const SyntheticSample* src = nullptr;
};

template <typename S>
PreparedSample<S> prepare_sample(const SyntheticSample& s) {
  PreparedSample<S> p;
  p.visual = pose_velocity_features<S>(s.pose);
  RhythmPeaks peaks = extract_visual_rhythm(s.pose);
  auto t = peak_times<S>(peaks, S(s.pose.fps));
  p.times = std::move(t);
  p.genre = s.genre;
  p.src = &s;
  return p;
}

template <typename S>
ConditioningSet<S> build_sample_conditioning(const LorisModel<S>& model,
                                             const PreparedSample<S>& s,
                                             bool drop) {
  if (drop) return model.cond.null_set();
  Tensor<S> cv = model.cond.visual(s.visual);
  Tensor<S> cr = model.cond.rhythm(s.times);
  Tensor<S> cg = encode_genre(s.genre, model.cond.genre_table);
  return assemble(cv, cr, cg, false, model.cond.null_token);
}

template <typename S>
struct TrainRun {
  std::vector<double> losses;
  bool diverged = false;
};

namespace detail {

template <typename S>
std::vector<std::vector<S>> snapshot_params(const ParamList<S>& params) {
  std::vector<std::vector<S>> snap;
  snap.reserve(params.size());
  for (auto& p : params) snap.push_back(p.tensor.values());
  return snap;
}

template <typename S>
void restore_params(ParamList<S>& params,
                    const std::vector<std::vector<S>>& snap) {
  for (size_t i = 0; i < params.size(); ++i)
    params[i].tensor.values() = snap[i];
}

}  // namespace detail

// Phase 1: reconstruction training of the latent codec alone.
template <typename S, typename Rng>
TrainRun<S> train_codec(LorisModel<S>& model,
                        const std::vector<SyntheticSample>& corpus,
                        const TrainConfig& cfg, Rng& rng) {
  cfg.validate();
  if (corpus.empty()) throw InputError("train_codec: empty corpus");
  ParamList<S> params;
  model.codec.params(params, "codec");
  for (auto& p : params) p.tensor.set_requires_grad(true);
  AdamW<S> opt(params);
  std::vector<int> groups(params.size(), 0);
  std::uniform_int_distribution<size_t> pick(0, corpus.size() - 1);
  std::uniform_real_distribution<double> gain(cfg.gain_lo, cfg.gain_hi);

  TrainRun<S> run;
  auto snap = detail::snapshot_params(params);
  for (long it = 0; it < cfg.codec_steps; ++it) {
    const auto& s = corpus[pick(rng)];
    Tensor<S> x = waveform_to_tensor<S>(
        s.wav, model.cfg.audio_channels, S(cfg.norm_factor * gain(rng)));
    double loss_v;
    {
      Tape<S> tape;
      Tensor<S> loss = mean(square(sub(model.codec.decode(model.codec.encode(x)), x)));
      loss_v = static_cast<double>(loss.item());
      if (std::isnan(loss_v)) {
        detail::restore_params(params, snap);
        run.diverged = true;
        return run;
      }
      for (auto& p : params) p.tensor.zero_grad();
      tape.backward(loss);
    }
    clip_gradients(params, cfg.grad_clip);
    auto lr = lr_schedule(it, cfg);
    opt.step(params, groups, {lr.second}, cfg);
    run.losses.push_back(loss_v);
    if (it % cfg.snapshot_every == 0) snap = detail::snapshot_params(params);
  }
  return run;
}

// Mean reconstruction relative L2 error over the corpus.
template <typename S>
double codec_recon_error(const LorisModel<S>& model,
                         const std::vector<SyntheticSample>& corpus,
                         const TrainConfig& cfg) {
  double acc = 0;
  for (const auto& s : corpus) {
    Tensor<S> x = waveform_to_tensor<S>(s.wav, model.cfg.audio_channels,
                                        S(cfg.norm_factor));
    Tensor<S> y = model.codec.decode(model.codec.encode(x));
    acc += (y.vec() - x.vec()).norm() / std::max<double>(1e-12, x.vec().norm());
  }
  return acc / corpus.size();
}

// Scale latents so their std matches sigma_data.
template <typename S>
void fit_latent_scale(LorisModel<S>& model,
                      const std::vector<SyntheticSample>& corpus,
                      const TrainConfig& cfg, const EdmConfig<S>& edm,
                      int probe = 8) {
  double sq = 0;
  long n = 0;
  for (int i = 0; i < std::min<int>(probe, corpus.size()); ++i) {
    Tensor<S> x = waveform_to_tensor<S>(corpus[i].wav, model.cfg.audio_channels,
                                        S(cfg.norm_factor));
    Tensor<S> z = model.codec.encode(x);
    sq += z.vec().squaredNorm();
    n += z.size();
  }
  double stdv = std::sqrt(sq / std::max<long>(1, n));
  model.latent_scale = S(static_cast<double>(edm.sigma_data) / std::max(1e-12, stdv));
}

// Phase 2: diffusion + conditioning encoders, codec frozen.
template <typename S, typename Rng>
TrainRun<S> train_diffusion(LorisModel<S>& model,
                            const std::vector<SyntheticSample>& corpus,
                            const TrainConfig& cfg, const EdmConfig<S>& edm,
                            Rng& rng) {
  cfg.validate();
  if (corpus.empty()) throw InputError("train_diffusion: empty corpus");

  std::vector<PreparedSample<S>> prepared;
  prepared.reserve(corpus.size());
  for (const auto& s : corpus) prepared.push_back(prepare_sample<S>(s));

  ParamList<S> params;
  model.unet.params(params, "unet");
  model.cond.params(params, "cond");
  for (auto& p : params) p.tensor.set_requires_grad(true);
  AdamW<S> opt(params);
  std::vector<int> groups(params.size(), 0);
  std::uniform_int_distribution<size_t> pick(0, corpus.size() - 1);
  std::uniform_real_distribution<double> gain(cfg.gain_lo, cfg.gain_hi);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  TrainRun<S> run;
  auto snap = detail::snapshot_params(params);
  for (long it = 0; it < cfg.diffusion_steps; ++it) {
    const auto& ps = prepared[pick(rng)];
    Tensor<S> x = waveform_to_tensor<S>(
        ps.src->wav, model.cfg.audio_channels, S(cfg.norm_factor * gain(rng)));
    Tensor<S> z0 = mul(model.codec.encode(x), model.latent_scale);  // no tape yet
    bool drop = u01(rng) < cfg.cond_dropout;

    double loss_v;
    {
      Tape<S> tape;
      auto cond = build_sample_conditioning(model, ps, drop);
      auto net = [&](const Tensor<S>& z, S cn, const ConditioningSet<S>& c) {
        return model.unet(z, cn, c);
      };
      Tensor<S> loss = training_loss(z0, cond, rng, net, edm);
      loss_v = static_cast<double>(loss.item());
      if (std::isnan(loss_v)) {
        detail::restore_params(params, snap);
        run.diverged = true;
        return run;
      }
      for (auto& p : params) p.tensor.zero_grad();
      tape.backward(loss);
    }
    clip_gradients(params, cfg.grad_clip);
    auto lr = lr_schedule(it, cfg);
    opt.step(params, groups, {lr.second}, cfg);
    run.losses.push_back(loss_v);
    if (it % cfg.snapshot_every == 0) snap = detail::snapshot_params(params);
  }
  return run;
}

// Generation from a trained model: sample a latent, undo the latent
// scale, decode, undo the input normalization.
template <typename S, typename Rng>
Waveform generate_waveform(const LorisModel<S>& model,
                           const ConditioningSet<S>& cond, int latent_len,
                           int sample_rate, const EdmConfig<S>& edm,
                           const TrainConfig& cfg, Rng& rng) {
  auto net = [&](const Tensor<S>& z, S cn, const ConditioningSet<S>& c) {
    return model.unet(z, cn, c);
  };
  Shape shape{1, model.cfg.latent_channels, latent_len};
  Tensor<S> z = sample(cond, model.cond.null_set(), net, shape, edm, rng);
  Tensor<S> x = model.codec.decode(mul(z, S(1) / model.latent_scale));
  return tensor_to_waveform(x, sample_rate, S(1.0 / cfg.norm_factor));
}

}  // namespace loris

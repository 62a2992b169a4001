#include "loris/training.hpp"

#include <cmath>
#include <random>

namespace loris {

std::vector<int> planted_pose_frames(const std::vector<double>& times,
                                     double fps) {
  // a jerk applied at pose frame f spikes the motion row f-1
  std::vector<int> out;
  out.reserve(times.size());
  for (double t : times)
    out.push_back(std::max(0, static_cast<int>(std::lround(t * fps)) - 1));
  return out;
}

std::vector<int> planted_audio_frames(const std::vector<double>& times,
                                      int sample_rate, int hop) {
  // flux rises while the burst enters the analysis window, about one
  // frame ahead of onset/hop
  std::vector<int> out;
  out.reserve(times.size());
  for (double t : times)
    out.push_back(std::max(
        0, static_cast<int>(std::lround(t * sample_rate / hop)) - 1));
  return out;
}

std::vector<SyntheticSample> make_synthetic_corpus(int n, unsigned seed,
                                                   const SynthConfig& cfg) {
  if (n < 1) throw ConfigError("make_synthetic_corpus: n must be >= 1");
  if (static_cast<int>(cfg.carrier_frac.size()) < cfg.n_genres)
    throw ConfigError("make_synthetic_corpus: need a carrier per genre");

  std::mt19937 rng(seed);
  std::uniform_int_distribution<int> beat_count(cfg.min_beats, cfg.max_beats);
  std::uniform_int_distribution<int> genre_pick(0, cfg.n_genres - 1);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  std::vector<SyntheticSample> out;
  out.reserve(n);
  int wav_len = static_cast<int>(cfg.sample_rate * cfg.duration);
  int pose_len = static_cast<int>(cfg.pose_fps * cfg.duration);

  for (int si = 0; si < n; ++si) {
    SyntheticSample s;
    s.genre = genre_pick(rng);

    // rhythm times: strictly spaced, kept clear of the clip edges
    int want = beat_count(rng);
    double t = 0.15 + 0.3 * u01(rng);
    while (static_cast<int>(s.times.size()) < want &&
           t < cfg.duration - 0.25) {
      s.times.push_back(t);
      t += cfg.min_spacing + 0.02 + 0.35 * u01(rng);
    }

    // waveform: quiet background tone + decaying bursts at rhythm times
    double f_bg = 0.02 * cfg.sample_rate;
    double f_carrier = cfg.carrier_frac[s.genre] * cfg.sample_rate;
    Eigen::VectorXf x(wav_len);
    for (int i = 0; i < wav_len; ++i) {
      double ti = static_cast<double>(i) / cfg.sample_rate;
      x[i] = static_cast<float>(cfg.background_amp *
                                std::sin(2.0 * M_PI * f_bg * ti));
    }
    for (double onset : s.times) {
      int start = static_cast<int>(onset * cfg.sample_rate);
      int stop = std::min(wav_len,
                          start + static_cast<int>(cfg.burst_length *
                                                   cfg.sample_rate));
      for (int i = start; i < stop; ++i) {
        double tau = static_cast<double>(i - start) / cfg.sample_rate;
        // linear taper to zero so truncation does not click
        double fade = 1.0 - tau / cfg.burst_length;
        x[i] += static_cast<float>(cfg.burst_amp * fade *
                                   std::exp(-cfg.burst_decay * tau) *
                                   std::sin(2.0 * M_PI * f_carrier * tau));
      }
    }
    s.wav.sample_rate = cfg.sample_rate;
    s.wav.channels.push_back(std::move(x));

    // poses: smooth drift + persistent jumps at rhythm times
    s.pose.fps = static_cast<float>(cfg.pose_fps);
    s.pose.x.resize(pose_len, cfg.joints);
    s.pose.y.resize(pose_len, cfg.joints);
    std::vector<double> bx(cfg.joints), by(cfg.joints), ph(cfg.joints);
    for (int j = 0; j < cfg.joints; ++j) {
      bx[j] = 100.0 + 300.0 * u01(rng);
      by[j] = 100.0 + 300.0 * u01(rng);
      ph[j] = 2.0 * M_PI * u01(rng);
    }
    std::vector<int> jerk_frames;
    std::vector<std::vector<std::pair<double, double>>> jumps;
    for (double onset : s.times) {
      jerk_frames.push_back(static_cast<int>(std::lround(onset * cfg.pose_fps)));
      std::vector<std::pair<double, double>> dirs(cfg.joints);
      for (int j = 0; j < cfg.joints; ++j) {
        double a = 2.0 * M_PI * u01(rng);
        dirs[j] = {cfg.jerk_pixels * std::cos(a), cfg.jerk_pixels * std::sin(a)};
      }
      jumps.push_back(std::move(dirs));
    }
    for (int f = 0; f < pose_len; ++f)
      for (int j = 0; j < cfg.joints; ++j) {
        // drift is exactly representable steps so static stretches stay
        // numerically silent
        double drift = 0.5 * std::sin(0.07 * f + ph[j]);
        double px = bx[j] + drift, py = by[j] - drift;
        for (size_t e = 0; e < jerk_frames.size(); ++e)
          if (f >= jerk_frames[e]) {
            px += jumps[e][j].first;
            py += jumps[e][j].second;
          }
        s.pose.x(f, j) = static_cast<float>(px);
        s.pose.y(f, j) = static_cast<float>(py);
      }

    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace loris

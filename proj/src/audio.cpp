#include "loris/audio.hpp"

#include <cmath>

#include "loris/errors.hpp"

namespace loris {

Eigen::VectorXf to_mono(const Waveform& w) {
  if (w.channels.empty()) throw InputError("to_mono: waveform has no channels");
  Eigen::VectorXf mono = w.channels[0];
  for (size_t c = 1; c < w.channels.size(); ++c) {
    if (w.channels[c].size() != mono.size())
      throw InputError("to_mono: channel length mismatch");
    mono += w.channels[c];
  }
  mono /= static_cast<float>(w.channels.size());
  return mono;
}

Spectrogram stft_magnitude(const Waveform& w, int window, int hop) {
  if (hop < 1 || window < hop)
    throw ConfigError("stft_magnitude: need window >= hop >= 1");
  Eigen::VectorXf x = to_mono(w);
  const long len = x.size();
  if (len < window)
    throw InputError("stft_magnitude: input of " + std::to_string(len) +
                     " samples shorter than one window of " + std::to_string(window));

  const int frames = static_cast<int>((len - window) / hop) + 1;
  const int bins = window / 2 + 1;

  Eigen::VectorXf hann(window);
  for (int i = 0; i < window; ++i)
    hann[i] = 0.5f - 0.5f * std::cos(2.0 * M_PI * i / window);

  // DFT as two dense matrix products against the windowed frame stack;
  // window sizes here are small enough that this beats pulling in an FFT.
  Eigen::MatrixXf dft_cos(bins, window), dft_sin(bins, window);
  for (int k = 0; k < bins; ++k)
    for (int i = 0; i < window; ++i) {
      double a = 2.0 * M_PI * k * i / window;
      dft_cos(k, i) = static_cast<float>(std::cos(a));
      dft_sin(k, i) = static_cast<float>(-std::sin(a));
    }

  Eigen::MatrixXf framed(window, frames);
  for (int f = 0; f < frames; ++f)
    framed.col(f) = x.segment(static_cast<long>(f) * hop, window).cwiseProduct(hann);

  Eigen::MatrixXf re = dft_cos * framed;
  Eigen::MatrixXf im = dft_sin * framed;

  Spectrogram s;
  s.window = window;
  s.hop = hop;
  s.sample_rate = w.sample_rate;
  s.magnitudes = (re.array().square() + im.array().square()).sqrt().transpose();
  return s;
}

OnsetEnvelope audio_onset_envelope(const Spectrogram& s, bool log_compress) {
  const int F = s.frames();
  if (F < 2) throw InputError("audio_onset_envelope: need >= 2 frames");

  Eigen::MatrixXf m = s.magnitudes;
  if (log_compress) {
    // scalar log: Eigen's vectorized log is not ulp-consistent across
    // packet alignments, which turns digital silence into nonzero flux
    for (int f = 0; f < m.rows(); ++f)
      for (int k = 0; k < m.cols(); ++k)
        m(f, k) = std::log(std::max(m(f, k), 1e-10f));
  }

  OnsetEnvelope env;
  env.frame_rate = s.hop > 0 ? static_cast<float>(s.sample_rate) / s.hop : 0.f;
  env.values = Eigen::VectorXf::Zero(F);
  for (int f = 1; f < F; ++f)
    env.values[f] = (m.row(f) - m.row(f - 1)).cwiseMax(0.f).sum();
  float mx = env.values.maxCoeff();
  if (mx > 0.f) env.values /= mx;
  return env;
}

RhythmPeaks detect_audio_beats(const Waveform& w, const AudioOnsetConfig& cfg) {
  Spectrogram s = stft_magnitude(w, cfg.window, cfg.hop);
  OnsetEnvelope env = audio_onset_envelope(s, cfg.log_compress);
  return pick_peaks(env, cfg.peak);
}

}  // namespace loris

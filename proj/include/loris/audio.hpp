#pragma once

// Waveform-side onset detection: Hann STFT magnitudes, rectified spectral
// flux, and beat picking through the shared peak picker.

#include <Eigen/Core>
#include <vector>

#include "loris/rhythm.hpp"

namespace loris {

struct Waveform {
  int sample_rate = 0;
  // One vector per channel, equal lengths, values nominally in [-1, 1].
  std::vector<Eigen::VectorXf> channels;

  int num_channels() const { return static_cast<int>(channels.size()); }
  long num_samples() const {
    return channels.empty() ? 0 : static_cast<long>(channels[0].size());
  }
  float duration() const {
    return sample_rate > 0 ? static_cast<float>(num_samples()) / sample_rate : 0.f;
  }
};

Eigen::VectorXf to_mono(const Waveform& w);

struct Spectrogram {
  // frames x bins one-sided magnitudes.
  Eigen::MatrixXf magnitudes;
  int window = 0;
  int hop = 0;
  int sample_rate = 0;

  int frames() const { return static_cast<int>(magnitudes.rows()); }
  int bins() const { return static_cast<int>(magnitudes.cols()); }
};

struct AudioOnsetConfig {
  int window = 1024;
  int hop = 512;
  bool log_compress = true;
  PeakPickConfig peak{/*pre_max=*/3, /*post_max=*/3, /*pre_avg=*/2,
                      /*post_avg=*/2, /*delta=*/0.2f, /*relative=*/false,
                      /*wait=*/1, /*min_height=*/0.02f};
};

Spectrogram stft_magnitude(const Waveform& w, int window, int hop);

OnsetEnvelope audio_onset_envelope(const Spectrogram& s, bool log_compress = true);

RhythmPeaks detect_audio_beats(const Waveform& w, const AudioOnsetConfig& cfg = {});

}  // namespace loris

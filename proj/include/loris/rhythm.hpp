#pragma once

// Pose-driven visual rhythm extraction: pose sequence -> motion field ->
// directogram -> onset envelope -> picked rhythm peaks.

#include <Eigen/Core>
#include <optional>
#include <vector>

namespace loris {

struct PoseSequence {
  float fps = 0.f;
  // T x J joint coordinates in pixels.
  Eigen::MatrixXf x;
  Eigen::MatrixXf y;
  // Optional T x J per-joint confidence in [0,1].
  std::optional<Eigen::MatrixXf> confidence;

  int frames() const { return static_cast<int>(x.rows()); }
  int joints() const { return static_cast<int>(x.cols()); }
};

struct MotionField {
  // (T-1) x J displacement components.
  Eigen::MatrixXf dx;
  Eigen::MatrixXf dy;
  // Joints masked out by the confidence floor (same shape, 1 = keep).
  Eigen::MatrixXf mask;
};

struct Directogram {
  // (T-1) x K non-negative motion-magnitude histogram over angle bins.
  Eigen::MatrixXf values;
  Eigen::VectorXf bin_centers;  // 2*pi*k/K
};

struct OnsetEnvelope {
  Eigen::VectorXf values;  // in [0,1]; max is exactly 1 unless all-zero
  float frame_rate = 0.f;
};

struct RhythmPeaks {
  std::vector<int> peak_indices;  // strictly increasing
  int length = 0;                 // envelope length the indices live in

  std::vector<float> as_binary() const {
    std::vector<float> v(length, 0.f);
    for (int i : peak_indices) v[i] = 1.f;
    return v;
  }
};

struct PeakPickConfig {
  int pre_max = 3;
  int post_max = 3;
  int pre_avg = 3;
  int post_avg = 3;
  float delta = 0.2f;
  bool relative = true;  // threshold = delta * current local maximum
  int wait = 1;
  // Floor on the (max-normalized) envelope; rejects numerical-noise peaks
  // that the relative threshold cannot, being scale-invariant.
  float min_height = 0.f;
};

struct RhythmExtractConfig {
  int bins = 10;
  float confidence_floor = 0.1f;
  PeakPickConfig peak;

  RhythmExtractConfig() { peak.min_height = 0.02f; }
};

MotionField motion_field(const PoseSequence& pose, float confidence_floor = 0.1f);

Directogram directogram(const MotionField& motion, int bins);

OnsetEnvelope onset_envelope(const Directogram& d, float frame_rate);

RhythmPeaks pick_peaks(const OnsetEnvelope& envelope, const PeakPickConfig& cfg);

RhythmPeaks extract_visual_rhythm(const PoseSequence& pose,
                                  const RhythmExtractConfig& cfg = {});

OnsetEnvelope visual_onset_envelope(const PoseSequence& pose,
                                    const RhythmExtractConfig& cfg = {});

}  // namespace loris

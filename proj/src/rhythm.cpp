#include "loris/rhythm.hpp"

#include <cmath>

#include "loris/errors.hpp"

namespace loris {

namespace {
constexpr float kTwoPi = 6.28318530717958647692f;
}

MotionField motion_field(const PoseSequence& pose, float confidence_floor) {
  const int T = pose.frames();
  const int J = pose.joints();
  if (T < 2)
    throw InputError("motion_field: pose sequence needs at least 2 frames, got " +
                     std::to_string(T));
  if (!pose.x.allFinite() || !pose.y.allFinite())
    throw InputError("motion_field: pose coordinates contain non-finite values");

  MotionField m;
  m.dx = pose.x.bottomRows(T - 1) - pose.x.topRows(T - 1);
  m.dy = pose.y.bottomRows(T - 1) - pose.y.topRows(T - 1);
  m.mask = Eigen::MatrixXf::Ones(T - 1, J);
  if (pose.confidence) {
    // A motion needs both endpoints above the floor.
    const auto& c = *pose.confidence;
    for (int t = 0; t < T - 1; ++t)
      for (int j = 0; j < J; ++j)
        if (c(t, j) < confidence_floor || c(t + 1, j) < confidence_floor)
          m.mask(t, j) = 0.f;
  }
  return m;
}

Directogram directogram(const MotionField& motion, int bins) {
  if (bins < 2) throw ConfigError("directogram: bin count must be >= 2");
  const int T = static_cast<int>(motion.dx.rows());
  const int J = static_cast<int>(motion.dx.cols());
  if (T < 1) throw InputError("directogram: empty motion field");

  Directogram d;
  d.values = Eigen::MatrixXf::Zero(T, bins);
  d.bin_centers.resize(bins);
  for (int k = 0; k < bins; ++k) d.bin_centers[k] = kTwoPi * k / bins;

  const float width = kTwoPi / bins;
  for (int t = 0; t < T; ++t)
    for (int j = 0; j < J; ++j) {
      if (motion.mask(t, j) == 0.f) continue;
      float mx = motion.dx(t, j), my = motion.dy(t, j);
      float mag = std::sqrt(mx * mx + my * my);
      if (mag == 0.f) continue;
      float phi = std::atan2(my, mx);
      if (phi < 0.f) phi += kTwoPi;
      // Literal indicator: a motion lands in every bin whose center lies
      // within one bin width (circular distance).
      for (int k = 0; k < bins; ++k) {
        float diff = std::fabs(d.bin_centers[k] - phi);
        float circ = std::min(diff, kTwoPi - diff);
        if (circ <= width) d.values(t, k) += mag;
      }
    }
  return d;
}

OnsetEnvelope onset_envelope(const Directogram& d, float frame_rate) {
  const int T = static_cast<int>(d.values.rows());
  if (T < 2) throw InputError("onset_envelope: directogram needs >= 2 time steps");

  OnsetEnvelope env;
  env.frame_rate = frame_rate;
  env.values = Eigen::VectorXf::Zero(T);
  for (int t = 1; t < T; ++t) {
    float flux = 0.f;
    for (int k = 0; k < d.values.cols(); ++k)
      flux += std::max(0.f, d.values(t, k) - d.values(t - 1, k));
    env.values[t] = flux;
  }
  float mx = env.values.maxCoeff();
  if (mx > 0.f) env.values /= mx;
  return env;
}

RhythmPeaks pick_peaks(const OnsetEnvelope& envelope, const PeakPickConfig& cfg) {
  const auto& o = envelope.values;
  const int n = static_cast<int>(o.size());
  if (n == 0) throw InputError("pick_peaks: empty envelope");

  RhythmPeaks peaks;
  peaks.length = n;
  int last = -1;
  for (int t = 0; t < n; ++t) {
    // A peak needs positive onset strength; an all-zero envelope has none.
    if (o[t] <= 0.f || o[t] < cfg.min_height) continue;
    // (a) local maximum over the clipped max window
    int lo = std::max(0, t - cfg.pre_max);
    int hi = std::min(n - 1, t + cfg.post_max);
    float wmax = o[lo];
    for (int i = lo + 1; i <= hi; ++i) wmax = std::max(wmax, o[i]);
    if (o[t] != wmax) continue;
    // (b) above local mean plus threshold
    int alo = std::max(0, t - cfg.pre_avg);
    int ahi = std::min(n - 1, t + cfg.post_avg);
    float sum = 0.f;
    for (int i = alo; i <= ahi; ++i) sum += o[i];
    float avg = sum / static_cast<float>(ahi - alo + 1);
    float thresh = cfg.relative ? cfg.delta * o[t] : cfg.delta;
    if (!(o[t] >= avg + thresh)) continue;
    // (c) minimum spacing from the previously accepted peak
    if (last >= 0 && t - last <= cfg.wait) continue;
    peaks.peak_indices.push_back(t);
    last = t;
  }
  return peaks;
}

OnsetEnvelope visual_onset_envelope(const PoseSequence& pose,
                                    const RhythmExtractConfig& cfg) {
  MotionField m = motion_field(pose, cfg.confidence_floor);
  Directogram d = directogram(m, cfg.bins);
  return onset_envelope(d, pose.fps);
}

RhythmPeaks extract_visual_rhythm(const PoseSequence& pose,
                                  const RhythmExtractConfig& cfg) {
  return pick_peaks(visual_onset_envelope(pose, cfg), cfg.peak);
}

}  // namespace loris

#pragma once

// Integration layer wiring the modules into the two end-to-end flows:
// conditioning build (pose + optional visual features + optional genre ->
// ConditioningSet) and generation (ConditioningSet -> sampled latent ->
// decoded waveform).

#include <string>

#include "loris/conditioning.hpp"
#include "loris/io.hpp"

namespace loris {

struct GenerationRequest {
  std::string pose_path;
  // Optional CSV matrix of per-frame visual features; empty path omits the
  // visual conditioning branch.
  std::string features_path;
  // Optional genre label; -1 omits the genre conditioning branch.
  int genre = -1;
  // Requested duration in seconds; 0 derives it from the pose file. When
  // set it must agree with pose length / fps within one pose frame.
  double duration = 0.0;
  int steps = 50;
  float guidance = 20.f;
  unsigned seed = 0;
  int sample_rate = 22050;
};

// Pose + feature + genre files -> serial conditioning sequence.
ConditioningSet<float> build_conditioning(const GenerationRequest& req,
                                          const LorisModel<float>& model,
                                          int visual_dim,
                                          const RhythmExtractConfig& rhythm_cfg = {});

// Full generation flow; a pure function of (request, checkpoint, seed).
Waveform generate(const GenerationRequest& req, const LoadedCheckpoint& ckpt,
                  const RhythmExtractConfig& rhythm_cfg = {},
                  double norm_factor = 0.95);

}  // namespace loris

#pragma once

// Beat alignment scoring: one-to-one matching between generated and
// reference beat lists, coverage/hit ratios, F1, and batch statistics.

#include <vector>

#include "loris/rhythm.hpp"

namespace loris {

struct BeatAlignmentReport {
  int b_g = 0;  // generated beat count
  int b_t = 0;  // reference (ground-truth) beat count
  int b_a = 0;  // aligned beat count
  double bcs = 0.0;  // b_a / b_g
  double bhs = 0.0;  // b_a / b_t
  double f1 = 0.0;   // harmonic mean of bcs and bhs
  bool degenerate = false;  // a beat count was zero; ratios forced to 0
};

struct BatchScore {
  double mean_bcs = 0.0;
  double mean_bhs = 0.0;
  double mean_f1 = 0.0;
  double csd = 0.0;  // population std of per-sample bcs
  double hsd = 0.0;  // population std of per-sample bhs
  std::vector<BeatAlignmentReport> per_sample;
};

// Legacy definition (BCS = B_g / B_t) kept only for comparison tables.
double legacy_bcs(const RhythmPeaks& gen, const RhythmPeaks& ref);

BeatAlignmentReport align_beats(const RhythmPeaks& gen, const RhythmPeaks& ref,
                                int tolerance = 1);

BatchScore score_batch(
    const std::vector<std::pair<RhythmPeaks, RhythmPeaks>>& pairs,
    int tolerance = 1);

}  // namespace loris

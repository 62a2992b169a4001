#include "loris/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "loris/errors.hpp"

namespace loris {

namespace {

void check_sorted(const std::vector<int>& v, const char* who) {
  for (size_t i = 1; i < v.size(); ++i)
    if (v[i] <= v[i - 1])
      throw ContractError(std::string("align_beats: ") + who +
                          " beat list is not strictly increasing");
}

}  // namespace

double legacy_bcs(const RhythmPeaks& gen, const RhythmPeaks& ref) {
  if (ref.peak_indices.empty()) return 0.0;
  return static_cast<double>(gen.peak_indices.size()) / ref.peak_indices.size();
}

BeatAlignmentReport align_beats(const RhythmPeaks& gen, const RhythmPeaks& ref,
                                int tolerance) {
  if (tolerance < 0) throw ContractError("align_beats: tolerance must be >= 0");
  check_sorted(gen.peak_indices, "generated");
  check_sorted(ref.peak_indices, "reference");

  BeatAlignmentReport r;
  r.b_g = static_cast<int>(gen.peak_indices.size());
  r.b_t = static_cast<int>(ref.peak_indices.size());

  // One-to-one greedy matching in time order: each generated beat claims
  // the nearest still-unmatched reference beat within +-tolerance.
  std::vector<bool> used(ref.peak_indices.size(), false);
  for (int g : gen.peak_indices) {
    int best = -1;
    int best_dist = tolerance + 1;
    for (size_t i = 0; i < ref.peak_indices.size(); ++i) {
      if (used[i]) continue;
      int d = std::abs(ref.peak_indices[i] - g);
      if (d < best_dist) {
        best_dist = d;
        best = static_cast<int>(i);
      }
    }
    if (best >= 0) {
      used[best] = true;
      r.b_a++;
    }
  }

  r.degenerate = (r.b_g == 0 || r.b_t == 0);
  r.bcs = r.b_g > 0 ? static_cast<double>(r.b_a) / r.b_g : 0.0;
  r.bhs = r.b_t > 0 ? static_cast<double>(r.b_a) / r.b_t : 0.0;
  r.f1 = (r.bcs + r.bhs) > 0.0 ? 2.0 * r.bcs * r.bhs / (r.bcs + r.bhs) : 0.0;
  return r;
}

BatchScore score_batch(
    const std::vector<std::pair<RhythmPeaks, RhythmPeaks>>& pairs,
    int tolerance) {
  if (pairs.empty()) throw ContractError("score_batch: empty batch");

  BatchScore s;
  s.per_sample.reserve(pairs.size());
  for (const auto& [gen, ref] : pairs)
    s.per_sample.push_back(align_beats(gen, ref, tolerance));

  const double n = static_cast<double>(s.per_sample.size());
  for (const auto& r : s.per_sample) {
    s.mean_bcs += r.bcs;
    s.mean_bhs += r.bhs;
    s.mean_f1 += r.f1;
  }
  s.mean_bcs /= n;
  s.mean_bhs /= n;
  s.mean_f1 /= n;

  double var_c = 0.0, var_h = 0.0;
  for (const auto& r : s.per_sample) {
    var_c += (r.bcs - s.mean_bcs) * (r.bcs - s.mean_bcs);
    var_h += (r.bhs - s.mean_bhs) * (r.bhs - s.mean_bhs);
  }
  s.csd = std::sqrt(var_c / n);
  s.hsd = std::sqrt(var_h / n);
  return s;
}

}  // namespace loris

#include "loris/pipeline.hpp"

#include <cmath>
#include <random>

#include "loris/errors.hpp"
#include "loris/training.hpp"

namespace loris {

namespace {

// Rethrows known error types with the failing stage and input file attached.
template <typename Fn>
auto attributed(const std::string& stage, const std::string& file, Fn&& fn)
    -> decltype(fn()) {
  auto ctx = [&](const char* what) {
    return stage + " (" + file + "): " + what;
  };
  try {
    return fn();
  } catch (const FormatError& e) {
    throw FormatError(ctx(e.what()));
  } catch (const InputError& e) {
    throw InputError(ctx(e.what()));
  } catch (const ConfigError& e) {
    throw ConfigError(ctx(e.what()));
  } catch (const DimensionError& e) {
    throw DimensionError(ctx(e.what()));
  } catch (const ContractError& e) {
    throw ContractError(ctx(e.what()));
  }
}

}  // namespace

ConditioningSet<float> build_conditioning(const GenerationRequest& req,
                                          const LorisModel<float>& model,
                                          int visual_dim,
                                          const RhythmExtractConfig& rhythm_cfg) {
  PoseSequence pose = attributed("build_conditioning/pose", req.pose_path,
                                 [&] { return load_pose_json(req.pose_path); });

  // rhythm branch: always present, extracted from the pose sequence
  Tensor<float> c_r = attributed("build_conditioning/rhythm", req.pose_path, [&] {
    RhythmPeaks peaks = extract_visual_rhythm(pose, rhythm_cfg);
    return model.cond.rhythm(peak_times<float>(peaks, pose.fps));
  });

  Tensor<float> c_v;  // undefined = omitted
  if (!req.features_path.empty()) {
    c_v = attributed("build_conditioning/visual", req.features_path, [&] {
      Eigen::MatrixXf feat = read_matrix_csv(req.features_path);
      if (static_cast<int>(feat.cols()) != visual_dim)
        throw FormatError("visual feature width " + std::to_string(feat.cols()) +
                          " does not match the checkpoint's visual_dim " +
                          std::to_string(visual_dim));
      Tensor<float> x = Tensor<float>::zeros(
          {static_cast<int>(feat.rows()), visual_dim});
      for (long i = 0; i < feat.rows(); ++i)
        for (long j = 0; j < feat.cols(); ++j)
          x.data()[i * visual_dim + j] = feat(i, j);
      return model.cond.visual(x);
    });
  }

  Tensor<float> c_g;  // undefined = omitted
  if (req.genre >= 0)
    c_g = attributed("build_conditioning/genre", req.pose_path,
                     [&] { return encode_genre(req.genre, model.cond.genre_table); });

  return assemble(c_v, c_r, c_g, false, model.cond.null_token);
}

Waveform generate(const GenerationRequest& req, const LoadedCheckpoint& ckpt,
                  const RhythmExtractConfig& rhythm_cfg, double norm_factor) {
  const LorisModel<float>& model = ckpt.model;

  PoseSequence pose = attributed("generate/pose", req.pose_path,
                                 [&] { return load_pose_json(req.pose_path); });
  double pose_dur = pose.frames() / static_cast<double>(pose.fps);
  double duration = req.duration > 0 ? req.duration : pose_dur;
  if (std::fabs(duration - pose_dur) > 1.0 / pose.fps + 1e-9)
    throw ContractError("generate (" + req.pose_path +
                        "): requested duration " + std::to_string(duration) +
                        "s disagrees with pose duration " +
                        std::to_string(pose_dur) + "s by more than one frame");

  ConditioningSet<float> cond =
      build_conditioning(req, model, ckpt.meta.visual_dim, rhythm_cfg);

  // length rounded to the nearest codec/U-Net-divisible latent count
  long samples = std::llround(duration * req.sample_rate);
  long div = static_cast<long>(model.cfg.patch_factor) *
             model.cfg.unet_divisibility();
  long latent_samples = std::max(div, (samples + div / 2) / div * div);
  int latent_len = static_cast<int>(latent_samples / model.cfg.patch_factor);

  EdmConfig<float> edm;
  edm.steps = req.steps;
  edm.guidance = req.guidance;
  TrainConfig tc;
  tc.norm_factor = norm_factor;
  std::mt19937 rng(req.seed);
  return attributed("generate/sample", req.pose_path, [&] {
    return generate_waveform(model, cond, latent_len, req.sample_rate, edm, tc,
                             rng);
  });
}

}  // namespace loris

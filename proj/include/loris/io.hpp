#pragma once

// File formats and persistence: WAV read/write, linear resampling, pose
// JSON, the LRIS checkpoint container, sectioned key=value config files,
// CSV emitters, and a small SVG plotter.

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "loris/audio.hpp"
#include "loris/diffusion.hpp"
#include "loris/model.hpp"
#include "loris/rhythm.hpp"
#include "loris/training.hpp"

namespace loris {

// --- WAV ------------------------------------------------------------------

enum class WavCodec { Float32, Pcm16 };

Waveform wav_read(const std::string& path);
void wav_write(const std::string& path, const Waveform& w,
               WavCodec codec = WavCodec::Float32);

// Linear-interpolation resampling; always explicit, never implicit.
Waveform resample_linear(const Waveform& w, int new_rate);

// --- Pose JSON ------------------------------------------------------------

PoseSequence load_pose_json(const std::string& path);
void save_pose_json(const std::string& path, const PoseSequence& pose);

// --- Checkpoint container -------------------------------------------------
// "LRIS" magic, format version, JSON tensor index + config snapshot,
// little-endian float32 payload. Round trips are bit-exact.

struct CheckpointMeta {
  int visual_dim = 0;
  int n_genres = 0;
  nlohmann::json extra;
};

void save_checkpoint(const std::string& path, const LorisModel<float>& model,
                     const CheckpointMeta& meta);

struct LoadedCheckpoint {
  LorisModel<float> model;
  CheckpointMeta meta;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

// --- Config files ---------------------------------------------------------
// [section] key = value, '#' comments. Unknown sections or keys are
// errors so typos cannot silently fall back to defaults.

using ConfigMap = std::map<std::string, std::map<std::string, std::string>>;

ConfigMap parse_config_text(const std::string& text);
ConfigMap parse_config_file(const std::string& path);

struct AppConfig {
  ModelConfig model = ModelConfig::toy();
  EdmConfig<float> diffusion;
  TrainConfig train;
  RhythmExtractConfig rhythm;
  AudioOnsetConfig audio;
  SynthConfig synth;
};

AppConfig app_config_from_map(const ConfigMap& m);
AppConfig load_app_config(const std::string& path);

// --- Reports and plots ----------------------------------------------------

void write_envelope_csv(const std::string& path, const OnsetEnvelope& env);
void write_peaks_csv(const std::string& path, const RhythmPeaks& peaks,
                     float frame_rate);
void write_losses_csv(const std::string& path,
                      const std::vector<double>& losses);
OnsetEnvelope read_envelope_csv(const std::string& path);
// Plain numeric matrix, one CSV row per line, no header; ragged rejected.
Eigen::MatrixXf read_matrix_csv(const std::string& path);
void write_matrix_csv(const std::string& path, const Eigen::MatrixXf& m);
RhythmPeaks read_peaks_csv(const std::string& path, float* frame_rate = nullptr);

// Figure-3-style overlay: envelope polyline with peak markers.
void plot_envelope_svg(const std::string& path, const OnsetEnvelope& env,
                       const RhythmPeaks& peaks);

}  // namespace loris

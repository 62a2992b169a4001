// Command-line front end: rhythm extraction, onset detection, evaluation,
// synthetic data, training, sampling, plotting, and the sampler sweep.
//
// Exit codes: 0 success, 1 usage error, 2 input format error, 3 runtime
// error (including training divergence). Diagnostics go to stderr.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>

#include "loris/errors.hpp"
#include "loris/io.hpp"
#include "loris/metrics.hpp"
#include "loris/pipeline.hpp"
#include "loris/training.hpp"

namespace fs = std::filesystem;
using namespace loris;

namespace {

// Thrown for failures that are neither usage nor format problems.
struct RuntimeFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string sample_stem(int i) {
  std::ostringstream ss;
  ss << "sample_" << std::setw(4) << std::setfill('0') << i;
  return ss.str();
}

// --- corpus directory layout (documented in README) -------------------------
// DIR/sample_NNNN.wav            float-32 WAV
// DIR/sample_NNNN.pose.json      pose file
// DIR/sample_NNNN.meta.json      {"genre": int, "times": [seconds...]}

void save_corpus(const std::string& dir,
                 const std::vector<SyntheticSample>& corpus) {
  fs::create_directories(dir);
  for (size_t i = 0; i < corpus.size(); ++i) {
    std::string stem = (fs::path(dir) / sample_stem(static_cast<int>(i))).string();
    wav_write(stem + ".wav", corpus[i].wav, WavCodec::Float32);
    save_pose_json(stem + ".pose.json", corpus[i].pose);
    nlohmann::json meta{{"genre", corpus[i].genre},
                        {"times", corpus[i].times}};
    std::ofstream f(stem + ".meta.json");
    f << meta.dump(1) << "\n";
  }
}

std::vector<SyntheticSample> load_corpus(const std::string& dir) {
  if (!fs::is_directory(dir))
    throw InputError("corpus: not a directory: " + dir);
  std::vector<std::string> stems;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::string p = e.path().string();
    if (p.size() > 4 && p.substr(p.size() - 4) == ".wav")
      stems.push_back(p.substr(0, p.size() - 4));
  }
  std::sort(stems.begin(), stems.end());
  if (stems.empty())
    throw InputError("corpus: no .wav files found in " + dir);

  std::vector<SyntheticSample> corpus;
  for (const auto& stem : stems) {
    SyntheticSample s;
    s.wav = wav_read(stem + ".wav");
    s.pose = load_pose_json(stem + ".pose.json");
    std::ifstream f(stem + ".meta.json");
    if (!f) throw InputError("corpus: missing meta file " + stem + ".meta.json");
    nlohmann::json meta;
    try {
      f >> meta;
      s.genre = meta.at("genre").get<int>();
      s.times = meta.at("times").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("corpus: malformed meta file " + stem + ".meta.json: " +
                        e.what());
    }
    corpus.push_back(std::move(s));
  }
  return corpus;
}

nlohmann::json report_to_json(const BeatAlignmentReport& r) {
  return {{"b_g", r.b_g}, {"b_t", r.b_t}, {"b_a", r.b_a},
          {"bcs", r.bcs}, {"bhs", r.bhs}, {"f1", r.f1}};
}

void emit_json(const nlohmann::json& j, const std::string& out) {
  if (out.empty()) {
    std::cout << j.dump(1) << "\n";
  } else {
    std::ofstream f(out);
    if (!f) throw InputError("cannot create output file: " + out);
    f << j.dump(1) << "\n";
  }
}

std::vector<std::string> list_wavs(const std::string& dir) {
  if (!fs::is_directory(dir)) throw InputError("not a directory: " + dir);
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::string p = e.path().string();
    if (p.size() > 4 && p.substr(p.size() - 4) == ".wav") out.push_back(p);
  }
  std::sort(out.begin(), out.end());
  return out;
}

// --- subcommand bodies -------------------------------------------------------

struct ExtractArgs {
  std::string poses, out = "peaks.csv", envelope, config;
  int k = 10;
};

void run_extract(const ExtractArgs& a) {
  RhythmExtractConfig cfg;
  if (!a.config.empty()) cfg = load_app_config(a.config).rhythm;
  cfg.bins = a.k;
  PoseSequence pose = load_pose_json(a.poses);
  OnsetEnvelope env = visual_onset_envelope(pose, cfg);
  RhythmPeaks peaks = pick_peaks(env, cfg.peak);
  write_peaks_csv(a.out, peaks, pose.fps);
  if (!a.envelope.empty()) write_envelope_csv(a.envelope, env);
  std::cout << "frames=" << env.values.size() << " peaks="
            << peaks.peak_indices.size() << " out=" << a.out << "\n";
}

struct AudioOnsetArgs {
  std::string wav, out = "beats.csv", envelope, config;
};

void run_audio_onsets(const AudioOnsetArgs& a) {
  AudioOnsetConfig cfg;
  if (!a.config.empty()) cfg = load_app_config(a.config).audio;
  Waveform w = wav_read(a.wav);
  RhythmPeaks beats = detect_audio_beats(w, cfg);
  float frame_rate = static_cast<float>(w.sample_rate) / cfg.hop;
  write_peaks_csv(a.out, beats, frame_rate);
  if (!a.envelope.empty()) {
    OnsetEnvelope env =
        audio_onset_envelope(stft_magnitude(w, cfg.window, cfg.hop),
                             cfg.log_compress);
    env.frame_rate = frame_rate;
    write_envelope_csv(a.envelope, env);
  }
  std::cout << "samples=" << w.num_samples() << " beats="
            << beats.peak_indices.size() << " out=" << a.out << "\n";
}

struct EvalArgs {
  std::string gen, ref, gen_dir, ref_dir, out, config;
  int tolerance = 1;
};

void run_eval(const EvalArgs& a) {
  AudioOnsetConfig cfg;
  if (!a.config.empty()) cfg = load_app_config(a.config).audio;
  auto beats_of = [&](const std::string& p) {
    return detect_audio_beats(wav_read(p), cfg);
  };

  nlohmann::json j;
  if (!a.gen_dir.empty() || !a.ref_dir.empty()) {
    if (a.gen_dir.empty() || a.ref_dir.empty())
      throw InputError("eval: batch mode needs both --gen-dir and --ref-dir");
    auto gens = list_wavs(a.gen_dir);
    auto refs = list_wavs(a.ref_dir);
    if (gens.size() != refs.size() || gens.empty())
      throw InputError("eval: directories hold " + std::to_string(gens.size()) +
                       " and " + std::to_string(refs.size()) +
                       " wav files; need equal non-zero counts");
    std::vector<std::pair<RhythmPeaks, RhythmPeaks>> pairs;
    for (size_t i = 0; i < gens.size(); ++i)
      pairs.emplace_back(beats_of(gens[i]), beats_of(refs[i]));
    BatchScore score = score_batch(pairs, a.tolerance);
    j["bcs"] = score.mean_bcs;
    j["bhs"] = score.mean_bhs;
    j["f1"] = score.mean_f1;
    j["csd"] = score.csd;
    j["hsd"] = score.hsd;
    nlohmann::json per = nlohmann::json::array();
    for (size_t i = 0; i < pairs.size(); ++i) {
      nlohmann::json e = report_to_json(score.per_sample[i]);
      e["gen"] = gens[i];
      e["ref"] = refs[i];
      per.push_back(std::move(e));
    }
    j["per_sample"] = std::move(per);
    // aggregate counts across the batch
    int bg = 0, bt = 0, ba = 0;
    for (const auto& r : score.per_sample) {
      bg += r.b_g;
      bt += r.b_t;
      ba += r.b_a;
    }
    j["b_g"] = bg;
    j["b_t"] = bt;
    j["b_a"] = ba;
  } else {
    if (a.gen.empty() || a.ref.empty())
      throw InputError("eval: need --gen and --ref (or --gen-dir/--ref-dir)");
    BeatAlignmentReport r =
        align_beats(beats_of(a.gen), beats_of(a.ref), a.tolerance);
    j = report_to_json(r);
    j["csd"] = 0.0;
    j["hsd"] = 0.0;
    j["per_sample"] = nlohmann::json::array({report_to_json(r)});
  }
  emit_json(j, a.out);
}

struct MakeSynthArgs {
  std::string out, config;
  int n = 10;
  unsigned seed = 0;
};

void run_make_synth(const MakeSynthArgs& a) {
  SynthConfig cfg;
  if (!a.config.empty()) cfg = load_app_config(a.config).synth;
  auto corpus = make_synthetic_corpus(a.n, a.seed, cfg);
  save_corpus(a.out, corpus);
  std::cout << "wrote " << corpus.size() << " samples to " << a.out << "\n";
}

struct TrainArgs {
  std::string config, data, out;
  unsigned seed = 0;
};

void run_train(const TrainArgs& a) {
  AppConfig cfg = a.config.empty() ? AppConfig{} : load_app_config(a.config);
  auto corpus = load_corpus(a.data);
  int visual_dim = corpus[0].pose.joints();
  int n_genres = cfg.synth.n_genres;
  for (const auto& s : corpus) n_genres = std::max(n_genres, s.genre + 1);

  std::mt19937 rng(a.seed);
  auto model = LorisModel<float>::init(cfg.model, visual_dim, n_genres, rng);

  CheckpointMeta meta;
  meta.visual_dim = visual_dim;
  meta.n_genres = n_genres;

  auto save = [&](long codec_it, long diff_it, bool diverged) {
    meta.extra = {{"codec_steps", codec_it},
                  {"diffusion_steps", diff_it},
                  {"diverged", diverged}};
    save_checkpoint(a.out, model, meta);
  };

  std::cerr << "phase 1: codec, " << cfg.train.codec_steps << " steps\n";
  TrainRun<float> p1 = train_codec(model, corpus, cfg.train, rng);
  write_losses_csv(a.out + ".codec_losses.csv", p1.losses);
  if (p1.diverged) {
    save(static_cast<long>(p1.losses.size()), 0, true);
    throw RuntimeFailure("train: codec phase diverged; last good checkpoint "
                         "kept at " + a.out);
  }

  fit_latent_scale(model, corpus, cfg.train, cfg.diffusion);
  std::cerr << "latent_scale=" << model.latent_scale << "\n";

  std::cerr << "phase 2: diffusion, " << cfg.train.diffusion_steps << " steps\n";
  TrainRun<float> p2 = train_diffusion(model, corpus, cfg.train, cfg.diffusion, rng);
  write_losses_csv(a.out + ".diffusion_losses.csv", p2.losses);
  save(cfg.train.codec_steps, static_cast<long>(p2.losses.size()), p2.diverged);
  if (p2.diverged)
    throw RuntimeFailure("train: diffusion phase diverged; last good "
                         "checkpoint kept at " + a.out);
  std::cout << "checkpoint written to " << a.out << "\n";
}

struct SampleArgs {
  std::string ckpt, poses, features, out, config;
  int genre = -1;
  int steps = 50;
  double guidance = 20.0;
  unsigned seed = 0;
  int rate = 22050;
  double duration = 0.0;
};

void run_sample(const SampleArgs& a) {
  LoadedCheckpoint ckpt = load_checkpoint(a.ckpt);
  GenerationRequest req;
  req.pose_path = a.poses;
  req.features_path = a.features;
  req.genre = a.genre;
  req.steps = a.steps;
  req.guidance = static_cast<float>(a.guidance);
  req.seed = a.seed;
  req.sample_rate = a.rate;
  req.duration = a.duration;
  RhythmExtractConfig rcfg;
  double norm = 0.95;
  if (!a.config.empty()) {
    AppConfig app = load_app_config(a.config);
    rcfg = app.rhythm;
    norm = app.train.norm_factor;
  }
  Waveform w = generate(req, ckpt, rcfg, norm);
  wav_write(a.out, w, WavCodec::Float32);
  std::cout << "wrote " << w.num_samples() << " samples (" << w.duration()
            << " s) to " << a.out << "\n";
}

struct PlotArgs {
  std::string envelope, peaks, out = "fig.svg";
};

void run_plot(const PlotArgs& a) {
  OnsetEnvelope env = read_envelope_csv(a.envelope);
  RhythmPeaks peaks;
  if (!a.peaks.empty()) peaks = read_peaks_csv(a.peaks);
  plot_envelope_svg(a.out, env, peaks);
  std::cout << "wrote " << a.out << "\n";
}

struct SweepArgs {
  std::string param = "steps";
  std::vector<double> values;
  std::string out = "sweep.csv";
  unsigned seed = 0;
};

// Oracle-denoiser sweep: with constant conditional / unconditional targets
// the guided sampler must converge onto the guided fixed point, so the
// relative error column measures pure sampler behavior.
void run_sweep(const SweepArgs& a) {
  if (a.param != "steps" && a.param != "guidance")
    throw InputError("sweep: --param must be steps or guidance");
  std::vector<double> values = a.values;
  if (values.empty())
    values = a.param == "steps"
                 ? std::vector<double>{10, 20, 30, 50, 100}
                 : std::vector<double>{2, 5, 10, 20, 30, 50, 100};

  const Shape shape{1, 4, 16};
  const float target_cond = 0.10f, target_uncond = 0.05f;

  std::ofstream f(a.out);
  if (!f) throw InputError("cannot create output file: " + a.out);
  f << "param,value,rel_error\n";
  std::cout << "param,value,rel_error\n";
  for (double v : values) {
    EdmConfig<float> cfg;
    float w = 1.f;
    if (a.param == "steps") cfg.steps = static_cast<int>(v);
    else w = static_cast<float>(v);
    float guided = target_uncond + w * (target_cond - target_uncond);
    auto den = [&](const Tensor<float>& z, float) {
      (void)z;
      return Tensor<float>::full(shape, guided);
    };
    std::mt19937 rng(a.seed);
    Tensor<float> z = sample_with_denoiser<float>(den, shape, cfg, rng);
    double err = 0;
    for (long i = 0; i < z.size(); ++i)
      err = std::max(err, std::fabs(static_cast<double>(z.data()[i]) - guided));
    double rel = err / std::fabs(guided);
    f << a.param << "," << v << "," << rel << "\n";
    std::cout << a.param << "," << v << "," << rel << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"loris: pose-conditioned rhythmic audio generation"};
  app.require_subcommand(1);

  ExtractArgs ex;
  auto* c_ex = app.add_subcommand("extract-rhythm",
                                  "Extract visual rhythm peaks from a pose file");
  c_ex->add_option("--poses", ex.poses, "pose JSON file")->required();
  c_ex->add_option("--k", ex.k, "directogram angle bins");
  c_ex->add_option("--out", ex.out, "peaks CSV output");
  c_ex->add_option("--envelope", ex.envelope, "also write the onset envelope CSV");
  c_ex->add_option("--config", ex.config, "config file ([rhythm] section)");

  AudioOnsetArgs ao;
  auto* c_ao = app.add_subcommand("audio-onsets",
                                  "Detect onset beats in a WAV file");
  c_ao->add_option("--wav", ao.wav, "input WAV")->required();
  c_ao->add_option("--out", ao.out, "beats CSV output");
  c_ao->add_option("--envelope", ao.envelope, "also write the flux envelope CSV");
  c_ao->add_option("--config", ao.config, "config file ([audio] section)");

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "Beat-alignment metrics between WAVs");
  c_ev->add_option("--gen", ev.gen, "generated WAV");
  c_ev->add_option("--ref", ev.ref, "reference WAV");
  c_ev->add_option("--gen-dir", ev.gen_dir, "directory of generated WAVs");
  c_ev->add_option("--ref-dir", ev.ref_dir, "directory of reference WAVs");
  c_ev->add_option("--tolerance", ev.tolerance, "alignment tolerance in frames");
  c_ev->add_option("--out", ev.out, "report JSON output (default stdout)");
  c_ev->add_option("--config", ev.config, "config file ([audio] section)");

  MakeSynthArgs ms;
  auto* c_ms = app.add_subcommand("make-synth", "Generate a synthetic corpus");
  c_ms->add_option("--n", ms.n, "number of samples");
  c_ms->add_option("--seed", ms.seed, "corpus seed");
  c_ms->add_option("--out", ms.out, "output directory")->required();
  c_ms->add_option("--config", ms.config, "config file ([synth] section)");

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "Two-phase training on a corpus");
  c_tr->add_option("--config", tr.config, "config file");
  c_tr->add_option("--data", tr.data, "corpus directory")->required();
  c_tr->add_option("--out", tr.out, "checkpoint output path")->required();
  c_tr->add_option("--seed", tr.seed, "training seed");

  SampleArgs sa;
  auto* c_sa = app.add_subcommand("sample", "Generate audio from a checkpoint");
  c_sa->add_option("--ckpt", sa.ckpt, "checkpoint file")->required();
  c_sa->add_option("--poses", sa.poses, "pose JSON file")->required();
  c_sa->add_option("--features", sa.features, "visual feature CSV (optional)");
  c_sa->add_option("--genre", sa.genre, "genre label (optional)");
  c_sa->add_option("--steps", sa.steps, "sampler steps");
  c_sa->add_option("--guidance", sa.guidance, "guidance scale");
  c_sa->add_option("--seed", sa.seed, "sampling seed");
  c_sa->add_option("--rate", sa.rate, "output sample rate");
  c_sa->add_option("--duration", sa.duration, "duration seconds (default: pose)");
  c_sa->add_option("--out", sa.out, "output WAV")->required();
  c_sa->add_option("--config", sa.config, "config file");

  PlotArgs pl;
  auto* c_pl = app.add_subcommand("plot", "Envelope + peak overlay as SVG");
  c_pl->add_option("--envelope", pl.envelope, "envelope CSV")->required();
  c_pl->add_option("--peaks", pl.peaks, "peaks CSV");
  c_pl->add_option("--out", pl.out, "SVG output");

  SweepArgs sw;
  auto* c_sw = app.add_subcommand("sweep", "Sampler step/guidance sweep table");
  c_sw->add_option("--param", sw.param, "steps or guidance");
  c_sw->add_option("--values", sw.values, "values to sweep")->delimiter(',');
  c_sw->add_option("--out", sw.out, "results CSV");
  c_sw->add_option("--seed", sw.seed, "sampler seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*c_ex) run_extract(ex);
    else if (*c_ao) run_audio_onsets(ao);
    else if (*c_ev) run_eval(ev);
    else if (*c_ms) run_make_synth(ms);
    else if (*c_tr) run_train(tr);
    else if (*c_sa) run_sample(sa);
    else if (*c_pl) run_plot(pl);
    else if (*c_sw) run_sweep(sw);
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}

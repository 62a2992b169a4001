#include "loris/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>

#include "loris/errors.hpp"

namespace loris {

namespace {

// --- little-endian binary helpers ------------------------------------------

template <typename T>
void put(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::string& where) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
    throw FormatError("unexpected end of file in " + where);
  return v;
}

std::string get_tag(std::istream& is, const std::string& where) {
  char tag[4];
  if (!is.read(tag, 4))
    throw FormatError("unexpected end of file in " + where);
  return std::string(tag, 4);
}

std::ifstream open_read(const std::string& path, const std::string& what) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot open " + what + " file: " + path);
  return f;
}

std::ofstream open_write(const std::string& path, const std::string& what) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot create " + what + " file: " + path);
  return f;
}

}  // namespace

// --- WAV --------------------------------------------------------------------

Waveform wav_read(const std::string& path) {
  std::ifstream f = open_read(path, "WAV");
  if (get_tag(f, "RIFF header") != "RIFF")
    throw FormatError("WAV: missing RIFF chunk in " + path);
  get<uint32_t>(f, "RIFF size");
  if (get_tag(f, "RIFF form") != "WAVE")
    throw FormatError("WAV: RIFF form is not WAVE in " + path);

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  bool have_fmt = false;
  std::vector<char> data;

  while (f.peek() != EOF) {
    std::string tag = get_tag(f, "chunk header");
    uint32_t size = get<uint32_t>(f, "chunk size");
    if (tag == "fmt ") {
      if (size < 16) throw FormatError("WAV: fmt chunk too short in " + path);
      format = get<uint16_t>(f, "fmt chunk");
      channels = get<uint16_t>(f, "fmt chunk");
      rate = get<uint32_t>(f, "fmt chunk");
      get<uint32_t>(f, "fmt chunk");  // byte rate
      get<uint16_t>(f, "fmt chunk");  // block align
      bits = get<uint16_t>(f, "fmt chunk");
      f.seekg(size - 16, std::ios::cur);
      have_fmt = true;
    } else if (tag == "data") {
      data.resize(size);
      if (!f.read(data.data(), size))
        throw FormatError("WAV: truncated data chunk in " + path);
    } else {
      f.seekg(size + (size & 1), std::ios::cur);  // chunks are word-aligned
    }
  }

  if (!have_fmt) throw FormatError("WAV: missing fmt chunk in " + path);
  if (data.empty()) throw FormatError("WAV: missing data chunk in " + path);
  if (channels < 1 || channels > 2)
    throw FormatError("WAV: fmt chunk declares " + std::to_string(channels) +
                      " channels, only 1-2 supported, in " + path);

  const bool pcm16 = format == 1 && bits == 16;
  const bool float32 = format == 3 && bits == 32;
  if (!pcm16 && !float32)
    throw FormatError("WAV: fmt chunk codec (format " + std::to_string(format) +
                      ", " + std::to_string(bits) +
                      " bits) unsupported; need PCM-16 or float-32, in " + path);

  const int bytes = bits / 8;
  const long frames = static_cast<long>(data.size()) / (bytes * channels);
  Waveform w;
  w.sample_rate = static_cast<int>(rate);
  for (int c = 0; c < channels; ++c) w.channels.emplace_back(frames);
  for (long i = 0; i < frames; ++i)
    for (int c = 0; c < channels; ++c) {
      const char* p = data.data() + (i * channels + c) * bytes;
      if (pcm16) {
        int16_t s;
        std::memcpy(&s, p, 2);
        w.channels[c][i] = static_cast<float>(s) / 32768.f;
      } else {
        float s;
        std::memcpy(&s, p, 4);
        w.channels[c][i] = s;
      }
    }
  return w;
}

void wav_write(const std::string& path, const Waveform& w, WavCodec codec) {
  if (w.num_channels() < 1 || w.num_channels() > 2)
    throw InputError("wav_write: need 1-2 channels, got " +
                     std::to_string(w.num_channels()));
  if (w.sample_rate <= 0)
    throw InputError("wav_write: sample rate must be > 0");
  for (const auto& ch : w.channels)
    if (ch.size() != w.num_samples())
      throw InputError("wav_write: channel lengths differ");

  const int channels = w.num_channels();
  const long frames = w.num_samples();
  const int bytes = codec == WavCodec::Float32 ? 4 : 2;
  const uint32_t data_size =
      static_cast<uint32_t>(frames * channels * bytes);

  std::ofstream f = open_write(path, "WAV");
  f.write("RIFF", 4);
  put<uint32_t>(f, 36 + data_size);
  f.write("WAVE", 4);
  f.write("fmt ", 4);
  put<uint32_t>(f, 16);
  put<uint16_t>(f, codec == WavCodec::Float32 ? 3 : 1);
  put<uint16_t>(f, static_cast<uint16_t>(channels));
  put<uint32_t>(f, static_cast<uint32_t>(w.sample_rate));
  put<uint32_t>(f, static_cast<uint32_t>(w.sample_rate * channels * bytes));
  put<uint16_t>(f, static_cast<uint16_t>(channels * bytes));
  put<uint16_t>(f, static_cast<uint16_t>(bytes * 8));
  f.write("data", 4);
  put<uint32_t>(f, data_size);
  for (long i = 0; i < frames; ++i)
    for (int c = 0; c < channels; ++c) {
      float s = w.channels[c][i];
      if (codec == WavCodec::Float32) {
        put<float>(f, s);
      } else {
        double v = std::lround(std::clamp(s, -1.f, 1.f) * 32768.0);
        put<int16_t>(f, static_cast<int16_t>(std::clamp(v, -32768.0, 32767.0)));
      }
    }
  if (!f) throw InputError("wav_write: write failed for " + path);
}

Waveform resample_linear(const Waveform& w, int new_rate) {
  if (new_rate <= 0) throw ConfigError("resample_linear: rate must be > 0");
  if (w.sample_rate <= 0 || w.num_samples() < 2)
    throw InputError("resample_linear: need a valid waveform with >= 2 samples");
  if (new_rate == w.sample_rate) return w;

  const long n = w.num_samples();
  const long m = static_cast<long>(
      std::llround(static_cast<double>(n) * new_rate / w.sample_rate));
  Waveform out;
  out.sample_rate = new_rate;
  const double step = static_cast<double>(w.sample_rate) / new_rate;
  for (const auto& src : w.channels) {
    Eigen::VectorXf dst(m);
    for (long i = 0; i < m; ++i) {
      double pos = i * step;
      long k = std::min<long>(static_cast<long>(pos), n - 2);
      double frac = pos - k;
      dst[i] = static_cast<float>((1.0 - frac) * src[k] + frac * src[k + 1]);
    }
    out.channels.push_back(std::move(dst));
  }
  return out;
}

// --- Pose JSON ---------------------------------------------------------------

PoseSequence load_pose_json(const std::string& path) {
  std::ifstream f = open_read(path, "pose JSON");
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("pose JSON: parse error in " + path + ": " + e.what());
  }

  if (!j.contains("fps") || !j["fps"].is_number())
    throw FormatError("pose JSON: missing numeric 'fps' in " + path);
  if (!j.contains("joints") || !j["joints"].is_number_integer())
    throw FormatError("pose JSON: missing integer 'joints' in " + path);
  if (!j.contains("frames") || !j["frames"].is_array())
    throw FormatError("pose JSON: missing 'frames' array in " + path);

  PoseSequence pose;
  pose.fps = j["fps"].get<float>();
  if (!(pose.fps > 0))
    throw FormatError("pose JSON: fps must be > 0 in " + path);
  const int joints = j["joints"].get<int>();
  if (joints < 1)
    throw FormatError("pose JSON: joints must be >= 1 in " + path);
  const auto& frames = j["frames"];
  const int t = static_cast<int>(frames.size());
  pose.x.resize(t, joints);
  pose.y.resize(t, joints);
  for (int i = 0; i < t; ++i) {
    const auto& fr = frames[i];
    if (!fr.is_array() || static_cast<int>(fr.size()) != joints)
      throw FormatError("pose JSON: frame " + std::to_string(i) +
                        " is ragged (expected " + std::to_string(joints) +
                        " joints) in " + path);
    for (int k = 0; k < joints; ++k) {
      const auto& pt = fr[k];
      if (!pt.is_array() || pt.size() != 2 || !pt[0].is_number() ||
          !pt[1].is_number())
        throw FormatError("pose JSON: frame " + std::to_string(i) + " joint " +
                          std::to_string(k) + " is not an [x,y] pair in " +
                          path);
      pose.x(i, k) = pt[0].get<float>();
      pose.y(i, k) = pt[1].get<float>();
    }
  }
  if (j.contains("confidence")) {
    const auto& conf = j["confidence"];
    if (!conf.is_array() || static_cast<int>(conf.size()) != t)
      throw FormatError("pose JSON: confidence length differs from frames in " +
                        path);
    Eigen::MatrixXf c(t, joints);
    for (int i = 0; i < t; ++i) {
      if (!conf[i].is_array() || static_cast<int>(conf[i].size()) != joints)
        throw FormatError("pose JSON: confidence row " + std::to_string(i) +
                          " is ragged in " + path);
      for (int k = 0; k < joints; ++k) c(i, k) = conf[i][k].get<float>();
    }
    pose.confidence = std::move(c);
  }
  return pose;
}

void save_pose_json(const std::string& path, const PoseSequence& pose) {
  nlohmann::json j;
  j["fps"] = pose.fps;
  j["joints"] = pose.joints();
  nlohmann::json frames = nlohmann::json::array();
  for (int i = 0; i < pose.frames(); ++i) {
    nlohmann::json fr = nlohmann::json::array();
    for (int k = 0; k < pose.joints(); ++k)
      fr.push_back({pose.x(i, k), pose.y(i, k)});
    frames.push_back(std::move(fr));
  }
  j["frames"] = std::move(frames);
  if (pose.confidence) {
    nlohmann::json conf = nlohmann::json::array();
    for (int i = 0; i < pose.frames(); ++i) {
      nlohmann::json row = nlohmann::json::array();
      for (int k = 0; k < pose.joints(); ++k)
        row.push_back((*pose.confidence)(i, k));
      conf.push_back(std::move(row));
    }
    j["confidence"] = std::move(conf);
  }
  std::ofstream f = open_write(path, "pose JSON");
  f << j.dump(1) << "\n";
}

// --- ModelConfig <-> JSON ----------------------------------------------------

nlohmann::json model_config_to_json(const ModelConfig& cfg) {
  return nlohmann::json{{"audio_channels", cfg.audio_channels},
                        {"latent_channels", cfg.latent_channels},
                        {"patch_factor", cfg.patch_factor},
                        {"base_channels", cfg.base_channels},
                        {"multipliers", cfg.multipliers},
                        {"factors", cfg.factors},
                        {"num_blocks", cfg.num_blocks},
                        {"heads", cfg.heads},
                        {"cond_width", cfg.cond_width},
                        {"sigma_emb_width", cfg.sigma_emb_width},
                        {"query_pos_span", cfg.query_pos_span}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  try {
    cfg.audio_channels = j.at("audio_channels").get<int>();
    cfg.latent_channels = j.at("latent_channels").get<int>();
    cfg.patch_factor = j.at("patch_factor").get<int>();
    cfg.base_channels = j.at("base_channels").get<int>();
    cfg.multipliers = j.at("multipliers").get<std::vector<int>>();
    cfg.factors = j.at("factors").get<std::vector<int>>();
    cfg.num_blocks = j.at("num_blocks").get<std::vector<int>>();
    cfg.heads = j.at("heads").get<int>();
    cfg.cond_width = j.at("cond_width").get<int>();
    cfg.sigma_emb_width = j.at("sigma_emb_width").get<int>();
    cfg.query_pos_span = j.at("query_pos_span").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model config JSON: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

// --- Checkpoint container ----------------------------------------------------

namespace {
constexpr uint32_t kCheckpointVersion = 1;
}

void save_checkpoint(const std::string& path, const LorisModel<float>& model,
                     const CheckpointMeta& meta) {
  ParamList<float> params = model.params();

  nlohmann::json header;
  header["version"] = kCheckpointVersion;
  header["model"] = model_config_to_json(model.cfg);
  header["visual_dim"] = meta.visual_dim;
  header["n_genres"] = meta.n_genres;
  header["latent_scale"] = model.latent_scale;
  header["extra"] = meta.extra.is_null() ? nlohmann::json::object() : meta.extra;

  nlohmann::json index = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& p : params) {
    index.push_back({{"name", p.name},
                     {"shape", p.tensor.shape()},
                     {"offset", offset}});
    offset += static_cast<uint64_t>(p.tensor.size()) * sizeof(float);
  }
  header["tensors"] = std::move(index);

  std::string hdr = header.dump();
  std::ofstream f = open_write(path, "checkpoint");
  f.write("LRIS", 4);
  put<uint32_t>(f, kCheckpointVersion);
  put<uint64_t>(f, static_cast<uint64_t>(hdr.size()));
  f.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
  for (const auto& p : params)
    f.write(reinterpret_cast<const char*>(p.tensor.data()),
            static_cast<std::streamsize>(p.tensor.size() * sizeof(float)));
  if (!f) throw InputError("save_checkpoint: write failed for " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream f = open_read(path, "checkpoint");
  if (get_tag(f, "checkpoint magic") != "LRIS")
    throw FormatError("checkpoint: bad magic in " + path);
  uint32_t version = get<uint32_t>(f, "checkpoint version");
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version " +
                      std::to_string(version) + " in " + path);
  uint64_t hdr_len = get<uint64_t>(f, "checkpoint header length");
  std::string hdr(hdr_len, '\0');
  if (!f.read(hdr.data(), static_cast<std::streamsize>(hdr_len)))
    throw FormatError("checkpoint: truncated header in " + path);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hdr);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint: header parse error in " + path + ": " +
                      e.what());
  }

  std::vector<char> payload((std::istreambuf_iterator<char>(f)),
                            std::istreambuf_iterator<char>());

  LoadedCheckpoint out;
  try {
    ModelConfig cfg = model_config_from_json(header.at("model"));
    out.meta.visual_dim = header.at("visual_dim").get<int>();
    out.meta.n_genres = header.at("n_genres").get<int>();
    out.meta.extra = header.value("extra", nlohmann::json::object());

    std::mt19937 rng(0);
    out.model = LorisModel<float>::init(cfg, out.meta.visual_dim,
                                        out.meta.n_genres, rng);
    out.model.latent_scale = header.at("latent_scale").get<float>();

    ParamList<float> params = out.model.params();
    std::map<std::string, Tensor<float>*> by_name;
    for (auto& p : params) by_name[p.name] = &p.tensor;

    const auto& index = header.at("tensors");
    if (index.size() != params.size())
      throw FormatError("checkpoint: tensor count " +
                        std::to_string(index.size()) + " does not match model (" +
                        std::to_string(params.size()) + ") in " + path);
    for (const auto& e : index) {
      std::string name = e.at("name").get<std::string>();
      Shape shape = e.at("shape").get<Shape>();
      uint64_t offset = e.at("offset").get<uint64_t>();
      auto it = by_name.find(name);
      if (it == by_name.end())
        throw FormatError("checkpoint: unknown tensor '" + name + "' in " + path);
      Tensor<float>& t = *it->second;
      if (t.shape() != shape)
        throw FormatError("checkpoint: shape mismatch for tensor '" + name +
                          "' in " + path);
      uint64_t bytes = static_cast<uint64_t>(t.size()) * sizeof(float);
      if (offset + bytes > payload.size())
        throw FormatError("checkpoint: tensor '" + name +
                          "' exceeds payload in " + path);
      std::memcpy(t.data(), payload.data() + offset, bytes);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint: malformed header in " + path + ": " +
                      e.what());
  }
  return out;
}

// --- Config files -------------------------------------------------------------

ConfigMap parse_config_text(const std::string& text) {
  ConfigMap out;
  std::istringstream is(text);
  std::string line, section;
  int lineno = 0;
  auto trim = [](std::string s) {
    size_t a = s.find_first_not_of(" \t\r");
    size_t b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  while (std::getline(is, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw FormatError("config: unterminated section header at line " +
                          std::to_string(lineno));
      section = trim(line.substr(1, line.size() - 2));
      out[section];
      continue;
    }
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw FormatError("config: expected key=value at line " +
                        std::to_string(lineno));
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw FormatError("config: empty key at line " + std::to_string(lineno));
    if (section.empty())
      throw FormatError("config: key '" + key + "' before any [section]");
    out[section][key] = value;
  }
  return out;
}

ConfigMap parse_config_file(const std::string& path) {
  std::ifstream f = open_read(path, "config");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str());
}

namespace {

int to_int(const std::string& v, const std::string& key) {
  try {
    size_t pos;
    int r = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw FormatError("config: key '" + key + "' is not an integer: " + v);
  }
}

long to_long(const std::string& v, const std::string& key) {
  try {
    size_t pos;
    long r = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw FormatError("config: key '" + key + "' is not an integer: " + v);
  }
}

double to_double(const std::string& v, const std::string& key) {
  try {
    size_t pos;
    double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw FormatError("config: key '" + key + "' is not a number: " + v);
  }
}

bool to_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw FormatError("config: key '" + key + "' is not a boolean: " + v);
}

template <typename T>
std::vector<T> to_list(const std::string& v, const std::string& key,
                       T (*conv)(const std::string&, const std::string&)) {
  std::vector<T> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(conv(item, key));
  if (out.empty())
    throw FormatError("config: key '" + key + "' is an empty list");
  return out;
}

void apply_peak_key(PeakPickConfig& p, const std::string& key,
                    const std::string& v, bool& handled) {
  handled = true;
  if (key == "pre_max") p.pre_max = to_int(v, key);
  else if (key == "post_max") p.post_max = to_int(v, key);
  else if (key == "pre_avg") p.pre_avg = to_int(v, key);
  else if (key == "post_avg") p.post_avg = to_int(v, key);
  else if (key == "delta") p.delta = static_cast<float>(to_double(v, key));
  else if (key == "relative") p.relative = to_bool(v, key);
  else if (key == "wait") p.wait = to_int(v, key);
  else if (key == "min_height") p.min_height = static_cast<float>(to_double(v, key));
  else handled = false;
}

}  // namespace

AppConfig app_config_from_map(const ConfigMap& m) {
  AppConfig cfg;

  for (const auto& [section, keys] : m) {
    if (section == "model") {
      // apply the preset first so explicit keys override it
      auto preset = keys.find("preset");
      if (preset != keys.end()) {
        if (preset->second == "toy") cfg.model = ModelConfig::toy();
        else if (preset->second == "canonical") cfg.model = ModelConfig::canonical();
        else
          throw FormatError("config: unknown model preset '" + preset->second +
                            "' (want toy or canonical)");
      }
      for (const auto& [key, v] : keys) {
        if (key == "preset") continue;
        else if (key == "audio_channels") cfg.model.audio_channels = to_int(v, key);
        else if (key == "latent_channels") cfg.model.latent_channels = to_int(v, key);
        else if (key == "patch_factor") cfg.model.patch_factor = to_int(v, key);
        else if (key == "base_channels") cfg.model.base_channels = to_int(v, key);
        else if (key == "multipliers") cfg.model.multipliers = to_list<int>(v, key, to_int);
        else if (key == "factors") cfg.model.factors = to_list<int>(v, key, to_int);
        else if (key == "num_blocks") cfg.model.num_blocks = to_list<int>(v, key, to_int);
        else if (key == "heads") cfg.model.heads = to_int(v, key);
        else if (key == "cond_width") cfg.model.cond_width = to_int(v, key);
        else if (key == "sigma_emb_width") cfg.model.sigma_emb_width = to_int(v, key);
        else if (key == "query_pos_span") cfg.model.query_pos_span = to_double(v, key);
        else throw FormatError("config: unknown key '" + key + "' in [model]");
      }
    } else if (section == "diffusion") {
      for (const auto& [key, v] : keys) {
        if (key == "sigma_data") cfg.diffusion.sigma_data = static_cast<float>(to_double(v, key));
        else if (key == "p_mean") cfg.diffusion.p_mean = static_cast<float>(to_double(v, key));
        else if (key == "p_std") cfg.diffusion.p_std = static_cast<float>(to_double(v, key));
        else if (key == "sigma_min") cfg.diffusion.sigma_min = static_cast<float>(to_double(v, key));
        else if (key == "sigma_max") cfg.diffusion.sigma_max = static_cast<float>(to_double(v, key));
        else if (key == "rho") cfg.diffusion.rho = static_cast<float>(to_double(v, key));
        else if (key == "steps") cfg.diffusion.steps = to_int(v, key);
        else if (key == "guidance") cfg.diffusion.guidance = static_cast<float>(to_double(v, key));
        else throw FormatError("config: unknown key '" + key + "' in [diffusion]");
      }
    } else if (section == "train") {
      for (const auto& [key, v] : keys) {
        if (key == "beta1") cfg.train.beta1 = to_double(v, key);
        else if (key == "beta2") cfg.train.beta2 = to_double(v, key);
        else if (key == "weight_decay") cfg.train.weight_decay = to_double(v, key);
        else if (key == "lr_pretrained") cfg.train.lr_pretrained = to_double(v, key);
        else if (key == "lr_fresh") cfg.train.lr_fresh = to_double(v, key);
        else if (key == "warmup_lr") cfg.train.warmup_lr = to_double(v, key);
        else if (key == "warmup_iters") cfg.train.warmup_iters = to_long(v, key);
        else if (key == "grad_clip") cfg.train.grad_clip = to_double(v, key);
        else if (key == "batch_size") cfg.train.batch_size = to_int(v, key);
        else if (key == "codec_steps") cfg.train.codec_steps = to_long(v, key);
        else if (key == "diffusion_steps") cfg.train.diffusion_steps = to_long(v, key);
        else if (key == "cond_dropout") cfg.train.cond_dropout = to_double(v, key);
        else if (key == "per_sample_dropout") cfg.train.per_sample_dropout = to_bool(v, key);
        else if (key == "norm_factor") cfg.train.norm_factor = to_double(v, key);
        else if (key == "gain_lo") cfg.train.gain_lo = to_double(v, key);
        else if (key == "gain_hi") cfg.train.gain_hi = to_double(v, key);
        else if (key == "snapshot_every") cfg.train.snapshot_every = to_long(v, key);
        else throw FormatError("config: unknown key '" + key + "' in [train]");
      }
    } else if (section == "rhythm") {
      for (const auto& [key, v] : keys) {
        bool handled = false;
        apply_peak_key(cfg.rhythm.peak, key, v, handled);
        if (handled) continue;
        if (key == "bins") cfg.rhythm.bins = to_int(v, key);
        else if (key == "confidence_floor") cfg.rhythm.confidence_floor = static_cast<float>(to_double(v, key));
        else throw FormatError("config: unknown key '" + key + "' in [rhythm]");
      }
    } else if (section == "audio") {
      for (const auto& [key, v] : keys) {
        bool handled = false;
        apply_peak_key(cfg.audio.peak, key, v, handled);
        if (handled) continue;
        if (key == "window") cfg.audio.window = to_int(v, key);
        else if (key == "hop") cfg.audio.hop = to_int(v, key);
        else if (key == "log_compress") cfg.audio.log_compress = to_bool(v, key);
        else throw FormatError("config: unknown key '" + key + "' in [audio]");
      }
    } else if (section == "synth") {
      for (const auto& [key, v] : keys) {
        if (key == "sample_rate") cfg.synth.sample_rate = to_int(v, key);
        else if (key == "duration") cfg.synth.duration = to_double(v, key);
        else if (key == "pose_fps") cfg.synth.pose_fps = to_double(v, key);
        else if (key == "joints") cfg.synth.joints = to_int(v, key);
        else if (key == "n_genres") cfg.synth.n_genres = to_int(v, key);
        else if (key == "min_beats") cfg.synth.min_beats = to_int(v, key);
        else if (key == "max_beats") cfg.synth.max_beats = to_int(v, key);
        else if (key == "min_spacing") cfg.synth.min_spacing = to_double(v, key);
        else if (key == "burst_amp") cfg.synth.burst_amp = to_double(v, key);
        else if (key == "burst_decay") cfg.synth.burst_decay = to_double(v, key);
        else if (key == "burst_length") cfg.synth.burst_length = to_double(v, key);
        else if (key == "background_amp") cfg.synth.background_amp = to_double(v, key);
        else if (key == "jerk_pixels") cfg.synth.jerk_pixels = to_double(v, key);
        else if (key == "carrier_frac") cfg.synth.carrier_frac = to_list<double>(v, key, to_double);
        else throw FormatError("config: unknown key '" + key + "' in [synth]");
      }
    } else {
      throw FormatError("config: unknown section [" + section + "]");
    }
  }
  cfg.model.validate();
  cfg.train.validate();
  return cfg;
}

AppConfig load_app_config(const std::string& path) {
  return app_config_from_map(parse_config_file(path));
}

// --- CSV and plots -------------------------------------------------------------

void write_envelope_csv(const std::string& path, const OnsetEnvelope& env) {
  std::ofstream f = open_write(path, "envelope CSV");
  f << "frame,time,value\n";
  for (int t = 0; t < env.values.size(); ++t)
    f << t << "," << (env.frame_rate > 0 ? t / env.frame_rate : 0.f) << ","
      << env.values[t] << "\n";
}

void write_peaks_csv(const std::string& path, const RhythmPeaks& peaks,
                     float frame_rate) {
  std::ofstream f = open_write(path, "peaks CSV");
  f << "frame,time\n";
  for (int i : peaks.peak_indices)
    f << i << "," << (frame_rate > 0 ? i / frame_rate : 0.f) << "\n";
}

void write_losses_csv(const std::string& path,
                      const std::vector<double>& losses) {
  std::ofstream f = open_write(path, "losses CSV");
  f << "iter,loss\n";
  for (size_t i = 0; i < losses.size(); ++i) f << i << "," << losses[i] << "\n";
}

namespace {

// Shared CSV reader: one header line, then rows of numeric fields.
std::vector<std::vector<double>> read_csv_rows(const std::string& path,
                                               int fields) {
  std::ifstream f = open_read(path, "CSV");
  std::string line;
  if (!std::getline(f, line))
    throw FormatError("CSV: empty file " + path);
  std::vector<std::vector<double>> rows;
  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw FormatError("CSV: non-numeric cell at line " +
                          std::to_string(lineno) + " in " + path);
      }
    }
    if (static_cast<int>(row.size()) != fields)
      throw FormatError("CSV: expected " + std::to_string(fields) +
                        " fields at line " + std::to_string(lineno) + " in " +
                        path);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

Eigen::MatrixXf read_matrix_csv(const std::string& path) {
  std::ifstream f = open_read(path, "matrix CSV");
  std::vector<std::vector<double>> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw FormatError("matrix CSV: non-numeric cell at line " +
                          std::to_string(lineno) + " in " + path);
      }
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw FormatError("matrix CSV: ragged row at line " +
                        std::to_string(lineno) + " in " + path);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw FormatError("matrix CSV: empty file " + path);
  Eigen::MatrixXf m(rows.size(), rows.front().size());
  for (size_t i = 0; i < rows.size(); ++i)
    for (size_t j = 0; j < rows.front().size(); ++j)
      m(static_cast<long>(i), static_cast<long>(j)) =
          static_cast<float>(rows[i][j]);
  return m;
}

void write_matrix_csv(const std::string& path, const Eigen::MatrixXf& m) {
  std::ofstream f = open_write(path, "matrix CSV");
  for (long i = 0; i < m.rows(); ++i) {
    for (long j = 0; j < m.cols(); ++j)
      f << (j ? "," : "") << m(i, j);
    f << "\n";
  }
}

OnsetEnvelope read_envelope_csv(const std::string& path) {
  auto rows = read_csv_rows(path, 3);
  OnsetEnvelope env;
  env.values.resize(rows.size());
  for (size_t i = 0; i < rows.size(); ++i)
    env.values[static_cast<long>(i)] = static_cast<float>(rows[i][2]);
  // recover the frame rate from the frame/time columns
  for (const auto& r : rows)
    if (r[0] > 0 && r[1] > 0) {
      env.frame_rate = static_cast<float>(r[0] / r[1]);
      break;
    }
  return env;
}

RhythmPeaks read_peaks_csv(const std::string& path, float* frame_rate) {
  auto rows = read_csv_rows(path, 2);
  RhythmPeaks p;
  for (const auto& r : rows)
    p.peak_indices.push_back(static_cast<int>(std::lround(r[0])));
  p.length = p.peak_indices.empty() ? 0 : p.peak_indices.back() + 1;
  if (frame_rate) {
    *frame_rate = 0.f;
    for (const auto& r : rows)
      if (r[0] > 0 && r[1] > 0) {
        *frame_rate = static_cast<float>(r[0] / r[1]);
        break;
      }
  }
  return p;
}

void plot_envelope_svg(const std::string& path, const OnsetEnvelope& env,
                       const RhythmPeaks& peaks) {
  const int n = static_cast<int>(env.values.size());
  if (n < 2) throw InputError("plot_envelope_svg: envelope needs >= 2 frames");
  const double w = 800, h = 300, pad = 30;
  const double px = (w - 2 * pad) / (n - 1);
  float vmax = std::max(1e-12f, env.values.maxCoeff());
  auto xs = [&](int t) { return pad + t * px; };
  auto ys = [&](float v) { return h - pad - (v / vmax) * (h - 2 * pad); };

  std::ofstream f = open_write(path, "SVG plot");
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w
    << "\" height=\"" << h << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
  f << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  // axes
  f << "<line x1=\"" << pad << "\" y1=\"" << h - pad << "\" x2=\"" << w - pad
    << "\" y2=\"" << h - pad << "\" stroke=\"black\"/>\n";
  f << "<line x1=\"" << pad << "\" y1=\"" << pad << "\" x2=\"" << pad
    << "\" y2=\"" << h - pad << "\" stroke=\"black\"/>\n";
  // peak markers behind the envelope
  for (int i : peaks.peak_indices) {
    if (i < 0 || i >= n) continue;
    f << "<line x1=\"" << xs(i) << "\" y1=\"" << pad << "\" x2=\"" << xs(i)
      << "\" y2=\"" << h - pad
      << "\" stroke=\"#d62728\" stroke-dasharray=\"4 3\"/>\n";
  }
  f << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"";
  for (int t = 0; t < n; ++t) f << xs(t) << "," << ys(env.values[t]) << " ";
  f << "\"/>\n</svg>\n";
}

}  // namespace loris

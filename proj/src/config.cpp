#include "multidiff/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>

namespace multidiff {

NoiseSchedule ScheduleSection::build() const {
  return make_linear_schedule(num_timesteps, beta_min, beta_max, variance);
}

AutoencoderTrainConfig CodecSection::autoencoder() const {
  AutoencoderTrainConfig c;
  c.steps = ae_steps;
  c.batch_size = ae_batch_size;
  c.lr = ae_lr;
  c.kl_weight = ae_kl_weight;
  c.seed = ae_seed;
  return c;
}

Shape3 RunConfig::codec_latent_shape() const {
  const Shape3 img = image_shape();
  if (codec.kind == CodecKind::identity_pixel) return img;
  return {4, img.height / 4, img.width / 4};
}

int RunConfig::modality_index(const std::string& name) const {
  const auto it = std::find(data.modalities.begin(), data.modalities.end(), name);
  if (it == data.modalities.end()) throw ValidationError("unknown modality '" + name + "'");
  return static_cast<int>(it - data.modalities.begin());
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ValidationError("expected a number, got '" + v + "'");
  return out;
}

template <typename T>
std::string format_number(T v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ValidationError("expected true or false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) throw ValidationError("empty entry in list '" + v + "'");
    out.push_back(item);
  }
  return out;
}

template <typename T, typename F>
std::string join(const std::vector<T>& items, F&& fmt) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + fmt(items[i]);
  return out;
}

Shape3 parse_shape(const std::string& v) {
  std::vector<int> dims;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, 'x')) dims.push_back(parse_number<int>(trim(item)));
  if (dims.size() != 3) throw ValidationError("expected CxHxW, got '" + v + "'");
  return {dims[0], dims[1], dims[2]};
}

std::string format_shape(const Shape3& s) {
  return std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" + std::to_string(s.width);
}

ReverseVariance parse_variance(const std::string& v) {
  if (v == "beta") return ReverseVariance::beta;
  if (v == "posterior_beta") return ReverseVariance::posterior_beta;
  throw ValidationError("expected beta or posterior_beta, got '" + v + "'");
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define MD_NUM(KEY, EXPR, TYPE)                                                     \
  Field {                                                                           \
    KEY, [](RunConfig& c, const std::string& v) { c.EXPR = parse_number<TYPE>(v); }, \
        [](const RunConfig& c) { return format_number(c.EXPR); }                    \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      MD_NUM("model.num_modalities", model.num_modalities, int),
      {"model.latent_shape", [](RunConfig& c, const std::string& v) { c.model.latent_shape = parse_shape(v); },
       [](const RunConfig& c) { return format_shape(c.model.latent_shape); }},
      MD_NUM("model.patch_size", model.patch_size, int),
      MD_NUM("model.embed_dim", model.embed_dim, int),
      MD_NUM("model.depth", model.depth, int),
      MD_NUM("model.num_heads", model.num_heads, int),
      MD_NUM("model.mlp_ratio", model.mlp_ratio, double),
      MD_NUM("model.dropout_rate", model.dropout_rate, double),
      {"model.modality_dropout",
       [](RunConfig& c, const std::string& v) {
         c.model.modality_dropout.clear();
         if (v == "none") return;
         for (const auto& s : split_list(v)) c.model.modality_dropout.push_back(parse_number<double>(s));
       },
       [](const RunConfig& c) {
         return c.model.modality_dropout.empty()
                    ? std::string("none")
                    : join(c.model.modality_dropout, [](double d) { return format_number(d); });
       }},
      {"model.long_skip", [](RunConfig& c, const std::string& v) { c.model.long_skip = parse_bool(v); },
       [](const RunConfig& c) { return std::string(c.model.long_skip ? "true" : "false"); }},

      MD_NUM("train.batch_size", train.batch_size, int),
      MD_NUM("train.total_steps", train.total_steps, int),
      MD_NUM("train.base_lr", train.base_lr, double),
      MD_NUM("train.warmup_steps", train.warmup_steps, int),
      MD_NUM("train.ema_decay", train.ema_decay, double),
      MD_NUM("train.seed", train.seed, std::uint64_t),
      MD_NUM("train.grad_clip_norm", train.grad_clip_norm, double),
      MD_NUM("train.adam_beta1", train.adam_beta1, double),
      MD_NUM("train.adam_beta2", train.adam_beta2, double),
      MD_NUM("train.adam_eps", train.adam_eps, double),
      MD_NUM("train.grad_accumulation", train.grad_accumulation, int),

      MD_NUM("schedule.num_timesteps", schedule.num_timesteps, int),
      MD_NUM("schedule.beta_min", schedule.beta_min, double),
      MD_NUM("schedule.beta_max", schedule.beta_max, double),
      {"schedule.variance", [](RunConfig& c, const std::string& v) { c.schedule.variance = parse_variance(v); },
       [](const RunConfig& c) {
         return std::string(c.schedule.variance == ReverseVariance::beta ? "beta" : "posterior_beta");
       }},

      {"codec.kind", [](RunConfig& c, const std::string& v) { c.codec.kind = parse_codec_kind(v); },
       [](const RunConfig& c) { return std::string(to_string(c.codec.kind)); }},
      MD_NUM("codec.ae_steps", codec.ae_steps, int),
      MD_NUM("codec.ae_batch_size", codec.ae_batch_size, int),
      MD_NUM("codec.ae_lr", codec.ae_lr, double),
      MD_NUM("codec.ae_kl_weight", codec.ae_kl_weight, double),
      MD_NUM("codec.ae_seed", codec.ae_seed, std::uint64_t),

      {"data.root", [](RunConfig& c, const std::string& v) { c.data.root = v; },
       [](const RunConfig& c) { return c.data.root; }},
      {"data.modalities", [](RunConfig& c, const std::string& v) { c.data.modalities = split_list(v); },
       [](const RunConfig& c) { return join(c.data.modalities, [](const std::string& s) { return s; }); }},
      MD_NUM("data.image_size", data.image_size, int),
      MD_NUM("data.channels", data.channels, int),
      MD_NUM("data.crop", data.crop, int),
      MD_NUM("data.num_scenes", data.num_scenes, std::int64_t),
      MD_NUM("data.split_fraction", data.split_fraction, double),
      MD_NUM("data.master_seed", data.master_seed, std::uint64_t),
      MD_NUM("data.scene_size", data.scene_size, int),
      MD_NUM("data.spectral_exponent", data.scene.spectral_exponent, double),
      MD_NUM("data.relief", data.scene.relief, double),
      MD_NUM("data.light_azimuth_deg", data.scene.light_azimuth_deg, double),
      MD_NUM("data.light_altitude_deg", data.scene.light_altitude_deg, double),
      MD_NUM("data.radar_base", data.scene.radar_base, double),
      MD_NUM("data.radar_gain", data.scene.radar_gain, double),
      MD_NUM("data.radar_gamma", data.scene.radar_gamma, double),
      MD_NUM("data.speckle_std", data.scene.speckle_std, double),
      MD_NUM("data.haze", data.scene.haze, double),

      MD_NUM("sample.num_samples", sample.num_samples, int),
      MD_NUM("sample.num_steps", sample.num_steps, int),
      {"sample.solver", [](RunConfig& c, const std::string& v) { c.sample.solver = parse_solver(v); },
       [](const RunConfig& c) { return std::string(to_string(c.sample.solver)); }},
      MD_NUM("sample.seed", sample.seed, std::uint64_t),
      {"sample.use_ema", [](RunConfig& c, const std::string& v) { c.sample.use_ema = parse_bool(v); },
       [](const RunConfig& c) { return std::string(c.sample.use_ema ? "true" : "false"); }},

      {"eval.extractor", [](RunConfig& c, const std::string& v) { c.eval.extractor = parse_extractor_kind(v); },
       [](const RunConfig& c) { return std::string(to_string(c.eval.extractor)); }},
      MD_NUM("eval.projection_seed", eval.projection_seed, std::uint64_t),
      MD_NUM("eval.projection_dim", eval.projection_dim, int),
      MD_NUM("eval.k", eval.k, int),
      MD_NUM("eval.num_samples", eval.num_samples, int),
  };
  return table;
}

#undef MD_NUM

class Locator {
 public:
  Locator(std::string origin, std::map<std::string, int> lines) : origin_(std::move(origin)), lines_(std::move(lines)) {}

  [[nodiscard]] std::string where(const std::string& key) const {
    const auto it = lines_.find(key);
    return it == lines_.end() ? key + " (default)" : key + " (line " + std::to_string(it->second) + ")";
  }

  [[noreturn]] void fail(const std::string& message, std::initializer_list<std::string> keys) const {
    std::string msg = origin_ + ": " + message + " [";
    bool first = true;
    for (const auto& k : keys) {
      msg += (first ? "" : ", ") + where(k);
      first = false;
    }
    throw ConfigError(msg + "]");
  }

  // Runs a section validator and re-raises its error against the section's first set key.
  template <typename F>
  void check_section(const std::string& section, F&& validate) const {
    try {
      validate();
    } catch (const ValidationError& e) {
      int line = 0;
      for (const auto& [k, l] : lines_)
        if (k.rfind(section + ".", 0) == 0 && (line == 0 || l < line)) line = l;
      throw ConfigError(origin_ + (line ? ":" + std::to_string(line) : "") + ": " + e.what());
    }
  }

 private:
  std::string origin_;
  std::map<std::string, int> lines_;
};

bool power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

void validate(RunConfig& c, const Locator& at) {
  c.model.num_timesteps = c.schedule.num_timesteps;
  at.check_section("model", [&] { c.model.validate(); });
  at.check_section("train", [&] { c.train.validate(); });

  if (c.schedule.num_timesteps < 1) at.fail("num_timesteps must be positive", {"schedule.num_timesteps"});
  if (!(c.schedule.beta_min > 0.0 && c.schedule.beta_min <= c.schedule.beta_max && c.schedule.beta_max < 1.0))
    at.fail("need 0 < beta_min <= beta_max < 1", {"schedule.beta_min", "schedule.beta_max"});

  if (c.codec.ae_steps < 1 || c.codec.ae_batch_size < 1 || !(c.codec.ae_lr > 0.0) || c.codec.ae_kl_weight < 0.0)
    at.fail("autoencoder training settings must be positive",
            {"codec.ae_steps", "codec.ae_batch_size", "codec.ae_lr", "codec.ae_kl_weight"});

  const auto& d = c.data;
  if (d.modalities.empty()) at.fail("at least one modality is required", {"data.modalities"});
  for (std::size_t i = 0; i < d.modalities.size(); ++i)
    for (std::size_t j = i + 1; j < d.modalities.size(); ++j)
      if (d.modalities[i] == d.modalities[j]) at.fail("duplicate modality " + d.modalities[i], {"data.modalities"});
  if (d.root.empty())
    for (const auto& m : d.modalities)
      if (std::find(kSynthModalities.begin(), kSynthModalities.end(), m) == kSynthModalities.end())
        at.fail("synthetic data has no modality '" + m + "'", {"data.modalities", "data.root"});
  if (d.image_size < 1) at.fail("image_size must be positive", {"data.image_size"});
  if (d.channels != 1 && d.channels != 3) at.fail("channels must be 1 or 3", {"data.channels"});
  if (d.crop < 0) at.fail("crop must be >= 0", {"data.crop"});
  if (d.num_scenes < 2) at.fail("num_scenes must be at least 2", {"data.num_scenes"});
  if (!(d.split_fraction > 0.0 && d.split_fraction < 1.0)) at.fail("split_fraction must be in (0, 1)", {"data.split_fraction"});
  if (d.scene_size < 8 || !power_of_two(d.scene_size))
    at.fail("scene_size must be a power of two >= 8", {"data.scene_size"});

  if (c.model.num_modalities != static_cast<int>(d.modalities.size()))
    at.fail("model.num_modalities = " + std::to_string(c.model.num_modalities) + " but data.modalities lists " +
                std::to_string(d.modalities.size()),
            {"model.num_modalities", "data.modalities"});
  if (c.codec.kind == CodecKind::tiny_autoencoder && d.image_size % 4 != 0)
    at.fail("tiny_autoencoder needs image_size divisible by 4", {"codec.kind", "data.image_size"});
  if (!(c.codec_latent_shape() == c.model.latent_shape))
    at.fail("model.latent_shape " + format_shape(c.model.latent_shape) + " does not match the codec latent " +
                format_shape(c.codec_latent_shape()),
            {"model.latent_shape", "codec.kind", "data.image_size", "data.channels"});

  if (c.sample.num_samples < 1) at.fail("num_samples must be positive", {"sample.num_samples"});
  if (c.sample.num_steps < 1 || c.sample.num_steps > c.schedule.num_timesteps)
    at.fail("sample.num_steps must be in [1, schedule.num_timesteps]", {"sample.num_steps", "schedule.num_timesteps"});

  if (c.eval.projection_dim < 1) at.fail("projection_dim must be positive", {"eval.projection_dim"});
  if (c.eval.num_samples < 2) at.fail("num_samples must be at least 2", {"eval.num_samples"});
  if (c.eval.k < 1 || c.eval.k >= c.eval.num_samples)
    at.fail("eval.k must be in [1, eval.num_samples)", {"eval.k", "eval.num_samples"});
}

}  // namespace

RunConfig parse_config_text(const std::string& text, const std::string& origin) {
  RunConfig config;
  std::map<std::string, int> lines;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    const auto here = origin + ":" + std::to_string(line_no) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(here + "expected 'section.key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto& table = fields();
    const auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return f.key == key; });
    if (it == table.end()) throw ConfigError(here + "unknown key '" + key + "'");
    if (lines.contains(key))
      throw ConfigError(here + "'" + key + "' already set on line " + std::to_string(lines[key]));
    try {
      it->set(config, value);
    } catch (const ValidationError& e) {
      throw ConfigError(here + key + ": " + e.what());
    }
    lines[key] = line_no;
  }
  validate(config, Locator(origin, std::move(lines)));
  return config;
}

RunConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), path.string());
}

std::string effective_config(const RunConfig& config) {
  std::string out;
  std::string section;
  for (const auto& f : fields()) {
    const std::string s = f.key.substr(0, f.key.find('.'));
    if (!section.empty() && s != section) out += '\n';
    section = s;
    out += f.key + " = " + f.get(config) + '\n';
  }
  return out;
}

std::string config_hash(const RunConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : effective_config(config)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << h;
  return s.str();
}

}  // namespace multidiff

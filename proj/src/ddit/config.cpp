#include "ddit/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "ddit/toydata.hpp"

namespace ddit {

void TrainConfig::validate() const {
  require(steps >= 0 && epochs >= 0 && (steps > 0 || epochs > 0), ErrorKind::config,
          "train.steps or train.epochs must be positive");
  require(batch_size >= 1 && accum_steps >= 1, ErrorKind::config, "batch_size and accum_steps must be >= 1");
  require(base_lr > 0.0, ErrorKind::config, "train.base_lr must be positive");
  require(warmup_steps >= 0, ErrorKind::config, "train.warmup_steps must be >= 0");
  require(max_grad_norm > 0.0, ErrorKind::config, "train.max_grad_norm must be positive");
  require(ema_decay >= 0.0 && ema_decay <= 1.0, ErrorKind::config, "train.ema_decay must lie in [0, 1]");
  require(cond_dropout >= 0.0 && cond_dropout < 1.0, ErrorKind::config, "train.cond_dropout must lie in [0, 1)");
  require(sketch_fraction >= 0.0 && sketch_fraction <= 1.0, ErrorKind::config, "train.sketch_fraction must lie in [0, 1]");
  require(min_snr_lambda > 0.0, ErrorKind::config, "train.min_snr_lambda must be positive");
  require(checkpoint_every >= 1 && keep_last >= 1, ErrorKind::config, "checkpoint cadence and retention must be >= 1");
  make_linear_schedule(timesteps, beta_start, beta_end);
}

std::int64_t TrainConfig::total_steps(std::size_t train_samples) const {
  if (steps > 0) return steps;
  const std::int64_t per_step = static_cast<std::int64_t>(batch_size) * accum_steps;
  const std::int64_t n = static_cast<std::int64_t>(train_samples);
  return epochs * ((n + per_step - 1) / per_step);
}

void RunConfig::validate() const {
  model.validate();
  codec.validate();
  train.validate();
  require(model.latent_channels == codec.latent_channels(), ErrorKind::config,
          "model.latent_channels " + std::to_string(model.latent_channels) + " does not match the codec's " +
              std::to_string(codec.latent_channels()));
  require(data.image_size > 0, ErrorKind::config, "data.image_size must be positive");
  const int side = codec.latent_side(data.image_size);
  require(side % model.patch == 0, ErrorKind::config, "latent side not divisible by the patch size");
  require(sampler.sampler.steps >= 1, ErrorKind::config, "sampler.steps must be >= 1");
  require(sampler.sampler.eta >= 0.0, ErrorKind::config, "sampler.eta must be >= 0");
  require(sampler.cfg_scale >= 0.0, ErrorKind::config, "sampler.cfg_scale must be >= 0");
}

std::vector<std::string> preset_names() { return {"toy", "paper-profile"}; }

RunConfig preset(const std::string& name) {
  RunConfig c;
  c.model.vocab_size = toy::vocab_size();
  if (name == "toy") {
    c.model.hidden = 128;
    c.model.depth = 4;
    c.model.heads = 4;
    c.model.patch = 2;
    c.model.text_dim = 64;
    c.model.text_len_max = 8;
    c.codec = {CodecKind::haar, 2, 1.0};
    c.model.latent_channels = c.codec.latent_channels();
    c.data.image_size = 32;
    c.train.steps = 2000;
    c.train.batch_size = 32;
    c.train.base_lr = 1e-3;
    c.train.warmup_steps = 100;
    c.train.ema_decay = 0.995;
    return c;
  }
  if (name == "paper-profile") {
    c.model.hidden = 1152;
    c.model.depth = 28;
    c.model.heads = 16;
    c.model.patch = 2;
    c.model.text_dim = 768;
    c.model.text_len_max = 77;
    c.codec = {CodecKind::haar, 3, 1.0};
    c.model.latent_channels = c.codec.latent_channels();
    c.data.image_size = 512;
    c.train.steps = 0;
    c.train.epochs = 60;
    c.train.batch_size = 8;
    c.train.accum_steps = 4;
    c.train.base_lr = 1e-4;
    c.train.warmup_steps = 1000;
    c.train.ema_decay = 0.9999;
    return c;
  }
  fail(ErrorKind::usage, "unknown preset '" + name + "' (expected toy or paper-profile)");
}

namespace {

std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <typename T>
T parse_number(const std::string& key, const std::string& s) {
  T v{};
  const char* end = s.data() + s.size();
  auto r = std::from_chars(s.data(), end, v);
  require(r.ec == std::errc() && r.ptr == end && !s.empty(), ErrorKind::config,
          "invalid value '" + s + "' for " + key);
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  fail(ErrorKind::config, "invalid boolean '" + s + "' for " + key);
}

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <typename T, typename Proj>
Field number(std::string key, Proj proj) {
  return {key,
          [proj](const RunConfig& c) {
            const T& v = proj(const_cast<RunConfig&>(c));
            if constexpr (std::is_floating_point_v<T>) return fmt(v);
            else return std::to_string(v);
          },
          [proj, key](RunConfig& c, const std::string& s) { proj(c) = parse_number<T>(key, s); }};
}

template <typename Proj>
Field flag(std::string key, Proj proj) {
  return {key, [proj](const RunConfig& c) { return std::string(proj(const_cast<RunConfig&>(c)) ? "true" : "false"); },
          [proj, key](RunConfig& c, const std::string& s) { proj(c) = parse_bool(key, s); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> all = [] {
    std::vector<Field> f;
#define DDIT_NUM(T, key, expr) f.push_back(number<T>(key, [](RunConfig& c) -> T& { return expr; }))
    DDIT_NUM(int, "model.hidden", c.model.hidden);
    DDIT_NUM(int, "model.depth", c.model.depth);
    DDIT_NUM(int, "model.heads", c.model.heads);
    DDIT_NUM(int, "model.patch", c.model.patch);
    DDIT_NUM(int, "model.latent_channels", c.model.latent_channels);
    DDIT_NUM(int, "model.mlp_ratio", c.model.mlp_ratio);
    DDIT_NUM(int, "model.text_dim", c.model.text_dim);
    DDIT_NUM(int, "model.text_len_max", c.model.text_len_max);
    DDIT_NUM(int, "model.vocab_size", c.model.vocab_size);
    DDIT_NUM(int, "model.freq_dim", c.model.freq_dim);
    DDIT_NUM(int, "model.modalities", c.model.modalities);
    DDIT_NUM(double, "model.rope_base", c.model.rope_base);
    DDIT_NUM(double, "model.ln_eps", c.model.ln_eps);
    DDIT_NUM(double, "model.init_std", c.model.init_std);

    f.push_back({"codec.kind", [](const RunConfig& c) { return to_string(c.codec.kind); },
                 [](RunConfig& c, const std::string& s) { c.codec.kind = codec_kind_from_string(s); }});
    DDIT_NUM(int, "codec.levels", c.codec.levels);
    DDIT_NUM(double, "codec.scaling", c.codec.scaling);

    f.push_back({"train.objective", [](const RunConfig& c) { return objective_name(c.train.objective); },
                 [](RunConfig& c, const std::string& s) {
                   try {
                     c.train.objective = parse_objective(s);
                   } catch (const Error& e) {
                     fail(ErrorKind::config, e.what());
                   }
                 }});
    DDIT_NUM(std::int64_t, "train.steps", c.train.steps);
    DDIT_NUM(std::int64_t, "train.epochs", c.train.epochs);
    DDIT_NUM(int, "train.batch_size", c.train.batch_size);
    DDIT_NUM(int, "train.accum_steps", c.train.accum_steps);
    DDIT_NUM(double, "train.base_lr", c.train.base_lr);
    DDIT_NUM(std::int64_t, "train.warmup_steps", c.train.warmup_steps);
    DDIT_NUM(double, "train.beta1", c.train.beta1);
    DDIT_NUM(double, "train.beta2", c.train.beta2);
    DDIT_NUM(double, "train.weight_decay", c.train.weight_decay);
    DDIT_NUM(double, "train.adam_eps", c.train.adam_eps);
    DDIT_NUM(double, "train.max_grad_norm", c.train.max_grad_norm);
    DDIT_NUM(double, "train.ema_decay", c.train.ema_decay);
    DDIT_NUM(double, "train.cond_dropout", c.train.cond_dropout);
    DDIT_NUM(std::uint64_t, "train.seed", c.train.seed);
    DDIT_NUM(double, "train.min_snr_lambda", c.train.min_snr_lambda);
    DDIT_NUM(int, "train.timesteps", c.train.timesteps);
    DDIT_NUM(double, "train.beta_start", c.train.beta_start);
    DDIT_NUM(double, "train.beta_end", c.train.beta_end);
    DDIT_NUM(double, "train.sketch_fraction", c.train.sketch_fraction);
    DDIT_NUM(std::int64_t, "train.checkpoint_every", c.train.checkpoint_every);
    DDIT_NUM(int, "train.keep_last", c.train.keep_last);

    f.push_back({"sampler.kind", [](const RunConfig& c) { return sampler_name(c.sampler.sampler.kind); },
                 [](RunConfig& c, const std::string& s) {
                   try {
                     c.sampler.sampler.kind = parse_sampler(s);
                   } catch (const Error& e) {
                     fail(ErrorKind::config, e.what());
                   }
                 }});
    DDIT_NUM(int, "sampler.steps", c.sampler.sampler.steps);
    DDIT_NUM(double, "sampler.eta", c.sampler.sampler.eta);
    DDIT_NUM(double, "sampler.cfg_scale", c.sampler.cfg_scale);
    DDIT_NUM(std::uint64_t, "sampler.seed", c.sampler.sampler.seed);
    f.push_back(flag("sampler.batched_cfg", [](RunConfig& c) -> bool& { return c.sampler.sampler.batched_cfg; }));
    f.push_back(flag("sampler.null_condition", [](RunConfig& c) -> bool& { return c.sampler.sampler.null_condition; }));

    f.push_back({"data.dir", [](const RunConfig& c) { return c.data.dir; },
                 [](RunConfig& c, const std::string& s) { c.data.dir = s; }});
    DDIT_NUM(int, "data.image_size", c.data.image_size);
#undef DDIT_NUM
    return f;
  }();
  return all;
}

const Field& find_field(const std::string& key) {
  for (const Field& f : fields())
    if (f.key == key) return f;
  fail(ErrorKind::config, "unknown config key '" + key + "'");
}

const std::vector<std::string> kSections = {"model", "codec", "train", "sampler", "data"};

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const Field& f : fields()) keys.push_back(f.key);
  return keys;
}

void set_field(RunConfig& cfg, const std::string& dotted_key, const std::string& value) {
  find_field(dotted_key).set(cfg, value);
}

std::string get_field(const RunConfig& cfg, const std::string& dotted_key) { return find_field(dotted_key).get(cfg); }

void apply_ini_file(RunConfig& cfg, const std::filesystem::path& path,
                    std::map<std::string, std::map<std::string, std::string>>* extra,
                    const std::vector<std::string>& extra_sections) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    fail(ErrorKind::config, "cannot read config " + path.string() + ": " + e.what());
  }
  for (const auto& [section, body] : tree) {
    const bool known = std::find(kSections.begin(), kSections.end(), section) != kSections.end();
    const bool is_extra = std::find(extra_sections.begin(), extra_sections.end(), section) != extra_sections.end();
    require(known || is_extra, ErrorKind::config, path.string() + ": unknown section [" + section + "]");
    require(body.data().empty(), ErrorKind::config, path.string() + ": key '" + section + "' outside a section");
    for (const auto& [key, leaf] : body) {
      if (is_extra) {
        if (extra) (*extra)[section][key] = leaf.data();
        continue;
      }
      try {
        set_field(cfg, section + "." + key, leaf.data());
      } catch (const Error& e) {
        fail(ErrorKind::config, path.string() + ": " + e.what());
      }
    }
  }
}

std::string to_ini(const RunConfig& cfg) {
  std::ostringstream out;
  std::string current;
  for (const Field& f : fields()) {
    const auto dot = f.key.find('.');
    const std::string section = f.key.substr(0, dot);
    if (section != current) {
      if (!current.empty()) out << "\n";
      out << "[" << section << "]\n";
      current = section;
    }
    out << f.key.substr(dot + 1) << " = " << f.get(cfg) << "\n";
  }
  return out.str();
}

void write_ini_file(const std::filesystem::path& path, const RunConfig& cfg,
                    const std::map<std::string, std::map<std::string, std::string>>& extra) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
  out << to_ini(cfg);
  for (const auto& [section, kv] : extra) {
    out << "\n[" << section << "]\n";
    for (const auto& [k, v] : kv) out << k << " = " << v << "\n";
  }
  require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
}

}  // namespace ddit

#include "ddit/ddit.h"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>

#include "ddit/checkpoint.hpp"
#include "ddit/codec.hpp"
#include "ddit/config.hpp"
#include "ddit/metrics.hpp"
#include "ddit/samplers.hpp"
#include "ddit/toydata.hpp"
#include "ddit/trainer.hpp"

struct ddit_config {
  ddit::RunConfig cfg;
};

struct ddit_checkpoint {
  std::filesystem::path dir;
  ddit::Checkpoint header;
  mutable std::optional<ddit::Checkpoint> full;

  const ddit::Checkpoint& load() const {
    if (!full) full = ddit::load_checkpoint(dir);
    return *full;
  }
};

namespace {

thread_local std::string g_last_error;

ddit_status status_for(ddit::ErrorKind k) {
  switch (k) {
    case ddit::ErrorKind::usage:
    case ddit::ErrorKind::config: return DDIT_ERR_USAGE;
    case ddit::ErrorKind::numeric: return DDIT_ERR_NUMERIC;
    case ddit::ErrorKind::shape:
    case ddit::ErrorKind::input:
    case ddit::ErrorKind::io:
    case ddit::ErrorKind::state: return DDIT_ERR_DATA;
  }
  return DDIT_ERR_INTERNAL;
}

template <typename F>
ddit_status guarded(F&& f) {
  try {
    f();
    return DDIT_OK;
  } catch (const ddit::Error& e) {
    g_last_error = e.what();
    return status_for(e.kind());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return DDIT_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return DDIT_ERR_INTERNAL;
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void need(const void* p, const char* what) {
  ddit::require(p != nullptr, ddit::ErrorKind::usage, std::string(what) + " must not be null");
}

ddit::ModalityFlag parse_modality(const std::string& s) {
  if (s == "mask") return ddit::ModalityFlag::mask;
  if (s == "sketch") return ddit::ModalityFlag::sketch;
  ddit::fail(ddit::ErrorKind::usage, "unknown modality '" + s + "' (expected mask or sketch)");
}

ddit::SamplerConfig sampler_from(const char* name, int steps, double eta, std::uint64_t seed) {
  ddit::SamplerConfig s;
  s.kind = ddit::parse_sampler(name ? name : "ddim");
  ddit::require(steps >= 1, ddit::ErrorKind::usage, "--steps must be >= 1");
  ddit::require(eta >= 0.0, ddit::ErrorKind::usage, "--eta must be >= 0");
  s.steps = steps;
  s.eta = eta;
  s.seed = seed;
  return s;
}

ddit::GuidanceConfig guidance_from(double omega) {
  ddit::require(std::isfinite(omega) && omega >= 0.0, ddit::ErrorKind::usage, "--cfg-scale must be finite and >= 0");
  ddit::GuidanceConfig g;
  g.omega = omega;
  return g;
}

}  // namespace

extern "C" {

const char* ddit_version(void) { return "0.1.0"; }
const char* ddit_last_error(void) { return g_last_error.c_str(); }
void ddit_string_free(char* s) { std::free(s); }

ddit_status ddit_config_new(const char* preset, ddit_config** out) {
  return guarded([&] {
    need(out, "out");
    auto* c = new ddit_config{ddit::preset(preset ? preset : "toy")};
    *out = c;
  });
}

void ddit_config_free(ddit_config* cfg) { delete cfg; }

ddit_status ddit_config_load(ddit_config* cfg, const char* path) {
  return guarded([&] {
    need(cfg, "config");
    need(path, "path");
    ddit::require(std::filesystem::exists(path), ddit::ErrorKind::config, std::string("config file not found: ") + path);
    ddit::apply_ini_file(cfg->cfg, path);
  });
}

ddit_status ddit_config_set(ddit_config* cfg, const char* key, const char* value) {
  return guarded([&] {
    need(cfg, "config");
    need(key, "key");
    need(value, "value");
    ddit::set_field(cfg->cfg, key, value);
  });
}

ddit_status ddit_config_get(const ddit_config* cfg, const char* key, char** value) {
  return guarded([&] {
    need(cfg, "config");
    need(key, "key");
    need(value, "value");
    *value = dup_string(ddit::get_field(cfg->cfg, key));
  });
}

ddit_status ddit_config_to_ini(const ddit_config* cfg, char** text) {
  return guarded([&] {
    need(cfg, "config");
    need(text, "text");
    *text = dup_string(ddit::to_ini(cfg->cfg));
  });
}

ddit_status ddit_config_validate(const ddit_config* cfg) {
  return guarded([&] {
    need(cfg, "config");
    cfg->cfg.validate();
  });
}

ddit_status ddit_count_parameters(const ddit_config* cfg, int64_t* count) {
  return guarded([&] {
    need(cfg, "config");
    need(count, "count");
    *count = ddit::count_parameters(cfg->cfg.model);
  });
}

ddit_status ddit_gen_data(int64_t n, uint64_t seed, const char* out_dir, int size) {
  return guarded([&] {
    need(out_dir, "out_dir");
    ddit::require(n >= 1, ddit::ErrorKind::usage, "--n must be >= 1");
    ddit::require(ddit::toy::valid_size(size), ddit::ErrorKind::usage, "--size must be 32 or 64");
    ddit::toy::write_dataset(n, seed, out_dir, size);
  });
}

ddit_status ddit_train(const ddit_config* cfg, const ddit_train_options* opts, ddit_train_result* result) {
  return guarded([&] {
    need(cfg, "config");
    need(opts, "options");
    need(opts->out_dir, "out_dir");
    ddit::TrainOptions o;
    o.out_dir = opts->out_dir;
    if (opts->resume) o.resume = std::filesystem::path(opts->resume);
    o.stop_at_step = opts->stop_at_step;
    std::vector<ddit::StepLog> seen;
    if (opts->progress && opts->progress_every > 0) {
      const int every = opts->progress_every;
      o.on_step = [&, every](const ddit::StepLog& l, const ddit::Trainer& t) {
        seen.push_back(l);
        if (l.step % every == 0)
          opts->progress(l.step, t.total_steps(), l.loss, ddit::smoothed_loss(seen, l.step), l.lr, opts->user);
      };
    }
    const ddit::TrainResult r = ddit::train(cfg->cfg, o);
    if (result) {
      result->final_step = r.final_step;
      result->final_smoothed_loss = r.log.empty() ? NAN : ddit::smoothed_loss(r.log, r.final_step);
    }
  });
}

ddit_status ddit_checkpoint_open(const char* dir, ddit_checkpoint** out) {
  return guarded([&] {
    need(dir, "dir");
    need(out, "out");
    auto* ck = new ddit_checkpoint{dir, ddit::load_checkpoint_header(dir), std::nullopt};
    *out = ck;
  });
}

void ddit_checkpoint_free(ddit_checkpoint* ck) { delete ck; }

int64_t ddit_checkpoint_step(const ddit_checkpoint* ck) { return ck ? ck->header.step : -1; }

ddit_status ddit_checkpoint_config(const ddit_checkpoint* ck, ddit_config** out) {
  return guarded([&] {
    need(ck, "checkpoint");
    need(out, "out");
    *out = new ddit_config{ck->header.config};
  });
}

void ddit_sample_options_init(ddit_sample_options* o) {
  if (!o) return;
  *o = ddit_sample_options{};
  o->modality = "mask";
  o->caption = "";
  o->sampler = "ddim";
  o->cfg_scale = 4.0;
  o->steps = 50;
  o->eta = 0.0;
  o->seed = 0;
  o->grid = 1;
  o->use_ema = 1;
  o->out_png = "sample.png";
}

ddit_status ddit_sample(const ddit_checkpoint* ck, const ddit_sample_options* opts) {
  return guarded([&] {
    need(ck, "checkpoint");
    need(opts, "options");
    need(opts->condition_png, "condition");
    need(opts->out_png, "output path");
    ddit::require(opts->grid >= 1, ddit::ErrorKind::usage, "--grid must be >= 1");
    const ddit::SamplerConfig sampler = sampler_from(opts->sampler, opts->steps, opts->eta, opts->seed);
    const ddit::GuidanceConfig guidance = guidance_from(opts->cfg_scale);
    const ddit::ModalityFlag modality = parse_modality(opts->modality ? opts->modality : "mask");
    const ddit::Objective trained = ck->header.config.train.objective;
    ddit::require(ddit::sampler_objective(sampler.kind) == trained, ddit::ErrorKind::usage,
                  "sampler " + ddit::sampler_name(sampler.kind) + " does not match a checkpoint trained with " +
                      ddit::objective_name(trained));

    const ddit::Checkpoint& full = ck->load();
    const ddit::RunConfig& rc = full.config;
    const ddit::LabelImage labels = ddit::read_png_indices(opts->condition_png);
    ddit::require(labels.width == rc.data.image_size && labels.height == rc.data.image_size, ddit::ErrorKind::input,
                  "condition image is " + std::to_string(labels.width) + "x" + std::to_string(labels.height) +
                      ", checkpoint expects " + std::to_string(rc.data.image_size) + " px");
    for (std::uint8_t v : labels.labels)
      ddit::require(modality == ddit::ModalityFlag::mask ? v < ddit::toy::kNumClasses : v < 2, ddit::ErrorKind::input,
                    "condition image holds labels outside the modality's range");
    const ddit::Latent cond = ddit::encode(modality == ddit::ModalityFlag::mask ? ddit::mask_condition_image(labels)
                                                                               : ddit::sketch_condition_image(labels),
                                           rc.codec);
    const std::vector<int> caption = ddit::toy::parse_caption(opts->caption ? opts->caption : "");
    const ddit::DiT model = ddit::model_from_checkpoint(full, opts->use_ema != 0);

    std::vector<ddit::SampleRequest> reqs;
    for (int g = 0; g < opts->grid; ++g)
      reqs.push_back({&cond, caption, static_cast<int>(modality), static_cast<std::uint64_t>(g)});
    const std::vector<ddit::Latent> z = ddit::sample(model, trained, reqs, guidance, sampler, rc.train.schedule());

    const int side = rc.data.image_size;
    const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(opts->grid))));
    const int rows = (opts->grid + cols - 1) / cols;
    ddit::RgbImage canvas(cols * side, rows * side, {255, 255, 255});
    for (int g = 0; g < opts->grid; ++g) {
      const ddit::RgbImage img = ddit::from_signed_planar(ddit::decode(z[g], rc.codec));
      const int oy = (g / cols) * side, ox = (g % cols) * side;
      for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) canvas.at(oy + y, ox + x) = img.at(y, x);
    }
    ddit::write_png_rgb(opts->out_png, canvas);
  });
}

void ddit_eval_options_init(ddit_eval_options* o) {
  if (!o) return;
  *o = ddit_eval_options{};
  o->n = 64;
  o->sampler = "ddim";
  o->cfg_scale = 4.0;
  o->steps = 50;
  o->eta = 0.0;
  o->seed = 0;
  o->use_ema = 1;
}

ddit_status ddit_eval(const ddit_checkpoint* ck, const ddit_eval_options* opts, ddit_eval_report* report) {
  return guarded([&] {
    need(ck, "checkpoint");
    need(opts, "options");
    need(opts->data_dir, "data_dir");
    ddit::require(opts->n >= 1, ddit::ErrorKind::usage, "--n must be >= 1");
    const ddit::SamplerConfig sampler = sampler_from(opts->sampler, opts->steps, opts->eta, opts->seed);
    const ddit::GuidanceConfig guidance = guidance_from(opts->cfg_scale);
    ddit::require(ddit::sampler_objective(sampler.kind) == ck->header.config.train.objective, ddit::ErrorKind::usage,
                  "sampler " + ddit::sampler_name(sampler.kind) + " does not match a checkpoint trained with " +
                      ddit::objective_name(ck->header.config.train.objective));
    const ddit::toy::Dataset data = ddit::toy::Dataset::open(opts->data_dir);
    ddit::require(static_cast<std::size_t>(opts->n) <= data.heldout_count(), ddit::ErrorKind::input,
                  "--n " + std::to_string(opts->n) + " exceeds the held-out split of " +
                      std::to_string(data.heldout_count()) + " samples");
    const ddit::EvalReport r =
        ddit::evaluate(ck->load(), data, sampler, guidance, static_cast<std::size_t>(opts->n), opts->use_ema != 0);
    if (opts->report_path) ddit::write_report(opts->report_path, r);
    if (opts->rows_csv) ddit::append_rows_csv(opts->rows_csv, r);
    if (report) *report = {r.ssim, r.pixel_accuracy, r.miou, r.n_samples};
  });
}

ddit_status ddit_inspect(const ddit_checkpoint* ck, const ddit_config* cfg, char** text) {
  return guarded([&] {
    need(text, "text");
    ddit::require(ck || cfg, ddit::ErrorKind::usage, "inspect needs a checkpoint or a configuration");
    const ddit::RunConfig& rc = ck ? ck->header.config : cfg->cfg;
    rc.validate();
    std::ostringstream out;
    out << "parameters: " << ddit::count_parameters(rc.model) << "\n";
    out << "per_block_parameters: " << ddit::block_parameter_count(rc.model) << "\n";
    if (ck) {
      out << "checkpoint: " << ck->dir.string() << "\n";
      out << "step: " << ck->header.step << "\n";
      out << "smoothed_loss: " << ck->header.smoothed_loss << "\n";
    } else {
      out << "checkpoint: none (layout only)\n";
      out << "step: 0\n";
    }
    out << "\n" << ddit::to_ini(rc) << "\n[tensors]\n";
    if (ck) {
      std::int64_t stored = 0;
      for (const ddit::TensorInfo& t : ddit::read_tensor_index(ck->dir / ddit::kTensorFile)) {
        if (t.name.rfind("model/", 0) != 0) continue;
        out << t.name.substr(6) << " = " << t.rows << "x" << t.cols << "\n";
        stored += t.rows * t.cols;
      }
      out << "\nstored_model_scalars: " << stored << "\n";
    } else {
      for (const ddit::ParamSpec& s : ddit::parameter_layout(rc.model)) out << s.name << " = " << s.rows << "x" << s.cols << "\n";
    }
    *text = dup_string(out.str());
  });
}

}  // extern "C"

// Command-line front end. Talks to the library exclusively through ddit.h.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "ddit/ddit.h"

namespace {

struct ConfigPtr {
  ddit_config* p = nullptr;
  ~ConfigPtr() { ddit_config_free(p); }
};
struct CheckpointPtr {
  ddit_checkpoint* p = nullptr;
  ~CheckpointPtr() { ddit_checkpoint_free(p); }
};

int report(ddit_status s) {
  if (s != DDIT_OK) std::cerr << "error: " << ddit_last_error() << "\n";
  return static_cast<int>(s);
}

int usage_error(const std::string& msg) {
  std::cerr << "error: " << msg << "\n";
  return DDIT_ERR_USAGE;
}

void print_and_free(char* text) {
  std::cout << text;
  ddit_string_free(text);
}

void progress(int64_t step, int64_t total, double loss, double smoothed, double lr, void*) {
  std::cout << "step " << step << "/" << total << "  loss " << loss << "  smoothed " << smoothed << "  lr " << lr
            << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-stream diffusion transformer toolkit on a procedural toy face dataset", "ddit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(ddit_version()));

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Write the procedural toy dataset");
  int64_t gen_n = 1024;
  uint64_t gen_seed = 0;
  std::string gen_out;
  int gen_size = 32;
  gen->add_option("--n", gen_n, "Number of samples")->capture_default_str();
  gen->add_option("--seed", gen_seed, "Dataset seed")->envname("DDIT_SEED")->capture_default_str();
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--size", gen_size, "Image side in pixels (32 or 64)")->capture_default_str();

  // train
  auto* tr = app.add_subcommand("train", "Train a model");
  std::string tr_preset = "toy", tr_config, tr_objective, tr_data, tr_out, tr_resume;
  int64_t tr_steps = 0, tr_stop = 0;
  uint64_t tr_seed = 0;
  int tr_every = 100;
  std::vector<std::string> tr_set;
  tr->add_option("--preset", tr_preset, "Configuration preset (toy, paper-profile)")->capture_default_str();
  tr->add_option("--config", tr_config, "INI file applied on top of the preset");
  tr->add_option("--objective", tr_objective, "Training objective (ddpm, rfm); default from the config");
  tr->add_option("--data", tr_data, "Dataset directory written by gen-data");
  tr->add_option("--out", tr_out, "Run directory")->required();
  tr->add_option("--resume", tr_resume, "Checkpoint directory to continue from");
  tr->add_option("--steps", tr_steps, "Optimizer steps (0 keeps the configured value)")->capture_default_str();
  auto* tr_seed_opt = tr->add_option("--seed", tr_seed, "Training seed (default from the config)")->envname("DDIT_SEED");
  tr->add_option("--stop-at", tr_stop, "Stop after this step without shortening the schedule (0 = run to the end)")
      ->capture_default_str();
  tr->add_option("--set", tr_set, "Override one field, section.key=value (repeatable)");
  tr->add_option("--log-every", tr_every, "Steps between progress lines (0 = silent)")->capture_default_str();

  // sample
  auto* sm = app.add_subcommand("sample", "Generate images from a checkpoint");
  ddit_sample_options so;
  ddit_sample_options_init(&so);
  std::string sm_ckpt, sm_condition, sm_modality = so.modality, sm_caption, sm_sampler = so.sampler,
                                     sm_out = so.out_png;
  bool sm_raw = false;
  sm->add_option("--ckpt", sm_ckpt, "Checkpoint directory")->required();
  sm->add_option("--condition", sm_condition, "Condition PNG (paletted mask or bilevel sketch)")->required();
  sm->add_option("--modality", sm_modality, "Condition type (mask, sketch)")->capture_default_str();
  sm->add_option("--caption", sm_caption, "Caption tokens, e.g. \"HAIR_RED EYES_BLUE\"; empty = null caption");
  sm->add_option("--cfg-scale", so.cfg_scale, "Guidance scale omega")->capture_default_str();
  sm->add_option("--steps", so.steps, "Sampler steps")->capture_default_str();
  sm->add_option("--sampler", sm_sampler, "Sampler (ddpm, ddim, euler)")->capture_default_str();
  sm->add_option("--eta", so.eta, "DDIM stochasticity")->capture_default_str();
  sm->add_option("--seed", so.seed, "Sampling seed")->envname("DDIT_SEED")->capture_default_str();
  sm->add_option("--grid", so.grid, "Number of seeds tiled into one image")->capture_default_str();
  sm->add_option("--out", sm_out, "Output PNG")->capture_default_str();
  sm->add_flag("--raw-weights", sm_raw, "Use the raw weights instead of the EMA copy");

  // eval
  auto* ev = app.add_subcommand("eval", "Score generations on the held-out split");
  ddit_eval_options eo;
  ddit_eval_options_init(&eo);
  std::string ev_ckpt, ev_data, ev_sampler = eo.sampler, ev_report = "eval_report.txt", ev_rows;
  bool ev_raw = false;
  ev->add_option("--ckpt", ev_ckpt, "Checkpoint directory")->required();
  ev->add_option("--data", ev_data, "Dataset directory")->required();
  ev->add_option("--n", eo.n, "Held-out samples to generate")->capture_default_str();
  ev->add_option("--sampler", ev_sampler, "Sampler (ddpm, ddim, euler)")->capture_default_str();
  ev->add_option("--cfg-scale", eo.cfg_scale, "Guidance scale omega")->capture_default_str();
  ev->add_option("--steps", eo.steps, "Sampler steps")->capture_default_str();
  ev->add_option("--eta", eo.eta, "DDIM stochasticity")->capture_default_str();
  ev->add_option("--seed", eo.seed, "Sampling seed")->envname("DDIT_SEED")->capture_default_str();
  ev->add_option("--out", ev_report, "Report file (key = value)")->capture_default_str();
  ev->add_option("--rows", ev_rows, "Per-sample CSV to append to");
  ev->add_flag("--raw-weights", ev_raw, "Use the raw weights instead of the EMA copy");

  // inspect
  auto* in = app.add_subcommand("inspect", "Print parameter count, configuration, step and tensor shapes");
  std::string in_ckpt, in_preset, in_config;
  auto* in_ckpt_opt = in->add_option("--ckpt", in_ckpt, "Checkpoint directory");
  in->add_option("--preset", in_preset, "Describe a preset without weights")->excludes(in_ckpt_opt);
  in->add_option("--config", in_config, "INI file applied on top of --preset (or toy)")->excludes(in_ckpt_opt);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return DDIT_ERR_USAGE;
  }

  if (*gen) return report(ddit_gen_data(gen_n, gen_seed, gen_out.c_str(), gen_size));

  if (*tr) {
    ConfigPtr cfg;
    if (ddit_status s = ddit_config_new(tr_preset.c_str(), &cfg.p)) return report(s);
    if (!tr_config.empty())
      if (ddit_status s = ddit_config_load(cfg.p, tr_config.c_str())) return report(s);
    for (const std::string& kv : tr_set) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) return usage_error("--set expects section.key=value, got '" + kv + "'");
      if (ddit_status s = ddit_config_set(cfg.p, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str())) return report(s);
    }
    if (!tr_objective.empty()) {
      if (tr_objective != "ddpm" && tr_objective != "rfm")
        return usage_error("--objective must be ddpm or rfm, got '" + tr_objective + "'");
      if (ddit_status s = ddit_config_set(cfg.p, "train.objective", tr_objective.c_str())) return report(s);
    }
    if (!tr_data.empty())
      if (ddit_status s = ddit_config_set(cfg.p, "data.dir", tr_data.c_str())) return report(s);
    if (tr_steps > 0)
      if (ddit_status s = ddit_config_set(cfg.p, "train.steps", std::to_string(tr_steps).c_str())) return report(s);
    if (tr_seed_opt->count() > 0)
      if (ddit_status s = ddit_config_set(cfg.p, "train.seed", std::to_string(tr_seed).c_str())) return report(s);
    if (tr_data.empty() && tr_resume.empty()) return usage_error("train needs --data (or --resume)");

    ddit_train_options o{};
    o.out_dir = tr_out.c_str();
    o.resume = tr_resume.empty() ? nullptr : tr_resume.c_str();
    o.stop_at_step = tr_stop;
    o.progress_every = tr_every;
    o.progress = tr_every > 0 ? progress : nullptr;
    ddit_train_result r{};
    const ddit_status s = ddit_train(cfg.p, &o, &r);
    if (s == DDIT_OK) std::cout << "finished at step " << r.final_step << ", smoothed loss " << r.final_smoothed_loss << "\n";
    return report(s);
  }

  if (*sm) {
    CheckpointPtr ck;
    if (ddit_status s = ddit_checkpoint_open(sm_ckpt.c_str(), &ck.p)) return report(s);
    so.condition_png = sm_condition.c_str();
    so.modality = sm_modality.c_str();
    so.caption = sm_caption.c_str();
    so.sampler = sm_sampler.c_str();
    so.out_png = sm_out.c_str();
    so.use_ema = sm_raw ? 0 : 1;
    const ddit_status s = ddit_sample(ck.p, &so);
    if (s == DDIT_OK) std::cout << "wrote " << sm_out << "\n";
    return report(s);
  }

  if (*ev) {
    CheckpointPtr ck;
    if (ddit_status s = ddit_checkpoint_open(ev_ckpt.c_str(), &ck.p)) return report(s);
    eo.data_dir = ev_data.c_str();
    eo.sampler = ev_sampler.c_str();
    eo.report_path = ev_report.c_str();
    eo.rows_csv = ev_rows.empty() ? nullptr : ev_rows.c_str();
    eo.use_ema = ev_raw ? 0 : 1;
    ddit_eval_report r{};
    const ddit_status s = ddit_eval(ck.p, &eo, &r);
    if (s == DDIT_OK)
      std::cout << "n_samples " << r.n_samples << "\nssim " << r.ssim << "\npixel_accuracy " << r.pixel_accuracy
                << "\nmiou " << r.miou << "\n";
    return report(s);
  }

  if (*in) {
    char* text = nullptr;
    if (!in_ckpt.empty()) {
      CheckpointPtr ck;
      if (ddit_status s = ddit_checkpoint_open(in_ckpt.c_str(), &ck.p)) return report(s);
      if (ddit_status s = ddit_inspect(ck.p, nullptr, &text)) return report(s);
    } else {
      if (in_preset.empty() && in_config.empty()) return usage_error("inspect needs --ckpt, --preset or --config");
      ConfigPtr cfg;
      if (ddit_status s = ddit_config_new(in_preset.empty() ? "toy" : in_preset.c_str(), &cfg.p)) return report(s);
      if (!in_config.empty())
        if (ddit_status s = ddit_config_load(cfg.p, in_config.c_str())) return report(s);
      if (ddit_status s = ddit_inspect(nullptr, cfg.p, &text)) return report(s);
    }
    print_and_free(text);
    return 0;
  }
  return DDIT_ERR_USAGE;
}

#include "ddit/trainer.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "ddit/codec.hpp"
#include "ddit/rng.hpp"

namespace ddit {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string csv_row(const StepLog& l) {
  return std::to_string(l.step) + "," + fmt(l.lr) + "," + fmt(l.loss) + "," + fmt(l.grad_norm);
}

std::vector<StepLog> read_loss_csv(const fs::path& path, std::int64_t up_to) {
  std::vector<StepLog> rows;
  std::ifstream in(path);
  if (!in) return rows;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string a, b, c, d;
    if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') || !std::getline(ss, c, ',') || !std::getline(ss, d)) continue;
    StepLog l{std::stoll(a), std::stod(b), std::stod(c), std::stod(d)};
    if (l.step <= up_to) rows.push_back(l);
  }
  return rows;
}

}  // namespace

TrainingSet TrainingSet::load(const toy::Dataset& data, const CodecConfig& codec, std::size_t begin, std::size_t end) {
  require(begin <= end && end <= data.size(), ErrorKind::input, "training range outside the dataset");
  TrainingSet set;
  for (std::size_t i = begin; i < end; ++i) {
    set.images.push_back(encode(to_signed_planar(data.load_image(i)), codec));
    set.masks.push_back(encode(mask_condition_image(data.load_mask(i)), codec));
    set.sketches.push_back(encode(sketch_condition_image(data.load_sketch(i)), codec));
    set.captions.push_back(data.record(i).caption);
  }
  return set;
}

double smoothed_loss(const std::vector<StepLog>& log, std::int64_t step, int window) {
  const std::int64_t w = std::min<std::int64_t>(window, step);
  double sum = 0.0;
  std::int64_t n = 0;
  for (const StepLog& l : log)
    if (l.step > step - w && l.step <= step) {
      sum += l.loss;
      ++n;
    }
  require(n > 0, ErrorKind::input, "no logged losses near step " + std::to_string(step));
  return sum / static_cast<double>(n);
}

Trainer::Trainer(RunConfig cfg, std::shared_ptr<const TrainingSet> data)
    : cfg_(std::move(cfg)),
      data_(std::move(data)),
      sched_(cfg_.train.schedule()),
      model_((cfg_.validate(), cfg_.model), cfg_.train.seed),
      ema_(model_.params()),
      opt_(model_.params(), {cfg_.train.beta1, cfg_.train.beta2, cfg_.train.adam_eps, cfg_.train.weight_decay}) {
  require(data_ && data_->size() > 0, ErrorKind::input, "empty training set");
  const Latent& first = data_->images.front();
  require(first.channels == cfg_.model.latent_channels, ErrorKind::config,
          "training latents have " + std::to_string(first.channels) + " channels, model expects " +
              std::to_string(cfg_.model.latent_channels));
  zero_condition_ = Latent(first.channels, first.height, first.width);
  total_ = cfg_.train.total_steps(data_->size());
  require(cfg_.train.warmup_steps < total_, ErrorKind::config, "warmup_steps must be smaller than the run length");
}

std::size_t Trainer::sample_index(std::int64_t example) const {
  const auto n = static_cast<std::int64_t>(data_->size());
  const std::int64_t epoch = example / n;
  if (epoch != perm_epoch_) {
    perm_.resize(data_->size());
    for (std::size_t i = 0; i < perm_.size(); ++i) perm_[i] = i;
    CounterRng rng(derive_key({cfg_.train.seed, static_cast<std::uint64_t>(epoch), 0xE70Cull}));
    for (std::size_t i = perm_.size() - 1; i > 0; --i)
      std::swap(perm_[i], perm_[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)))]);
    perm_epoch_ = epoch;
  }
  return perm_[static_cast<std::size_t>(example % n)];
}

std::vector<TrainExample> Trainer::examples(std::int64_t step, int first_slot, int count) const {
  require(step >= 1, ErrorKind::input, "optimizer steps are numbered from 1");
  const std::int64_t per_step = static_cast<std::int64_t>(cfg_.train.batch_size) * cfg_.train.accum_steps;
  std::vector<TrainExample> out;
  out.reserve(count);
  for (int k = 0; k < count; ++k) {
    const int slot = first_slot + k;
    const std::size_t i = sample_index((step - 1) * per_step + slot);
    CounterRng coin(derive_key({cfg_.train.seed, static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(slot), 0x30DAull}));
    const bool sketch = coin.uniform() < cfg_.train.sketch_fraction;
    TrainExample ex;
    ex.z0 = &data_->images[i];
    ex.condition = sketch ? &data_->sketches[i] : &data_->masks[i];
    ex.caption = data_->captions[i];
    ex.modality = static_cast<int>(sketch ? ModalityFlag::sketch : ModalityFlag::mask);
    out.push_back(std::move(ex));
  }
  apply_cond_dropout(out, cfg_.train.cond_dropout, cfg_.train.seed, static_cast<std::uint64_t>(step),
                     static_cast<std::uint64_t>(first_slot), &zero_condition_);
  return out;
}

GradStore Trainer::gradients(std::int64_t step, int accum, double* loss) const {
  const int slots = cfg_.train.batch_size * cfg_.train.accum_steps;
  require(accum >= 1 && slots % accum == 0, ErrorKind::config, "accumulation count must divide the slots per step");
  const int micro = slots / accum;
  GradStore grads = model_.params().zeros_like();
  double total = 0.0;
  for (int m = 0; m < accum; ++m) {
    const std::vector<TrainExample> batch = examples(step, m * micro, micro);
    ag::Tape tape(&model_.params());
    ag::Var l;
    if (cfg_.train.objective == Objective::ddpm) {
      std::vector<DdpmDraw> draws;
      for (int k = 0; k < micro; ++k)
        draws.push_back(draw_ddpm(cfg_.train.seed, step, m * micro + k, *batch[k].z0, sched_.T));
      LossGraph g = ddpm_loss_graph(tape, model_, batch, draws, sched_, cfg_.train.min_snr_lambda);
      l = g.loss;
      total += g.report.loss;
    } else {
      std::vector<FlowDraw> draws;
      for (int k = 0; k < micro; ++k) draws.push_back(draw_flow(cfg_.train.seed, step, m * micro + k, *batch[k].z0));
      LossGraph g = rfm_loss_graph(tape, model_, batch, draws);
      l = g.loss;
      total += g.report.loss;
    }
    tape.backward(l);
    tape.accumulate_param_grads(grads, 1.0 / accum);
  }
  if (loss) *loss = total / accum;
  return grads;
}

StepLog Trainer::advance() {
  require(step_ < total_, ErrorKind::state, "training already reached its final step");
  const std::int64_t s = step_ + 1;
  StepLog log;
  log.step = s;
  GradStore grads = gradients(s, cfg_.train.accum_steps, &log.loss);
  log.grad_norm = clip_grad_norm(grads, cfg_.train.max_grad_norm);
  log.lr = cosine_lr(s, cfg_.train.warmup_steps, total_, cfg_.train.base_lr);
  opt_.step(model_.params(), grads, log.lr);
  ema_update(ema_, model_.params(), cfg_.train.ema_decay);
  step_ = s;
  return log;
}

void Trainer::restore(const Checkpoint& ck) {
  const ParamStore& p = model_.params();
  require(static_cast<int>(ck.params.size()) == p.size() && ck.names.size() == ck.params.size(), ErrorKind::state,
          "checkpoint does not match the model layout");
  require(ck.ema.size() == ck.params.size() && ck.adam_m.size() == ck.params.size() && ck.adam_v.size() == ck.params.size(),
          ErrorKind::state, "checkpoint lacks optimizer or EMA state");
  for (int i = 0; i < p.size(); ++i) {
    require(ck.names[i] == p.spec(i).name, ErrorKind::state, "checkpoint tensor order differs at " + ck.names[i]);
    model_.params().value(i) = ck.params[i];
    ema_.value(i) = ck.ema[i];
    opt_.first_moment()[i] = ck.adam_m[i];
    opt_.second_moment()[i] = ck.adam_v[i];
  }
  opt_.set_steps_taken(ck.adam_steps);
  step_ = ck.step;
}

Checkpoint Trainer::snapshot(double smoothed) const {
  Checkpoint ck;
  ck.config = cfg_;
  ck.step = step_;
  ck.adam_steps = opt_.steps_taken();
  ck.smoothed_loss = smoothed;
  for (int i = 0; i < model_.params().size(); ++i) ck.names.push_back(model_.params().spec(i).name);
  ck.params = model_.params().values();
  ck.ema = ema_.values();
  ck.adam_m = opt_.first_moment();
  ck.adam_v = opt_.second_moment();
  return ck;
}

TrainResult train(const RunConfig& requested, const TrainOptions& opts) {
  RunConfig cfg = requested;
  std::optional<Checkpoint> resume;
  if (opts.resume) {
    resume = load_checkpoint(*opts.resume);
    const std::string data_dir = cfg.data.dir.empty() ? resume->config.data.dir : cfg.data.dir;
    cfg = resume->config;
    cfg.data.dir = data_dir;
  }
  cfg.validate();
  require(!cfg.data.dir.empty(), ErrorKind::usage, "no dataset directory given");
  const toy::Dataset dataset = toy::Dataset::open(cfg.data.dir);
  require(dataset.image_size() == cfg.data.image_size, ErrorKind::input,
          "dataset images are " + std::to_string(dataset.image_size()) + " px, config expects " +
              std::to_string(cfg.data.image_size));
  auto data = std::make_shared<TrainingSet>(TrainingSet::load(dataset, cfg.codec, 0, dataset.heldout_begin()));
  Trainer trainer(cfg, data);
  if (resume) trainer.restore(*resume);

  std::error_code ec;
  fs::create_directories(opts.out_dir, ec);
  require(!ec, ErrorKind::io, "cannot create " + opts.out_dir.string() + ": " + ec.message());
  write_ini_file(opts.out_dir / "config.ini", cfg);

  TrainResult result;
  const fs::path csv_path = opts.out_dir / "loss.csv";
  if (resume) result.log = read_loss_csv(csv_path, trainer.step());
  std::ofstream csv(csv_path, std::ios::trunc);
  require(static_cast<bool>(csv), ErrorKind::io, "cannot write " + csv_path.string());
  csv << "step,lr,loss,grad_norm\n";
  for (const StepLog& l : result.log) csv << csv_row(l) << "\n";
  csv.flush();

  const std::int64_t stop = opts.stop_at_step > 0 ? std::min(opts.stop_at_step, trainer.total_steps()) : trainer.total_steps();
  auto save = [&](std::int64_t step) {
    if (!opts.write_checkpoints) return;
    result.last_checkpoint = checkpoint_dir(opts.out_dir, step);
    save_checkpoint(result.last_checkpoint, trainer.snapshot(smoothed_loss(result.log, step)));
    prune_checkpoints(opts.out_dir, cfg.train.keep_last);
  };
  while (trainer.step() < stop) {
    StepLog log;
    try {
      log = trainer.advance();
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::numeric) throw;
      const std::int64_t bad = trainer.step() + 1;
      std::ofstream dump(opts.out_dir / ("nan_step_" + std::to_string(bad) + ".ini"));
      dump << "[replay]\nstep = " << bad << "\nseed = " << cfg.train.seed << "\nslots = "
           << cfg.train.batch_size * cfg.train.accum_steps << "\nobjective = " << objective_name(cfg.train.objective)
           << "\nresume_from = " << (result.last_checkpoint.empty() ? "none" : result.last_checkpoint.string())
           << "\nerror = " << e.what() << "\n";
      fail(ErrorKind::numeric, "non-finite value at optimizer step " + std::to_string(bad) + ": " + e.what());
    }
    result.log.push_back(log);
    csv << csv_row(log) << "\n";
    csv.flush();
    if (opts.on_step) opts.on_step(log, trainer);
    if (opts.progress && (log.step % opts.progress_every == 0 || log.step == stop))
      *opts.progress << "step " << log.step << "/" << trainer.total_steps() << " loss " << log.loss << " smoothed "
                     << smoothed_loss(result.log, log.step) << " lr " << log.lr << "\n"
                     << std::flush;
    if (log.step % cfg.train.checkpoint_every == 0 || log.step == stop) save(log.step);
  }
  result.final_step = trainer.step();
  return result;
}

}  // namespace ddit

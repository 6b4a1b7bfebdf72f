#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "ddit/ddit.h"
#include "test_util.hpp"

namespace fs = std::filesystem;

namespace {

struct Cfg {
  ddit_config* p = nullptr;
  explicit Cfg(const char* preset) { REQUIRE(ddit_config_new(preset, &p) == DDIT_OK); }
  ~Cfg() { ddit_config_free(p); }
};

std::string get(const ddit_config* c, const char* key) {
  char* v = nullptr;
  REQUIRE(ddit_config_get(c, key, &v) == DDIT_OK);
  std::string out(v);
  ddit_string_free(v);
  return out;
}

void shrink(ddit_config* c) {
  const char* kv[][2] = {{"model.hidden", "16"},     {"model.depth", "1"},          {"model.heads", "2"},
                         {"model.text_dim", "8"},    {"model.freq_dim", "16"},      {"train.steps", "4"},
                         {"train.batch_size", "4"},  {"train.warmup_steps", "1"},   {"train.checkpoint_every", "2"},
                         {"train.seed", "3"}};
  for (auto& p : kv) REQUIRE(ddit_config_set(c, p[0], p[1]) == DDIT_OK);
}

void count_step(int64_t step, int64_t total, double loss, double smoothed, double lr, void* user) {
  auto* seen = static_cast<std::vector<int64_t>*>(user);
  seen->push_back(step);
  CHECK(total == 4);
  CHECK(std::isfinite(loss));
  CHECK(std::isfinite(smoothed));
  CHECK(lr >= 0.0);
}

}  // namespace

TEST_CASE("version and error strings") {
  CHECK(std::strlen(ddit_version()) > 0);
  ddit_config* c = nullptr;
  CHECK(ddit_config_new("enormous", &c) == DDIT_ERR_USAGE);
  CHECK(c == nullptr);
  CHECK(std::string(ddit_last_error()).find("enormous") != std::string::npos);
  CHECK(ddit_config_new("toy", nullptr) == DDIT_ERR_USAGE);
  ddit_config_free(nullptr);
  ddit_checkpoint_free(nullptr);
  ddit_string_free(nullptr);
  CHECK(ddit_checkpoint_step(nullptr) == -1);
}

TEST_CASE("configuration handles") {
  Cfg c("toy");
  CHECK(get(c.p, "model.hidden") == "128");
  CHECK(ddit_config_set(c.p, "model.hidden", "64") == DDIT_OK);
  CHECK(get(c.p, "model.hidden") == "64");
  CHECK(ddit_config_set(c.p, "model.width", "64") == DDIT_ERR_USAGE);
  CHECK(ddit_config_set(c.p, "model.hidden", "wide") == DDIT_ERR_USAGE);
  CHECK(ddit_config_validate(c.p) == DDIT_OK);
  CHECK(ddit_config_set(c.p, "model.heads", "5") == DDIT_OK);
  CHECK(ddit_config_validate(c.p) == DDIT_ERR_USAGE);

  char* ini = nullptr;
  REQUIRE(ddit_config_to_ini(c.p, &ini) == DDIT_OK);
  CHECK(std::string(ini).find("[model]\nhidden = 64\n") != std::string::npos);
  ddit_string_free(ini);

  Cfg paper("paper-profile");
  int64_t n = 0;
  REQUIRE(ddit_count_parameters(paper.p, &n) == DDIT_OK);
  CHECK(n == 1349390592);
  CHECK(ddit_count_parameters(paper.p, nullptr) == DDIT_ERR_USAGE);
  CHECK(ddit_config_load(c.p, "/nonexistent/run.ini") == DDIT_ERR_USAGE);
}

TEST_CASE("dataset, training, sampling, evaluation and inspection") {
  TempDir dir("capi");
  const std::string data = (dir.path / "data").string();
  CHECK(ddit_gen_data(0, 1, data.c_str(), 32) == DDIT_ERR_USAGE);
  CHECK(ddit_gen_data(10, 1, data.c_str(), 48) == DDIT_ERR_USAGE);
  REQUIRE(ddit_gen_data(24, 1, data.c_str(), 32) == DDIT_OK);
  CHECK(fs::exists(dir.path / "data" / "manifest.jsonl"));

  Cfg c("toy");
  shrink(c.p);
  REQUIRE(ddit_config_set(c.p, "data.dir", data.c_str()) == DDIT_OK);
  const std::string run = (dir.path / "run").string();
  std::vector<int64_t> seen;
  ddit_train_options o{};
  o.out_dir = run.c_str();
  o.progress_every = 2;
  o.progress = count_step;
  o.user = &seen;
  ddit_train_result r{};
  REQUIRE(ddit_train(c.p, &o, &r) == DDIT_OK);
  CHECK(r.final_step == 4);
  CHECK(std::isfinite(r.final_smoothed_loss));
  CHECK(seen == std::vector<int64_t>{2, 4});
  CHECK(ddit_train(c.p, nullptr, &r) == DDIT_ERR_USAGE);

  ddit_checkpoint* ck = nullptr;
  CHECK(ddit_checkpoint_open((dir.path / "missing").c_str(), &ck) == DDIT_ERR_DATA);
  REQUIRE(ddit_checkpoint_open((fs::path(run) / "ckpt_4").c_str(), &ck) == DDIT_OK);
  CHECK(ddit_checkpoint_step(ck) == 4);
  ddit_config* back = nullptr;
  REQUIRE(ddit_checkpoint_config(ck, &back) == DDIT_OK);
  CHECK(get(back, "model.hidden") == "16");
  ddit_config_free(back);

  ddit_sample_options so;
  ddit_sample_options_init(&so);
  CHECK(std::string(so.sampler) == "ddim");
  CHECK(so.cfg_scale == 4.0);
  const std::string mask = (dir.path / "data" / "masks" / "0000.png").string();
  const std::string out_png = (dir.path / "s.png").string();
  so.condition_png = mask.c_str();
  so.caption = "BG_TEAL HAIR_RED";
  so.steps = 2;
  so.grid = 3;
  so.out_png = out_png.c_str();
  so.sampler = "euler";
  CHECK(ddit_sample(ck, &so) == DDIT_ERR_USAGE);
  so.sampler = "ddim";
  so.caption = "NOT_A_TOKEN";
  CHECK(ddit_sample(ck, &so) == DDIT_ERR_DATA);
  so.caption = "";
  so.modality = "depth";
  CHECK(ddit_sample(ck, &so) == DDIT_ERR_USAGE);
  so.modality = "mask";
  REQUIRE(ddit_sample(ck, &so) == DDIT_OK);
  CHECK(fs::file_size(out_png) > 0);

  ddit_eval_options eo;
  ddit_eval_options_init(&eo);
  CHECK(eo.n == 64);
  eo.data_dir = data.c_str();
  eo.steps = 2;
  eo.n = 1000;
  ddit_eval_report rep{};
  CHECK(ddit_eval(ck, &eo, &rep) == DDIT_ERR_DATA);
  eo.n = 2;
  const std::string report_path = (dir.path / "eval.txt").string();
  eo.report_path = report_path.c_str();
  REQUIRE(ddit_eval(ck, &eo, &rep) == DDIT_OK);
  CHECK(rep.n_samples == 2);
  CHECK(rep.pixel_accuracy >= 0.0);
  CHECK(rep.pixel_accuracy <= 1.0);
  CHECK(fs::exists(report_path));

  char* text = nullptr;
  REQUIRE(ddit_inspect(ck, nullptr, &text) == DDIT_OK);
  const std::string with_ck(text);
  ddit_string_free(text);
  CHECK(with_ck.find("step: 4") != std::string::npos);
  CHECK(with_ck.find("[tensors]") != std::string::npos);
  int64_t n = 0;
  REQUIRE(ddit_count_parameters(c.p, &n) == DDIT_OK);
  CHECK(with_ck.find("stored_model_scalars: " + std::to_string(n)) != std::string::npos);
  REQUIRE(ddit_inspect(nullptr, c.p, &text) == DDIT_OK);
  CHECK(std::string(text).find("parameters: " + std::to_string(n)) != std::string::npos);
  ddit_string_free(text);
  CHECK(ddit_inspect(nullptr, nullptr, &text) == DDIT_ERR_USAGE);
  ddit_checkpoint_free(ck);
}

TEST_CASE("training errors map to status codes") {
  TempDir dir("capi_err");
  Cfg c("toy");
  shrink(c.p);
  ddit_train_options o{};
  const std::string run = (dir.path / "run").string();
  o.out_dir = run.c_str();
  ddit_train_result r{};
  CHECK(ddit_train(c.p, &o, &r) == DDIT_ERR_USAGE);
  REQUIRE(ddit_config_set(c.p, "data.dir", (dir.path / "nothing").c_str()) == DDIT_OK);
  CHECK(ddit_train(c.p, &o, &r) == DDIT_ERR_DATA);

  const std::string data = (dir.path / "data").string();
  REQUIRE(ddit_gen_data(24, 1, data.c_str(), 32) == DDIT_OK);
  REQUIRE(ddit_config_set(c.p, "data.dir", data.c_str()) == DDIT_OK);
  REQUIRE(ddit_config_set(c.p, "train.base_lr", "1e300") == DDIT_OK);
  REQUIRE(ddit_config_set(c.p, "train.warmup_steps", "0") == DDIT_OK);
  CHECK(ddit_train(c.p, &o, &r) == DDIT_ERR_NUMERIC);
}

#include "ddit/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>

namespace ddit {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'D', 'D', 'I', 'T', 'T', 'N', 'S', '1'};
static_assert(std::endian::native == std::endian::little, "tensor files assume a little-endian host");

std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::vector<TensorInfo> read_index(std::ifstream& in, const fs::path& path, std::uint64_t& payload_start) {
  char magic[8];
  std::uint64_t header_len = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&header_len), 8);
  require(in && std::memcmp(magic, kMagic, 8) == 0, ErrorKind::io, path.string() + " is not a tensor file");
  require(header_len < (1ull << 32), ErrorKind::io, path.string() + ": implausible header length");
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  require(static_cast<bool>(in), ErrorKind::io, path.string() + ": truncated header");
  payload_start = 16 + header_len;
  std::vector<TensorInfo> out;
  try {
    const json doc = json::parse(header);
    for (const json& t : doc.at("tensors")) {
      TensorInfo info;
      info.name = t.at("name").get<std::string>();
      info.dtype = t.at("dtype").get<std::string>();
      info.rows = t.at("shape").at(0).get<std::int64_t>();
      info.cols = t.at("shape").at(1).get<std::int64_t>();
      info.offset = t.at("offset").get<std::uint64_t>();
      require(info.dtype == "f64", ErrorKind::io, path.string() + ": unsupported dtype " + info.dtype);
      out.push_back(std::move(info));
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::io, path.string() + ": malformed header: " + e.what());
  }
  return out;
}

std::string state_value(const std::map<std::string, std::map<std::string, std::string>>& extra, const std::string& key,
                        const fs::path& dir) {
  auto sec = extra.find("state");
  require(sec != extra.end(), ErrorKind::state, dir.string() + ": sidecar lacks a [state] section");
  auto it = sec->second.find(key);
  require(it != sec->second.end(), ErrorKind::state, dir.string() + ": sidecar lacks state." + key);
  return it->second;
}

}  // namespace

void write_tensor_file(const fs::path& path, std::span<const NamedTensor> tensors) {
  json list = json::array();
  std::uint64_t offset = 0;
  for (const NamedTensor& t : tensors) {
    list.push_back({{"name", t.name}, {"dtype", "f64"}, {"shape", {t.value.rows(), t.value.cols()}}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(t.value.size()) * sizeof(double);
  }
  const std::string header = json{{"tensors", list}}.dump();
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
  const std::uint64_t len = header.size();
  out.write(kMagic, 8);
  out.write(reinterpret_cast<const char*>(&len), 8);
  out.write(header.data(), static_cast<std::streamsize>(len));
  for (const NamedTensor& t : tensors)
    out.write(reinterpret_cast<const char*>(t.value.data()), static_cast<std::streamsize>(t.value.size() * sizeof(double)));
  require(static_cast<bool>(out), ErrorKind::io, "failed writing " + path.string());
}

std::vector<TensorInfo> read_tensor_index(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open " + path.string());
  std::uint64_t start = 0;
  return read_index(in, path, start);
}

std::vector<NamedTensor> read_tensor_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open " + path.string());
  std::uint64_t start = 0;
  const std::vector<TensorInfo> index = read_index(in, path, start);
  std::vector<NamedTensor> out;
  out.reserve(index.size());
  for (const TensorInfo& info : index) {
    require(info.rows >= 0 && info.cols >= 0, ErrorKind::io, path.string() + ": negative shape for " + info.name);
    Mat m(info.rows, info.cols);
    in.seekg(static_cast<std::streamoff>(start + info.offset));
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    require(static_cast<bool>(in), ErrorKind::io, path.string() + ": truncated payload for " + info.name);
    out.push_back({info.name, std::move(m)});
  }
  return out;
}

fs::path checkpoint_dir(const fs::path& run_dir, std::int64_t step) { return run_dir / ("ckpt_" + std::to_string(step)); }

void save_checkpoint(const fs::path& dir, const Checkpoint& ck) {
  require(ck.names.size() == ck.params.size(), ErrorKind::state, "checkpoint names and parameters differ in count");
  for (const auto* extra : {&ck.ema, &ck.adam_m, &ck.adam_v})
    require(extra->empty() || extra->size() == ck.params.size(), ErrorKind::state, "checkpoint state sets differ in size");
  std::vector<NamedTensor> tensors;
  auto push = [&](const char* prefix, const std::vector<Mat>& values) {
    for (std::size_t i = 0; i < values.size(); ++i) tensors.push_back({std::string(prefix) + ck.names[i], values[i]});
  };
  push("model/", ck.params);
  push("ema/", ck.ema);
  push("adam_m/", ck.adam_m);
  push("adam_v/", ck.adam_v);

  fs::path tmp = dir;
  tmp += ".tmp";
  std::error_code ec;
  fs::remove_all(tmp, ec);
  fs::create_directories(tmp, ec);
  require(!ec, ErrorKind::io, "cannot create " + tmp.string() + ": " + ec.message());
  write_tensor_file(tmp / kTensorFile, tensors);
  std::map<std::string, std::map<std::string, std::string>> extra;
  extra["state"] = {{"step", std::to_string(ck.step)},
                    {"adam_steps", std::to_string(ck.adam_steps)},
                    {"smoothed_loss", fmt(ck.smoothed_loss)}};
  write_ini_file(tmp / kSidecarFile, ck.config, extra);
  fs::remove_all(dir, ec);
  fs::rename(tmp, dir, ec);
  require(!ec, ErrorKind::io, "cannot move checkpoint into " + dir.string() + ": " + ec.message());
}

Checkpoint load_checkpoint_header(const fs::path& dir) {
  require(fs::exists(dir / kSidecarFile), ErrorKind::io, "no checkpoint at " + dir.string());
  Checkpoint ck;
  ck.config = RunConfig{};
  std::map<std::string, std::map<std::string, std::string>> extra;
  apply_ini_file(ck.config, dir / kSidecarFile, &extra, {"state"});
  try {
    ck.step = std::stoll(state_value(extra, "step", dir));
    ck.adam_steps = std::stoll(state_value(extra, "adam_steps", dir));
    ck.smoothed_loss = std::stod(state_value(extra, "smoothed_loss", dir));
  } catch (const std::logic_error&) {
    fail(ErrorKind::state, dir.string() + ": malformed [state] values");
  }
  ck.config.validate();
  return ck;
}

Checkpoint load_checkpoint(const fs::path& dir) {
  Checkpoint ck = load_checkpoint_header(dir);
  const std::vector<ParamSpec> layout = parameter_layout(ck.config.model);
  for (const ParamSpec& s : layout) ck.names.push_back(s.name);

  std::vector<NamedTensor> tensors = read_tensor_file(dir / kTensorFile);
  std::map<std::string, Mat*> slots;
  auto reserve = [&](const char* prefix, std::vector<Mat>& dst) {
    dst.resize(layout.size());
    for (std::size_t i = 0; i < layout.size(); ++i) slots[std::string(prefix) + layout[i].name] = &dst[i];
  };
  reserve("model/", ck.params);
  reserve("ema/", ck.ema);
  reserve("adam_m/", ck.adam_m);
  reserve("adam_v/", ck.adam_v);
  for (NamedTensor& t : tensors) {
    auto it = slots.find(t.name);
    require(it != slots.end(), ErrorKind::state, dir.string() + ": unexpected tensor " + t.name);
    *it->second = std::move(t.value);
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const Mat& p = ck.params[i];
    require(p.rows() == layout[i].rows && p.cols() == layout[i].cols, ErrorKind::state,
            dir.string() + ": tensor model/" + layout[i].name + " missing or misshapen");
  }
  for (auto* extra : {&ck.ema, &ck.adam_m, &ck.adam_v}) {
    const bool any = std::any_of(extra->begin(), extra->end(), [](const Mat& m) { return m.size() > 0; });
    if (!any) {
      extra->clear();
      continue;
    }
    for (std::size_t i = 0; i < layout.size(); ++i)
      require((*extra)[i].rows() == layout[i].rows && (*extra)[i].cols() == layout[i].cols, ErrorKind::state,
              dir.string() + ": partial state for " + layout[i].name);
  }
  return ck;
}

DiT model_from_checkpoint(const Checkpoint& ck, bool use_ema) {
  DiT model(ck.config.model);
  const std::vector<Mat>& src = use_ema && !ck.ema.empty() ? ck.ema : ck.params;
  require(static_cast<int>(src.size()) == model.params().size(), ErrorKind::state, "checkpoint does not match the model layout");
  for (int i = 0; i < model.params().size(); ++i) model.params().value(i) = src[i];
  return model;
}

std::vector<std::int64_t> list_checkpoints(const fs::path& run_dir) {
  std::vector<std::int64_t> steps;
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(run_dir, ec)) {
    const std::string name = entry.path().filename().string();
    if (!entry.is_directory() || name.rfind("ckpt_", 0) != 0) continue;
    std::int64_t step = 0;
    const char* first = name.data() + 5;
    const char* last = name.data() + name.size();
    auto r = std::from_chars(first, last, step);
    if (r.ec == std::errc() && r.ptr == last && fs::exists(entry.path() / kSidecarFile)) steps.push_back(step);
  }
  std::sort(steps.begin(), steps.end());
  return steps;
}

void prune_checkpoints(const fs::path& run_dir, int keep_last) {
  const std::vector<std::int64_t> steps = list_checkpoints(run_dir);
  if (static_cast<int>(steps.size()) <= keep_last) return;
  std::int64_t best = -1;
  double best_loss = std::numeric_limits<double>::infinity();
  for (std::int64_t s : steps) {
    const double l = load_checkpoint_header(checkpoint_dir(run_dir, s)).smoothed_loss;
    if (std::isfinite(l) && l < best_loss) {
      best_loss = l;
      best = s;
    }
  }
  for (std::size_t i = 0; i + keep_last < steps.size(); ++i)
    if (steps[i] != best) fs::remove_all(checkpoint_dir(run_dir, steps[i]));
}

}  // namespace ddit

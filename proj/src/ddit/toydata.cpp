#include "ddit/toydata.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "ddit/rng.hpp"

namespace ddit::toy {

using nlohmann::json;

int attribute_cardinality(Attribute a) {
  switch (a) {
    case Attribute::background: return kBackgrounds;
    case Attribute::face_shape: return kFaceShapes;
    case Attribute::hair: return kHairClasses;
    case Attribute::eyes: return kEyeClasses;
    case Attribute::accessory: return kAccessoryValues;
  }
  return 0;
}

const char* attribute_name(Attribute a) {
  switch (a) {
    case Attribute::background: return "background";
    case Attribute::face_shape: return "face_shape";
    case Attribute::hair: return "hair";
    case Attribute::eyes: return "eyes";
    case Attribute::accessory: return "accessory";
  }
  return "?";
}

int ToyAttributes::value(Attribute a) const {
  switch (a) {
    case Attribute::background: return background;
    case Attribute::face_shape: return face_shape;
    case Attribute::hair: return hair;
    case Attribute::eyes: return eyes;
    case Attribute::accessory: return accessory ? 1 : 0;
  }
  return 0;
}

void ToyAttributes::set(Attribute a, int v) {
  require(v >= 0 && v < attribute_cardinality(a), ErrorKind::input,
          std::string("attribute value out of range for ") + attribute_name(a));
  switch (a) {
    case Attribute::background: background = v; break;
    case Attribute::face_shape: face_shape = v; break;
    case Attribute::hair: hair = v; break;
    case Attribute::eyes: eyes = v; break;
    case Attribute::accessory: accessory = v != 0; break;
  }
}

// ---- vocabulary ------------------------------------------------------------

namespace {

const std::vector<std::string>& vocab() {
  static const std::vector<std::string> v = {
      "<null>",
      "BG_LIGHT", "BG_GRAY", "BG_TEAL", "BG_INDIGO",
      "FACE_ROUND", "FACE_OVAL", "FACE_WIDE",
      "HAIR_BLACK", "HAIR_BLOND", "HAIR_RED", "HAIR_BROWN",
      "EYES_BLUE", "EYES_GREEN", "EYES_AMBER",
      "ACC_NONE", "ACC_HAT",
  };
  return v;
}

int attribute_offset(Attribute a) {
  int offset = 1;
  for (Attribute b : kCanonicalOrder) {
    if (b == a) return offset;
    offset += attribute_cardinality(b);
  }
  return offset;
}

}  // namespace

int vocab_size() { return static_cast<int>(vocab().size()); }

int token_for(Attribute a, int value) {
  require(value >= 0 && value < attribute_cardinality(a), ErrorKind::input,
          std::string("no token for ") + attribute_name(a) + "=" + std::to_string(value));
  return attribute_offset(a) + value;
}

const std::string& token_name(int id) {
  require(id >= 0 && id < vocab_size(), ErrorKind::input, "token id out of vocabulary: " + std::to_string(id));
  return vocab()[id];
}

int token_id(std::string_view name) {
  const auto& v = vocab();
  auto it = std::find(v.begin(), v.end(), name);
  require(it != v.end(), ErrorKind::input, "unknown caption token '" + std::string(name) + "'");
  return static_cast<int>(it - v.begin());
}

std::vector<int> parse_caption(std::string_view text) {
  std::vector<int> out;
  std::istringstream in{std::string(text)};
  std::string word;
  while (in >> word) out.push_back(token_id(word));
  if (out.empty()) out.push_back(kNullToken);
  return out;
}

std::string format_caption(std::span<const int> tokens) {
  std::string s;
  for (int t : tokens) {
    if (!s.empty()) s += ' ';
    s += token_name(t);
  }
  return s;
}

std::vector<int> caption_tokens(const ToyAttributes& attrs) {
  std::vector<int> out;
  for (Attribute a : kCanonicalOrder) out.push_back(token_for(a, attrs.value(a)));
  return out;
}

ToyAttributes decode_caption(std::span<const int> tokens) {
  require(tokens.size() == kCanonicalOrder.size(), ErrorKind::input, "caption is not canonical (length)");
  ToyAttributes attrs;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const Attribute a = kCanonicalOrder[i];
    const int v = tokens[i] - attribute_offset(a);
    require(v >= 0 && v < attribute_cardinality(a), ErrorKind::input,
            "caption is not canonical at position " + std::to_string(i));
    attrs.set(a, v);
  }
  return attrs;
}

// ---- palette ---------------------------------------------------------------

namespace {

constexpr std::array<Rgb, kBackgrounds> kBackgroundColors = {{{235, 235, 235}, {128, 128, 128}, {0, 128, 128}, {60, 40, 120}}};
constexpr Rgb kSkinColor = {230, 185, 150};
constexpr std::array<Rgb, kHairClasses> kHairColors = {{{25, 25, 25}, {235, 205, 60}, {200, 35, 35}, {120, 70, 25}}};
constexpr std::array<Rgb, kEyeClasses> kEyeColors = {{{30, 100, 240}, {40, 190, 70}, {250, 140, 0}}};
constexpr Rgb kAccessoryColor = {220, 0, 200};

constexpr std::array<Rgb, kNumClasses> kClassColors = {{{0, 0, 0}, {255, 255, 255}, {255, 0, 0}, {0, 0, 255}, {0, 255, 0}}};

}  // namespace

std::span<const PaletteEntry> palette() {
  static const std::vector<PaletteEntry> entries = [] {
    std::vector<PaletteEntry> e;
    for (int i = 0; i < kBackgrounds; ++i) e.push_back({kBackgroundColors[i], kBackground, i});
    e.push_back({kSkinColor, kSkin, 0});
    for (int i = 0; i < kHairClasses; ++i) e.push_back({kHairColors[i], kHair, i});
    for (int i = 0; i < kEyeClasses; ++i) e.push_back({kEyeColors[i], kEyes, i});
    e.push_back({kAccessoryColor, kAccessory, 0});
    return e;
  }();
  return entries;
}

Rgb render_color(std::uint8_t mask_class, const ToyAttributes& attrs) {
  switch (mask_class) {
    case kBackground: return kBackgroundColors[attrs.background];
    case kSkin: return kSkinColor;
    case kHair: return kHairColors[attrs.hair];
    case kEyes: return kEyeColors[attrs.eyes];
    case kAccessory: return kAccessoryColor;
  }
  fail(ErrorKind::input, "mask class out of range");
}

std::span<const Rgb> class_colors() { return kClassColors; }

// ---- synthesis -------------------------------------------------------------

bool valid_size(int size) { return size == 32 || size == 64; }

namespace {

bool in_ellipse(double px, double py, double cx, double cy, double rx, double ry) {
  const double dx = (px - cx) / rx, dy = (py - cy) / ry;
  return dx * dx + dy * dy <= 1.0;
}

}  // namespace

ToySample synthesize_scene(std::uint64_t seed, std::int64_t sample_id, int size) {
  require(valid_size(size), ErrorKind::config, "toy image size must be 32 or 64, got " + std::to_string(size));
  CounterRng rng(derive_key({seed, static_cast<std::uint64_t>(sample_id), 0x70794ull}));

  ToySample s;
  s.sample_id = sample_id;
  ToyAttributes& a = s.attributes;
  a.background = static_cast<int>(rng.uniform_int(0, kBackgrounds - 1));
  a.face_shape = static_cast<int>(rng.uniform_int(0, kFaceShapes - 1));
  a.hair = static_cast<int>(rng.uniform_int(0, kHairClasses - 1));
  a.eyes = static_cast<int>(rng.uniform_int(0, kEyeClasses - 1));
  a.accessory = rng.bernoulli(0.5);

  const double S = size;
  const double cx = S * (0.5 + 0.12 * (rng.uniform() - 0.5));
  const double cy = S * (0.56 + 0.10 * (rng.uniform() - 0.5));
  const double scale = 0.92 + 0.16 * rng.uniform();
  static constexpr std::array<std::array<double, 2>, kFaceShapes> kRadii = {{{0.24, 0.24}, {0.20, 0.28}, {0.29, 0.22}}};
  const double rx = S * scale * kRadii[a.face_shape][0];
  const double ry = S * scale * kRadii[a.face_shape][1];

  const double hair_cy = cy - 0.06 * S;
  const double hair_rx = rx + 0.06 * S, hair_ry = ry + 0.08 * S;
  const double hair_top = hair_cy - hair_ry;
  const double eye_r = std::max(1.6, 0.055 * S);
  const double eye_dx = 0.38 * rx, eye_y = cy - 0.15 * ry;

  // Painter's order: background, hair, face, eyes, accessory.
  s.mask = LabelImage(size, size, kBackground);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      std::uint8_t label = kBackground;
      if (py <= cy && in_ellipse(px, py, cx, hair_cy, hair_rx, hair_ry)) label = kHair;
      if (in_ellipse(px, py, cx, cy, rx, ry)) label = kSkin;
      if (in_ellipse(px, py, cx - eye_dx, eye_y, eye_r, eye_r) ||
          in_ellipse(px, py, cx + eye_dx, eye_y, eye_r, eye_r))
        label = kEyes;
      if (a.accessory && std::abs(px - cx) <= 0.7 * rx && py >= hair_top - 0.10 * S &&
          py <= hair_top + 0.06 * S)
        label = kAccessory;
      s.mask.at(y, x) = label;
    }
  }

  s.image = RgbImage(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) s.image.at(y, x) = render_color(s.mask.at(y, x), a);
  s.sketch = sketch_from_labels(s.mask);
  s.caption = caption_tokens(a);
  return s;
}

LabelImage sketch_from_labels(const LabelImage& labels) {
  LabelImage edges(labels.width, labels.height, 0);
  for (int y = 0; y < labels.height; ++y)
    for (int x = 0; x < labels.width; ++x) {
      if (x + 1 < labels.width && labels.at(y, x) != labels.at(y, x + 1)) edges.at(y, x) = edges.at(y, x + 1) = 1;
      if (y + 1 < labels.height && labels.at(y, x) != labels.at(y + 1, x)) edges.at(y, x) = edges.at(y + 1, x) = 1;
    }
  return edges;
}

// ---- dataset ----------------------------------------------------------------

std::string padded_id(std::int64_t id, std::int64_t n) {
  int width = 4;
  for (std::int64_t m = std::max<std::int64_t>(n - 1, 0); m >= 10000; m /= 10) ++width;
  std::string s = std::to_string(id);
  return std::string(std::max<int>(0, width - static_cast<int>(s.size())), '0') + s;
}

namespace {

json attributes_json(const ToyAttributes& a) {
  json j = json::object();
  for (Attribute attr : kCanonicalOrder) j[attribute_name(attr)] = a.value(attr);
  return j;
}

ToyAttributes attributes_from_json(const json& j) {
  ToyAttributes a;
  for (Attribute attr : kCanonicalOrder) a.set(attr, j.at(attribute_name(attr)).get<int>());
  return a;
}

void ensure_dir(const std::filesystem::path& p) {
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  if (ec) fail(ErrorKind::io, "cannot create directory " + p.string() + ": " + ec.message());
}

}  // namespace

DatasetSummary write_dataset(std::int64_t n, std::uint64_t seed, const std::filesystem::path& dir, int size) {
  require(n >= 1, ErrorKind::input, "dataset size must be at least 1");
  require(valid_size(size), ErrorKind::config, "toy image size must be 32 or 64, got " + std::to_string(size));
  for (const char* sub : {"images", "masks", "sketches"}) ensure_dir(dir / sub);

  DatasetSummary summary;
  summary.samples = n;
  summary.token_counts.assign(vocab_size(), 0);

  const auto manifest_path = dir / "manifest.jsonl";
  std::ofstream manifest(manifest_path, std::ios::trunc);
  if (!manifest) fail(ErrorKind::io, "cannot open " + manifest_path.string());

  for (std::int64_t id = 0; id < n; ++id) {
    const ToySample s = synthesize_scene(seed, id, size);
    const std::string stem = padded_id(id, n);
    write_png_rgb(dir / "images" / (stem + ".png"), s.image);
    write_png_paletted(dir / "masks" / (stem + ".png"), s.mask, class_colors());
    write_png_bilevel(dir / "sketches" / (stem + ".png"), s.sketch);
    for (int t : s.caption) ++summary.token_counts[t];

    json line = {{"id", stem},
                 {"caption_tokens", s.caption},
                 {"caption", format_caption(s.caption)},
                 {"attributes", attributes_json(s.attributes)}};
    manifest << line.dump() << '\n';
    if (!manifest) fail(ErrorKind::io, "write failed for " + manifest_path.string());
  }
  manifest.close();

  json vocab_json = json::array();
  for (int i = 0; i < vocab_size(); ++i) vocab_json.push_back(token_name(i));
  json meta = {{"samples", n}, {"seed", seed}, {"size", size}, {"classes", kNumClasses}};
  for (auto [name, content] : {std::pair{"vocab.json", vocab_json}, std::pair{"dataset.json", meta}}) {
    std::ofstream out(dir / name, std::ios::trunc);
    out << content.dump(2) << '\n';
    if (!out) fail(ErrorKind::io, "write failed for " + (dir / name).string());
  }
  return summary;
}

Dataset Dataset::open(const std::filesystem::path& dir) {
  Dataset ds;
  ds.dir_ = dir;
  std::ifstream meta_in(dir / "dataset.json");
  if (!meta_in) fail(ErrorKind::io, "missing " + (dir / "dataset.json").string());
  try {
    json meta = json::parse(meta_in);
    ds.size_ = meta.at("size").get<int>();

    std::ifstream in(dir / "manifest.jsonl");
    if (!in) fail(ErrorKind::io, "missing " + (dir / "manifest.jsonl").string());
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      json j = json::parse(line);
      DatasetRecord r;
      r.id = j.at("id").get<std::string>();
      r.caption = j.at("caption_tokens").get<std::vector<int>>();
      r.attributes = attributes_from_json(j.at("attributes"));
      ds.records_.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::input, "malformed dataset metadata in " + dir.string() + ": " + e.what());
  }
  require(!ds.records_.empty(), ErrorKind::input, "dataset " + dir.string() + " is empty");
  return ds;
}

RgbImage Dataset::load_image(std::size_t i) const {
  return read_png_rgb(dir_ / "images" / (record(i).id + ".png"));
}
LabelImage Dataset::load_mask(std::size_t i) const {
  return read_png_indices(dir_ / "masks" / (record(i).id + ".png"));
}
LabelImage Dataset::load_sketch(std::size_t i) const {
  return read_png_indices(dir_ / "sketches" / (record(i).id + ".png"));
}

std::size_t Dataset::heldout_begin() const {
  const std::size_t n = size();
  std::size_t held = n / 10;
  if (held == 0 && n >= 2) held = 1;
  return n - held;
}

}  // namespace ddit::toy

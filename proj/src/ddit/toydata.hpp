#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ddit/raster.hpp"

namespace ddit::toy {

// Semantic mask inventory.
enum MaskClass : std::uint8_t { kBackground = 0, kSkin = 1, kHair = 2, kEyes = 3, kAccessory = 4 };
inline constexpr int kNumClasses = 5;

// Attribute vocabulary sizes.
inline constexpr int kBackgrounds = 4;
inline constexpr int kFaceShapes = 3;
inline constexpr int kHairClasses = 4;
inline constexpr int kEyeClasses = 3;
inline constexpr int kAccessoryValues = 2;

enum class Attribute { background, face_shape, hair, eyes, accessory };
inline constexpr std::array<Attribute, 5> kCanonicalOrder = {
    Attribute::background, Attribute::face_shape, Attribute::hair, Attribute::eyes, Attribute::accessory};

int attribute_cardinality(Attribute a);
const char* attribute_name(Attribute a);

struct ToyAttributes {
  int background = 0;
  int face_shape = 0;
  int hair = 0;
  int eyes = 0;
  bool accessory = false;

  int value(Attribute a) const;
  void set(Attribute a, int v);
  bool operator==(const ToyAttributes&) const = default;
};

struct ToySample {
  RgbImage image;
  LabelImage mask;    // labels in [0, kNumClasses)
  LabelImage sketch;  // {0, 1}
  std::vector<int> caption;
  ToyAttributes attributes;
  std::int64_t sample_id = 0;
};

// ---- caption vocabulary -------------------------------------------------
// One token per attribute value plus the null token (id 0).

inline constexpr int kNullToken = 0;
int vocab_size();
int token_for(Attribute a, int value);
const std::string& token_name(int id);
/// Throws Error{input} for unknown names.
int token_id(std::string_view name);
/// Whitespace-separated token names. An empty string is the null caption.
std::vector<int> parse_caption(std::string_view text);
std::string format_caption(std::span<const int> tokens);
/// Canonical order background -> face -> hair -> eyes -> accessory.
std::vector<int> caption_tokens(const ToyAttributes& attrs);
/// Inverse of caption_tokens; throws Error{input} on non-canonical captions.
ToyAttributes decode_caption(std::span<const int> tokens);
/// Maximum caption length the toy captions use (canonical captions have 5 tokens).
inline constexpr int kCanonicalCaptionLength = 5;

// ---- palette -------------------------------------------------------------

struct PaletteEntry {
  Rgb color;
  std::uint8_t mask_class;
  int attribute_value;  // index within the attribute that colors this class; 0 for fixed colors
};

/// Every flat color the renderer can emit, sorted by mask class.
std::span<const PaletteEntry> palette();
Rgb render_color(std::uint8_t mask_class, const ToyAttributes& attrs);
/// Attribute-independent color per mask class, used for paletted mask files
/// and when rasterizing masks as spatial conditions.
std::span<const Rgb> class_colors();

// ---- synthesis -----------------------------------------------------------

/// Sizes accepted by synthesize_scene.
bool valid_size(int size);

/// Pure function of (seed, sample_id, size). Throws Error{config} on bad size.
ToySample synthesize_scene(std::uint64_t seed, std::int64_t sample_id, int size);

/// Marks both pixels of every 4-neighbour pair whose labels differ.
LabelImage sketch_from_labels(const LabelImage& labels);

// ---- dataset on disk -----------------------------------------------------

struct DatasetSummary {
  std::int64_t samples = 0;
  /// Occurrences of every caption token (indexed by token id) over the set.
  std::vector<std::int64_t> token_counts;
};

/// Writes images/, masks/, sketches/, manifest.jsonl, vocab.json and
/// dataset.json below `dir`. Throws Error{input} for n < 1, Error{io} with
/// the failing path on persistence errors.
DatasetSummary write_dataset(std::int64_t n, std::uint64_t seed, const std::filesystem::path& dir,
                             int size = 32);

struct DatasetRecord {
  std::string id;  // zero-padded, also the file stem
  std::vector<int> caption;
  ToyAttributes attributes;
};

class Dataset {
 public:
  static Dataset open(const std::filesystem::path& dir);

  const std::filesystem::path& dir() const { return dir_; }
  int image_size() const { return size_; }
  std::size_t size() const { return records_.size(); }
  const DatasetRecord& record(std::size_t i) const { return records_.at(i); }

  RgbImage load_image(std::size_t i) const;
  LabelImage load_mask(std::size_t i) const;
  LabelImage load_sketch(std::size_t i) const;

  /// The held-out partition is the last 10% of sample ids (at least one
  /// sample once the set has two or more).
  std::size_t heldout_begin() const;
  std::size_t heldout_count() const { return size() - heldout_begin(); }

 private:
  std::filesystem::path dir_;
  int size_ = 0;
  std::vector<DatasetRecord> records_;
};

std::string padded_id(std::int64_t id, std::int64_t n);

}  // namespace ddit::toy

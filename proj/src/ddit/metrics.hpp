#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ddit/checkpoint.hpp"
#include "ddit/raster.hpp"
#include "ddit/samplers.hpp"
#include "ddit/toydata.hpp"

namespace ddit {

/// Single-scale SSIM of two (c, h, w) rasters in [0, 1]: Gaussian window 11,
/// sigma 1.5, K1 0.01, K2 0.03, averaged over valid windows and channels.
double ssim(const Tensor3<double>& a, const Tensor3<double>& b);
double ssim(const RgbImage& a, const RgbImage& b);

/// Nearest palette color per pixel; ties resolve to the lowest class.
LabelImage segment_toy(const RgbImage& image);

struct MaskAgreement {
  double pixel_accuracy = 0.0;
  /// NaN for classes absent from both rasters.
  std::vector<double> class_iou;
  double miou = 0.0;
};
MaskAgreement mask_agreement(const LabelImage& pred, const LabelImage& gt, int num_classes = toy::kNumClasses);

struct EvalRow {
  std::string id;
  double ssim = 0.0;
  double pixel_accuracy = 0.0;
  double miou = 0.0;
};

struct EvalReport {
  double ssim = 0.0;
  double pixel_accuracy = 0.0;
  double miou = 0.0;
  int n_samples = 0;
  /// Split-level IoU per class from summed intersections and unions.
  std::vector<double> class_iou;
  std::vector<EvalRow> rows;
};

struct EvalItem {
  std::size_t index = 0;  // dataset index
  std::vector<int> caption;
  LabelImage mask;
  RgbImage image;
};

/// Produces one image per item.
using ImageGenerator = std::function<std::vector<RgbImage>(std::span<const EvalItem>)>;

/// Scores generations for the first `n` held-out samples. n beyond the
/// held-out split is an input error.
EvalReport evaluate_generations(const toy::Dataset& data, std::size_t n, const ImageGenerator& generate,
                                std::size_t batch = 16);

/// Mask-conditioned guided generation from a checkpoint; sample i uses request seed = dataset index.
EvalReport evaluate(const Checkpoint& ck, const toy::Dataset& data, const SamplerConfig& sampler,
                    const GuidanceConfig& guidance, std::size_t n, bool use_ema = true);

/// Flat `key = value` lines.
void write_report(const std::filesystem::path& path, const EvalReport& report);
/// id,ssim,pixel_accuracy,miou per sample, appended.
void append_rows_csv(const std::filesystem::path& path, const EvalReport& report);

}  // namespace ddit

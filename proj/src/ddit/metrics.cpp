#include "ddit/metrics.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include "ddit/codec.hpp"

namespace ddit {

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;

std::vector<double> gaussian_window() {
  std::vector<double> w(kWindow);
  double sum = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - kWindow / 2;
    w[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    sum += w[i];
  }
  for (double& v : w) v /= sum;
  return w;
}

// Separable valid-mode filtering of one plane.
Mat filter_valid(const Mat& x, const std::vector<double>& w) {
  const Eigen::Index H = x.rows() - kWindow + 1, W = x.cols() - kWindow + 1;
  Mat rows(x.rows(), W);
  for (Eigen::Index y = 0; y < x.rows(); ++y)
    for (Eigen::Index c = 0; c < W; ++c) {
      double s = 0.0;
      for (int k = 0; k < kWindow; ++k) s += w[k] * x(y, c + k);
      rows(y, c) = s;
    }
  Mat out(H, W);
  for (Eigen::Index y = 0; y < H; ++y)
    for (Eigen::Index c = 0; c < W; ++c) {
      double s = 0.0;
      for (int k = 0; k < kWindow; ++k) s += w[k] * rows(y + k, c);
      out(y, c) = s;
    }
  return out;
}

// Per-class IoU (NaN where the union is empty) and their mean over present
// classes, summed in extended precision so small rational cases round exactly.
double mean_iou(const std::vector<std::int64_t>& inter, const std::vector<std::int64_t>& uni, std::vector<double>& iou) {
  long double sum = 0.0L;
  int present = 0;
  for (std::size_t k = 0; k < uni.size(); ++k) {
    if (uni[k] == 0) {
      iou.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    const long double v = static_cast<long double>(inter[k]) / static_cast<long double>(uni[k]);
    iou.push_back(static_cast<double>(v));
    sum += v;
    ++present;
  }
  return static_cast<double>(sum / present);
}

Mat plane(const Tensor3<double>& t, int c) {
  Mat m(t.height, t.width);
  for (int y = 0; y < t.height; ++y)
    for (int x = 0; x < t.width; ++x) m(y, x) = t.at(c, y, x);
  return m;
}

}  // namespace

double ssim(const Tensor3<double>& a, const Tensor3<double>& b) {
  require(a.same_shape(b), ErrorKind::input, "ssim: shapes " + a.shape_string() + " and " + b.shape_string() + " differ");
  require(a.height >= kWindow && a.width >= kWindow, ErrorKind::input, "ssim: images smaller than the 11x11 window");
  const double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
  const std::vector<double> w = gaussian_window();
  double total = 0.0;
  Eigen::Index count = 0;
  for (int c = 0; c < a.channels; ++c) {
    const Mat x = plane(a, c), y = plane(b, c);
    const Mat mx = filter_valid(x, w), my = filter_valid(y, w);
    const Mat sxx = filter_valid(x.cwiseProduct(x), w) - mx.cwiseProduct(mx);
    const Mat syy = filter_valid(y.cwiseProduct(y), w) - my.cwiseProduct(my);
    const Mat sxy = filter_valid(x.cwiseProduct(y), w) - mx.cwiseProduct(my);
    const auto num = (2.0 * mx.cwiseProduct(my).array() + C1) * (2.0 * sxy.array() + C2);
    const auto den = (mx.array().square() + my.array().square() + C1) * (sxx.array() + syy.array() + C2);
    total += (num / den).sum();
    count += mx.size();
  }
  return total / static_cast<double>(count);
}

double ssim(const RgbImage& a, const RgbImage& b) { return ssim(to_unit_planar(a), to_unit_planar(b)); }

LabelImage segment_toy(const RgbImage& image) {
  const auto pal = toy::palette();
  LabelImage out(image.width, image.height);
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    const Rgb& p = image.pixels[i];
    long best = std::numeric_limits<long>::max();
    std::uint8_t label = 0;
    for (const toy::PaletteEntry& e : pal) {
      const long dr = long(p.r) - e.color.r, dg = long(p.g) - e.color.g, db = long(p.b) - e.color.b;
      const long d = dr * dr + dg * dg + db * db;
      if (d < best || (d == best && e.mask_class < label)) {
        best = d;
        label = e.mask_class;
      }
    }
    out.labels[i] = label;
  }
  return out;
}

MaskAgreement mask_agreement(const LabelImage& pred, const LabelImage& gt, int num_classes) {
  require(pred.width == gt.width && pred.height == gt.height, ErrorKind::input, "mask_agreement: raster sizes differ");
  require(!gt.labels.empty(), ErrorKind::input, "mask_agreement: empty rasters");
  std::vector<std::int64_t> inter(num_classes, 0), uni(num_classes, 0);
  std::int64_t match = 0;
  for (std::size_t i = 0; i < gt.labels.size(); ++i) {
    const int p = pred.labels[i], g = gt.labels[i];
    require(p < num_classes && g < num_classes, ErrorKind::input, "mask_agreement: label outside the class inventory");
    if (p == g) {
      ++match;
      ++inter[p];
      ++uni[p];
    } else {
      ++uni[p];
      ++uni[g];
    }
  }
  MaskAgreement m;
  m.pixel_accuracy = static_cast<double>(match) / static_cast<double>(gt.labels.size());
  m.miou = mean_iou(inter, uni, m.class_iou);
  return m;
}

EvalReport evaluate_generations(const toy::Dataset& data, std::size_t n, const ImageGenerator& generate,
                                std::size_t batch) {
  const std::size_t begin = data.heldout_begin();
  require(n >= 1, ErrorKind::input, "evaluation needs at least one sample");
  require(n <= data.heldout_count(), ErrorKind::input,
          "requested " + std::to_string(n) + " samples but the held-out split has " + std::to_string(data.heldout_count()));
  EvalReport report;
  const int K = toy::kNumClasses;
  std::vector<std::int64_t> inter(K, 0), uni(K, 0);
  std::int64_t match = 0, pixels = 0;
  double ssim_sum = 0.0;
  for (std::size_t first = 0; first < n; first += batch) {
    std::vector<EvalItem> items;
    for (std::size_t j = first; j < std::min(n, first + batch); ++j) {
      const std::size_t idx = begin + j;
      items.push_back({idx, data.record(idx).caption, data.load_mask(idx), data.load_image(idx)});
    }
    const std::vector<RgbImage> images = generate(items);
    require(images.size() == items.size(), ErrorKind::shape, "generator returned the wrong number of images");
    for (std::size_t j = 0; j < items.size(); ++j) {
      const EvalItem& it = items[j];
      require(images[j].width == it.image.width && images[j].height == it.image.height, ErrorKind::shape,
              "generated image size differs from ground truth");
      const LabelImage seg = segment_toy(images[j]);
      const MaskAgreement m = mask_agreement(seg, it.mask, K);
      EvalRow row{data.record(it.index).id, ssim(images[j], it.image), m.pixel_accuracy, m.miou};
      ssim_sum += row.ssim;
      for (std::size_t p = 0; p < seg.labels.size(); ++p) {
        const int a = seg.labels[p], g = it.mask.labels[p];
        if (a == g) {
          ++match;
          ++inter[a];
          ++uni[a];
        } else {
          ++uni[a];
          ++uni[g];
        }
      }
      pixels += static_cast<std::int64_t>(seg.labels.size());
      report.rows.push_back(std::move(row));
    }
  }
  report.n_samples = static_cast<int>(n);
  report.ssim = ssim_sum / static_cast<double>(n);
  report.pixel_accuracy = static_cast<double>(match) / static_cast<double>(pixels);
  report.miou = mean_iou(inter, uni, report.class_iou);
  return report;
}

EvalReport evaluate(const Checkpoint& ck, const toy::Dataset& data, const SamplerConfig& sampler,
                    const GuidanceConfig& guidance, std::size_t n, bool use_ema) {
  require(sampler_objective(sampler.kind) == ck.config.train.objective, ErrorKind::usage,
          "sampler " + sampler_name(sampler.kind) + " does not match a checkpoint trained with " +
              objective_name(ck.config.train.objective));
  require(data.image_size() == ck.config.data.image_size, ErrorKind::input, "dataset image size differs from the checkpoint's");
  const DiT model = model_from_checkpoint(ck, use_ema);
  const NoiseSchedule sched = ck.config.train.schedule();
  const CodecConfig codec = ck.config.codec;
  auto generate = [&](std::span<const EvalItem> items) {
    std::vector<Latent> conds;
    conds.reserve(items.size());
    for (const EvalItem& it : items) conds.push_back(encode(mask_condition_image(it.mask), codec));
    std::vector<SampleRequest> reqs;
    for (std::size_t j = 0; j < items.size(); ++j)
      reqs.push_back({&conds[j], items[j].caption, static_cast<int>(ModalityFlag::mask), items[j].index});
    const std::vector<Latent> z = sample(model, ck.config.train.objective, reqs, guidance, sampler, sched);
    std::vector<RgbImage> out;
    for (const Latent& l : z) out.push_back(from_signed_planar(decode(l, codec)));
    return out;
  };
  return evaluate_generations(data, n, generate);
}

void write_report(const std::filesystem::path& path, const EvalReport& r) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
  out.precision(10);
  out << "n_samples = " << r.n_samples << "\n";
  out << "ssim = " << r.ssim << "\n";
  out << "pixel_accuracy = " << r.pixel_accuracy << "\n";
  out << "miou = " << r.miou << "\n";
  for (std::size_t k = 0; k < r.class_iou.size(); ++k) out << "iou_class_" << k << " = " << r.class_iou[k] << "\n";
  require(static_cast<bool>(out), ErrorKind::io, "failed writing " + path.string());
}

void append_rows_csv(const std::filesystem::path& path, const EvalReport& r) {
  const bool fresh = !std::filesystem::exists(path);
  std::ofstream out(path, std::ios::app);
  require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
  out.precision(10);
  if (fresh) out << "id,ssim,pixel_accuracy,miou\n";
  for (const EvalRow& row : r.rows) out << row.id << "," << row.ssim << "," << row.pixel_accuracy << "," << row.miou << "\n";
}

}  // namespace ddit

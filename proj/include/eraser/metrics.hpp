#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "eraser/image.hpp"
#include "eraser/io.hpp"

namespace eraser::metrics {

inline constexpr double kPsnrCap = 100.0;  // returned for identical images
inline constexpr double kDefaultTau = 20.0;

namespace detail {

inline void require_same(const ImageTensor& a, const ImageTensor& b, const char* what) {
  if (!a.same_geometry(b)) {
    throw std::invalid_argument(std::string(what) + ": images differ in shape (" + std::to_string(a.height()) + "x" +
                                std::to_string(a.width()) + "x" + std::to_string(a.channels()) + " vs " +
                                std::to_string(b.height()) + "x" + std::to_string(b.width()) + "x" +
                                std::to_string(b.channels()) + ")");
  }
}

// Values rescaled to [0,255] (or [0,1] for unit) in double precision.
inline std::vector<double> scaled(const ImageTensor& img, Range target) {
  const auto [lo, hi] = bounds_of(img.range());
  const auto [tlo, thi] = bounds_of(target);
  const double s = (thi - tlo) / (hi - lo);
  std::vector<double> out(img.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = tlo + (img.values()[i] - lo) * s;
  return out;
}

}  // namespace detail

// ITU-R 601 luma on the byte scale, one value per pixel.
inline std::vector<double> gray(const ImageTensor& img) {
  const std::vector<double> v = detail::scaled(img, Range::Byte);
  if (img.channels() == 1) return v;
  std::vector<double> g(static_cast<std::size_t>(img.height()) * img.width());
  for (std::size_t p = 0; p < g.size(); ++p) g[p] = 0.299 * v[3 * p] + 0.587 * v[3 * p + 1] + 0.114 * v[3 * p + 2];
  return g;
}

// 10·log10(255² / MSE) over all channels.
inline double psnr(const ImageTensor& a, const ImageTensor& b) {
  detail::require_same(a, b, "psnr");
  const auto x = detail::scaled(a, Range::Byte), y = detail::scaled(b, Range::Byte);
  double se = 0;
  for (std::size_t i = 0; i < x.size(); ++i) se += (x[i] - y[i]) * (x[i] - y[i]);
  const double mse = se / static_cast<double>(x.size());
  if (mse == 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(255.0 * 255.0 / mse));
}

// Mean SSIM of the gray images over every position where the 11×11
// Gaussian window (σ = 1.5) fits inside the image.
inline double ssim(const ImageTensor& a, const ImageTensor& b) {
  detail::require_same(a, b, "ssim");
  constexpr int kWin = 11, kRad = kWin / 2;
  if (a.height() < kWin || a.width() < kWin) {
    throw std::invalid_argument("ssim needs images of at least 11x11, got " + std::to_string(a.height()) + "x" +
                                std::to_string(a.width()));
  }
  double kernel[kWin];
  double ksum = 0;
  for (int i = 0; i < kWin; ++i) ksum += kernel[i] = std::exp(-0.5 * (i - kRad) * (i - kRad) / (1.5 * 1.5));
  for (double& k : kernel) k /= ksum;

  const int h = a.height(), w = a.width();
  const auto x = gray(a), y = gray(b);
  // Separable filtering of x, y, x², y², xy; horizontal pass then vertical.
  const int ow = w - 2 * kRad, oh = h - 2 * kRad;
  std::vector<double> src[5];
  for (auto& s : src) s.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    src[0][i] = x[i];
    src[1][i] = y[i];
    src[2][i] = x[i] * x[i];
    src[3][i] = y[i] * y[i];
    src[4][i] = x[i] * y[i];
  }
  std::vector<double> filt[5];
  for (int f = 0; f < 5; ++f) {
    std::vector<double> horiz(static_cast<std::size_t>(h) * ow);
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < ow; ++c) {
        double s = 0;
        for (int k = 0; k < kWin; ++k) s += kernel[k] * src[f][static_cast<std::size_t>(r) * w + c + k];
        horiz[static_cast<std::size_t>(r) * ow + c] = s;
      }
    filt[f].resize(static_cast<std::size_t>(oh) * ow);
    for (int r = 0; r < oh; ++r)
      for (int c = 0; c < ow; ++c) {
        double s = 0;
        for (int k = 0; k < kWin; ++k) s += kernel[k] * horiz[static_cast<std::size_t>(r + k) * ow + c];
        filt[f][static_cast<std::size_t>(r) * ow + c] = s;
      }
  }
  const double c1 = (0.01 * 255) * (0.01 * 255), c2 = (0.03 * 255) * (0.03 * 255);
  double total = 0;
  for (std::size_t i = 0; i < filt[0].size(); ++i) {
    const double mx = filt[0][i], my = filt[1][i];
    const double vx = filt[2][i] - mx * mx, vy = filt[3][i] - my * my, cxy = filt[4][i] - mx * my;
    total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(filt[0].size());
}

// Mean absolute gray-level difference.
inline double age(const ImageTensor& a, const ImageTensor& b) {
  detail::require_same(a, b, "age");
  const auto x = gray(a), y = gray(b);
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) s += std::abs(x[i] - y[i]);
  return s / static_cast<double>(x.size());
}

struct ErrorPixelRates {
  double peps = 0;
  double pceps = 0;
};

// A pixel is an error pixel when its gray difference exceeds tau; it is
// clustered when its four 4-connected neighbours are error pixels too.
// Border pixels lack a full neighbourhood and are never clustered.
inline ErrorPixelRates error_pixel_rates(const ImageTensor& a, const ImageTensor& b, double tau = kDefaultTau) {
  detail::require_same(a, b, "error_pixel_rates");
  const int h = a.height(), w = a.width();
  const auto x = gray(a), y = gray(b);
  std::vector<std::uint8_t> err(x.size());
  std::size_t errors = 0;
  for (std::size_t i = 0; i < x.size(); ++i) errors += err[i] = std::abs(x[i] - y[i]) > tau;
  std::size_t clustered = 0;
  for (int r = 1; r + 1 < h; ++r)
    for (int c = 1; c + 1 < w; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * w + c;
      clustered += err[i] && err[i - 1] && err[i + 1] && err[i - w] && err[i + w];
    }
  const double n = static_cast<double>(x.size());
  return {static_cast<double>(errors) / n, static_cast<double>(clustered) / n};
}

// Mean squared difference on the unit range.
inline double l2_error(const ImageTensor& a, const ImageTensor& b) {
  detail::require_same(a, b, "l2_error");
  const auto x = detail::scaled(a, Range::Unit), y = detail::scaled(b, Range::Unit);
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
  return s / static_cast<double>(x.size());
}

struct ImageMetrics {
  double psnr = 0;
  double ssim = 0;
  double age = 0;
  double peps = 0;
  double pceps = 0;
  double l2 = 0;
};

inline ImageMetrics measure(const ImageTensor& result, const ImageTensor& truth, double tau = kDefaultTau) {
  ImageMetrics m;
  m.psnr = psnr(result, truth);
  m.ssim = ssim(result, truth);
  m.age = age(result, truth);
  const auto rates = error_pixel_rates(result, truth, tau);
  m.peps = rates.peps;
  m.pceps = rates.pceps;
  m.l2 = l2_error(result, truth);
  return m;
}

struct MetricsReport {
  std::map<std::string, ImageMetrics> per_image;
  std::optional<ImageMetrics> aggregate;       // absent when nothing was measured
  std::map<std::string, std::string> failures;  // id -> reason
  double tau = kDefaultTau;

  void finalize() {
    if (per_image.empty()) {
      aggregate.reset();
      return;
    }
    ImageMetrics s;
    for (const auto& [_, m] : per_image) {
      s.psnr += m.psnr;
      s.ssim += m.ssim;
      s.age += m.age;
      s.peps += m.peps;
      s.pceps += m.pceps;
      s.l2 += m.l2;
    }
    const double n = static_cast<double>(per_image.size());
    aggregate = ImageMetrics{s.psnr / n, s.ssim / n, s.age / n, s.peps / n, s.pceps / n, s.l2 / n};
  }
};

inline std::string format_record(const std::string& id, const ImageMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "psnr=%.17g ssim=%.17g age=%.17g peps=%.17g pceps=%.17g l2=%.17g", m.psnr, m.ssim,
                m.age, m.peps, m.pceps, m.l2);
  return "id=" + id + " " + buf;
}

inline std::string summary_table(const MetricsReport& r) {
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-24s %9s %8s %8s %8s %8s %10s\n", "id", "PSNR(dB)", "SSIM", "AGE", "pEPs",
                "pCEPS", "l2");
  os << buf;
  auto row = [&](const std::string& id, const ImageMetrics& m) {
    std::snprintf(buf, sizeof(buf), "%-24s %9.3f %8.4f %8.3f %8.4f %8.4f %10.6f\n", id.c_str(), m.psnr, m.ssim, m.age,
                  m.peps, m.pceps, m.l2);
    os << buf;
  };
  for (const auto& [id, m] : r.per_image) row(id, m);
  if (r.aggregate) {
    row("mean (" + std::to_string(r.per_image.size()) + " images)", *r.aggregate);
  } else {
    os << "mean: absent (no images measured)\n";
  }
  for (const auto& [id, why] : r.failures) os << "failed " << id << ": " << why << '\n';
  os << "error threshold tau = " << r.tau << " gray levels\n";
  return os.str();
}

// metrics.txt holds one record per image, then "aggregate ..." (or
// "aggregate absent") and one "failed id=... reason=..." line per failure;
// summary.txt holds the table.
inline void write_report(const MetricsReport& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream rec(dir / "metrics.txt", std::ios::trunc);
  for (const auto& [id, m] : r.per_image) rec << format_record(id, m) << '\n';
  if (r.aggregate) {
    rec << "aggregate" << format_record("", *r.aggregate).substr(3) << '\n';
  } else {
    rec << "aggregate absent\n";
  }
  for (const auto& [id, why] : r.failures) rec << "failed id=" << id << " reason=" << why << '\n';
  std::ofstream sum(dir / "summary.txt", std::ios::trunc);
  sum << summary_table(r);
  if (!rec || !sum) throw std::runtime_error("cannot write metrics report in " + dir.string());
}

// Runs `model` on every sample's input and scores the result against the
// ground truth. Unreadable samples are recorded and skipped.
using ImageModel = std::function<ImageTensor(const ImageTensor&)>;

inline MetricsReport evaluate(const ImageModel& model, const io::Dataset& dataset, double tau = kDefaultTau) {
  MetricsReport r;
  r.tau = tau;
  for (const auto& id : dataset.ids) {
    try {
      const Sample s = io::load_sample(dataset, id);
      const ImageTensor out = quantize_bytes(to_range(model(s.input), Range::Byte));
      r.per_image[id] = measure(out, s.ground_truth, tau);
    } catch (const std::exception& e) {
      r.failures[id] = e.what();
    }
  }
  r.finalize();
  return r;
}

}  // namespace eraser::metrics

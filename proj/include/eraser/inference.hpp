#pragma once

#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include <vector>

#include "eraser/autograd.hpp"
#include "eraser/generator.hpp"
#include "eraser/image.hpp"

namespace eraser {

// Bilinear/area resize in floating point, keeping the range tag.
inline ImageTensor resize_image(const ImageTensor& img, int height, int width) {
  if (img.height() == height && img.width() == width) return img;
  const int type = img.channels() == 3 ? CV_32FC3 : CV_32FC1;
  const cv::Mat src(img.height(), img.width(), type, const_cast<float*>(img.values().data()));
  cv::Mat dst;
  const bool shrink = height < img.height() && width < img.width();
  cv::resize(src, dst, cv::Size(width, height), 0, 0, shrink ? cv::INTER_AREA : cv::INTER_LINEAR);
  const auto [lo, hi] = bounds_of(img.range());
  std::vector<float> v(reinterpret_cast<const float*>(dst.datastart), reinterpret_cast<const float*>(dst.dataend));
  for (auto& x : v) x = std::clamp(x, static_cast<float>(lo), static_cast<float>(hi));
  return ImageTensor(height, width, img.channels(), img.range(), std::move(v));
}

struct ErasedImage {
  ImageTensor full;     // original size, byte range
  ImageTensor half;     // generator output at 1/2 of the network resolution
  ImageTensor quarter;  // generator output at 1/4 of the network resolution
  ImageTensor score;    // text scores resized to the original size, unit range
};

// Resizes the image to the generator's square input, runs it once and maps
// the full-scale output back to the original size.
template <typename T>
ErasedImage erase_text(const Generator<T>& generator, const ImageTensor& image) {
  const int n = generator.config().image_size;
  const ImageTensor in = resize_image(to_range(image, Range::Byte), n, n);
  NoGradGuard guard;
  const std::vector<ImageTensor> batch{in};
  const auto out = generator.forward(Var<T>(to_batch<T>(batch)));
  ErasedImage r;
  r.full = quantize_bytes(resize_image(to_range(from_batch(out.full.value(), 0), Range::Byte), image.height(),
                                       image.width()));
  r.half = quantize_bytes(from_batch(out.half.value(), 0));
  r.quarter = quantize_bytes(from_batch(out.quarter.value(), 0));

  const Tensor<T>& s = out.score_map.value();
  const int sh = s.dim(2), sw = s.dim(3);
  std::vector<float> sv(static_cast<std::size_t>(sh) * sw);
  for (int y = 0; y < sh; ++y)
    for (int x = 0; x < sw; ++x) sv[static_cast<std::size_t>(y) * sw + x] = static_cast<float>(s.at(0, 0, y, x));
  const cv::Mat small(sh, sw, CV_32FC1, sv.data());
  cv::Mat big;
  cv::resize(small, big, cv::Size(image.width(), image.height()), 0, 0, cv::INTER_NEAREST);
  std::vector<float> bv(reinterpret_cast<const float*>(big.datastart), reinterpret_cast<const float*>(big.dataend));
  for (auto& x : bv) x = std::clamp(x, 0.0f, 1.0f);
  r.score = ImageTensor(image.height(), image.width(), 1, Range::Unit, std::move(bv));
  return r;
}

}  // namespace eraser

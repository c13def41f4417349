#include <gtest/gtest.h>

#include <random>

#include "eraser/image.hpp"

using namespace eraser;

TEST(ToRange, ByteEndpointsMapToSignedEndpoints) {
  const ImageTensor b(1, 3, 1, Range::Byte, {0.f, 255.f, 128.f});
  const ImageTensor s = to_range(b, Range::Signed);
  EXPECT_EQ(s.range(), Range::Signed);
  EXPECT_FLOAT_EQ(s.at(0, 0, 0), -1.0f);
  EXPECT_FLOAT_EQ(s.at(0, 1, 0), 1.0f);
  EXPECT_NEAR(s.at(0, 2, 0), 2.0 * (128.0 / 255.0) - 1.0, 1e-7);
  EXPECT_NEAR(s.at(0, 2, 0), 0.00392, 1e-5);
}

TEST(ToRange, ByteSignedByteRoundTripIsMonotoneAndWithinQuantisation) {
  std::vector<float> v(256);
  for (int i = 0; i < 256; ++i) v[i] = static_cast<float>(i);
  const ImageTensor b(16, 16, 1, Range::Byte, v);
  const ImageTensor back = to_range(to_range(b, Range::Signed), Range::Byte);
  for (int i = 0; i < 256; ++i) {
    EXPECT_NEAR(back.values()[i], v[i], 1.0 / 255.0);
    if (i > 0) {
      EXPECT_GE(back.values()[i], back.values()[i - 1]);
    }
  }
  const ImageTensor u = to_range(b, Range::Unit);
  EXPECT_FLOAT_EQ(u.values()[255], 1.0f);
}

TEST(ToRange, UnknownTagIsRejected) {
  EXPECT_THROW(parse_range("percent"), std::invalid_argument);
  EXPECT_EQ(parse_range("signed"), Range::Signed);
}

TEST(ImageTensor, RejectsValuesOutsideDeclaredRange) {
  EXPECT_THROW(ImageTensor(1, 1, 1, Range::Unit, {1.5f}), std::domain_error);
  EXPECT_THROW(ImageTensor(1, 1, 2, Range::Unit, {0.f, 0.f}), std::invalid_argument);
  EXPECT_THROW(ImageTensor(0, 1, 1, Range::Unit, {}), std::invalid_argument);
}

TEST(DownsampleMask, BlockMaxCases) {
  EXPECT_EQ(downsample_mask(Mask::zeros(4, 4), 2), Mask::zeros(2, 2));
  EXPECT_EQ(downsample_mask(Mask::ones(4, 4), 4), Mask::ones(1, 1));

  // Every single-pixel placement lands in exactly its covering block.
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      std::vector<std::uint8_t> v(16, 0);
      v[y * 4 + x] = 1;
      const Mask m = downsample_mask(Mask(4, 4, v), 2);
      EXPECT_EQ(m.count(), 1u);
      EXPECT_EQ(m.at(y / 2, x / 2), 1);
    }
}

TEST(DownsampleMask, NonDivisibleIsAnError) {
  EXPECT_THROW(downsample_mask(Mask::zeros(6, 6), 4), std::invalid_argument);
}

TEST(DownsampleMask, NeverErasesText) {
  std::mt19937_64 rng(11);
  std::bernoulli_distribution sparse(0.01);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::uint8_t> v(32 * 32);
    for (auto& b : v) b = sparse(rng);
    const Mask m(32, 32, v);
    for (int f : {2, 4}) {
      const Mask d = downsample_mask(m, f);
      EXPECT_EQ(m.count() > 0, d.count() > 0);
      for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x)
          if (m.at(y, x)) {
            EXPECT_EQ(d.at(y / f, x / f), 1);
          }
    }
  }
}

TEST(MaskPyramid, LevelsAreQuarterHalfFull) {
  const MaskPyramid p = build_mask_pyramid(Mask::ones(16, 16));
  ASSERT_EQ(p.levels.size(), 3u);
  EXPECT_EQ(p.levels[0].mask.height(), 4);
  EXPECT_EQ(p.levels[1].mask.height(), 8);
  EXPECT_EQ(p.levels[2].mask.height(), 16);
}

TEST(Compose, HandCases) {
  const ImageTensor out = ImageTensor::filled(2, 2, 3, Range::Unit, 0.2f);
  const ImageTensor gt = ImageTensor::filled(2, 2, 3, Range::Unit, 0.8f);
  EXPECT_EQ(compose(out, gt, Mask::ones(2, 2)), out);
  EXPECT_EQ(compose(out, gt, Mask::zeros(2, 2)), gt);
  const ImageTensor diag = compose(out, gt, Mask(2, 2, {1, 0, 0, 1}));
  for (int c = 0; c < 3; ++c) {
    EXPECT_FLOAT_EQ(diag.at(0, 0, c), 0.2f);
    EXPECT_FLOAT_EQ(diag.at(0, 1, c), 0.8f);
    EXPECT_FLOAT_EQ(diag.at(1, 0, c), 0.8f);
    EXPECT_FLOAT_EQ(diag.at(1, 1, c), 0.2f);
  }
  EXPECT_THROW(compose(out, gt, Mask::ones(3, 3)), std::invalid_argument);
}

TEST(Compose, SelectsByMaskForRandomInputs) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<float> u(-1.f, 1.f);
  std::bernoulli_distribution bit(0.3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<float> a(8 * 8 * 3), b(8 * 8 * 3);
    std::vector<std::uint8_t> m(64);
    for (auto& v : a) v = u(rng);
    for (auto& v : b) v = u(rng);
    for (auto& v : m) v = bit(rng);
    const ImageTensor out(8, 8, 3, Range::Signed, a), gt(8, 8, 3, Range::Signed, b);
    const Mask mask(8, 8, m);
    const ImageTensor r = compose(out, gt, mask);
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x)
        for (int c = 0; c < 3; ++c) EXPECT_EQ(r.at(y, x, c), mask.at(y, x) ? out.at(y, x, c) : gt.at(y, x, c));
  }
}

TEST(Sample, ValidationCatchesMisalignment) {
  Sample s{ImageTensor::filled(4, 4, 3, Range::Byte, 0), ImageTensor::filled(4, 4, 3, Range::Byte, 0),
           Mask::zeros(2, 2), "bad"};
  EXPECT_THROW(validate(s), std::invalid_argument);
  s.mask = Mask::zeros(4, 4);
  EXPECT_NO_THROW(validate(s));
  EXPECT_TRUE(outside_mask_identical(s));
}

TEST(Batch, RoundTripsThroughNetworkLayout) {
  std::vector<float> v(4 * 4 * 3);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(i % 256);
  const ImageTensor img(4, 4, 3, Range::Byte, v);
  const std::vector<ImageTensor> imgs{img};
  const Tensor<float> t = to_batch<float>(std::span<const ImageTensor>(imgs));
  EXPECT_EQ(t.shape(), (Shape{1, 3, 4, 4}));
  const ImageTensor back = quantize_bytes(from_batch(t, 0));
  EXPECT_EQ(back, img);
}

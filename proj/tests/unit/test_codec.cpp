#include "multidiff/codec.hpp"
#include "multidiff/synthdata.hpp"

#include <doctest.h>

#include <array>
#include <cmath>

using namespace multidiff;

namespace {

Matrix scene_rows(std::uint64_t first, int count) {
  Matrix out(count * 4, 3 * 16 * 16);
  int r = 0;
  for (int i = 0; i < count; ++i) {
    const Scene s = generate_scene(first + static_cast<std::uint64_t>(i), 16);
    for (const auto& name : kSynthModalities) {
      const Image img = to_channels(s.modalities.at(name), 3);
      std::copy(img.data.begin(), img.data.end(), out.row(r++).data());
    }
  }
  return out;
}

}  // namespace

TEST_CASE("identity codec is the affine map to [-1, 1]") {
  const Shape3 shape{1, 4, 4};
  const Codec codec = Codec::identity(shape);
  CHECK(codec.spec().latent_shape == shape);

  const Matrix half = Matrix::Constant(2, 16, 0.5f);
  CHECK(codec.encode(half).isZero(0.0f));
  CHECK(codec.decode(Matrix::Zero(1, 16)) == Matrix::Constant(1, 16, 0.5f));

  Rng rng(1);
  const Matrix x = (Matrix::Random(3, 16).array() * 0.5f + 0.5f).matrix();
  const Matrix z = codec.encode(x);
  CHECK(z.maxCoeff() <= 1.0f);
  CHECK(z.minCoeff() >= -1.0f);
  CHECK((codec.decode(z) - x).cwiseAbs().maxCoeff() < 1e-6f);

  Matrix big = Matrix::Zero(1, 16);
  big(0, 3) = 3.0f;
  big(0, 4) = -3.0f;
  const Matrix d = codec.decode(big);
  CHECK(d(0, 3) == 1.0f);
  CHECK(d(0, 4) == 0.0f);
}

TEST_CASE("codec shape and range checks") {
  const Codec codec = Codec::identity(Shape3{1, 4, 4});
  CHECK_THROWS_AS(codec.encode(Matrix::Zero(1, 15)), ValidationError);
  CHECK_THROWS_AS(codec.encode(Matrix::Constant(1, 16, 1.5f)), ValidationError);
  CHECK_THROWS_AS(codec.decode(Matrix::Zero(1, 17)), ValidationError);
  CHECK_THROWS_AS(Codec::tiny_autoencoder(Shape3{3, 10, 10}, 0), ValidationError);
  CHECK(parse_codec_kind("tiny_autoencoder") == CodecKind::tiny_autoencoder);
  CHECK_THROWS_AS(parse_codec_kind("vqgan"), ValidationError);
}

TEST_CASE("tiny autoencoder shapes, stochastic encode and serialization") {
  const Codec codec = Codec::tiny_autoencoder(Shape3{3, 16, 16}, 4);
  CHECK(codec.spec().latent_shape == Shape3{4, 4, 4});
  const Matrix x = scene_rows(0, 2);
  const Matrix mean = codec.encode(x);
  CHECK(mean.cols() == 64);
  CHECK(codec.encode(x) == mean);
  Rng rng(1);
  CHECK_FALSE(codec.encode(x, &rng) == mean);
  const Matrix y = codec.decode(mean);
  CHECK(y.cols() == 3 * 16 * 16);
  CHECK(y.minCoeff() >= 0.0f);
  CHECK(y.maxCoeff() <= 1.0f);

  const Codec copy = Codec::from_tensors(codec.to_tensors());
  CHECK(copy.encode(x) == mean);
  CHECK(copy.decode(mean) == y);
  CHECK(Codec::from_tensors(Codec::identity(Shape3{3, 16, 16}).to_tensors()).spec().kind == CodecKind::identity_pixel);
  CHECK_THROWS_AS(Codec::from_tensors({}), ValidationError);
}

TEST_CASE("tiny autoencoder reconstructs held-out synthetic scenes") {
  Codec codec = Codec::tiny_autoencoder(Shape3{3, 16, 16}, 7);
  codec.train(scene_rows(0, 256), AutoencoderTrainConfig{});

  // Rows of scene_rows cycle through the modalities in canonical order.
  const Matrix held_out = scene_rows(10000, 64);
  const Matrix recon = codec.decode(codec.encode(held_out));
  std::array<double, 4> mse{};
  for (Eigen::Index r = 0; r < held_out.rows(); ++r)
    mse[static_cast<std::size_t>(r % 4)] += (recon.row(r) - held_out.row(r)).squaredNorm();
  for (auto& v : mse) v /= static_cast<double>(held_out.size() / 4);

  // Speckle is independent per pixel, so its variance is a floor no 12x code can beat.
  SceneParams clean;
  clean.speckle_std = 0.0;
  double speckle_floor = 0.0;
  for (std::uint64_t i = 0; i < 64; ++i) {
    const Scene a = generate_scene(10000 + i, 16);
    const Scene b = generate_scene(10000 + i, 16, clean);
    const auto& noisy = a.modalities.at("radar_like").data;
    const auto& ideal = b.modalities.at("radar_like").data;
    for (std::size_t k = 0; k < noisy.size(); ++k) speckle_floor += std::pow(noisy[k] - ideal[k], 2);
  }
  speckle_floor /= 64.0 * 256.0;

  MESSAGE("held-out mse: dem_hillshade " << mse[0] << ", optical " << mse[1] << ", radar_like " << mse[2]
                                         << " (speckle floor " << speckle_floor << "), optical_hazy " << mse[3]);
  CHECK(mse[1] < 0.01);
  CHECK(mse[3] < 0.01);
  CHECK(mse[2] < speckle_floor + 0.01);
  // TODO: hillshade of a 1/f^2.2 terrain is close to spectrally white at 16 px, so 4 latents per
  // 4x4 block leave ~0.03 error; a wider latent would be needed to bring it under 0.01.
  CHECK(mse[0] < 0.05);

  // latents are normalized to unit scale
  const Matrix z = codec.encode(held_out);
  const double var = (z.array() - z.mean()).square().mean();
  CHECK(var == doctest::Approx(1.0).epsilon(0.3));
}

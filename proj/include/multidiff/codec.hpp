#pragma once

#include "multidiff/checkpoint.hpp"
#include "multidiff/nn.hpp"
#include "multidiff/params.hpp"
#include "multidiff/types.hpp"

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace multidiff {

enum class CodecKind { identity_pixel, tiny_autoencoder };

const char* to_string(CodecKind kind);
CodecKind parse_codec_kind(const std::string& name);

struct CodecSpec {
  CodecKind kind = CodecKind::identity_pixel;
  Shape3 image_shape{3, 16, 16};
  Shape3 latent_shape{3, 16, 16};
  // latent = scale * raw + shift; identity uses raw = image, scale 2, shift -1.
  float scale = 2.0f;
  float shift = -1.0f;
};

struct AutoencoderTrainConfig {
  int steps = 3000;
  int batch_size = 64;
  double lr = 2e-3;
  double kl_weight = 1e-4;
  std::uint64_t seed = 0;
};

/// Image <-> latent boundary shared by every modality. Batches hold one flattened
/// (C, H, W) image or latent per row.
class Codec {
 public:
  static Codec identity(const Shape3& image_shape);
  /// Untrained autoencoder with a 4x spatial downsample into 4 latent channels.
  static Codec tiny_autoencoder(const Shape3& image_shape, std::uint64_t seed);

  [[nodiscard]] const CodecSpec& spec() const { return spec_; }

  /// Images in [0, 1] to latents. The autoencoder samples its Gaussian latent when `rng`
  /// is given and returns the mean otherwise.
  [[nodiscard]] Matrix encode(const Matrix& images, Rng* rng = nullptr) const;
  /// Latents to images, clamped to [0, 1].
  [[nodiscard]] Matrix decode(const Matrix& latents) const;

  /// Fits the autoencoder by reconstruction + KL, then sets the latent scale so encoded
  /// means have unit standard deviation. Returns the final reconstruction MSE.
  double train(const Matrix& images, const AutoencoderTrainConfig& config, std::ostream* log = nullptr);

  /// Parameters under the "codec/" namespace; empty for the identity codec's weights.
  [[nodiscard]] std::vector<NamedTensor> to_tensors() const;
  static Codec from_tensors(const std::vector<NamedTensor>& tensors);

 private:
  struct Autoencoder {
    ParameterSet<float> params;
    nn::Linear enc1, enc2, dec1, dec2;
  };
  struct EncodeCache {
    Matrix cols, pre, act;
  };
  struct DecodeCache {
    Matrix cols, pre, act;
  };

  Codec() = default;
  void check_images(const Matrix& images) const;
  Matrix encoder_stats(const Matrix& images, EncodeCache* cache) const;   // (B*L x 8)
  Matrix decoder_raw(const Matrix& raw_latents, DecodeCache* cache) const;  // (B x image)

  CodecSpec spec_;
  std::optional<Autoencoder> ae_;
};

}  // namespace multidiff

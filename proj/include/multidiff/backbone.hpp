#pragma once

#include "multidiff/nn.hpp"
#include "multidiff/params.hpp"
#include "multidiff/types.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace multidiff {

/// Per-sample, per-modality diffusion times: (batch, num_modalities).
using TimestepMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ModelConfig {
  int num_modalities = 4;
  Shape3 latent_shape{3, 16, 16};
  int patch_size = 2;
  int embed_dim = 128;
  int depth = 8;  // depth/2 in-blocks followed by depth/2 out-blocks
  int num_heads = 4;
  double mlp_ratio = 4.0;
  double dropout_rate = 0.0;
  // Per-modality token dropout; overrides dropout_rate when non-empty.
  std::vector<double> modality_dropout;
  // Largest timestep accepted by the time embedders.
  int num_timesteps = 1000;
  // Long shallow-to-deep skips between in-block k and out-block depth-1-k.
  bool long_skip = true;

  void validate() const;

  [[nodiscard]] int tokens_per_modality() const;
  [[nodiscard]] int sequence_length() const { return num_modalities * (1 + tokens_per_modality()); }
  [[nodiscard]] int patch_dim() const {
    return patch_size * patch_size * latent_shape.channels;
  }
  [[nodiscard]] int mlp_hidden() const;
  [[nodiscard]] int time_hidden() const { return 4 * embed_dim; }
  [[nodiscard]] double dropout_for(int modality) const;

  /// d=128, depth 8, 4 heads over four 3x16x16 pixel latents.
  static ModelConfig desk_default();
  /// d=512, depth 12 (6 in + 6 out), patch 2 over four 4x32x32 latents.
  static ModelConfig paper_scale();
  /// Two modalities of 1x4x4, d=8, depth 2, one head; used for gradient checks.
  static ModelConfig tiny();

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Rearranges a batch of latents (B x C*H*W) into non-overlapping p x p patches,
/// (B*N x p*p*C), patches in row-major grid order, each patch laid out (c, dy, dx).
template <typename T>
MatrixT<T> patchify_layout(const MatrixT<T>& latents, const Shape3& shape, int patch);

/// Exact inverse of patchify_layout.
template <typename T>
MatrixT<T> unpatchify(const MatrixT<T>& tokens, const Shape3& shape, int patch);

template <typename T>
struct BlockCache {
  nn::LayerNormCache<T> ln1;
  nn::LayerNormCache<T> ln2;
  MatrixT<T> ln1_out;
  MatrixT<T> qkv;
  std::vector<MatrixT<T>> probs;  // one L x L softmax per (sample, head)
  MatrixT<T> attn_out;
  MatrixT<T> ln2_out;
  MatrixT<T> mlp_pre;
  MatrixT<T> mlp_act;
};

/// Activations retained by a forward pass for backpropagation.
template <typename T>
struct ForwardCache {
  int batch = 0;
  std::vector<MatrixT<T>> patches;
  std::vector<MatrixT<T>> time_encoding;
  std::vector<MatrixT<T>> time_pre;
  std::vector<MatrixT<T>> time_hidden;
  MatrixT<T> dropout_scale;  // (B, L); empty when no dropout was applied
  std::vector<BlockCache<T>> blocks;
  std::vector<MatrixT<T>> skip_inputs;
  std::vector<nn::LayerNormCache<T>> head_norm;
  std::vector<MatrixT<T>> head_in;
};

/// Sinusoidal encoding of integer timesteps, base 10000, width `dim` (sin half then cos half).
template <typename T>
MatrixT<T> timestep_encoding(std::span<const int> timesteps, int dim);

/// Skip-connected transformer noise predictor over a joint token sequence
/// [e_1..e_M, h_1..h_M] with one time token per modality.
template <typename T>
class Denoiser {
 public:
  explicit Denoiser(ModelConfig config);

  /// Truncated-normal init (std 0.02), unit layer-norm gains, zeroed output heads.
  void initialize(std::uint64_t seed);

  [[nodiscard]] const ModelConfig& config() const { return config_; }
  [[nodiscard]] ParameterSet<T>& parameters() { return params_; }
  [[nodiscard]] const ParameterSet<T>& parameters() const { return params_; }

  /// latents[m] is (B x C*H*W); timesteps is (B x M). Returns per-modality noise
  /// predictions with the same shapes. Dropout is active only when `dropout_rng` is given.
  std::vector<MatrixT<T>> forward(std::span<const MatrixT<T>> latents, const TimestepMatrix& timesteps,
                                  ForwardCache<T>* cache = nullptr, Rng* dropout_rng = nullptr) const;

  /// Accumulates dL/dparams into `grads` (same layout as parameters()).
  void backward(const ForwardCache<T>& cache, std::span<const MatrixT<T>> grad_outputs,
                std::span<T> grads) const;

  /// Patch tokens of one modality, (B*N x d), before positional embedding.
  [[nodiscard]] MatrixT<T> embed_patches(int modality, const MatrixT<T>& latents) const;

 private:
  struct Block {
    nn::LayerNorm ln1;
    nn::Linear qkv;
    nn::Linear proj;
    nn::LayerNorm ln2;
    nn::Linear fc1;
    nn::Linear fc2;
  };
  struct Head {
    nn::LayerNorm norm;
    nn::Linear out;
  };
  struct TimeEmbed {
    nn::Linear fc1;
    nn::Linear fc2;
  };

  MatrixT<T> block_forward(const Block& block, const MatrixT<T>& x, int batch,
                           BlockCache<T>* cache) const;
  MatrixT<T> block_backward(const Block& block, const BlockCache<T>& cache, const MatrixT<T>& dy,
                            int batch, T* grads) const;
  void validate_inputs(std::span<const MatrixT<T>> latents, const TimestepMatrix& timesteps) const;

  ModelConfig config_;
  ParameterSet<T> params_;
  std::vector<nn::Linear> patch_embed_;
  std::vector<TimeEmbed> time_embed_;
  std::size_t pos_embed_ = 0;
  std::vector<Block> blocks_;
  std::vector<nn::Linear> skip_proj_;  // one per out-block
  std::vector<Head> heads_;
};

extern template class Denoiser<float>;
extern template class Denoiser<double>;

/// Single-scene convenience wrapper: one latent per modality, each carrying its timestep.
std::vector<LatentTensor> forward_denoise(const Denoiser<float>& model,
                                          const std::vector<LatentTensor>& latents);

}  // namespace multidiff

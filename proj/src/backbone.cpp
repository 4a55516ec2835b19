#include "multidiff/backbone.hpp"

#include <cmath>
#include <string>

namespace multidiff {

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ValidationError("model config: " + msg); };
  if (num_modalities < 1) fail("num_modalities must be positive");
  if (latent_shape.channels < 1 || latent_shape.height < 1 || latent_shape.width < 1)
    fail("latent shape must be positive");
  if (patch_size < 1) fail("patch_size must be positive");
  if (latent_shape.height % patch_size != 0 || latent_shape.width % patch_size != 0)
    fail("latent height/width must be divisible by patch_size");
  if (embed_dim < 2 || embed_dim % 2 != 0) fail("embed_dim must be even");
  if (num_heads < 1 || embed_dim % num_heads != 0) fail("embed_dim must be divisible by num_heads");
  if (depth < 2 || depth % 2 != 0) fail("depth must be a positive even number");
  if (!(mlp_ratio > 0.0)) fail("mlp_ratio must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) fail("dropout_rate must be in [0, 1)");
  if (!modality_dropout.empty()) {
    if (static_cast<int>(modality_dropout.size()) != num_modalities)
      fail("modality_dropout needs one rate per modality");
    for (double r : modality_dropout)
      if (!(r >= 0.0 && r < 1.0)) fail("modality dropout rates must be in [0, 1)");
  }
  if (num_timesteps < 1) fail("num_timesteps must be positive");
}

int ModelConfig::tokens_per_modality() const {
  return (latent_shape.height / patch_size) * (latent_shape.width / patch_size);
}

int ModelConfig::mlp_hidden() const {
  return static_cast<int>(std::lround(mlp_ratio * embed_dim));
}

double ModelConfig::dropout_for(int modality) const {
  if (!modality_dropout.empty()) return modality_dropout[static_cast<std::size_t>(modality)];
  return dropout_rate;
}

ModelConfig ModelConfig::desk_default() { return ModelConfig{}; }

ModelConfig ModelConfig::paper_scale() {
  ModelConfig c;
  c.latent_shape = {4, 32, 32};
  c.embed_dim = 512;
  c.depth = 12;
  c.num_heads = 8;
  return c;
}

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.num_modalities = 2;
  c.latent_shape = {1, 4, 4};
  c.patch_size = 2;
  c.embed_dim = 8;
  c.depth = 2;
  c.num_heads = 1;
  c.mlp_ratio = 2.0;
  c.num_timesteps = 50;
  return c;
}

template <typename T>
MatrixT<T> patchify_layout(const MatrixT<T>& latents, const Shape3& shape, int patch) {
  if (latents.cols() != shape.size())
    throw ValidationError("patchify: latent size " + std::to_string(latents.cols()) +
                          " does not match shape " + to_string(shape));
  if (shape.height % patch != 0 || shape.width % patch != 0)
    throw ValidationError("patchify: spatial size not divisible by patch size");
  const int gh = shape.height / patch;
  const int gw = shape.width / patch;
  const int n = gh * gw;
  const int pd = patch * patch * shape.channels;
  const int hw = shape.height * shape.width;
  MatrixT<T> out(latents.rows() * n, pd);
  for (Eigen::Index b = 0; b < latents.rows(); ++b) {
    const T* src = latents.row(b).data();
    for (int gy = 0; gy < gh; ++gy)
      for (int gx = 0; gx < gw; ++gx) {
        T* dst = out.row(b * n + gy * gw + gx).data();
        for (int c = 0; c < shape.channels; ++c)
          for (int dy = 0; dy < patch; ++dy)
            for (int dx = 0; dx < patch; ++dx)
              *dst++ = src[c * hw + (gy * patch + dy) * shape.width + gx * patch + dx];
      }
  }
  return out;
}

template <typename T>
MatrixT<T> unpatchify(const MatrixT<T>& tokens, const Shape3& shape, int patch) {
  const int gh = shape.height / patch;
  const int gw = shape.width / patch;
  const int n = gh * gw;
  const int pd = patch * patch * shape.channels;
  if (tokens.cols() != pd)
    throw ValidationError("unpatchify: token width " + std::to_string(tokens.cols()) +
                          " does not match patch size " + std::to_string(pd));
  if (n == 0 || tokens.rows() % n != 0)
    throw ValidationError("unpatchify: token count " + std::to_string(tokens.rows()) +
                          " is not a multiple of " + std::to_string(n));
  const Eigen::Index batch = tokens.rows() / n;
  const int hw = shape.height * shape.width;
  MatrixT<T> out(batch, shape.size());
  for (Eigen::Index b = 0; b < batch; ++b) {
    T* dst = out.row(b).data();
    for (int gy = 0; gy < gh; ++gy)
      for (int gx = 0; gx < gw; ++gx) {
        const T* src = tokens.row(b * n + gy * gw + gx).data();
        for (int c = 0; c < shape.channels; ++c)
          for (int dy = 0; dy < patch; ++dy)
            for (int dx = 0; dx < patch; ++dx)
              dst[c * hw + (gy * patch + dy) * shape.width + gx * patch + dx] = *src++;
      }
  }
  return out;
}

template <typename T>
MatrixT<T> timestep_encoding(std::span<const int> timesteps, int dim) {
  const int half = dim / 2;
  MatrixT<T> out = MatrixT<T>::Zero(static_cast<Eigen::Index>(timesteps.size()), dim);
  for (std::size_t i = 0; i < timesteps.size(); ++i) {
    for (int j = 0; j < half; ++j) {
      const double freq = std::exp(-std::log(10000.0) * j / half);
      const double arg = timesteps[i] * freq;
      out(static_cast<Eigen::Index>(i), j) = static_cast<T>(std::sin(arg));
      out(static_cast<Eigen::Index>(i), half + j) = static_cast<T>(std::cos(arg));
    }
  }
  return out;
}

template <typename T>
Denoiser<T>::Denoiser(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  const int m_count = config_.num_modalities;
  const int d = config_.embed_dim;
  for (int m = 0; m < m_count; ++m) {
    const auto prefix = "patch_embed." + std::to_string(m);
    patch_embed_.push_back(nn::Linear::create(params_, prefix, config_.patch_dim(), d));
  }
  for (int m = 0; m < m_count; ++m) {
    const auto prefix = "time_embed." + std::to_string(m);
    time_embed_.push_back({nn::Linear::create(params_, prefix + ".fc1", d, config_.time_hidden()),
                           nn::Linear::create(params_, prefix + ".fc2", config_.time_hidden(), d)});
  }
  pos_embed_ = params_.add("pos_embed", {config_.sequence_length(), d});
  const int half = config_.depth / 2;
  for (int k = 0; k < config_.depth; ++k) {
    const auto prefix = "blocks." + std::to_string(k);
    if (config_.long_skip && k >= half) {
      skip_proj_.push_back(nn::Linear::create(params_, prefix + ".skip", 2 * d, d));
    }
    Block b;
    b.ln1 = nn::LayerNorm::create(params_, prefix + ".ln1", d);
    b.qkv = nn::Linear::create(params_, prefix + ".qkv", d, 3 * d);
    b.proj = nn::Linear::create(params_, prefix + ".proj", d, d);
    b.ln2 = nn::LayerNorm::create(params_, prefix + ".ln2", d);
    b.fc1 = nn::Linear::create(params_, prefix + ".fc1", d, config_.mlp_hidden());
    b.fc2 = nn::Linear::create(params_, prefix + ".fc2", config_.mlp_hidden(), d);
    blocks_.push_back(b);
  }
  for (int m = 0; m < m_count; ++m) {
    const auto prefix = "heads." + std::to_string(m);
    heads_.push_back({nn::LayerNorm::create(params_, prefix + ".norm", d),
                      nn::Linear::create(params_, prefix + ".out", d, config_.patch_dim())});
  }
}

template <typename T>
void Denoiser<T>::initialize(std::uint64_t seed) {
  Rng rng(seed);
  auto ends_with = [](const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  for (const auto& e : params_.entries()) {
    auto values = params_.values().subspan(e.offset, e.size);
    const bool head_out = e.name.rfind("heads.", 0) == 0 && e.name.find(".out.") != std::string::npos;
    if (ends_with(e.name, ".gamma")) {
      std::fill(values.begin(), values.end(), T(1));
    } else if (ends_with(e.name, ".beta") || ends_with(e.name, ".bias") || head_out) {
      std::fill(values.begin(), values.end(), T(0));
    } else {
      nn::truncated_normal(values, 0.02, rng);
    }
  }
}

template <typename T>
void Denoiser<T>::validate_inputs(std::span<const MatrixT<T>> latents,
                                  const TimestepMatrix& timesteps) const {
  const int m_count = config_.num_modalities;
  if (static_cast<int>(latents.size()) != m_count)
    throw ValidationError("forward: expected " + std::to_string(m_count) + " modalities, got " +
                          std::to_string(latents.size()));
  if (timesteps.cols() != m_count)
    throw ValidationError("forward: timestep matrix needs one column per modality");
  for (const auto& l : latents) {
    if (l.rows() != timesteps.rows())
      throw ValidationError("forward: batch size differs between latents and timesteps");
    if (l.cols() != config_.latent_shape.size())
      throw ValidationError("forward: latent size does not match " + to_string(config_.latent_shape));
  }
  if (timesteps.size() > 0 &&
      (timesteps.minCoeff() < 0 || timesteps.maxCoeff() > config_.num_timesteps))
    throw ValidationError("forward: timestep outside [0, " + std::to_string(config_.num_timesteps) + "]");
}

template <typename T>
MatrixT<T> Denoiser<T>::embed_patches(int modality, const MatrixT<T>& latents) const {
  if (modality < 0 || modality >= config_.num_modalities)
    throw ValidationError("embed_patches: modality id out of range");
  auto patches = patchify_layout(latents, config_.latent_shape, config_.patch_size);
  return patch_embed_[static_cast<std::size_t>(modality)].forward(params_.data(), patches);
}

template <typename T>
std::vector<MatrixT<T>> Denoiser<T>::forward(std::span<const MatrixT<T>> latents,
                                             const TimestepMatrix& timesteps,
                                             ForwardCache<T>* cache, Rng* dropout_rng) const {
  validate_inputs(latents, timesteps);
  const int batch = static_cast<int>(timesteps.rows());
  const int m_count = config_.num_modalities;
  const int n = config_.tokens_per_modality();
  const int seq = config_.sequence_length();
  const int d = config_.embed_dim;
  const T* p = params_.data();

  if (cache) {
    *cache = ForwardCache<T>{};
    cache->batch = batch;
    cache->blocks.resize(static_cast<std::size_t>(config_.depth));
  }

  MatrixT<T> x(static_cast<Eigen::Index>(batch) * seq, d);
  for (int m = 0; m < m_count; ++m) {
    const auto mi = static_cast<std::size_t>(m);
    auto patches = patchify_layout(latents[mi], config_.latent_shape, config_.patch_size);
    MatrixT<T> h = patch_embed_[mi].forward(p, patches);
    for (int b = 0; b < batch; ++b)
      x.block(static_cast<Eigen::Index>(b) * seq + m_count + m * n, 0, n, d) =
          h.block(static_cast<Eigen::Index>(b) * n, 0, n, d);

    std::vector<int> steps(static_cast<std::size_t>(batch));
    for (int b = 0; b < batch; ++b) steps[static_cast<std::size_t>(b)] = timesteps(b, m);
    MatrixT<T> enc = timestep_encoding<T>(steps, d);
    MatrixT<T> pre = time_embed_[mi].fc1.forward(p, enc);
    MatrixT<T> hid = nn::silu(pre);
    MatrixT<T> e = time_embed_[mi].fc2.forward(p, hid);
    for (int b = 0; b < batch; ++b) x.row(static_cast<Eigen::Index>(b) * seq + m) = e.row(b);

    if (cache) {
      cache->patches.push_back(std::move(patches));
      cache->time_encoding.push_back(std::move(enc));
      cache->time_pre.push_back(std::move(pre));
      cache->time_hidden.push_back(std::move(hid));
    }
  }

  nn::ConstMap<T> pos(p + pos_embed_, seq, d);
  for (int b = 0; b < batch; ++b) x.block(static_cast<Eigen::Index>(b) * seq, 0, seq, d) += pos;

  bool any_dropout = false;
  for (int m = 0; m < m_count; ++m) any_dropout |= config_.dropout_for(m) > 0.0;
  if (dropout_rng && any_dropout) {
    MatrixT<T> scale = MatrixT<T>::Ones(batch, seq);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int b = 0; b < batch; ++b)
      for (int m = 0; m < m_count; ++m) {
        const double rate = config_.dropout_for(m);
        if (rate <= 0.0) continue;
        for (int j = 0; j < n; ++j)
          scale(b, m_count + m * n + j) = u(*dropout_rng) < rate ? T(0) : static_cast<T>(1.0 / (1.0 - rate));
      }
    for (int b = 0; b < batch; ++b)
      for (int l = 0; l < seq; ++l) x.row(static_cast<Eigen::Index>(b) * seq + l) *= scale(b, l);
    if (cache) cache->dropout_scale = std::move(scale);
  }

  const int half = config_.depth / 2;
  std::vector<MatrixT<T>> skips;
  for (int k = 0; k < half; ++k) {
    x = block_forward(blocks_[static_cast<std::size_t>(k)], x, batch,
                      cache ? &cache->blocks[static_cast<std::size_t>(k)] : nullptr);
    if (config_.long_skip) skips.push_back(x);
  }
  for (int k = half; k < config_.depth; ++k) {
    if (config_.long_skip) {
      MatrixT<T> cat(x.rows(), 2 * d);
      cat.leftCols(d) = x;
      cat.rightCols(d) = skips.back();
      skips.pop_back();
      x = skip_proj_[static_cast<std::size_t>(k - half)].forward(p, cat);
      if (cache) cache->skip_inputs.push_back(std::move(cat));
    }
    x = block_forward(blocks_[static_cast<std::size_t>(k)], x, batch,
                      cache ? &cache->blocks[static_cast<std::size_t>(k)] : nullptr);
  }

  std::vector<MatrixT<T>> outputs;
  for (int m = 0; m < m_count; ++m) {
    const auto mi = static_cast<std::size_t>(m);
    MatrixT<T> tok(static_cast<Eigen::Index>(batch) * n, d);
    for (int b = 0; b < batch; ++b)
      tok.block(static_cast<Eigen::Index>(b) * n, 0, n, d) =
          x.block(static_cast<Eigen::Index>(b) * seq + m_count + m * n, 0, n, d);
    nn::LayerNormCache<T> ln_cache;
    MatrixT<T> normed = heads_[mi].norm.forward(p, tok, cache ? &ln_cache : nullptr);
    MatrixT<T> out = heads_[mi].out.forward(p, normed);
    outputs.push_back(unpatchify(out, config_.latent_shape, config_.patch_size));
    if (cache) {
      cache->head_norm.push_back(std::move(ln_cache));
      cache->head_in.push_back(std::move(normed));
    }
  }
  return outputs;
}

template <typename T>
MatrixT<T> Denoiser<T>::block_forward(const Block& block, const MatrixT<T>& x, int batch,
                                      BlockCache<T>* cache) const {
  const T* p = params_.data();
  const int seq = config_.sequence_length();
  const int d = config_.embed_dim;
  const int heads = config_.num_heads;
  const int dh = d / heads;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  nn::LayerNormCache<T> ln1_cache;
  MatrixT<T> a = block.ln1.forward(p, x, cache ? &ln1_cache : nullptr);
  MatrixT<T> qkv = block.qkv.forward(p, a);
  MatrixT<T> o(x.rows(), d);
  if (cache) cache->probs.resize(static_cast<std::size_t>(batch) * heads);
  for (int b = 0; b < batch; ++b) {
    const Eigen::Index r0 = static_cast<Eigen::Index>(b) * seq;
    for (int h = 0; h < heads; ++h) {
      auto q = qkv.block(r0, h * dh, seq, dh);
      auto k = qkv.block(r0, d + h * dh, seq, dh);
      auto v = qkv.block(r0, 2 * d + h * dh, seq, dh);
      MatrixT<T> s(seq, seq);
      s.noalias() = q * k.transpose();
      s *= scale;
      VectorT<T> row_max = s.rowwise().maxCoeff();
      s.colwise() -= row_max;
      s = s.array().exp().matrix();
      VectorT<T> row_sum = s.rowwise().sum();
      s.array().colwise() /= row_sum.array();
      o.block(r0, h * dh, seq, dh).noalias() = s * v;
      if (cache) cache->probs[static_cast<std::size_t>(b * heads + h)] = std::move(s);
    }
  }
  MatrixT<T> x1 = x + block.proj.forward(p, o);

  nn::LayerNormCache<T> ln2_cache;
  MatrixT<T> u = block.ln2.forward(p, x1, cache ? &ln2_cache : nullptr);
  MatrixT<T> z = block.fc1.forward(p, u);
  MatrixT<T> g = nn::gelu(z);
  MatrixT<T> x2 = x1 + block.fc2.forward(p, g);

  if (cache) {
    cache->ln1 = std::move(ln1_cache);
    cache->ln2 = std::move(ln2_cache);
    cache->ln1_out = std::move(a);
    cache->qkv = std::move(qkv);
    cache->attn_out = std::move(o);
    cache->ln2_out = std::move(u);
    cache->mlp_pre = std::move(z);
    cache->mlp_act = std::move(g);
  }
  return x2;
}

template <typename T>
MatrixT<T> Denoiser<T>::block_backward(const Block& block, const BlockCache<T>& cache,
                                       const MatrixT<T>& dy, int batch, T* grads) const {
  const T* p = params_.data();
  const int seq = config_.sequence_length();
  const int d = config_.embed_dim;
  const int heads = config_.num_heads;
  const int dh = d / heads;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  // MLP branch.
  MatrixT<T> dg = block.fc2.backward(p, grads, cache.mlp_act, dy);
  MatrixT<T> dz = nn::gelu_backward(cache.mlp_pre, dg);
  MatrixT<T> du = block.fc1.backward(p, grads, cache.ln2_out, dz);
  MatrixT<T> dx1 = dy + block.ln2.backward(p, grads, cache.ln2, du);

  // Attention branch.
  MatrixT<T> d_o = block.proj.backward(p, grads, cache.attn_out, dx1);
  MatrixT<T> dqkv(d_o.rows(), 3 * d);
  for (int b = 0; b < batch; ++b) {
    const Eigen::Index r0 = static_cast<Eigen::Index>(b) * seq;
    for (int h = 0; h < heads; ++h) {
      const auto& prob = cache.probs[static_cast<std::size_t>(b * heads + h)];
      auto q = cache.qkv.block(r0, h * dh, seq, dh);
      auto k = cache.qkv.block(r0, d + h * dh, seq, dh);
      auto v = cache.qkv.block(r0, 2 * d + h * dh, seq, dh);
      auto dout = d_o.block(r0, h * dh, seq, dh);
      MatrixT<T> dp(seq, seq);
      dp.noalias() = dout * v.transpose();
      dqkv.block(r0, 2 * d + h * dh, seq, dh).noalias() = prob.transpose() * dout;
      VectorT<T> row_dot = (dp.array() * prob.array()).rowwise().sum();
      dp.colwise() -= row_dot;
      MatrixT<T> ds = (prob.array() * dp.array()).matrix();
      ds *= scale;
      dqkv.block(r0, h * dh, seq, dh).noalias() = ds * k;
      dqkv.block(r0, d + h * dh, seq, dh).noalias() = ds.transpose() * q;
    }
  }
  MatrixT<T> da = block.qkv.backward(p, grads, cache.ln1_out, dqkv);
  return dx1 + block.ln1.backward(p, grads, cache.ln1, da);
}

template <typename T>
void Denoiser<T>::backward(const ForwardCache<T>& cache, std::span<const MatrixT<T>> grad_outputs,
                           std::span<T> grad_span) const {
  if (grad_span.size() != params_.size())
    throw ValidationError("backward: gradient buffer size does not match parameters");
  if (static_cast<int>(grad_outputs.size()) != config_.num_modalities)
    throw ValidationError("backward: expected one output gradient per modality");
  T* grads = grad_span.data();
  const T* p = params_.data();
  const int batch = cache.batch;
  const int m_count = config_.num_modalities;
  const int n = config_.tokens_per_modality();
  const int seq = config_.sequence_length();
  const int d = config_.embed_dim;

  MatrixT<T> dx = MatrixT<T>::Zero(static_cast<Eigen::Index>(batch) * seq, d);
  for (int m = 0; m < m_count; ++m) {
    const auto mi = static_cast<std::size_t>(m);
    auto dout = patchify_layout(grad_outputs[mi], config_.latent_shape, config_.patch_size);
    MatrixT<T> dnormed = heads_[mi].out.backward(p, grads, cache.head_in[mi], dout);
    MatrixT<T> dtok = heads_[mi].norm.backward(p, grads, cache.head_norm[mi], dnormed);
    for (int b = 0; b < batch; ++b)
      dx.block(static_cast<Eigen::Index>(b) * seq + m_count + m * n, 0, n, d) =
          dtok.block(static_cast<Eigen::Index>(b) * n, 0, n, d);
  }

  const int half = config_.depth / 2;
  std::vector<MatrixT<T>> dskips(static_cast<std::size_t>(half));
  for (int k = config_.depth - 1; k >= half; --k) {
    dx = block_backward(blocks_[static_cast<std::size_t>(k)], cache.blocks[static_cast<std::size_t>(k)],
                        dx, batch, grads);
    if (config_.long_skip) {
      const auto j = static_cast<std::size_t>(k - half);
      MatrixT<T> dcat = skip_proj_[j].backward(p, grads, cache.skip_inputs[j], dx);
      dx = dcat.leftCols(d);
      dskips[static_cast<std::size_t>(config_.depth - 1 - k)] = dcat.rightCols(d);
    }
  }
  for (int k = half - 1; k >= 0; --k) {
    if (config_.long_skip) dx += dskips[static_cast<std::size_t>(k)];
    dx = block_backward(blocks_[static_cast<std::size_t>(k)], cache.blocks[static_cast<std::size_t>(k)],
                        dx, batch, grads);
  }

  if (cache.dropout_scale.size() > 0) {
    for (int b = 0; b < batch; ++b)
      for (int l = 0; l < seq; ++l)
        dx.row(static_cast<Eigen::Index>(b) * seq + l) *= cache.dropout_scale(b, l);
  }

  nn::Map<T> dpos(grads + pos_embed_, seq, d);
  for (int b = 0; b < batch; ++b) dpos += dx.block(static_cast<Eigen::Index>(b) * seq, 0, seq, d);

  for (int m = 0; m < m_count; ++m) {
    const auto mi = static_cast<std::size_t>(m);
    MatrixT<T> de(batch, d);
    for (int b = 0; b < batch; ++b) de.row(b) = dx.row(static_cast<Eigen::Index>(b) * seq + m);
    MatrixT<T> dhid = time_embed_[mi].fc2.backward(p, grads, cache.time_hidden[mi], de);
    MatrixT<T> dpre = nn::silu_backward(cache.time_pre[mi], dhid);
    time_embed_[mi].fc1.backward_params(grads, cache.time_encoding[mi], dpre);

    MatrixT<T> dh(static_cast<Eigen::Index>(batch) * n, d);
    for (int b = 0; b < batch; ++b)
      dh.block(static_cast<Eigen::Index>(b) * n, 0, n, d) =
          dx.block(static_cast<Eigen::Index>(b) * seq + m_count + m * n, 0, n, d);
    patch_embed_[mi].backward_params(grads, cache.patches[mi], dh);
  }
}

template MatrixT<float> patchify_layout(const MatrixT<float>&, const Shape3&, int);
template MatrixT<double> patchify_layout(const MatrixT<double>&, const Shape3&, int);
template MatrixT<float> unpatchify(const MatrixT<float>&, const Shape3&, int);
template MatrixT<double> unpatchify(const MatrixT<double>&, const Shape3&, int);
template MatrixT<float> timestep_encoding<float>(std::span<const int>, int);
template MatrixT<double> timestep_encoding<double>(std::span<const int>, int);
template class Denoiser<float>;
template class Denoiser<double>;

std::vector<LatentTensor> forward_denoise(const Denoiser<float>& model,
                                          const std::vector<LatentTensor>& latents) {
  const auto& cfg = model.config();
  if (static_cast<int>(latents.size()) != cfg.num_modalities)
    throw ValidationError("forward_denoise: expected " + std::to_string(cfg.num_modalities) +
                          " latents, got " + std::to_string(latents.size()));
  std::vector<Matrix> inputs;
  TimestepMatrix steps(1, cfg.num_modalities);
  for (int m = 0; m < cfg.num_modalities; ++m) {
    const auto& l = latents[static_cast<std::size_t>(m)];
    if (l.modality_id != m) throw ValidationError("forward_denoise: latents must be in modality order");
    if (!(l.shape == cfg.latent_shape) || static_cast<int>(l.data.size()) != cfg.latent_shape.size())
      throw ValidationError("forward_denoise: latent shape mismatch for modality " + std::to_string(m));
    inputs.push_back(Eigen::Map<const Matrix>(l.data.data(), 1, cfg.latent_shape.size()));
    steps(0, m) = l.timestep;
  }
  auto out = model.forward(inputs, steps);
  std::vector<LatentTensor> result;
  for (int m = 0; m < cfg.num_modalities; ++m) {
    const auto& row = out[static_cast<std::size_t>(m)];
    result.push_back({m, cfg.latent_shape, std::vector<float>(row.data(), row.data() + row.size()),
                      latents[static_cast<std::size_t>(m)].timestep});
  }
  return result;
}

}  // namespace multidiff

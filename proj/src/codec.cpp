#include "multidiff/codec.hpp"

#include <algorithm>
#include <cmath>

namespace multidiff {

namespace {

constexpr int kDown = 4;
constexpr int kLatentChannels = 4;
constexpr int kEncWindow = 8;   // encoder sees an 8x8 window centred on each 4x4 block
constexpr int kDecReach = 1;    // decoder sees a 3x3 neighbourhood of latent cells
constexpr int kHidden = 128;

int clampi(int v, int lo, int hi) { return std::max(lo, std::min(hi, v)); }

}  // namespace

const char* to_string(CodecKind kind) {
  return kind == CodecKind::identity_pixel ? "identity_pixel" : "tiny_autoencoder";
}

CodecKind parse_codec_kind(const std::string& name) {
  if (name == "identity_pixel" || name == "identity") return CodecKind::identity_pixel;
  if (name == "tiny_autoencoder") return CodecKind::tiny_autoencoder;
  throw ValidationError("unknown codec kind '" + name + "'");
}

Codec Codec::identity(const Shape3& image_shape) {
  Codec c;
  c.spec_.kind = CodecKind::identity_pixel;
  c.spec_.image_shape = image_shape;
  c.spec_.latent_shape = image_shape;
  c.spec_.scale = 2.0f;
  c.spec_.shift = -1.0f;
  return c;
}

Codec Codec::tiny_autoencoder(const Shape3& image_shape, std::uint64_t seed) {
  if (image_shape.height % kDown != 0 || image_shape.width % kDown != 0)
    throw ValidationError("tiny_autoencoder: image size must be divisible by 4");
  Codec c;
  c.spec_.kind = CodecKind::tiny_autoencoder;
  c.spec_.image_shape = image_shape;
  c.spec_.latent_shape = {kLatentChannels, image_shape.height / kDown, image_shape.width / kDown};
  c.spec_.scale = 1.0f;
  c.spec_.shift = 0.0f;
  Autoencoder ae;
  const int enc_in = kEncWindow * kEncWindow * image_shape.channels;
  const int dec_in = (2 * kDecReach + 1) * (2 * kDecReach + 1) * kLatentChannels;
  const int dec_out = kDown * kDown * image_shape.channels;
  ae.enc1 = nn::Linear::create(ae.params, "codec/enc1", enc_in, kHidden);
  ae.enc2 = nn::Linear::create(ae.params, "codec/enc2", kHidden, 2 * kLatentChannels);
  ae.dec1 = nn::Linear::create(ae.params, "codec/dec1", dec_in, kHidden);
  ae.dec2 = nn::Linear::create(ae.params, "codec/dec2", kHidden, dec_out);
  Rng rng(seed);
  for (const auto& e : ae.params.entries()) {
    auto v = ae.params.values().subspan(e.offset, e.size);
    if (e.shape.size() == 2) {
      const double std = 1.0 / std::sqrt(static_cast<double>(e.shape[0]));
      nn::truncated_normal(v, std, rng);
    }
  }
  c.ae_ = std::move(ae);
  return c;
}

void Codec::check_images(const Matrix& images) const {
  if (images.cols() != spec_.image_shape.size())
    throw ValidationError("codec: image size does not match " + to_string(spec_.image_shape));
  if (images.size() > 0 && (images.minCoeff() < 0.0f || images.maxCoeff() > 1.0f))
    throw ValidationError("codec: image values must lie in [0, 1]");
}

Matrix Codec::encoder_stats(const Matrix& images, EncodeCache* cache) const {
  const auto& is = spec_.image_shape;
  const auto& ls = spec_.latent_shape;
  const int cells = ls.height * ls.width;
  const int hw = is.height * is.width;
  Matrix cols(images.rows() * cells, kEncWindow * kEncWindow * is.channels);
  for (Eigen::Index b = 0; b < images.rows(); ++b) {
    const float* src = images.row(b).data();
    for (int ly = 0; ly < ls.height; ++ly)
      for (int lx = 0; lx < ls.width; ++lx) {
        float* dst = cols.row(b * cells + ly * ls.width + lx).data();
        for (int c = 0; c < is.channels; ++c)
          for (int dy = 0; dy < kEncWindow; ++dy) {
            const int y = clampi(ly * kDown - 2 + dy, 0, is.height - 1);
            for (int dx = 0; dx < kEncWindow; ++dx) {
              const int x = clampi(lx * kDown - 2 + dx, 0, is.width - 1);
              *dst++ = src[c * hw + y * is.width + x];
            }
          }
      }
  }
  const float* p = ae_->params.data();
  Matrix pre = ae_->enc1.forward(p, cols);
  Matrix act = nn::gelu(pre);
  Matrix stats = ae_->enc2.forward(p, act);
  if (cache) {
    cache->cols = std::move(cols);
    cache->pre = std::move(pre);
    cache->act = std::move(act);
  }
  return stats;
}

Matrix Codec::decoder_raw(const Matrix& raw, DecodeCache* cache) const {
  const auto& is = spec_.image_shape;
  const auto& ls = spec_.latent_shape;
  const int cells = ls.height * ls.width;
  const int reach = 2 * kDecReach + 1;
  Matrix cols(raw.rows() * cells, reach * reach * kLatentChannels);
  for (Eigen::Index b = 0; b < raw.rows(); ++b) {
    const float* src = raw.row(b).data();
    for (int ly = 0; ly < ls.height; ++ly)
      for (int lx = 0; lx < ls.width; ++lx) {
        float* dst = cols.row(b * cells + ly * ls.width + lx).data();
        for (int c = 0; c < kLatentChannels; ++c)
          for (int dy = -kDecReach; dy <= kDecReach; ++dy)
            for (int dx = -kDecReach; dx <= kDecReach; ++dx) {
              const int y = clampi(ly + dy, 0, ls.height - 1);
              const int x = clampi(lx + dx, 0, ls.width - 1);
              *dst++ = src[c * cells + y * ls.width + x];
            }
      }
  }
  const float* p = ae_->params.data();
  Matrix pre = ae_->dec1.forward(p, cols);
  Matrix act = nn::gelu(pre);
  Matrix patches = ae_->dec2.forward(p, act);
  Matrix out(raw.rows(), is.size());
  const int hw = is.height * is.width;
  for (Eigen::Index b = 0; b < raw.rows(); ++b)
    for (int ly = 0; ly < ls.height; ++ly)
      for (int lx = 0; lx < ls.width; ++lx) {
        const float* src = patches.row(b * cells + ly * ls.width + lx).data();
        for (int c = 0; c < is.channels; ++c)
          for (int dy = 0; dy < kDown; ++dy)
            for (int dx = 0; dx < kDown; ++dx)
              out(b, c * hw + (ly * kDown + dy) * is.width + lx * kDown + dx) = *src++;
      }
  if (cache) {
    cache->cols = std::move(cols);
    cache->pre = std::move(pre);
    cache->act = std::move(act);
  }
  return out;
}

namespace {

// stats rows (b*cells + cell) x [mean(4), logvar(4)] -> raw latent rows (b) x (c, cell)
Matrix gather_latent(const Matrix& stats, Eigen::Index batch, int cells, int column_offset) {
  Matrix out(batch, kLatentChannels * cells);
  for (Eigen::Index b = 0; b < batch; ++b)
    for (int cell = 0; cell < cells; ++cell)
      for (int c = 0; c < kLatentChannels; ++c)
        out(b, c * cells + cell) = stats(b * cells + cell, column_offset + c);
  return out;
}

}  // namespace

Matrix Codec::encode(const Matrix& images, Rng* rng) const {
  check_images(images);
  if (spec_.kind == CodecKind::identity_pixel) return (images.array() * spec_.scale + spec_.shift).matrix();
  const int cells = spec_.latent_shape.height * spec_.latent_shape.width;
  Matrix stats = encoder_stats(images, nullptr);
  Matrix raw = gather_latent(stats, images.rows(), cells, 0);
  if (rng) {
    Matrix logvar = gather_latent(stats, images.rows(), cells, kLatentChannels);
    Matrix noise = normal_matrix(raw.rows(), raw.cols(), *rng);
    raw.array() += (0.5f * logvar.array().min(10.0f).max(-10.0f)).exp() * noise.array();
  }
  return (raw.array() * spec_.scale + spec_.shift).matrix();
}

Matrix Codec::decode(const Matrix& latents) const {
  if (latents.cols() != spec_.latent_shape.size())
    throw ValidationError("codec: latent size does not match " + to_string(spec_.latent_shape));
  Matrix raw = ((latents.array() - spec_.shift) / spec_.scale).matrix();
  Matrix images = spec_.kind == CodecKind::identity_pixel ? raw : decoder_raw(raw, nullptr);
  return images.cwiseMax(0.0f).cwiseMin(1.0f);
}

double Codec::train(const Matrix& images, const AutoencoderTrainConfig& config, std::ostream* log) {
  if (spec_.kind != CodecKind::tiny_autoencoder) return 0.0;
  check_images(images);
  if (images.rows() < 1) throw ValidationError("codec training needs images");
  const auto& ls = spec_.latent_shape;
  const int cells = ls.height * ls.width;
  auto& params = ae_->params;
  std::vector<float> m(params.size(), 0.0f), v(params.size(), 0.0f);
  Rng rng(config.seed);
  std::uniform_int_distribution<Eigen::Index> pick(0, images.rows() - 1);
  double last_mse = 0.0;

  for (int step = 1; step <= config.steps; ++step) {
    Matrix x(config.batch_size, images.cols());
    for (int b = 0; b < config.batch_size; ++b) x.row(b) = images.row(pick(rng));
    const Eigen::Index bsz = x.rows();

    EncodeCache ec;
    Matrix stats = encoder_stats(x, &ec);
    Matrix mu = gather_latent(stats, bsz, cells, 0);
    Matrix lv = gather_latent(stats, bsz, cells, kLatentChannels).cwiseMax(-10.0f).cwiseMin(10.0f);
    Matrix noise = normal_matrix(bsz, mu.cols(), rng);
    Matrix sd = (0.5f * lv.array()).exp().matrix();
    Matrix z = (mu.array() + sd.array() * noise.array()).matrix();
    DecodeCache dc;
    Matrix recon = decoder_raw(z, &dc);

    Matrix diff = recon - x;
    const double n_img = static_cast<double>(diff.size());
    const double n_lat = static_cast<double>(mu.size());
    last_mse = diff.squaredNorm() / n_img;

    std::vector<float> grads(params.size(), 0.0f);
    const float* p = params.data();
    float* g = grads.data();
    // Decoder.
    Matrix dpatch(bsz * cells, kDown * kDown * spec_.image_shape.channels);
    const int hw = spec_.image_shape.height * spec_.image_shape.width;
    for (Eigen::Index b = 0; b < bsz; ++b)
      for (int ly = 0; ly < ls.height; ++ly)
        for (int lx = 0; lx < ls.width; ++lx) {
          float* dst = dpatch.row(b * cells + ly * ls.width + lx).data();
          for (int c = 0; c < spec_.image_shape.channels; ++c)
            for (int dy = 0; dy < kDown; ++dy)
              for (int dx = 0; dx < kDown; ++dx)
                *dst++ = static_cast<float>(
                    2.0 * diff(b, c * hw + (ly * kDown + dy) * spec_.image_shape.width + lx * kDown + dx) / n_img);
        }
    Matrix dact = ae_->dec2.backward(p, g, dc.act, dpatch);
    Matrix dpre = nn::gelu_backward(dc.pre, dact);
    Matrix dcols = ae_->dec1.backward(p, g, dc.cols, dpre);
    Matrix dz = Matrix::Zero(bsz, mu.cols());
    for (Eigen::Index b = 0; b < bsz; ++b)
      for (int ly = 0; ly < ls.height; ++ly)
        for (int lx = 0; lx < ls.width; ++lx) {
          const float* src = dcols.row(b * cells + ly * ls.width + lx).data();
          for (int c = 0; c < kLatentChannels; ++c)
            for (int dy = -kDecReach; dy <= kDecReach; ++dy)
              for (int dx = -kDecReach; dx <= kDecReach; ++dx) {
                const int y = clampi(ly + dy, 0, ls.height - 1);
                const int xx = clampi(lx + dx, 0, ls.width - 1);
                dz(b, c * cells + y * ls.width + xx) += *src++;
              }
        }
    // Reparameterization and KL.
    const auto kl = static_cast<float>(config.kl_weight / n_lat);
    Matrix dmu = (dz.array() + kl * mu.array()).matrix();
    Matrix dlv = (dz.array() * 0.5f * sd.array() * noise.array() + kl * 0.5f * (lv.array().exp() - 1.0f)).matrix();
    Matrix dstats(bsz * cells, 2 * kLatentChannels);
    for (Eigen::Index b = 0; b < bsz; ++b)
      for (int cell = 0; cell < cells; ++cell)
        for (int c = 0; c < kLatentChannels; ++c) {
          dstats(b * cells + cell, c) = dmu(b, c * cells + cell);
          dstats(b * cells + cell, kLatentChannels + c) = dlv(b, c * cells + cell);
        }
    Matrix dhid = ae_->enc2.backward(p, g, ec.act, dstats);
    Matrix dhpre = nn::gelu_backward(ec.pre, dhid);
    ae_->enc1.backward_params(g, ec.cols, dhpre);

    const double lr = config.lr * 0.5 * (1.0 + std::cos(3.141592653589793 * (step - 1) / config.steps));
    const double c1 = 1.0 - std::pow(0.9, step);
    const double c2 = 1.0 - std::pow(0.999, step);
    auto values = params.values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      m[i] = 0.9f * m[i] + 0.1f * grads[i];
      v[i] = 0.999f * v[i] + 0.001f * grads[i] * grads[i];
      values[i] -= static_cast<float>(lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + 1e-8));
    }
    if (log && (step % 200 == 0 || step == config.steps))
      *log << "codec step " << step << " mse " << last_mse << '\n';
  }

  // Normalize latents to zero mean, unit standard deviation over the training images.
  spec_.scale = 1.0f;
  spec_.shift = 0.0f;
  Matrix raw = encode(images);
  const double mean = raw.mean();
  const double var = (raw.array() - mean).square().mean();
  const double std = std::sqrt(std::max(var, 1e-12));
  spec_.scale = static_cast<float>(1.0 / std);
  spec_.shift = static_cast<float>(-mean / std);
  return last_mse;
}

std::vector<NamedTensor> Codec::to_tensors() const {
  std::vector<NamedTensor> out;
  const auto& s = spec_;
  out.push_back({"codec/spec", {8},
                 {static_cast<float>(s.kind == CodecKind::identity_pixel ? 0 : 1),
                  static_cast<float>(s.image_shape.channels), static_cast<float>(s.image_shape.height),
                  static_cast<float>(s.image_shape.width), static_cast<float>(s.latent_shape.channels),
                  static_cast<float>(s.latent_shape.height), s.scale, s.shift}});
  if (ae_) {
    for (const auto& e : ae_->params.entries()) {
      auto v = ae_->params.values().subspan(e.offset, e.size);
      out.push_back({e.name, e.shape, std::vector<float>(v.begin(), v.end())});
    }
  }
  return out;
}

Codec Codec::from_tensors(const std::vector<NamedTensor>& tensors) {
  const NamedTensor* spec = nullptr;
  for (const auto& t : tensors)
    if (t.name == "codec/spec") spec = &t;
  if (!spec || spec->data.size() != 8) throw ValidationError("codec tensors lack codec/spec");
  const auto& d = spec->data;
  const Shape3 image{static_cast<int>(d[1]), static_cast<int>(d[2]), static_cast<int>(d[3])};
  Codec c = d[0] == 0.0f ? identity(image) : tiny_autoencoder(image, 0);
  c.spec_.scale = d[6];
  c.spec_.shift = d[7];
  if (c.ae_) {
    std::size_t found = 0;
    for (const auto& e : c.ae_->params.entries())
      for (const auto& t : tensors)
        if (t.name == e.name) {
          if (t.data.size() != e.size) throw ValidationError("codec tensor " + e.name + " has the wrong size");
          std::copy(t.data.begin(), t.data.end(), c.ae_->params.values().begin() + static_cast<std::ptrdiff_t>(e.offset));
          ++found;
        }
    if (found != c.ae_->params.entries().size()) throw ValidationError("codec tensors are incomplete");
  }
  return c;
}

}  // namespace multidiff

#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace multidiff {

template <typename T>
using MatrixT = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using VectorT = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using RowVectorT = Eigen::Matrix<T, 1, Eigen::Dynamic>;

using Matrix = MatrixT<float>;
using Vector = VectorT<float>;

/// A batch of flattened tensors: one row per sample, columns in (channel, row, col) order.
using Batch = Matrix;

using Rng = std::mt19937_64;

// Eigen picks vectorized or scalar paths by address, so buffers that back Eigen maps need a
// fixed alignment for results to be bitwise reproducible across allocations.
template <typename T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;

/// Raised when a caller violates an operation's preconditions.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Shape3 {
  int channels = 1;
  int height = 1;
  int width = 1;

  [[nodiscard]] int size() const { return channels * height * width; }
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

std::string to_string(const Shape3& shape);

/// A single latent of one modality together with its diffusion time.
struct LatentTensor {
  int modality_id = 0;
  Shape3 shape;
  std::vector<float> data;
  int timestep = 0;
};

/// Fill with independent standard normal draws.
template <typename T>
void fill_normal(std::span<T> out, Rng& rng) {
  std::normal_distribution<T> dist(T(0), T(1));
  for (auto& v : out) v = dist(rng);
}

inline Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix m(rows, cols);
  fill_normal(std::span<float>(m.data(), static_cast<std::size_t>(m.size())), rng);
  return m;
}

/// Derive an independent stream seed from a base seed and a call id (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t call_id) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (call_id + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace multidiff

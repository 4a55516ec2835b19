#pragma once

#include "multidiff/types.hpp"

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace multidiff {

/// Named tensors packed into one flat buffer so optimizer and EMA updates are plain
/// vector operations.
template <typename T>
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    std::vector<int> shape;
    std::size_t offset = 0;
    std::size_t size = 0;
  };

  std::size_t add(std::string name, std::vector<int> shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    entries_.push_back({std::move(name), std::move(shape), values_.size(), n});
    values_.resize(values_.size() + n, T(0));
    return entries_.back().offset;
  }

  [[nodiscard]] std::size_t size() const { return values_.size(); }
  [[nodiscard]] const std::vector<Entry>& entries() const { return entries_; }

  [[nodiscard]] std::span<T> values() { return values_; }
  [[nodiscard]] std::span<const T> values() const { return values_; }
  [[nodiscard]] T* data() { return values_.data(); }
  [[nodiscard]] const T* data() const { return values_.data(); }

  [[nodiscard]] std::optional<Entry> find(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return e;
    return std::nullopt;
  }

  [[nodiscard]] std::span<T> tensor(const std::string& name) {
    auto e = find(name);
    if (!e) throw ValidationError("unknown parameter: " + name);
    return std::span<T>(values_).subspan(e->offset, e->size);
  }

  /// Copies every tensor whose name and size also exist in `other`. Returns the count copied.
  template <typename U>
  std::size_t copy_matching_from(const ParameterSet<U>& other) {
    std::size_t copied = 0;
    for (const auto& e : entries_) {
      auto o = other.find(e.name);
      if (!o || o->size != e.size) continue;
      for (std::size_t i = 0; i < e.size; ++i)
        values_[e.offset + i] = static_cast<T>(other.values()[o->offset + i]);
      ++copied;
    }
    return copied;
  }

 private:
  std::vector<Entry> entries_;
  AlignedVector<T> values_;
};

}  // namespace multidiff

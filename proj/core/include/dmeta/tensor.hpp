#pragma once

#include <cstdint>
#include <new>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace dmeta {

/// 64-byte aligned storage for all tensor buffers. A fixed alignment keeps
/// vectorized reductions bit-stable across runs and worker counts; with
/// arbitrary heap alignment the SIMD head/tail split (and therefore the
/// summation order) would depend on allocator history.
template <typename T, std::size_t Alignment>
struct AlignedAllocator {
  using value_type = T;
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U, Alignment>&) {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(Alignment)));
  }
  void deallocate(T* p, std::size_t) noexcept {
    ::operator delete(p, std::align_val_t(Alignment));
  }
  template <typename U>
  struct rebind {
    using other = AlignedAllocator<U, Alignment>;
  };
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator&) { return true; }
  friend bool operator!=(const AlignedAllocator&, const AlignedAllocator&) { return false; }
};

template <typename R>
using AlignedVector = std::vector<R, AlignedAllocator<R, 64>>;

inline std::int64_t shape_numel(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("negative tensor extent");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Dense n-dimensional array in row-major order.
template <typename R>
struct TensorT {
  std::vector<int> shape;
  AlignedVector<R> data;

  TensorT() = default;
  explicit TensorT(std::vector<int> s, R fill = R(0))
      : shape(std::move(s)),
        data(static_cast<std::size_t>(shape_numel(shape)), fill) {}

  static TensorT from(std::vector<int> s, AlignedVector<R> d) {
    if (shape_numel(s) != static_cast<std::int64_t>(d.size())) {
      throw std::invalid_argument("tensor data length does not match shape " +
                                  shape_str(s));
    }
    TensorT t;
    t.shape = std::move(s);
    t.data = std::move(d);
    return t;
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  int dim(std::size_t i) const { return shape.at(i); }
  int ndim() const { return static_cast<int>(shape.size()); }

  R* ptr() { return data.data(); }
  const R* ptr() const { return data.data(); }
  R& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
  R operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

  void fill(R v) { std::fill(data.begin(), data.end(), v); }

  template <typename R2>
  TensorT<R2> cast() const {
    TensorT<R2> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<R2>(data[i]);
    return out;
  }
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

template <typename R>
bool same_shape(const TensorT<R>& a, const TensorT<R>& b) {
  return a.shape == b.shape;
}

template <typename R>
void require_shape(const TensorT<R>& t, const std::vector<int>& shape,
                   const char* what) {
  if (t.shape != shape) {
    throw std::invalid_argument(std::string(what) + ": expected shape " +
                                shape_str(shape) + ", got " + shape_str(t.shape));
  }
}

}  // namespace dmeta

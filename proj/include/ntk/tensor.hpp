#pragma once

#include <cmath>
#include <cstdint>
#include <new>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace ntk {

// 64-byte-aligned storage so Eigen's vectorized kernels always see the same
// pointer alignment; with plain malloc alignment the peeling prologue (and
// therefore the summation order) varies with the heap layout, which breaks
// bitwise run-to-run determinism.
template <class T, size_t Align = 64>
struct AlignedAlloc {
  using value_type = T;
  AlignedAlloc() = default;
  template <class U>
  AlignedAlloc(const AlignedAlloc<U, Align>&) {}
  T* allocate(size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(Align)));
  }
  void deallocate(T* p, size_t) noexcept {
    ::operator delete(p, std::align_val_t(Align));
  }
  template <class U>
  struct rebind {
    using other = AlignedAlloc<U, Align>;
  };
  bool operator==(const AlignedAlloc&) const { return true; }
  bool operator!=(const AlignedAlloc&) const { return false; }
};

using dvec = std::vector<double, AlignedAlloc<double>>;

// Dense row-major tensor of doubles. Kernel work always runs in 64-bit;
// 32-bit training is realized as a compute-precision switch on the matmul
// paths (see Precision in graph.hpp), not as a separate storage type.
struct Tensor {
  std::vector<int> shape;
  dvec data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(count(shape)), 0.0);
  }
  Tensor(std::vector<int> s, const std::vector<double>& d) : shape(std::move(s)) {
    if (static_cast<int64_t>(d.size()) != count(shape))
      throw std::invalid_argument("Tensor: data length does not match shape");
    data.assign(d.begin(), d.end());
  }

  static int64_t count(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) {
      if (d <= 0) throw std::invalid_argument("Tensor: non-positive dimension");
      n *= d;
    }
    return n;
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int> s, double v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  int64_t size() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape.at(static_cast<size_t>(i)); }

  double& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  Tensor reshaped(std::vector<int> s) const {
    if (count(s) != size()) throw std::invalid_argument("reshape: size mismatch");
    Tensor t;
    t.shape = std::move(s);
    t.data = data;
    return t;
  }

  Tensor& operator+=(const Tensor& o) {
    require_same(o);
    for (size_t i = 0; i < data.size(); ++i) data[i] += o.data[i];
    return *this;
  }
  Tensor& operator-=(const Tensor& o) {
    require_same(o);
    for (size_t i = 0; i < data.size(); ++i) data[i] -= o.data[i];
    return *this;
  }
  Tensor& operator*=(double a) {
    for (double& v : data) v *= a;
    return *this;
  }

  void require_same(const Tensor& o) const {
    if (!same_shape(o)) throw std::invalid_argument("Tensor: shape mismatch");
  }
};

inline Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
inline Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
inline Tensor operator*(Tensor a, double s) { return a *= s; }
inline Tensor operator*(double s, Tensor a) { return a *= s; }

inline double dot(const Tensor& a, const Tensor& b) {
  a.require_same(b);
  double s = 0;
  for (size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
  return s;
}

inline double norm(const Tensor& a) { return std::sqrt(dot(a, a)); }

inline double max_abs(const Tensor& a) {
  double m = 0;
  for (double v : a.data) m = std::max(m, std::abs(v));
  return m;
}

inline bool all_finite(const Tensor& a) {
  for (double v : a.data)
    if (!std::isfinite(v)) return false;
  return true;
}

inline void check_finite(const Tensor& a, const std::string& where) {
  if (!all_finite(a)) throw std::runtime_error("non-finite value in " + where);
}

}  // namespace ntk

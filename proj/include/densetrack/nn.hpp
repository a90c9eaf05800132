#pragma once

// Minimal reverse-mode autodiff over dense float32 tensors.
//
// Every op computes each output row from its input rows in a fixed
// summation order that does not depend on the other rows or on the size of
// the other operand dimensions. Frame-isolation and weight-copy identities in
// the model rely on this.

#include <atomic>
#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <string>
#include <vector>

namespace densetrack::nn {

// Process-wide accounting of tensor storage; used for peak-memory
// measurements. A nonzero limit makes allocations beyond it throw
// std::bad_alloc, emulating a device memory budget.
class MemoryStats {
 public:
  static size_t live_bytes();
  static size_t peak_bytes();
  static void reset_peak();
  static void set_limit(size_t bytes);  // 0 = unlimited
  static size_t limit();

  static void on_alloc(size_t bytes);
  static void on_free(size_t bytes);
};

template <class T>
struct TrackingAllocator {
  using value_type = T;
  TrackingAllocator() = default;
  template <class U>
  TrackingAllocator(const TrackingAllocator<U>&) noexcept {}
  T* allocate(size_t n) {
    MemoryStats::on_alloc(n * sizeof(T));
    return static_cast<T*>(::operator new(n * sizeof(T)));
  }
  void deallocate(T* p, size_t n) noexcept {
    MemoryStats::on_free(n * sizeof(T));
    ::operator delete(p);
  }
  template <class U>
  bool operator==(const TrackingAllocator<U>&) const noexcept { return true; }
};

using Buffer = std::vector<float, TrackingAllocator<float>>;

struct Tensor {
  std::vector<int> shape;
  Buffer data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, float fill = 0.0f);
  Tensor(std::vector<int> s, const std::vector<float>& values);

  size_t numel() const { return data.size(); }
  int dim(size_t i) const { return shape.at(i); }
  int rank() const { return static_cast<int>(shape.size()); }
  // Rows of the 2-D view [shape[0], numel/shape[0]].
  int rows() const { return shape.empty() ? 1 : shape[0]; }
  int cols() const { return shape.empty() ? 1 : static_cast<int>(numel() / static_cast<size_t>(shape[0])); }
  float* ptr() { return data.data(); }
  const float* ptr() const { return data.data(); }
  std::string shape_str() const;
};

size_t shape_numel(const std::vector<int>& s);

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // empty until backward reaches this node
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backward_fn;

  Tensor& ensure_grad();
};

// Gradient recording is enabled per thread by default.
bool grad_enabled();
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

Var constant(Tensor t);
Var parameter(Tensor t);

// Builds a node whose gradient is provided by `fn`; `fn` receives the node
// and must accumulate into the parents' grads.
Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn);

// Seeds d(root)/d(root) = 1 for a scalar root and propagates.
void backward(const Var& root);

// Raw kernels, exposed for tests. Row-major; accumulate into c.
// c[m,n] += a[m,k] * b[k,n]
void gemm_nn(const float* a, const float* b, float* c, int m, int k, int n);
// c[m,n] += a[r,m]^T * b[r,n]
void gemm_tn(const float* a, const float* b, float* c, int r, int m, int n);
void transpose(const float* src, float* dst, int rows, int cols);

// Ops.
Var matmul(const Var& a, const Var& b);                         // [m,k]x[k,n]
Var linear(const Var& x, const Var& w, const Var& b);           // x[m,k] w[k,n] b[n]
Var add(const Var& a, const Var& b);                            // same shape
Var add_rowvec(const Var& x, const Var& v);                     // x[m,n] + v[n]
Var scale(const Var& x, float s);
Var gelu(const Var& x);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, float eps = 1e-5f);
// Multi-head self-attention over qkv[T, 3D]; rows attend only within their
// segment. Segments are (begin, length) pairs covering [0, T).
Var attention(const Var& qkv, int heads, const std::vector<std::pair<int, int>>& segments);
Var concat_rows(const std::vector<Var>& parts);
Var gather_rows(const Var& x, const std::vector<int>& rows);
// [F*P, C] with P = gh*gw row-major patches -> [F, C, gh, gw]
Var tokens_to_grid(const Var& x, int frames, int gh, int gw);
// x[F, Ci, H, W], w[Co, Ci*k*k], b[Co]; stride 1, zero padding k/2.
Var conv2d(const Var& x, const Var& w, const Var& b, int kernel);
// Bilinear resize with half-pixel centers.
Var upsample_bilinear(const Var& x, int out_h, int out_w);
Var concat_channels(const Var& a, const Var& b);
Var slice_channels(const Var& x, int c0, int c1);
// 1 + exp(x), floored at 1 + FLT_EPSILON so the result stays strictly above 1.
Var exp_plus_one(const Var& x);
// x[N, 9]: quaternion part (first 4) gets (1,0,0,0) added and is normalized.
Var camera_encoding(const Var& x);

}  // namespace densetrack::nn

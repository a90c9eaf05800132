#include "densetrack/nn.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "densetrack/error.hpp"

namespace densetrack::nn {

namespace {

std::atomic<size_t> g_live{0};
std::atomic<size_t> g_peak{0};
std::atomic<size_t> g_limit{0};

thread_local bool t_grad_enabled = true;

bool needs_grad(const std::vector<Var>& parents) {
  if (!t_grad_enabled) return false;
  for (const Var& p : parents) {
    if (p->requires_grad) return true;
  }
  return false;
}

void check(bool cond, const char* what) {
  if (!cond) fail(ErrorCode::kInvalidArgument, what);
}

void accumulate(Node& parent, const float* g, size_t n) {
  if (!parent.requires_grad) return;
  float* dst = parent.ensure_grad().ptr();
  for (size_t i = 0; i < n; ++i) dst[i] += g[i];
}

void im2col(const float* x, float* col, int channels, int h, int w, int kernel) {
  const int pad = kernel / 2;
  const size_t hw = static_cast<size_t>(h) * w;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        float* row = col + (static_cast<size_t>(c) * kernel * kernel + ky * kernel + kx) * hw;
        const float* src = x + static_cast<size_t>(c) * hw;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          float* out = row + static_cast<size_t>(y) * w;
          if (sy < 0 || sy >= h) {
            std::fill(out, out + w, 0.0f);
            continue;
          }
          for (int xx = 0; xx < w; ++xx) {
            const int sx = xx + kx - pad;
            out[xx] = (sx < 0 || sx >= w) ? 0.0f : src[static_cast<size_t>(sy) * w + sx];
          }
        }
      }
    }
  }
}

void col2im(const float* col, float* dx, int channels, int h, int w, int kernel) {
  const int pad = kernel / 2;
  const size_t hw = static_cast<size_t>(h) * w;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        const float* row = col + (static_cast<size_t>(c) * kernel * kernel + ky * kernel + kx) * hw;
        float* dst = dx + static_cast<size_t>(c) * hw;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          for (int xx = 0; xx < w; ++xx) {
            const int sx = xx + kx - pad;
            if (sx >= 0 && sx < w) dst[static_cast<size_t>(sy) * w + sx] += row[static_cast<size_t>(y) * w + xx];
          }
        }
      }
    }
  }
}

struct AxisWeights {
  std::vector<int> i0, i1;
  std::vector<float> frac;
};

AxisWeights axis_weights(int in, int out) {
  AxisWeights a;
  const double ratio = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const int lo = static_cast<int>(std::floor(src));
    const int hi = std::min(lo + 1, in - 1);
    a.i0.push_back(lo);
    a.i1.push_back(hi);
    a.frac.push_back(static_cast<float>(src - lo));
  }
  return a;
}

constexpr float kGeluC = 0.7978845608028654f;  // sqrt(2/pi)

}  // namespace

size_t MemoryStats::live_bytes() { return g_live.load(); }
size_t MemoryStats::peak_bytes() { return g_peak.load(); }
void MemoryStats::reset_peak() { g_peak.store(g_live.load()); }
void MemoryStats::set_limit(size_t bytes) { g_limit.store(bytes); }
size_t MemoryStats::limit() { return g_limit.load(); }

void MemoryStats::on_alloc(size_t bytes) {
  const size_t lim = g_limit.load();
  const size_t now = g_live.fetch_add(bytes) + bytes;
  if (lim != 0 && now > lim) {
    g_live.fetch_sub(bytes);
    throw std::bad_alloc();
  }
  size_t peak = g_peak.load();
  while (now > peak && !g_peak.compare_exchange_weak(peak, now)) {
  }
}

void MemoryStats::on_free(size_t bytes) { g_live.fetch_sub(bytes); }

size_t shape_numel(const std::vector<int>& s) {
  size_t n = 1;
  for (int d : s) n *= static_cast<size_t>(d);
  return n;
}

Tensor::Tensor(std::vector<int> s, float fill) : shape(std::move(s)), data(shape_numel(shape), fill) {}

Tensor::Tensor(std::vector<int> s, const std::vector<float>& values) : shape(std::move(s)), data(values.begin(), values.end()) {
  if (data.size() != shape_numel(shape)) fail(ErrorCode::kInvalidArgument, "tensor value count does not match shape");
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

Tensor& Node::ensure_grad() {
  if (grad.data.size() != value.data.size()) grad = Tensor(value.shape, 0.0f);
  return grad;
}

bool grad_enabled() { return t_grad_enabled; }
NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

Var constant(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  return n;
}

Var parameter(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  n->requires_grad = true;
  return n;
}

Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (needs_grad(parents)) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward_fn = std::move(fn);
  }
  return n;
}

void backward(const Var& root) {
  check(root->value.numel() == 1, "backward: root must be a scalar");
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->ensure_grad().data[0] += 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->grad.numel() == n->value.numel()) n->backward_fn(*n);
  }
}

void gemm_nn(const float* __restrict a, const float* __restrict b, float* __restrict c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    float* __restrict ci = c + static_cast<size_t>(i) * n;
    const float* ai = a + static_cast<size_t>(i) * k;
    for (int kk = 0; kk < k; ++kk) {
      const float av = ai[kk];
      const float* __restrict bk = b + static_cast<size_t>(kk) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bk[j];
    }
  }
}

void gemm_tn(const float* __restrict a, const float* __restrict b, float* __restrict c, int r, int m, int n) {
  for (int rr = 0; rr < r; ++rr) {
    const float* ar = a + static_cast<size_t>(rr) * m;
    const float* __restrict br = b + static_cast<size_t>(rr) * n;
    for (int i = 0; i < m; ++i) {
      const float av = ar[i];
      float* __restrict ci = c + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * br[j];
    }
  }
}

void transpose(const float* src, float* dst, int rows, int cols) {
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) dst[static_cast<size_t>(j) * rows + i] = src[static_cast<size_t>(i) * cols + j];
  }
}

Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  check(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(0), "matmul: shape mismatch");
  const int m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out({m, n});
  gemm_nn(av.ptr(), bv.ptr(), out.ptr(), m, k, n);
  return make_node(std::move(out), {a, b}, [m, k, n](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const float* g = self.grad.ptr();
    if (pa.requires_grad) {
      Tensor bt({n, k});
      transpose(pb.value.ptr(), bt.ptr(), k, n);
      gemm_nn(g, bt.ptr(), pa.ensure_grad().ptr(), m, n, k);
    }
    if (pb.requires_grad) gemm_tn(pa.value.ptr(), g, pb.ensure_grad().ptr(), m, k, n);
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  const Tensor& xv = x->value;
  const Tensor& wv = w->value;
  check(wv.rank() == 2 && xv.cols() == wv.dim(0), "linear: shape mismatch");
  check(b->value.numel() == static_cast<size_t>(wv.dim(1)), "linear: bias size mismatch");
  const int m = xv.rows(), k = wv.dim(0), n = wv.dim(1);
  Tensor out({m, n});
  const float* bias = b->value.ptr();
  for (int i = 0; i < m; ++i) std::copy(bias, bias + n, out.ptr() + static_cast<size_t>(i) * n);
  gemm_nn(xv.ptr(), wv.ptr(), out.ptr(), m, k, n);
  return make_node(std::move(out), {x, w, b}, [m, k, n](Node& self) {
    Node& px = *self.parents[0];
    Node& pw = *self.parents[1];
    Node& pb = *self.parents[2];
    const float* g = self.grad.ptr();
    if (px.requires_grad) {
      Tensor wt({n, k});
      transpose(pw.value.ptr(), wt.ptr(), k, n);
      gemm_nn(g, wt.ptr(), px.ensure_grad().ptr(), m, n, k);
    }
    if (pw.requires_grad) gemm_tn(px.value.ptr(), g, pw.ensure_grad().ptr(), m, k, n);
    if (pb.requires_grad) {
      float* db = pb.ensure_grad().ptr();
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) db[j] += g[static_cast<size_t>(i) * n + j];
      }
    }
  });
}

Var add(const Var& a, const Var& b) {
  check(a->value.numel() == b->value.numel(), "add: size mismatch");
  Tensor out = a->value;
  for (size_t i = 0; i < out.numel(); ++i) out.data[i] += b->value.data[i];
  return make_node(std::move(out), {a, b}, [](Node& self) {
    for (auto& p : self.parents) accumulate(*p, self.grad.ptr(), self.grad.numel());
  });
}

Var add_rowvec(const Var& x, const Var& v) {
  const int m = x->value.rows(), n = x->value.cols();
  check(v->value.numel() == static_cast<size_t>(n), "add_rowvec: size mismatch");
  Tensor out = x->value;
  const float* vv = v->value.ptr();
  for (int i = 0; i < m; ++i) {
    float* row = out.ptr() + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) row[j] += vv[j];
  }
  return make_node(std::move(out), {x, v}, [m, n](Node& self) {
    accumulate(*self.parents[0], self.grad.ptr(), self.grad.numel());
    Node& pv = *self.parents[1];
    if (pv.requires_grad) {
      float* dv = pv.ensure_grad().ptr();
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) dv[j] += self.grad.data[static_cast<size_t>(i) * n + j];
      }
    }
  });
}

Var scale(const Var& x, float s) {
  Tensor out = x->value;
  for (float& v : out.data) v *= s;
  return make_node(std::move(out), {x}, [s](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    float* d = p.ensure_grad().ptr();
    for (size_t i = 0; i < self.grad.numel(); ++i) d[i] += s * self.grad.data[i];
  });
}

Var gelu(const Var& x) {
  Tensor out = x->value;
  for (float& v : out.data) {
    const float t = std::tanh(kGeluC * (v + 0.044715f * v * v * v));
    v = 0.5f * v * (1.0f + t);
  }
  return make_node(std::move(out), {x}, [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    float* d = p.ensure_grad().ptr();
    for (size_t i = 0; i < self.grad.numel(); ++i) {
      const float v = p.value.data[i];
      const float t = std::tanh(kGeluC * (v + 0.044715f * v * v * v));
      const float dt = (1.0f - t * t) * kGeluC * (1.0f + 3.0f * 0.044715f * v * v);
      d[i] += self.grad.data[i] * (0.5f * (1.0f + t) + 0.5f * v * dt);
    }
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, float eps) {
  const int m = x->value.rows(), n = x->value.cols();
  check(gamma->value.numel() == static_cast<size_t>(n) && beta->value.numel() == static_cast<size_t>(n),
        "layer_norm: parameter size mismatch");
  Tensor out({m, n});
  auto xhat = std::make_shared<Tensor>(std::vector<int>{m, n});
  auto rstd = std::make_shared<std::vector<float>>(static_cast<size_t>(m));
  const float* g = gamma->value.ptr();
  const float* bt = beta->value.ptr();
  for (int i = 0; i < m; ++i) {
    const float* row = x->value.ptr() + static_cast<size_t>(i) * n;
    double mean = 0.0;
    for (int j = 0; j < n; ++j) mean += row[j];
    mean /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= n;
    const float r = static_cast<float>(1.0 / std::sqrt(var + eps));
    (*rstd)[static_cast<size_t>(i)] = r;
    for (int j = 0; j < n; ++j) {
      const float xh = (row[j] - static_cast<float>(mean)) * r;
      xhat->data[static_cast<size_t>(i) * n + j] = xh;
      out.data[static_cast<size_t>(i) * n + j] = xh * g[j] + bt[j];
    }
  }
  if (!needs_grad({x, gamma, beta})) return make_node(std::move(out), {}, nullptr);
  return make_node(std::move(out), {x, gamma, beta}, [m, n, xhat, rstd](Node& self) {
    Node& px = *self.parents[0];
    Node& pg = *self.parents[1];
    Node& pb = *self.parents[2];
    const float* gv = pg.value.ptr();
    for (int i = 0; i < m; ++i) {
      const float* dy = self.grad.ptr() + static_cast<size_t>(i) * n;
      const float* xh = xhat->ptr() + static_cast<size_t>(i) * n;
      if (pg.requires_grad) {
        float* dg = pg.ensure_grad().ptr();
        for (int j = 0; j < n; ++j) dg[j] += dy[j] * xh[j];
      }
      if (pb.requires_grad) {
        float* db = pb.ensure_grad().ptr();
        for (int j = 0; j < n; ++j) db[j] += dy[j];
      }
      if (px.requires_grad) {
        double mean_d = 0.0, mean_dx = 0.0;
        for (int j = 0; j < n; ++j) {
          const double dxh = static_cast<double>(dy[j]) * gv[j];
          mean_d += dxh;
          mean_dx += dxh * xh[j];
        }
        mean_d /= n;
        mean_dx /= n;
        float* dx = px.ensure_grad().ptr() + static_cast<size_t>(i) * n;
        const float r = (*rstd)[static_cast<size_t>(i)];
        for (int j = 0; j < n; ++j) {
          const double dxh = static_cast<double>(dy[j]) * gv[j];
          dx[j] += static_cast<float>(r * (dxh - mean_d - xh[j] * mean_dx));
        }
      }
    }
  });
}

Var attention(const Var& qkv, int heads, const std::vector<std::pair<int, int>>& segments) {
  const Tensor& in = qkv->value;
  check(in.rank() == 2 && in.dim(1) % 3 == 0, "attention: qkv must be [T, 3D]");
  const int t_total = in.dim(0);
  const int d = in.dim(1) / 3;
  check(heads > 0 && d % heads == 0, "attention: dimension not divisible by heads");
  const int dh = d / heads;
  const float sc = 1.0f / std::sqrt(static_cast<float>(dh));
  const int stride = 3 * d;
  int covered = 0;
  for (auto [b, len] : segments) {
    check(b == covered && len > 0, "attention: segments must tile the rows in order");
    covered += len;
  }
  check(covered == t_total, "attention: segments must cover every row");

  const bool keep = needs_grad({qkv});
  Tensor out({t_total, d});
  // Softmax probabilities per (segment, head), kept for backward.
  auto probs = std::make_shared<std::vector<Tensor>>();

  for (auto [b, len] : segments) {
    Tensor qh({len, dh}), kt({dh, len}), vh({len, dh});
    for (int h = 0; h < heads; ++h) {
      for (int r = 0; r < len; ++r) {
        const float* row = in.ptr() + static_cast<size_t>(b + r) * stride;
        for (int c = 0; c < dh; ++c) {
          qh.data[static_cast<size_t>(r) * dh + c] = row[h * dh + c];
          kt.data[static_cast<size_t>(c) * len + r] = row[d + h * dh + c];
          vh.data[static_cast<size_t>(r) * dh + c] = row[2 * d + h * dh + c];
        }
      }
      Tensor p({len, len});
      gemm_nn(qh.ptr(), kt.ptr(), p.ptr(), len, dh, len);
      for (int r = 0; r < len; ++r) {
        float* pr = p.ptr() + static_cast<size_t>(r) * len;
        float mx = -INFINITY;
        for (int c = 0; c < len; ++c) {
          pr[c] *= sc;
          mx = std::max(mx, pr[c]);
        }
        float sum = 0.0f;
        for (int c = 0; c < len; ++c) {
          pr[c] = std::exp(pr[c] - mx);
          sum += pr[c];
        }
        const float inv = 1.0f / sum;
        for (int c = 0; c < len; ++c) pr[c] *= inv;
      }
      Tensor o({len, dh});
      gemm_nn(p.ptr(), vh.ptr(), o.ptr(), len, len, dh);
      for (int r = 0; r < len; ++r) {
        std::copy(o.ptr() + static_cast<size_t>(r) * dh, o.ptr() + static_cast<size_t>(r + 1) * dh,
                  out.ptr() + static_cast<size_t>(b + r) * d + h * dh);
      }
      if (keep) probs->push_back(std::move(p));
    }
  }
  if (!keep) return make_node(std::move(out), {}, nullptr);

  return make_node(std::move(out), {qkv}, [segments, heads, d, dh, sc, stride, probs](Node& self) {
    Node& px = *self.parents[0];
    const Tensor& in = px.value;
    float* dqkv = px.ensure_grad().ptr();
    size_t pi = 0;
    for (auto [b, len] : segments) {
      for (int h = 0; h < heads; ++h) {
        const Tensor& p = (*probs)[pi++];
        Tensor qh({len, dh}), kh({len, dh}), vt({dh, len}), dout({len, dh});
        for (int r = 0; r < len; ++r) {
          const float* row = in.ptr() + static_cast<size_t>(b + r) * stride;
          const float* g = self.grad.ptr() + static_cast<size_t>(b + r) * d + h * dh;
          for (int c = 0; c < dh; ++c) {
            qh.data[static_cast<size_t>(r) * dh + c] = row[h * dh + c];
            kh.data[static_cast<size_t>(r) * dh + c] = row[d + h * dh + c];
            vt.data[static_cast<size_t>(c) * len + r] = row[2 * d + h * dh + c];
            dout.data[static_cast<size_t>(r) * dh + c] = g[c];
          }
        }
        Tensor dp({len, len});
        gemm_nn(dout.ptr(), vt.ptr(), dp.ptr(), len, dh, len);
        Tensor dv({len, dh});
        gemm_tn(p.ptr(), dout.ptr(), dv.ptr(), len, len, dh);
        // dS = P * (dP - rowsum(dP * P)), with the 1/sqrt(dh) scale folded in.
        for (int r = 0; r < len; ++r) {
          const float* pr = p.ptr() + static_cast<size_t>(r) * len;
          float* dr = dp.ptr() + static_cast<size_t>(r) * len;
          float dot = 0.0f;
          for (int c = 0; c < len; ++c) dot += dr[c] * pr[c];
          for (int c = 0; c < len; ++c) dr[c] = pr[c] * (dr[c] - dot) * sc;
        }
        Tensor dq({len, dh}), dk({len, dh});
        gemm_nn(dp.ptr(), kh.ptr(), dq.ptr(), len, len, dh);
        gemm_tn(dp.ptr(), qh.ptr(), dk.ptr(), len, len, dh);
        for (int r = 0; r < len; ++r) {
          float* row = dqkv + static_cast<size_t>(b + r) * stride;
          for (int c = 0; c < dh; ++c) {
            row[h * dh + c] += dq.data[static_cast<size_t>(r) * dh + c];
            row[d + h * dh + c] += dk.data[static_cast<size_t>(r) * dh + c];
            row[2 * d + h * dh + c] += dv.data[static_cast<size_t>(r) * dh + c];
          }
        }
      }
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  check(!parts.empty(), "concat_rows: no inputs");
  const int n = parts[0]->value.cols();
  int m = 0;
  for (const Var& p : parts) {
    check(p->value.cols() == n, "concat_rows: column mismatch");
    m += p->value.rows();
  }
  Tensor out({m, n});
  size_t off = 0;
  for (const Var& p : parts) {
    std::copy(p->value.data.begin(), p->value.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(off));
    off += p->value.numel();
  }
  return make_node(std::move(out), parts, [](Node& self) {
    size_t off = 0;
    for (auto& p : self.parents) {
      accumulate(*p, self.grad.ptr() + off, p->value.numel());
      off += p->value.numel();
    }
  });
}

Var gather_rows(const Var& x, const std::vector<int>& rows) {
  const int m = x->value.rows(), n = x->value.cols();
  Tensor out({static_cast<int>(rows.size()), n});
  for (size_t r = 0; r < rows.size(); ++r) {
    check(rows[r] >= 0 && rows[r] < m, "gather_rows: index out of range");
    const float* src = x->value.ptr() + static_cast<size_t>(rows[r]) * n;
    std::copy(src, src + n, out.ptr() + r * n);
  }
  return make_node(std::move(out), {x}, [rows, n](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    float* d = p.ensure_grad().ptr();
    for (size_t r = 0; r < rows.size(); ++r) {
      float* dst = d + static_cast<size_t>(rows[r]) * n;
      const float* g = self.grad.ptr() + r * n;
      for (int j = 0; j < n; ++j) dst[j] += g[j];
    }
  });
}

Var tokens_to_grid(const Var& x, int frames, int gh, int gw) {
  const int p = gh * gw;
  const int c = x->value.cols();
  check(x->value.rows() == frames * p, "tokens_to_grid: row count mismatch");
  Tensor out({frames, c, gh, gw});
  for (int f = 0; f < frames; ++f) {
    for (int t = 0; t < p; ++t) {
      const float* src = x->value.ptr() + (static_cast<size_t>(f) * p + t) * c;
      for (int ch = 0; ch < c; ++ch) out.data[(static_cast<size_t>(f) * c + ch) * p + t] = src[ch];
    }
  }
  return make_node(std::move(out), {x}, [frames, p, c](Node& self) {
    Node& px = *self.parents[0];
    if (!px.requires_grad) return;
    float* d = px.ensure_grad().ptr();
    for (int f = 0; f < frames; ++f) {
      for (int t = 0; t < p; ++t) {
        float* dst = d + (static_cast<size_t>(f) * p + t) * c;
        for (int ch = 0; ch < c; ++ch) dst[ch] += self.grad.data[(static_cast<size_t>(f) * c + ch) * p + t];
      }
    }
  });
}

Var conv2d(const Var& x, const Var& w, const Var& b, int kernel) {
  const Tensor& xv = x->value;
  check(xv.rank() == 4, "conv2d: input must be [F, C, H, W]");
  check(kernel % 2 == 1, "conv2d: kernel must be odd");
  const int frames = xv.dim(0), ci = xv.dim(1), h = xv.dim(2), wd = xv.dim(3);
  const int kk = ci * kernel * kernel;
  check(w->value.rank() == 2 && w->value.dim(1) == kk, "conv2d: weight shape mismatch");
  const int co = w->value.dim(0);
  check(b->value.numel() == static_cast<size_t>(co), "conv2d: bias shape mismatch");
  const int hw = h * wd;
  Tensor out({frames, co, h, wd});
  {
    Tensor col({kk, hw});
    for (int f = 0; f < frames; ++f) {
      im2col(xv.ptr() + static_cast<size_t>(f) * ci * hw, col.ptr(), ci, h, wd, kernel);
      float* of = out.ptr() + static_cast<size_t>(f) * co * hw;
      for (int o = 0; o < co; ++o) std::fill(of + static_cast<size_t>(o) * hw, of + static_cast<size_t>(o + 1) * hw, b->value.data[o]);
      gemm_nn(w->value.ptr(), col.ptr(), of, co, kk, hw);
    }
  }
  return make_node(std::move(out), {x, w, b}, [frames, ci, h, wd, kernel, kk, co, hw](Node& self) {
    Node& px = *self.parents[0];
    Node& pw = *self.parents[1];
    Node& pb = *self.parents[2];
    Tensor col({kk, hw});
    Tensor colt({hw, kk});
    Tensor dcol({kk, hw});
    for (int f = 0; f < frames; ++f) {
      const float* g = self.grad.ptr() + static_cast<size_t>(f) * co * hw;
      if (pb.requires_grad) {
        float* db = pb.ensure_grad().ptr();
        for (int o = 0; o < co; ++o) {
          float s = 0.0f;
          for (int i = 0; i < hw; ++i) s += g[static_cast<size_t>(o) * hw + i];
          db[o] += s;
        }
      }
      if (pw.requires_grad) {
        im2col(px.value.ptr() + static_cast<size_t>(f) * ci * hw, col.ptr(), ci, h, wd, kernel);
        transpose(col.ptr(), colt.ptr(), kk, hw);
        gemm_nn(g, colt.ptr(), pw.ensure_grad().ptr(), co, hw, kk);
      }
      if (px.requires_grad) {
        std::fill(dcol.data.begin(), dcol.data.end(), 0.0f);
        gemm_tn(pw.value.ptr(), g, dcol.ptr(), co, kk, hw);
        col2im(dcol.ptr(), px.ensure_grad().ptr() + static_cast<size_t>(f) * ci * hw, ci, h, wd, kernel);
      }
    }
  });
}

Var upsample_bilinear(const Var& x, int out_h, int out_w) {
  const Tensor& xv = x->value;
  check(xv.rank() == 4, "upsample_bilinear: input must be [F, C, H, W]");
  const int planes = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  auto ay = std::make_shared<AxisWeights>(axis_weights(h, out_h));
  auto ax = std::make_shared<AxisWeights>(axis_weights(w, out_w));
  Tensor out({xv.dim(0), xv.dim(1), out_h, out_w});
  for (int pl = 0; pl < planes; ++pl) {
    const float* src = xv.ptr() + static_cast<size_t>(pl) * h * w;
    float* dst = out.ptr() + static_cast<size_t>(pl) * out_h * out_w;
    for (int oy = 0; oy < out_h; ++oy) {
      const float fy = ay->frac[oy];
      const float* r0 = src + static_cast<size_t>(ay->i0[oy]) * w;
      const float* r1 = src + static_cast<size_t>(ay->i1[oy]) * w;
      for (int ox = 0; ox < out_w; ++ox) {
        const float fx = ax->frac[ox];
        const int x0 = ax->i0[ox], x1 = ax->i1[ox];
        const float top = r0[x0] + fx * (r0[x1] - r0[x0]);
        const float bot = r1[x0] + fx * (r1[x1] - r1[x0]);
        dst[static_cast<size_t>(oy) * out_w + ox] = top + fy * (bot - top);
      }
    }
  }
  return make_node(std::move(out), {x}, [planes, h, w, out_h, out_w, ay, ax](Node& self) {
    Node& px = *self.parents[0];
    if (!px.requires_grad) return;
    float* d = px.ensure_grad().ptr();
    for (int pl = 0; pl < planes; ++pl) {
      const float* g = self.grad.ptr() + static_cast<size_t>(pl) * out_h * out_w;
      float* dst = d + static_cast<size_t>(pl) * h * w;
      for (int oy = 0; oy < out_h; ++oy) {
        const float fy = ay->frac[oy];
        float* r0 = dst + static_cast<size_t>(ay->i0[oy]) * w;
        float* r1 = dst + static_cast<size_t>(ay->i1[oy]) * w;
        for (int ox = 0; ox < out_w; ++ox) {
          const float fx = ax->frac[ox];
          const int x0 = ax->i0[ox], x1 = ax->i1[ox];
          const float gv = g[static_cast<size_t>(oy) * out_w + ox];
          r0[x0] += gv * (1.0f - fy) * (1.0f - fx);
          r0[x1] += gv * (1.0f - fy) * fx;
          r1[x0] += gv * fy * (1.0f - fx);
          r1[x1] += gv * fy * fx;
        }
      }
    }
  });
}

Var concat_channels(const Var& a, const Var& b) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  check(av.rank() == 4 && bv.rank() == 4 && av.dim(0) == bv.dim(0) && av.dim(2) == bv.dim(2) && av.dim(3) == bv.dim(3),
        "concat_channels: shape mismatch");
  const int frames = av.dim(0), ca = av.dim(1), cb = bv.dim(1);
  const size_t hw = static_cast<size_t>(av.dim(2)) * av.dim(3);
  Tensor out({frames, ca + cb, av.dim(2), av.dim(3)});
  for (int f = 0; f < frames; ++f) {
    float* dst = out.ptr() + static_cast<size_t>(f) * (ca + cb) * hw;
    std::copy(av.ptr() + f * ca * hw, av.ptr() + (f + 1) * ca * hw, dst);
    std::copy(bv.ptr() + f * cb * hw, bv.ptr() + (f + 1) * cb * hw, dst + ca * hw);
  }
  return make_node(std::move(out), {a, b}, [frames, ca, cb, hw](Node& self) {
    for (int f = 0; f < frames; ++f) {
      const float* g = self.grad.ptr() + static_cast<size_t>(f) * (ca + cb) * hw;
      Node& pa = *self.parents[0];
      Node& pb = *self.parents[1];
      if (pa.requires_grad) {
        float* d = pa.ensure_grad().ptr() + f * ca * hw;
        for (size_t i = 0; i < ca * hw; ++i) d[i] += g[i];
      }
      if (pb.requires_grad) {
        float* d = pb.ensure_grad().ptr() + f * cb * hw;
        for (size_t i = 0; i < cb * hw; ++i) d[i] += g[ca * hw + i];
      }
    }
  });
}

Var slice_channels(const Var& x, int c0, int c1) {
  const Tensor& xv = x->value;
  check(xv.rank() == 4 && c0 >= 0 && c0 < c1 && c1 <= xv.dim(1), "slice_channels: bad range");
  const int frames = xv.dim(0), c = xv.dim(1), n = c1 - c0;
  const size_t hw = static_cast<size_t>(xv.dim(2)) * xv.dim(3);
  Tensor out({frames, n, xv.dim(2), xv.dim(3)});
  for (int f = 0; f < frames; ++f) {
    const float* src = xv.ptr() + (static_cast<size_t>(f) * c + c0) * hw;
    std::copy(src, src + n * hw, out.ptr() + static_cast<size_t>(f) * n * hw);
  }
  return make_node(std::move(out), {x}, [frames, c, c0, n, hw](Node& self) {
    Node& px = *self.parents[0];
    if (!px.requires_grad) return;
    float* d = px.ensure_grad().ptr();
    for (int f = 0; f < frames; ++f) {
      float* dst = d + (static_cast<size_t>(f) * c + c0) * hw;
      const float* g = self.grad.ptr() + static_cast<size_t>(f) * n * hw;
      for (size_t i = 0; i < n * hw; ++i) dst[i] += g[i];
    }
  });
}

Var exp_plus_one(const Var& x) {
  constexpr float floor_value = 1.0f + FLT_EPSILON;
  Tensor out = x->value;
  for (float& v : out.data) v = std::max(1.0f + std::exp(v), floor_value);
  return make_node(std::move(out), {x}, [](Node& self) {
    Node& px = *self.parents[0];
    if (!px.requires_grad) return;
    float* d = px.ensure_grad().ptr();
    for (size_t i = 0; i < self.grad.numel(); ++i) {
      if (self.value.data[i] > floor_value) d[i] += self.grad.data[i] * (self.value.data[i] - 1.0f);
    }
  });
}

Var camera_encoding(const Var& x) {
  const Tensor& xv = x->value;
  check(xv.rank() == 2 && xv.dim(1) == 9, "camera_encoding: input must be [N, 9]");
  const int n = xv.dim(0);
  Tensor out = xv;
  auto norms = std::make_shared<std::vector<float>>(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    float* row = out.ptr() + static_cast<size_t>(i) * 9;
    row[0] += 1.0f;
    const float nrm = std::max(std::sqrt(row[0] * row[0] + row[1] * row[1] + row[2] * row[2] + row[3] * row[3]), 1e-12f);
    (*norms)[static_cast<size_t>(i)] = nrm;
    for (int c = 0; c < 4; ++c) row[c] /= nrm;
  }
  return make_node(std::move(out), {x}, [n, norms](Node& self) {
    Node& px = *self.parents[0];
    if (!px.requires_grad) return;
    float* d = px.ensure_grad().ptr();
    for (int i = 0; i < n; ++i) {
      const float* u = self.value.ptr() + static_cast<size_t>(i) * 9;
      const float* g = self.grad.ptr() + static_cast<size_t>(i) * 9;
      float* dr = d + static_cast<size_t>(i) * 9;
      float dot = 0.0f;
      for (int c = 0; c < 4; ++c) dot += u[c] * g[c];
      const float inv = 1.0f / (*norms)[static_cast<size_t>(i)];
      for (int c = 0; c < 4; ++c) dr[c] += (g[c] - u[c] * dot) * inv;
      for (int c = 4; c < 9; ++c) dr[c] += g[c];
    }
  });
}

}  // namespace densetrack::nn

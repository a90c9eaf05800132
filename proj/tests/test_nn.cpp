#include <doctest.h>

#include <cmath>
#include <functional>
#include <new>

#include "densetrack/nn.hpp"
#include "densetrack/random.hpp"

using namespace densetrack;
using namespace densetrack::nn;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = static_cast<float>(rng.normal() * scale);
  return t;
}

// Scalar probe: sum of out ⊙ w for a fixed random w.
Var probe(const Var& out, const Tensor& w) {
  Tensor v({1});
  for (size_t i = 0; i < w.numel(); ++i) v.data[0] += out->value.data[i] * w.data[i];
  return make_node(std::move(v), {out}, [w](Node& n) {
    Tensor& g = n.parents[0]->ensure_grad();
    const float s = n.grad.data[0];
    for (size_t i = 0; i < w.numel(); ++i) g.data[i] += s * w.data[i];
  });
}

// Compares backward gradients of every input against central differences.
void grad_check(const std::vector<Tensor>& inputs, const std::function<Var(const std::vector<Var>&)>& f,
                uint64_t seed, double tol = 2e-2) {
  Rng rng(seed);
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(parameter(t));
  const Var out = f(vars);
  const Tensor w = random_tensor(out->value.shape, rng);
  backward(probe(out, w));
  auto eval = [&](const std::vector<Tensor>& ins) {
    NoGradGuard ng;
    std::vector<Var> vs;
    for (const auto& t : ins) vs.push_back(constant(t));
    const Var o = f(vs);
    double s = 0.0;
    for (size_t i = 0; i < w.numel(); ++i) s += static_cast<double>(o->value.data[i]) * w.data[i];
    return s;
  };
  for (size_t a = 0; a < inputs.size(); ++a) {
    const Tensor& g = vars[a]->grad;
    REQUIRE(g.numel() == inputs[a].numel());
    for (size_t i = 0; i < inputs[a].numel(); ++i) {
      std::vector<Tensor> plus = inputs, minus = inputs;
      const float h = 1e-2f;
      plus[a].data[i] += h;
      minus[a].data[i] -= h;
      const double fd = (eval(plus) - eval(minus)) / (2.0 * h);
      const double an = g.data[i];
      CHECK(std::abs(fd - an) <= tol * std::max(1.0, std::abs(fd)));
    }
  }
}

}  // namespace

TEST_CASE("gemm kernels match naive loops") {
  Rng rng(1);
  const int m = 7, k = 13, n = 5;
  const Tensor a = random_tensor({m, k}, rng), b = random_tensor({k, n}, rng), at = random_tensor({k, m}, rng);
  Tensor c({m, n}), ct({m, n});
  gemm_nn(a.ptr(), b.ptr(), c.ptr(), m, k, n);
  gemm_tn(at.ptr(), b.ptr(), ct.ptr(), k, m, n);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double s = 0, st = 0;
      for (int r = 0; r < k; ++r) {
        s += static_cast<double>(a.data[static_cast<size_t>(i * k + r)]) * b.data[static_cast<size_t>(r * n + j)];
        st += static_cast<double>(at.data[static_cast<size_t>(r * m + i)]) * b.data[static_cast<size_t>(r * n + j)];
      }
      CHECK(c.data[static_cast<size_t>(i * n + j)] == doctest::Approx(s).epsilon(1e-5));
      CHECK(ct.data[static_cast<size_t>(i * n + j)] == doctest::Approx(st).epsilon(1e-5));
    }
  }
  Tensor tr({k, m});
  transpose(a.ptr(), tr.ptr(), m, k);
  for (int i = 0; i < m; ++i) {
    for (int r = 0; r < k; ++r) CHECK(tr.data[static_cast<size_t>(r * m + i)] == a.data[static_cast<size_t>(i * k + r)]);
  }
}

TEST_CASE("gemm rows do not depend on other rows") {
  Rng rng(2);
  const Tensor a = random_tensor({6, 9}, rng), b = random_tensor({9, 4}, rng);
  Tensor full({6, 4}), one({1, 4});
  gemm_nn(a.ptr(), b.ptr(), full.ptr(), 6, 9, 4);
  gemm_nn(a.ptr() + 3 * 9, b.ptr(), one.ptr(), 1, 9, 4);
  for (int j = 0; j < 4; ++j) CHECK(one.data[static_cast<size_t>(j)] == full.data[static_cast<size_t>(3 * 4 + j)]);
}

TEST_CASE("op gradients match finite differences") {
  Rng rng(3);
  SUBCASE("linear") {
    grad_check({random_tensor({3, 4}, rng), random_tensor({4, 2}, rng), random_tensor({2}, rng)},
               [](const std::vector<Var>& v) { return linear(v[0], v[1], v[2]); }, 10);
  }
  SUBCASE("matmul, add, scale, gelu") {
    grad_check({random_tensor({3, 4}, rng), random_tensor({4, 3}, rng), random_tensor({3, 3}, rng)},
               [](const std::vector<Var>& v) { return gelu(scale(add(matmul(v[0], v[1]), v[2]), 0.7f)); }, 11);
  }
  SUBCASE("layer_norm") {
    grad_check({random_tensor({4, 6}, rng), random_tensor({6}, rng), random_tensor({6}, rng)},
               [](const std::vector<Var>& v) { return layer_norm(v[0], v[1], v[2]); }, 12);
  }
  SUBCASE("attention with segments") {
    grad_check({random_tensor({5, 12}, rng, 0.5)},
               [](const std::vector<Var>& v) { return attention(v[0], 2, {{0, 2}, {2, 3}}); }, 13);
  }
  SUBCASE("concat, gather, add_rowvec") {
    grad_check({random_tensor({2, 3}, rng), random_tensor({3, 3}, rng), random_tensor({3}, rng)},
               [](const std::vector<Var>& v) {
                 return add_rowvec(gather_rows(concat_rows({v[0], v[1]}), {4, 0, 2, 2}), v[2]);
               },
               14);
  }
  SUBCASE("conv2d and upsampling") {
    grad_check({random_tensor({2, 2, 3, 3}, rng), random_tensor({3, 2 * 9}, rng, 0.3), random_tensor({3}, rng)},
               [](const std::vector<Var>& v) { return upsample_bilinear(conv2d(v[0], v[1], v[2], 3), 5, 4); }, 15);
  }
  SUBCASE("tokens_to_grid, channel concat and slice") {
    grad_check({random_tensor({2 * 4, 3}, rng), random_tensor({2, 1, 2, 2}, rng)},
               [](const std::vector<Var>& v) {
                 return slice_channels(concat_channels(tokens_to_grid(v[0], 2, 2, 2), v[1]), 1, 4);
               },
               16);
  }
  SUBCASE("exp_plus_one and camera_encoding") {
    grad_check({random_tensor({2, 9}, rng, 0.5)},
               [](const std::vector<Var>& v) { return exp_plus_one(camera_encoding(v[0])); }, 17);
  }
}

TEST_CASE("exp_plus_one stays above one and camera_encoding normalizes") {
  Tensor x({1, 9}, -200.0f);
  const Var e = exp_plus_one(constant(x));
  for (float v : e->value.data) CHECK(v > 1.0f);
  const Var c = camera_encoding(constant(Tensor({1, 9}, 0.0f)));
  CHECK(c->value.data[0] == 1.0f);
  for (int i = 1; i < 9; ++i) CHECK(c->value.data[static_cast<size_t>(i)] == 0.0f);
}

TEST_CASE("NoGradGuard skips graph recording") {
  const Var p = parameter(Tensor({2, 2}, 1.0f));
  {
    NoGradGuard ng;
    CHECK_FALSE(grad_enabled());
    const Var y = scale(p, 2.0f);
    CHECK(y->parents.empty());
  }
  CHECK(grad_enabled());
}

TEST_CASE("memory accounting and emulated limit") {
  const size_t before = MemoryStats::live_bytes();
  MemoryStats::reset_peak();
  {
    Tensor t({1024});
    CHECK(MemoryStats::live_bytes() == before + 4096);
  }
  CHECK(MemoryStats::live_bytes() == before);
  CHECK(MemoryStats::peak_bytes() == before + 4096);
  MemoryStats::set_limit(before + 1000);
  CHECK_THROWS_AS(Tensor({1024}), std::bad_alloc);
  MemoryStats::set_limit(0);
  CHECK(MemoryStats::live_bytes() == before);
}

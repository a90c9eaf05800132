#include "densetrack/baseline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <new>

#include <json.hpp>

#include "densetrack/error.hpp"
#include "densetrack/random.hpp"

namespace densetrack::baseline {

using nn::Tensor;

namespace {

Tensor random_tensor(std::vector<int> shape, double std, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = static_cast<float>(rng.normal() * std);
  return t;
}

void softmax_row(float* x, int n) {
  float mx = x[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    x[i] = std::exp(x[i] - mx);
    sum += x[i];
  }
  const float inv = static_cast<float>(1.0 / sum);
  for (int i = 0; i < n; ++i) x[i] *= inv;
}

size_t tensor_bytes(const Tensor& t) { return t.numel() * sizeof(float); }

}  // namespace

QueryTokenBaseline::QueryTokenBaseline(const BaselineConfig& cfg, int height, int width)
    : cfg_(cfg), height_(height), width_(width) {
  require(cfg.dim > 0 && cfg.heads > 0 && cfg.dim % cfg.heads == 0, "baseline: dim must be a positive multiple of heads");
  require(cfg.patch_size > 0 && height % cfg.patch_size == 0 && width % cfg.patch_size == 0,
          "baseline: patch size must divide the image size");
  gh_ = height / cfg.patch_size;
  gw_ = width / cfg.patch_size;
  Rng rng(cfg.seed);
  const int in = cfg.patch_size * cfg.patch_size * 3;
  embed_ = random_tensor({in, cfg.dim}, 1.0 / std::sqrt(in), rng);
  pos_ = random_tensor({gh_ * gw_, cfg.dim}, 0.02, rng);
  uv_ = random_tensor({3, cfg.dim}, 0.5, rng);
  out_ = random_tensor({cfg.dim, 3}, 1.0 / std::sqrt(cfg.dim), rng);
  mix_ = random_tensor({cfg.dim, cfg.dim}, 1.0 / std::sqrt(cfg.dim), rng);
}

size_t QueryTokenBaseline::parameter_bytes() const {
  return tensor_bytes(embed_) + tensor_bytes(pos_) + tensor_bytes(uv_) + tensor_bytes(out_) + tensor_bytes(mix_);
}

Tensor QueryTokenBaseline::frame_features(const synth::SceneSample& seq) const {
  require(seq.height == height_ && seq.width == width_, "baseline: sequence resolution does not match");
  const int n = seq.num_frames(), p = cfg_.patch_size, d = cfg_.dim, np = gh_ * gw_;
  const int in = p * p * 3;
  Tensor feats({n, np, d});
  Tensor patches({np, in});
  for (int f = 0; f < n; ++f) {
    const auto& rgb = seq.frames[static_cast<size_t>(f)].rgb;
    for (int gy = 0; gy < gh_; ++gy) {
      for (int gx = 0; gx < gw_; ++gx) {
        float* row = patches.ptr() + static_cast<size_t>(gy * gw_ + gx) * in;
        for (int y = 0; y < p; ++y) {
          for (int x = 0; x < p; ++x) {
            const size_t src = (static_cast<size_t>(gy * p + y) * width_ + gx * p + x) * 3;
            for (int c = 0; c < 3; ++c) row[(y * p + x) * 3 + c] = rgb[src + c];
          }
        }
      }
    }
    float* dst = feats.ptr() + static_cast<size_t>(f) * np * d;
    std::copy(pos_.data.begin(), pos_.data.end(), dst);
    nn::gemm_nn(patches.ptr(), embed_.ptr(), dst, np, in, d);
  }
  return feats;
}

Tensor QueryTokenBaseline::track(const synth::SceneSample& seq, int query, const std::vector<QueryPoint>& queries) const {
  const int n = seq.num_frames();
  require(query >= 0 && query < n, "baseline: query frame out of range");
  const Tensor feats = frame_features(seq);
  const int q = static_cast<int>(queries.size()), d = cfg_.dim, np = gh_ * gw_, heads = cfg_.heads;
  const int dh = d / heads;
  Tensor positions({n, q, 3});
  if (q == 0) return positions;

  // Initial token: bilinear sample of the query frame's features at the
  // query location plus an embedding of its normalized coordinates.
  Tensor init({q, d});
  const float* fq = feats.ptr() + static_cast<size_t>(query) * np * d;
  for (int k = 0; k < q; ++k) {
    const double gx = std::clamp(queries[static_cast<size_t>(k)].u / cfg_.patch_size - 0.5, 0.0, gw_ - 1.0);
    const double gy = std::clamp(queries[static_cast<size_t>(k)].v / cfg_.patch_size - 0.5, 0.0, gh_ - 1.0);
    const int x0 = static_cast<int>(gx), y0 = static_cast<int>(gy);
    const int x1 = std::min(x0 + 1, gw_ - 1), y1 = std::min(y0 + 1, gh_ - 1);
    const float ax = static_cast<float>(gx - x0), ay = static_cast<float>(gy - y0);
    const float uvw[3] = {static_cast<float>(queries[static_cast<size_t>(k)].u / width_),
                          static_cast<float>(queries[static_cast<size_t>(k)].v / height_), 1.0f};
    float* t = init.ptr() + static_cast<size_t>(k) * d;
    for (int c = 0; c < d; ++c) {
      const float f00 = fq[(y0 * gw_ + x0) * d + c], f01 = fq[(y0 * gw_ + x1) * d + c];
      const float f10 = fq[(y1 * gw_ + x0) * d + c], f11 = fq[(y1 * gw_ + x1) * d + c];
      t[c] = (1 - ay) * ((1 - ax) * f00 + ax * f01) + ay * ((1 - ax) * f10 + ax * f11);
      for (int r = 0; r < 3; ++r) t[c] += uvw[r] * uv_.data[static_cast<size_t>(r) * d + c];
    }
  }

  // Per-frame state kept for every query: refined tokens and attention maps.
  Tensor tokens({n, q, d});
  Tensor attn({q, heads, np});
  Tensor qh({q, dh}), kh_t({dh, np}), vh({np, dh}), ctx({q, d}), ctx_h({q, dh});
  const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(dh));
  for (int f = 0; f < n; ++f) {
    const float* ff = feats.ptr() + static_cast<size_t>(f) * np * d;
    std::fill(ctx.data.begin(), ctx.data.end(), 0.0f);
    for (int h = 0; h < heads; ++h) {
      for (int k = 0; k < q; ++k) {
        for (int c = 0; c < dh; ++c) qh.data[static_cast<size_t>(k) * dh + c] = init.data[static_cast<size_t>(k) * d + h * dh + c] * inv_sqrt;
      }
      for (int pi = 0; pi < np; ++pi) {
        for (int c = 0; c < dh; ++c) {
          kh_t.data[static_cast<size_t>(c) * np + pi] = ff[pi * d + h * dh + c];
          vh.data[static_cast<size_t>(pi) * dh + c] = ff[pi * d + h * dh + c];
        }
      }
      // Logits for head h are written into a [q, np] block of the strided
      // attention buffer one query row at a time.
      for (int k = 0; k < q; ++k) {
        float* row = attn.ptr() + (static_cast<size_t>(k) * heads + h) * np;
        std::fill(row, row + np, 0.0f);
        nn::gemm_nn(qh.ptr() + static_cast<size_t>(k) * dh, kh_t.ptr(), row, 1, dh, np);
        softmax_row(row, np);
      }
      std::fill(ctx_h.data.begin(), ctx_h.data.end(), 0.0f);
      for (int k = 0; k < q; ++k) {
        nn::gemm_nn(attn.ptr() + (static_cast<size_t>(k) * heads + h) * np, vh.ptr(),
                    ctx_h.ptr() + static_cast<size_t>(k) * dh, 1, np, dh);
      }
      for (int k = 0; k < q; ++k) {
        for (int c = 0; c < dh; ++c) ctx.data[static_cast<size_t>(k) * d + h * dh + c] = ctx_h.data[static_cast<size_t>(k) * dh + c];
      }
    }
    float* tok = tokens.ptr() + static_cast<size_t>(f) * q * d;
    std::copy(init.data.begin(), init.data.end(), tok);
    nn::gemm_nn(ctx.ptr(), mix_.ptr(), tok, q, d, d);
    nn::gemm_nn(tok, out_.ptr(), positions.ptr() + static_cast<size_t>(f) * q * 3, q, d, 3);
  }
  return positions;
}

std::vector<QueryPoint> make_queries(int height, int width, long long count, uint64_t seed) {
  std::vector<QueryPoint> out;
  if (count < 0) {
    out.reserve(static_cast<size_t>(height) * width);
    for (int j = 0; j < height; ++j) {
      for (int i = 0; i < width; ++i) out.push_back({static_cast<double>(i), static_cast<double>(j)});
    }
    return out;
  }
  Rng rng(seed);
  out.reserve(static_cast<size_t>(count));
  for (long long k = 0; k < count; ++k) {
    const double u = rng.uniform(-0.5, width - 0.5);
    const double v = rng.uniform(-0.5, height - 0.5);
    out.push_back({u, v});
  }
  return out;
}

double slope_fit(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size(), "slope_fit: length mismatch");
  if (x.size() < 2) return 0.0;
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(x.size());
  double sxx = 0.0, sxy = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  return sxx > 0.0 ? sxy / sxx : 0.0;
}

namespace {

template <typename Fn>
MemoryRecord measure(const std::string& method, long long count, long long resolved, size_t params, size_t limit,
                     Fn&& run) {
  MemoryRecord r;
  r.method = method;
  r.query_count = count;
  r.queries = resolved;
  r.parameter_bytes = params;
  const size_t before = nn::MemoryStats::live_bytes();
  nn::MemoryStats::reset_peak();
  const size_t old_limit = nn::MemoryStats::limit();
  if (limit != 0) nn::MemoryStats::set_limit(before + (limit > params ? limit - params : 0));
  const auto t0 = std::chrono::steady_clock::now();
  try {
    run();
  } catch (const std::bad_alloc&) {
    r.oom = true;
  }
  nn::MemoryStats::set_limit(old_limit);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  r.working_bytes = nn::MemoryStats::peak_bytes() - before;
  r.peak_bytes = r.working_bytes + r.parameter_bytes;
  require(nn::MemoryStats::live_bytes() == before, "bench_memory: tensors leaked across a measurement", ErrorCode::kState);
  return r;
}

}  // namespace

BenchResult bench_memory(const model::Model& dense, const QueryTokenBaseline& baseline, const synth::SceneSample& seq,
                         const std::vector<long long>& query_counts, size_t memory_limit_bytes, uint64_t seed) {
  require(!query_counts.empty(), "bench_memory: no query counts");
  const auto& mc = dense.config();
  require(seq.height == mc.height && seq.width == mc.width, "bench_memory: sequence resolution does not match the model");
  size_t dense_params = 0;
  for (const auto& [name, v] : dense.params().items()) dense_params += v->value.numel() * sizeof(float);
  const long long all = static_cast<long long>(seq.height) * seq.width;

  BenchResult res;
  const model::ModelInput input = model::make_input(seq);
  bool baseline_dead = false;
  for (size_t i = 0; i < query_counts.size(); ++i) {
    const long long count = query_counts[i];
    require(count >= -1, "bench_memory: query counts must be >= 0 or -1 (all pixels)");
    const long long resolved = count < 0 ? all : count;
    // The dense forward sees only the frames; every pixel is tracked.
    res.records.push_back(measure("dense", count, resolved, dense_params, memory_limit_bytes, [&] {
      model::ForwardOptions opt;
      opt.query = 0;
      const PredictionBundle b = dense.predict(input, opt);
      (void)b;
    }));
    if (baseline_dead) continue;
    const auto queries = make_queries(seq.height, seq.width, count, mix_seed(seed, i));
    res.records.push_back(measure("query_token", count, resolved, baseline.parameter_bytes(), memory_limit_bytes, [&] {
      const Tensor pos = baseline.track(seq, 0, queries);
      (void)pos;
    }));
    if (res.records.back().oom) baseline_dead = true;
  }

  std::vector<double> dx, dy, bx, by;
  double dmin = 0.0, dmax = 0.0;
  for (const auto& r : res.records) {
    if (r.oom) continue;
    if (r.method == "dense") {
      if (dx.empty() || static_cast<double>(r.peak_bytes) < dmin) dmin = static_cast<double>(r.peak_bytes);
      if (dx.empty() || static_cast<double>(r.peak_bytes) > dmax) dmax = static_cast<double>(r.peak_bytes);
      dx.push_back(static_cast<double>(r.queries));
      dy.push_back(static_cast<double>(r.peak_bytes));
    } else {
      bx.push_back(static_cast<double>(r.queries));
      by.push_back(static_cast<double>(r.peak_bytes));
    }
  }
  res.dense_slope = slope_fit(dx, dy);
  res.baseline_slope = slope_fit(bx, by);
  res.dense_spread = dmin > 0.0 ? (dmax - dmin) / dmin : 0.0;
  return res;
}

std::string to_json(const MemoryRecord& r) {
  nlohmann::ordered_json j;
  j["method"] = r.method;
  j["query_count"] = r.query_count;
  j["queries"] = r.queries;
  j["peak_bytes"] = r.peak_bytes;
  j["working_bytes"] = r.working_bytes;
  j["parameter_bytes"] = r.parameter_bytes;
  j["oom"] = r.oom;
  j["seconds"] = r.seconds;
  return j.dump();
}

}  // namespace densetrack::baseline

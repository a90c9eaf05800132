#include "densetrack/model.hpp"

#include <cmath>
#include <sstream>

#include "densetrack/error.hpp"
#include "densetrack/random.hpp"

namespace densetrack::model {

using nn::Tensor;
using nn::Var;

namespace {

Tensor random_tensor(std::vector<int> shape, double std, Rng& rng) {
  Tensor t(std::move(shape));
  for (float& v : t.data) v = static_cast<float>(rng.normal() * std);
  return t;
}

const char* head_prefix(HeadKind kind) {
  switch (kind) {
    case HeadKind::kPoint:
      return "point_head";
    case HeadKind::kDepth:
      return "depth_head";
    case HeadKind::kMotion:
      return "motion_head";
  }
  return "point_head";
}

PredictionBundle to_bundle(const ForwardResult& r, const ModelInput& in, int query) {
  PredictionBundle b;
  b.frames = in.frames;
  b.height = in.height;
  b.width = in.width;
  b.query = query;
  const size_t hw = static_cast<size_t>(in.height) * in.width;
  auto chw_to_hwc = [&](const Var& v, int channels) {
    std::vector<float> out(static_cast<size_t>(in.frames) * hw * channels);
    for (int f = 0; f < in.frames; ++f) {
      for (int c = 0; c < channels; ++c) {
        const float* src = v->value.ptr() + (static_cast<size_t>(f) * channels + c) * hw;
        for (size_t p = 0; p < hw; ++p) out[(f * hw + p) * channels + c] = src[p];
      }
    }
    return out;
  };
  b.points = chw_to_hwc(r.points, 3);
  b.point_sigma = chw_to_hwc(r.point_sigma, 1);
  b.depth = chw_to_hwc(r.depth, 1);
  b.depth_sigma = chw_to_hwc(r.depth_sigma, 1);
  if (r.motion) b.motion = chw_to_hwc(r.motion, 3);
  b.camera.assign(r.camera->value.data.begin(), r.camera->value.data.end());
  return b;
}

}  // namespace

void ModelConfig::validate() const {
  require(patch_size > 0 && height > 0 && width > 0, "model: sizes must be positive", ErrorCode::kConfig);
  require(height % patch_size == 0 && width % patch_size == 0, "model: image size must be divisible by the patch size",
          ErrorCode::kConfig);
  require(dim > 0 && heads > 0 && dim % heads == 0, "model: dim must be divisible by heads", ErrorCode::kConfig);
  require(block_pairs >= 1, "model: need at least one block pair", ErrorCode::kConfig);
  require(taps.size() >= 2, "model: dense heads need at least two tap depths", ErrorCode::kConfig);
  for (size_t i = 0; i < taps.size(); ++i) {
    require(taps[i] >= 0 && taps[i] < 2 * block_pairs, "model: tap depth out of range", ErrorCode::kConfig);
    if (i > 0) require(taps[i] > taps[i - 1], "model: tap depths must be increasing", ErrorCode::kConfig);
  }
  require(head_channels > 0 && camera_head_layers >= 0 && mlp_ratio > 0, "model: invalid head sizes", ErrorCode::kConfig);
  require(max_frames >= 2, "model: max_frames must be >= 2", ErrorCode::kConfig);
}

ModelInput make_input(const synth::SceneSample& sample) {
  ModelInput in;
  in.frames = sample.num_frames();
  in.height = sample.height;
  in.width = sample.width;
  const size_t hw = static_cast<size_t>(in.height) * in.width;
  in.images.resize(static_cast<size_t>(in.frames) * 3 * hw);
  for (int f = 0; f < in.frames; ++f) {
    const auto& rgb = sample.frames[static_cast<size_t>(f)].rgb;
    for (size_t p = 0; p < hw; ++p) {
      for (int c = 0; c < 3; ++c) in.images[(static_cast<size_t>(f) * 3 + c) * hw + p] = rgb[p * 3 + c];
    }
    in.intrinsics.push_back(sample.frames[static_cast<size_t>(f)].intrinsics);
  }
  return in;
}

Var ParamStore::add(const std::string& name, Tensor init) {
  require(!contains(name), "duplicate parameter name '" + name + "'", ErrorCode::kState);
  Var v = nn::parameter(std::move(init));
  index_[name] = items_.size();
  items_.emplace_back(name, v);
  return v;
}

const Var& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) fail(ErrorCode::kState, "unknown parameter '" + name + "'");
  return items_[it->second].second;
}

void ParamStore::zero_grad() {
  for (auto& [name, v] : items_) v->grad = Tensor();
}

size_t ParamStore::count() const {
  size_t n = 0;
  for (const auto& [name, v] : items_) n += v->value.numel();
  return n;
}

Model::Model(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  init_parameters();
}

Model::Model(const Model& other) : cfg_(other.cfg_) {
  for (const auto& [name, v] : other.params_.items()) params_.add(name, v->value);
}

void Model::add_linear(const std::string& name, int in, int out, double std, Rng& rng) {
  params_.add(name + ".w", random_tensor({in, out}, std, rng));
  params_.add(name + ".b", Tensor({out}));
}

void Model::add_block(const std::string& name, Rng& rng) {
  const int d = cfg_.dim;
  const int hidden = d * cfg_.mlp_ratio;
  params_.add(name + ".ln1.g", Tensor({d}, 1.0f));
  params_.add(name + ".ln1.b", Tensor({d}));
  add_linear(name + ".qkv", d, 3 * d, 1.0 / std::sqrt(d), rng);
  add_linear(name + ".proj", d, d, 0.5 / std::sqrt(d), rng);
  params_.add(name + ".ln2.g", Tensor({d}, 1.0f));
  params_.add(name + ".ln2.b", Tensor({d}));
  add_linear(name + ".fc1", d, hidden, 1.0 / std::sqrt(d), rng);
  add_linear(name + ".fc2", hidden, d, 0.5 / std::sqrt(hidden), rng);
}

void Model::add_dense_head(const std::string& name, int out_channels, Rng& rng) {
  const int d = cfg_.dim;
  const int c = cfg_.head_channels;
  for (size_t k = 0; k < cfg_.taps.size(); ++k) {
    const std::string tap = name + ".tap" + std::to_string(k);
    params_.add(tap + ".ln.g", Tensor({d}, 1.0f));
    params_.add(tap + ".ln.b", Tensor({d}));
    add_linear(tap + ".proj", d, c, 1.0 / std::sqrt(d), rng);
  }
  params_.add(name + ".conv1.w", random_tensor({c, c * 9}, std::sqrt(2.0 / (c * 9)), rng));
  params_.add(name + ".conv1.b", Tensor({c}));
  params_.add(name + ".conv2.w", random_tensor({c, (c + 3) * 9}, std::sqrt(2.0 / ((c + 3) * 9)), rng));
  params_.add(name + ".conv2.b", Tensor({c}));
  params_.add(name + ".out.w", random_tensor({out_channels, c}, 1.0 / std::sqrt(c), rng));
  params_.add(name + ".out.b", Tensor({out_channels}));
}

void Model::init_parameters() {
  Rng rng(cfg_.init_seed);
  const int d = cfg_.dim;
  const int pdim = 3 * cfg_.patch_size * cfg_.patch_size;
  add_linear("patch_embed", pdim, d, 1.0 / std::sqrt(pdim), rng);
  params_.add("pos_embed", random_tensor({cfg_.patches(), d}, 0.1, rng));
  add_linear("intrinsic_embed", 3, d, 0.1, rng);
  params_.add("query_embed", Tensor({d}));
  params_.add("camera_token.first", random_tensor({1, d}, 0.1, rng));
  params_.add("camera_token.rest", random_tensor({1, d}, 0.1, rng));
  params_.add("register_tokens.first", random_tensor({ModelConfig::kRegisterTokens, d}, 0.1, rng));
  params_.add("register_tokens.rest", random_tensor({ModelConfig::kRegisterTokens, d}, 0.1, rng));
  for (int b = 0; b < 2 * cfg_.block_pairs; ++b) add_block("blocks." + std::to_string(b), rng);

  params_.add("camera_head.ln_in.g", Tensor({d}, 1.0f));
  params_.add("camera_head.ln_in.b", Tensor({d}));
  for (int b = 0; b < cfg_.camera_head_layers; ++b) add_block("camera_head.blocks." + std::to_string(b), rng);
  params_.add("camera_head.ln_out.g", Tensor({d}, 1.0f));
  params_.add("camera_head.ln_out.b", Tensor({d}));
  add_linear("camera_head.out", d, ModelConfig::kCameraParams, 0.01, rng);

  add_dense_head("point_head", 4, rng);
  add_dense_head("depth_head", 2, rng);
  add_dense_head("motion_head", 3, rng);
}

Var Model::lin(const std::string& name, const Var& x) const {
  return nn::linear(x, params_.get(name + ".w"), params_.get(name + ".b"));
}

Var Model::patchify(const ModelInput& in, int frame) const {
  require(in.height == cfg_.height && in.width == cfg_.width, "patchify: image size does not match the model");
  require(frame >= 0 && frame < in.frames, "patchify: frame index out of range");
  const int p = cfg_.patch_size;
  const int gh = cfg_.grid_h(), gw = cfg_.grid_w();
  const size_t hw = static_cast<size_t>(in.height) * in.width;
  Tensor patches({gh * gw, 3 * p * p});
  const float* img = in.images.data() + static_cast<size_t>(frame) * 3 * hw;
  for (int gy = 0; gy < gh; ++gy) {
    for (int gx = 0; gx < gw; ++gx) {
      float* row = patches.ptr() + static_cast<size_t>(gy * gw + gx) * 3 * p * p;
      for (int c = 0; c < 3; ++c) {
        for (int dy = 0; dy < p; ++dy) {
          for (int dx = 0; dx < p; ++dx) {
            row[(c * p + dy) * p + dx] = img[c * hw + static_cast<size_t>(gy * p + dy) * in.width + gx * p + dx];
          }
        }
      }
    }
  }
  Var tokens = lin("patch_embed", nn::constant(std::move(patches)));
  return nn::add(tokens, params_.get("pos_embed"));
}

Var Model::intrinsic_embedding(const geometry::Intrinsics& k) const {
  Tensor feat({1, 3}, {static_cast<float>(k.fx / k.width), static_cast<float>(k.fy / k.width),
                       static_cast<float>(k.py / k.height)});
  return lin("intrinsic_embed", nn::constant(std::move(feat)));
}

std::vector<Var> Model::add_query_embedding(const std::vector<Var>& patch_tokens, int query) const {
  require(query >= 0 && query < static_cast<int>(patch_tokens.size()), "query frame index out of range");
  std::vector<Var> out = patch_tokens;
  out[static_cast<size_t>(query)] = nn::add_rowvec(patch_tokens[static_cast<size_t>(query)], params_.get("query_embed"));
  return out;
}

Var Model::assemble_tokens(const ModelInput& in, const ForwardOptions& opt) const {
  require(in.frames >= 1, "assemble_tokens: no frames");
  require(static_cast<int>(in.intrinsics.size()) == in.frames, "assemble_tokens: one intrinsics entry per frame required");
  std::vector<Var> patches;
  for (int f = 0; f < in.frames; ++f) {
    Var t = patchify(in, f);
    if (cfg_.intrinsic_embedding) t = nn::add_rowvec(t, intrinsic_embedding(in.intrinsics[static_cast<size_t>(f)]));
    patches.push_back(t);
  }
  if (cfg_.query_embedding && opt.use_query_embedding) patches = add_query_embedding(patches, opt.query);
  std::vector<Var> rows;
  for (int f = 0; f < in.frames; ++f) {
    const char* which = f == 0 ? "first" : "rest";
    rows.push_back(params_.get(std::string("camera_token.") + which));
    rows.push_back(params_.get(std::string("register_tokens.") + which));
    rows.push_back(patches[static_cast<size_t>(f)]);
  }
  return nn::concat_rows(rows);
}

Var Model::apply_block(const std::string& name, const Var& x, const std::vector<std::pair<int, int>>& segments) const {
  Var h = nn::layer_norm(x, params_.get(name + ".ln1.g"), params_.get(name + ".ln1.b"));
  Var a = nn::attention(lin(name + ".qkv", h), cfg_.heads, segments);
  Var y = nn::add(x, lin(name + ".proj", a));
  Var h2 = nn::layer_norm(y, params_.get(name + ".ln2.g"), params_.get(name + ".ln2.b"));
  return nn::add(y, lin(name + ".fc2", nn::gelu(lin(name + ".fc1", h2))));
}

Var Model::run_block(int block, const Var& tokens, int frames) const {
  require(block >= 0 && block < 2 * cfg_.block_pairs, "run_block: block index out of range");
  const int t = cfg_.tokens_per_frame();
  require(tokens->value.rows() == frames * t, "run_block: token count does not match frames");
  std::vector<std::pair<int, int>> segments;
  if (block % 2 == 0) {
    for (int f = 0; f < frames; ++f) segments.emplace_back(f * t, t);
  } else {
    segments.emplace_back(0, frames * t);
  }
  return apply_block("blocks." + std::to_string(block), tokens, segments);
}

std::vector<Var> Model::aggregate(const Var& tokens, int frames) const {
  std::vector<Var> layers;
  Var x = tokens;
  for (int b = 0; b < 2 * cfg_.block_pairs; ++b) {
    x = run_block(b, x, frames);
    layers.push_back(x);
  }
  return layers;
}

Var Model::camera_head(const Var& final_tokens, int frames) const {
  std::vector<int> rows;
  for (int f = 0; f < frames; ++f) rows.push_back(f * cfg_.tokens_per_frame());
  Var x = nn::gather_rows(final_tokens, rows);
  x = nn::layer_norm(x, params_.get("camera_head.ln_in.g"), params_.get("camera_head.ln_in.b"));
  for (int b = 0; b < cfg_.camera_head_layers; ++b) x = apply_block("camera_head.blocks." + std::to_string(b), x, {{0, frames}});
  x = nn::layer_norm(x, params_.get("camera_head.ln_out.g"), params_.get("camera_head.ln_out.b"));
  return nn::camera_encoding(lin("camera_head.out", x));
}

Var Model::dense_head(HeadKind kind, const std::vector<Var>& layers, const ModelInput& in) const {
  const std::string name = head_prefix(kind);
  const int frames = in.frames;
  const int t = cfg_.tokens_per_frame();
  const int np = cfg_.patches();
  std::vector<int> patch_rows;
  for (int f = 0; f < frames; ++f) {
    for (int p = 0; p < np; ++p) patch_rows.push_back(f * t + 1 + ModelConfig::kRegisterTokens + p);
  }
  Var fused;
  for (size_t k = 0; k < cfg_.taps.size(); ++k) {
    const std::string tap = name + ".tap" + std::to_string(k);
    Var x = nn::gather_rows(layers.at(static_cast<size_t>(cfg_.taps[k])), patch_rows);
    x = nn::layer_norm(x, params_.get(tap + ".ln.g"), params_.get(tap + ".ln.b"));
    x = lin(tap + ".proj", x);
    fused = fused ? nn::add(fused, x) : x;
  }
  Var grid = nn::tokens_to_grid(fused, frames, cfg_.grid_h(), cfg_.grid_w());
  Var x = nn::gelu(nn::conv2d(grid, params_.get(name + ".conv1.w"), params_.get(name + ".conv1.b"), 3));
  x = nn::upsample_bilinear(x, in.height, in.width);
  Tensor rgb({frames, 3, in.height, in.width}, in.images);
  x = nn::concat_channels(x, nn::constant(std::move(rgb)));
  x = nn::gelu(nn::conv2d(x, params_.get(name + ".conv2.w"), params_.get(name + ".conv2.b"), 3));
  return nn::conv2d(x, params_.get(name + ".out.w"), params_.get(name + ".out.b"), 1);
}

ForwardResult Model::forward(const ModelInput& in, const ForwardOptions& opt) const {
  require(in.frames >= 2 && in.frames <= cfg_.max_frames, "forward: frame count outside [2, max_frames]");
  require(in.height == cfg_.height && in.width == cfg_.width, "forward: frame size does not match the model");
  require(in.images.size() == static_cast<size_t>(in.frames) * 3 * in.height * in.width, "forward: image buffer size mismatch");
  require(opt.query >= 0 && opt.query < in.frames, "forward: query index out of range");
  Var tokens = assemble_tokens(in, opt);
  std::vector<Var> layers = aggregate(tokens, in.frames);
  ForwardResult r;
  r.camera = camera_head(layers.back(), in.frames);
  Var point = dense_head(HeadKind::kPoint, layers, in);
  r.points = nn::slice_channels(point, 0, 3);
  r.point_sigma = nn::exp_plus_one(nn::slice_channels(point, 3, 4));
  Var depth = dense_head(HeadKind::kDepth, layers, in);
  r.depth = nn::slice_channels(depth, 0, 1);
  r.depth_sigma = nn::exp_plus_one(nn::slice_channels(depth, 1, 2));
  if (cfg_.motion_head && opt.run_motion_head) r.motion = dense_head(HeadKind::kMotion, layers, in);
  return r;
}

PredictionBundle Model::predict(const ModelInput& in, const ForwardOptions& opt) const {
  nn::NoGradGuard guard;
  return to_bundle(forward(in, opt), in, opt.query);
}

void Model::copy_point_head_to_motion_head() {
  for (const auto& [name, v] : params_.items()) {
    if (name.rfind("motion_head.", 0) != 0) continue;
    const std::string src = "point_head." + name.substr(std::string("motion_head.").size());
    const Tensor& from = params_.get(src)->value;
    Tensor& to = v->value;
    // The point head's output layer has an extra uncertainty channel; the
    // motion head keeps the leading xyz rows.
    std::copy(from.data.begin(), from.data.begin() + static_cast<std::ptrdiff_t>(to.numel()), to.data.begin());
  }
}

PredictionBundle ModelPredictor::predict(const synth::SceneSample& sequence, int query) {
  ForwardOptions opt;
  opt.query = query;
  opt.use_query_embedding = use_query_;
  return model_.predict(make_input(sequence), opt);
}

PredictionBundle OraclePredictor::predict(const synth::SceneSample& seq, int query) {
  PredictionBundle b;
  b.frames = seq.num_frames();
  b.height = seq.height;
  b.width = seq.width;
  b.query = query;
  const size_t hw = static_cast<size_t>(b.height) * b.width;
  b.points.assign(b.frames * hw * 3, 0.0f);
  b.point_sigma.assign(b.frames * hw, 2.0f);
  b.depth.assign(b.frames * hw, 0.0f);
  b.depth_sigma.assign(b.frames * hw, 2.0f);
  b.motion.assign(b.frames * hw * 3, 0.0f);
  for (int f = 0; f < b.frames; ++f) {
    const auto& pm = seq.gt_pointmaps[static_cast<size_t>(f)];
    const auto& dm = seq.frames[static_cast<size_t>(f)].depth;
    const auto motion = synth::make_motion_target(seq, f, query);
    for (size_t p = 0; p < hw; ++p) {
      const size_t o = f * hw + p;
      if (pm.valid[p]) {
        for (int c = 0; c < 3; ++c) b.points[o * 3 + c] = static_cast<float>(pm.data[p * 3 + c]);
      }
      if (dm.valid[p]) b.depth[o] = static_cast<float>(dm.data[p]);
      if (motion.valid[p]) {
        for (int c = 0; c < 3; ++c) b.motion[o * 3 + c] = static_cast<float>(motion.data[p * 3 + c]);
      }
    }
    const auto enc = encode_camera(synth::relative_pose(seq, f), seq.frames[static_cast<size_t>(f)].intrinsics);
    for (double v : enc) b.camera.push_back(static_cast<float>(v));
  }
  return b;
}

}  // namespace densetrack::model

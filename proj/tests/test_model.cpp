#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "densetrack/error.hpp"
#include "densetrack/model.hpp"
#include "densetrack/random.hpp"

using namespace densetrack;
using namespace densetrack::model;
using nn::Tensor;
using nn::Var;

namespace {

ModelConfig tiny(uint64_t seed = 5) {
  ModelConfig c;
  c.height = 16;
  c.width = 16;
  c.patch_size = 4;
  c.dim = 16;
  c.block_pairs = 2;
  c.heads = 2;
  c.taps = {1, 3};
  c.head_channels = 6;
  c.camera_head_layers = 1;
  c.init_seed = seed;
  return c;
}

synth::SceneSample scene_for(const ModelConfig& c, int frames, uint64_t seed) {
  synth::SceneConfig s;
  s.height = c.height;
  s.width = c.width;
  s.patch_size = c.patch_size;
  s.num_frames = frames;
  s.num_spheres = 2;
  s.camera = synth::CameraTrajectory::kOrbit;
  s.vertices_per_sphere = 0;
  s.seed = seed;
  return synth::generate_scene(s);
}

void randomize(Model& m, const std::string& name, uint64_t seed, double scale = 0.5) {
  Rng rng(seed);
  for (auto& v : m.params().get(name)->value.data) v = static_cast<float>(rng.normal() * scale);
}

void zero(Model& m, const std::string& name) {
  auto& d = m.params().get(name)->value.data;
  std::fill(d.begin(), d.end(), 0.0f);
}

template <class A, class B>
bool same(const A& a, const B& b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin());
}

float max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
  float m = 0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Per-frame slice of a frame-major buffer.
std::vector<float> frame_slice(const std::vector<float>& buf, int frames, int f) {
  const size_t per = buf.size() / static_cast<size_t>(frames);
  return {buf.begin() + static_cast<std::ptrdiff_t>(per * f), buf.begin() + static_cast<std::ptrdiff_t>(per * (f + 1))};
}

}  // namespace

TEST_CASE("patchify token count and locality") {
  ModelConfig c = tiny();
  c.height = c.width = 32;
  c.patch_size = 8;
  const Model m(c);
  ModelInput in;
  in.frames = 1;
  in.height = in.width = 32;
  in.images.assign(3 * 32 * 32, 0.25f);
  const Var a = m.patchify(in, 0);
  CHECK(a->value.rows() == 16);

  // All-zero image: rows differ only by the positional table.
  ModelInput zero_in = in;
  std::fill(zero_in.images.begin(), zero_in.images.end(), 0.0f);
  const Var z = m.patchify(zero_in, 0);
  const Tensor& pos = m.params().get("pos_embed")->value;
  const int d = c.dim;
  for (int p = 1; p < 16; ++p) {
    for (int k = 0; k < d; ++k) {
      const float r0 = z->value.data[static_cast<size_t>(k)] - pos.data[static_cast<size_t>(k)];
      const float rp = z->value.data[static_cast<size_t>(p * d + k)] - pos.data[static_cast<size_t>(p * d + k)];
      CHECK(r0 == doctest::Approx(rp).epsilon(1e-6));
    }
  }

  // One pixel inside patch (row 1, col 2) changes only that token.
  ModelInput b_in = in;
  b_in.images[static_cast<size_t>(1 * 32 * 32 + 12 * 32 + 20)] = 0.9f;
  const Var b = m.patchify(b_in, 0);
  for (int p = 0; p < 16; ++p) {
    bool differs = false;
    for (int k = 0; k < d; ++k) differs |= a->value.data[static_cast<size_t>(p * d + k)] != b->value.data[static_cast<size_t>(p * d + k)];
    CHECK(differs == (p == 1 * 4 + 2));
  }
}

TEST_CASE("intrinsic embedding: zero weights, determinism and p_x independence") {
  const ModelConfig c = tiny();
  const auto seq = scene_for(c, 3, 1);
  const ModelInput in = make_input(seq);
  Model m(c);
  CHECK(same(m.intrinsic_embedding(in.intrinsics[0])->value.data, m.intrinsic_embedding(in.intrinsics[1])->value.data));

  ModelInput shifted = in;
  for (auto& k : shifted.intrinsics) k.px += 1.75;
  ForwardOptions opt;
  opt.query = 1;
  const auto base = m.predict(in, opt);
  const auto moved = m.predict(shifted, opt);
  CHECK(same(base.points, moved.points));
  CHECK(same(base.motion, moved.motion));
  CHECK(same(base.camera, moved.camera));

  zero(m, "intrinsic_embed.w");
  zero(m, "intrinsic_embed.b");
  const Var emb = m.intrinsic_embedding(in.intrinsics[0]);
  for (float v : emb->value.data) CHECK(v == 0.0f);
  ModelConfig off = c;
  off.intrinsic_embedding = false;
  Model m_off(off);
  for (auto& [name, v] : m_off.params().items()) v->value = m.params().get(name)->value;
  const auto with = m.predict(in, opt);
  const auto without = m_off.predict(in, opt);
  CHECK(same(with.points, without.points));
  CHECK(same(with.depth, without.depth));
}

TEST_CASE("query embedding: identity when zero, local to the query frame") {
  const ModelConfig c = tiny();
  Model m(c);
  const auto seq = scene_for(c, 3, 2);
  const ModelInput in = make_input(seq);
  std::vector<Var> patches;
  for (int f = 0; f < 3; ++f) patches.push_back(m.patchify(in, f));
  const auto same_out = m.add_query_embedding(patches, 1);
  for (int f = 0; f < 3; ++f) CHECK(same(same_out[static_cast<size_t>(f)]->value.data, patches[static_cast<size_t>(f)]->value.data));

  randomize(m, "query_embed", 3);
  const auto q1 = m.add_query_embedding(patches, 1);
  const auto q2 = m.add_query_embedding(patches, 2);
  CHECK(same(q1[0]->value.data, q2[0]->value.data));
  CHECK_FALSE(same(q1[1]->value.data, q2[1]->value.data));
  CHECK_FALSE(same(q1[2]->value.data, q2[2]->value.data));
  CHECK(same(q1[2]->value.data, patches[2]->value.data));
  CHECK(same(q2[1]->value.data, patches[1]->value.data));
  CHECK_THROWS_AS(m.add_query_embedding(patches, 3), Error);
}

TEST_CASE("query embedding zeroed: outputs independent of q") {
  const ModelConfig c = tiny();
  const Model m(c);
  const ModelInput in = make_input(scene_for(c, 3, 4));
  ForwardOptions a, b;
  a.query = 0;
  b.query = 2;
  const auto pa = m.predict(in, a), pb = m.predict(in, b);
  CHECK(same(pa.points, pb.points));
  CHECK(same(pa.motion, pb.motion));
  CHECK(same(pa.camera, pb.camera));
}

TEST_CASE("frame-wise blocks isolate frames; global blocks mix them") {
  const ModelConfig c = tiny();
  const Model m(c);
  const ModelInput in = make_input(scene_for(c, 3, 5));
  ForwardOptions opt;
  const Var tokens = m.assemble_tokens(in, opt);
  Tensor perturbed = tokens->value;
  const int t = c.tokens_per_frame(), d = c.dim;
  for (int k = 0; k < t * d; ++k) perturbed.data[static_cast<size_t>(t * d + k)] += 0.3f;  // frame 1
  const Var p = nn::constant(perturbed);

  const Var local_a = m.run_block(0, tokens, 3), local_b = m.run_block(0, p, 3);
  const Var global_a = m.run_block(1, tokens, 3), global_b = m.run_block(1, p, 3);
  for (int f : {0, 2}) {
    const auto s = static_cast<std::ptrdiff_t>(f * t * d), e = static_cast<std::ptrdiff_t>((f + 1) * t * d);
    CHECK(std::equal(local_a->value.data.begin() + s, local_a->value.data.begin() + e, local_b->value.data.begin() + s));
    CHECK_FALSE(std::equal(global_a->value.data.begin() + s, global_a->value.data.begin() + e, global_b->value.data.begin() + s));
  }
}

TEST_CASE("single frame: local and global blocks coincide") {
  ModelConfig c = tiny();
  Model m(c);
  // Give block 1 the weights of block 0 so only the attention pattern differs.
  for (auto& [name, v] : m.params().items()) {
    if (name.rfind("blocks.1.", 0) == 0) v->value = m.params().get("blocks.0." + name.substr(9))->value;
  }
  ModelInput in = make_input(scene_for(c, 2, 6));
  in.frames = 1;
  in.images.resize(3 * 16 * 16);
  in.intrinsics.resize(1);
  const Var tokens = m.assemble_tokens(in, ForwardOptions{});
  CHECK(same(m.run_block(0, tokens, 1)->value.data, m.run_block(1, tokens, 1)->value.data));
}

TEST_CASE("camera head: zero head gives identity, encodings round trip") {
  const ModelConfig c = tiny();
  Model m(c);
  zero(m, "camera_head.out.w");
  zero(m, "camera_head.out.b");
  const auto seq = scene_for(c, 2, 7);
  const auto b = m.predict(make_input(seq), ForwardOptions{});
  for (int f = 0; f < 2; ++f) {
    CHECK(b.camera[static_cast<size_t>(f * 9)] == 1.0f);
    for (int k = 1; k < 9; ++k) CHECK(b.camera[static_cast<size_t>(f * 9 + k)] == 0.0f);
  }
  const auto enc0 = encode_camera(synth::relative_pose(seq, 0), seq.frames[0].intrinsics);
  CHECK(enc0[0] == doctest::Approx(1.0).epsilon(1e-15));
  for (int k = 1; k < 7; ++k) CHECK(std::abs(enc0[static_cast<size_t>(k)]) < 1e-15);
  const auto f = focal_from_fov(enc0, seq.width, seq.height);
  CHECK(f[0] == doctest::Approx(seq.frames[0].intrinsics.fx).epsilon(1e-12));
  CHECK(f[1] == doctest::Approx(seq.frames[0].intrinsics.fy).epsilon(1e-12));
}

TEST_CASE("dense heads: shapes and uncertainty above one") {
  const ModelConfig c = tiny();
  const ModelInput in = make_input(scene_for(c, 2, 8));
  size_t sigma_values = 0;
  for (uint64_t seed = 0; seed < 4; ++seed) {
    const Model m(tiny(100 + seed));
    const ForwardResult r = m.forward(in, ForwardOptions{});
    CHECK(r.points->value.shape == std::vector<int>{2, 3, 16, 16});
    CHECK(r.point_sigma->value.shape == std::vector<int>{2, 1, 16, 16});
    CHECK(r.depth->value.shape == std::vector<int>{2, 1, 16, 16});
    CHECK(r.depth_sigma->value.shape == std::vector<int>{2, 1, 16, 16});
    CHECK(r.motion->value.shape == std::vector<int>{2, 3, 16, 16});
    CHECK(r.camera->value.shape == std::vector<int>{2, 9});
    for (const Var& s : {r.point_sigma, r.depth_sigma}) {
      for (float v : s->value.data) CHECK(v > 1.0f);
      sigma_values += s->value.numel();
    }
  }
  CHECK(sigma_values >= 1000);
}

TEST_CASE("motion head copied from the point head reproduces point output") {
  const ModelConfig c = tiny();
  Model m(c);
  m.copy_point_head_to_motion_head();
  const auto b = m.predict(make_input(scene_for(c, 3, 9)), ForwardOptions{});
  CHECK(same(b.points, b.motion));
}

TEST_CASE("frame permutation equivariance over frames 2..N") {
  const ModelConfig c = tiny();
  Model m(c);
  randomize(m, "query_embed", 10);
  const auto seq = scene_for(c, 4, 10);
  const ModelInput in = make_input(seq);
  const std::vector<int> perm{0, 3, 1, 2};  // new frame k is old frame perm[k]
  ModelInput pin = in;
  const size_t per = 3 * 16 * 16;
  for (int k = 0; k < 4; ++k) {
    std::copy(in.images.begin() + static_cast<std::ptrdiff_t>(per * perm[static_cast<size_t>(k)]),
              in.images.begin() + static_cast<std::ptrdiff_t>(per * (perm[static_cast<size_t>(k)] + 1)),
              pin.images.begin() + static_cast<std::ptrdiff_t>(per * k));
    pin.intrinsics[static_cast<size_t>(k)] = in.intrinsics[static_cast<size_t>(perm[static_cast<size_t>(k)])];
  }
  ForwardOptions a, b;
  a.query = 1;
  b.query = 2;  // old frame 1 sits at new index 2
  const auto pa = m.predict(in, a), pb = m.predict(pin, b);
  for (int k = 0; k < 4; ++k) {
    const int old = perm[static_cast<size_t>(k)];
    CHECK(max_abs_diff(frame_slice(pb.points, 4, k), frame_slice(pa.points, 4, old)) <= 1e-5f);
    CHECK(max_abs_diff(frame_slice(pb.motion, 4, k), frame_slice(pa.motion, 4, old)) <= 1e-5f);
    CHECK(max_abs_diff(frame_slice(pb.camera, 4, k), frame_slice(pa.camera, 4, old)) <= 1e-5f);
  }
}

TEST_CASE("forward: N = 2 outputs, determinism, argument checks") {
  const ModelConfig c = tiny();
  const Model m(c);
  const ModelInput in = make_input(scene_for(c, 2, 11));
  ForwardOptions opt;
  opt.query = 0;
  const auto a = m.predict(in, opt), b = m.predict(in, opt);
  CHECK(a.frames == 2);
  CHECK(a.points.size() == 2u * 16 * 16 * 3);
  CHECK(a.motion.size() == 2u * 16 * 16 * 3);
  CHECK(same(a.points, b.points));
  CHECK(same(a.motion, b.motion));
  opt.query = 2;
  CHECK_THROWS_AS(m.predict(in, opt), Error);
}

TEST_CASE("copy constructor deep-copies parameters") {
  Model a(tiny());
  Model b(a);
  randomize(b, "query_embed", 1);
  CHECK_FALSE(same(a.params().get("query_embed")->value.data, b.params().get("query_embed")->value.data));
}

#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "densetrack/error.hpp"
#include "densetrack/harness.hpp"
#include "densetrack/io.hpp"
#include "test_util.hpp"

using namespace densetrack;
using namespace densetrack::harness;
namespace fs = std::filesystem;

namespace {

RunOptions options(const fs::path& dir, const config::RunConfig& cfg) {
  RunOptions o;
  o.config_path = test_util::write_config(dir, cfg);
  o.out_dir = (dir / "out").string();
  return o;
}

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) {
    if (!l.empty()) out.push_back(l);
  }
  return out;
}

const MetricRecord& summary_row(const std::vector<MetricRecord>& rows) {
  for (const auto& r : rows) {
    if (r.sequence == "mean" || r.sequence == "all") return r;
  }
  FAIL("no summary row");
  return rows.front();
}

}  // namespace

TEST_CASE("gen-data twice with the same seed writes byte-identical bundles") {
  const auto cfg = test_util::tiny_run_config();
  const auto a = test_util::fresh_dir("gen_a"), b = test_util::fresh_dir("gen_b");
  const auto da = gen_data(options(a, cfg));
  const auto db = gen_data(options(b, cfg));
  REQUIRE(da.size() == 4);
  REQUIRE(db.size() == da.size());
  size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a / "out")) {
    if (!e.is_regular_file() || e.path().filename() == "manifest.jsonl") continue;
    const auto rel = fs::relative(e.path(), a / "out");
    CHECK(test_util::slurp(e.path()) == test_util::slurp(b / "out" / rel));
    ++files;
  }
  CHECK(files > 20);

  // A different seed changes the data.
  RunOptions other = options(test_util::fresh_dir("gen_c"), cfg);
  other.seed = 99;
  const auto dc = gen_data(other);
  CHECK(test_util::slurp(fs::path(dc[0]) / "points_01.bin") != test_util::slurp(fs::path(da[0]) / "points_01.bin"));
}

TEST_CASE("scene bundles load, verify and reject tampering") {
  const auto cfg = test_util::tiny_run_config();
  const auto dir = test_util::fresh_dir("bundle");
  const auto bundles = gen_data(options(dir, cfg));
  const auto scene = io::load_scene_bundle(bundles[0]);
  CHECK(scene.num_frames() == 3);
  CHECK(scene.height == 16);
  CHECK(find_bundles((dir / "out").string()).size() == bundles.size());

  const fs::path victim = fs::path(bundles[0]) / "depth_01.bin";
  std::string bytes = test_util::slurp(victim);
  bytes[bytes.size() - 1] ^= 0x01;
  std::ofstream(victim, std::ios::binary) << bytes;
  try {
    io::load_scene_bundle(bundles[0]);
    FAIL("tampered bundle accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kIo);
  }
}

TEST_CASE("png and array files round-trip") {
  const auto dir = test_util::fresh_dir("png");
  std::vector<uint8_t> rgb(5 * 3 * 3);
  for (size_t i = 0; i < rgb.size(); ++i) rgb[i] = static_cast<uint8_t>(i * 7);
  io::write_png((dir / "a.png").string(), 5, 3, rgb);
  int w = 0, h = 0;
  CHECK(io::read_png((dir / "a.png").string(), w, h) == rgb);
  CHECK(w == 5);
  CHECK(h == 3);

  const std::vector<double> v{1.5, -2.25, 3e-300, 4.0, 5.0, 6.0};
  io::write_array((dir / "a.bin").string(), v, 1, 2, 3);
  int c = 0;
  CHECK(io::read_array_f64((dir / "a.bin").string(), h, w, c) == v);
  CHECK((h == 1 && w == 2 && c == 3));
  CHECK_THROWS_AS(io::read_array_u8((dir / "a.bin").string(), h, w, c), Error);
}

TEST_CASE("eval on the oracle prints APD 100.00 and EPE 0.0000") {
  const auto cfg = test_util::tiny_run_config();
  const auto dir = test_util::fresh_dir("eval_oracle");
  const auto opt = options(dir, cfg);
  EvalOptions e;
  e.oracle = true;
  const auto rows = eval(opt, e);
  const auto& s = summary_row(rows);
  CHECK(s.apd == 100.0);
  CHECK(s.epe <= 1e-6);
  const std::string table = format_table(rows);
  CHECK(table.find("100.00") != std::string::npos);
  CHECK(table.find("0.0000") != std::string::npos);
  CHECK(lines(fs::path(opt.out_dir) / "metrics.jsonl").size() == rows.size());
  CHECK(fs::exists(fs::path(opt.out_dir) / "summary.txt"));

  SUBCASE("global scaling yields one pooled row") {
    e.scale_mode = config::ScaleMode::kGlobal;
    const auto g = eval(opt, e);
    REQUIRE(g.size() == 1);
    CHECK(g[0].sequence == "all");
    CHECK(g[0].apd == 100.0);
  }
  SUBCASE("zero motion loses accuracy on moving scenes") {
    e.zero_motion = true;
    CHECK(summary_row(eval(opt, e)).apd < 100.0);
  }
  SUBCASE("reconstruction with a depth window") {
    e.mode = EvalMode::kReconstruction;
    const auto all = summary_row(eval(opt, e));
    e.depth_filter = std::make_pair(0.1, 4.0);
    const auto near = summary_row(eval(opt, e));
    CHECK(all.apd == 100.0);
    CHECK(near.points < all.points);
  }
  SUBCASE("bundles written by gen-data evaluate the same") {
    const auto gen_dir = test_util::fresh_dir("eval_bundles");
    gen_data(options(gen_dir, cfg));
    e.data_dir = (gen_dir / "out" / "eval").string();
    CHECK(summary_row(eval(opt, e)).apd == 100.0);
  }
  SUBCASE("no predictor is an error") {
    e.oracle = false;
    CHECK_THROWS_AS(eval(opt, e), Error);
  }
}

TEST_CASE("runs append one manifest record each") {
  const auto cfg = test_util::tiny_run_config();
  const auto dir = test_util::fresh_dir("manifest");
  auto opt = options(dir, cfg);
  EvalOptions e;
  e.oracle = true;
  eval(opt, e);
  opt.seed = 12;
  eval(opt, e);
  const auto recs = lines(fs::path(opt.out_dir) / "manifest.jsonl");
  REQUIRE(recs.size() == 2);
  const auto first = nlohmann::json::parse(recs[0]);
  const auto second = nlohmann::json::parse(recs[1]);
  CHECK(first.at("command") == "eval");
  CHECK(first.at("seed") == 5);
  CHECK(second.at("seed") == 12);
  CHECK(first.at("config_hash") == config::config_hash(cfg));
  CHECK(first.at("config_hash") != second.at("config_hash"));
  CHECK(first.at("peak_memory").at("method") == "tensor-allocator");
  CHECK(first.at("version") == kVersion);
}

TEST_CASE("bench-mem records both methods") {
  const auto cfg = test_util::tiny_run_config();
  const auto dir = test_util::fresh_dir("bench");
  const auto opt = options(dir, cfg);
  const auto r = bench_mem(opt);
  size_t dense = 0, base = 0;
  size_t prev = 0;
  for (const auto& rec : r.records) {
    if (rec.method == "dense") {
      ++dense;
    } else {
      ++base;
      CHECK(rec.peak_bytes >= prev);
      prev = rec.peak_bytes;
    }
  }
  CHECK(dense == 3);
  CHECK(base == 3);
  CHECK(r.dense_spread <= 0.02);
  CHECK(r.baseline_slope > 0.0);
  CHECK(lines(fs::path(opt.out_dir) / "bench_memory.jsonl").size() == r.records.size());
  CHECK(fs::exists(fs::path(opt.out_dir) / "bench_memory.png"));
}

TEST_CASE("render writes point clouds and a trajectory plot") {
  const auto cfg = test_util::tiny_run_config();
  const auto dir = test_util::fresh_dir("render");
  RenderOptions r;
  r.oracle = true;
  r.query = 2;
  const auto files = render(options(dir, cfg), r);
  CHECK(files.size() == 4);
  const auto ply = fs::path(files[0]);
  REQUIRE(ply.extension() == ".ply");
  std::ifstream in(ply);
  std::string magic;
  std::getline(in, magic);
  CHECK(magic == "ply");
  CHECK(std::any_of(files.begin(), files.end(), [](const std::string& f) { return fs::path(f).extension() == ".png"; }));
}

#include "densetrack/harness.hpp"

#include <sys/resource.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include <json.hpp>

#include "densetrack/checkpoint.hpp"
#include "densetrack/error.hpp"
#include "densetrack/io.hpp"
#include "densetrack/model.hpp"
#include "densetrack/random.hpp"
#include "densetrack/training.hpp"

namespace densetrack::harness {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

std::string scene_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%03d", i);
  return buf;
}

size_t max_rss_bytes() {
  rusage ru{};
  getrusage(RUSAGE_SELF, &ru);
  return static_cast<size_t>(ru.ru_maxrss) * 1024;  // kilobytes on Linux
}

// Times a command and appends its manifest record on success.
class RunScope {
 public:
  RunScope(std::string command, const config::RunConfig& cfg, const RunOptions& opt)
      : command_(std::move(command)), cfg_(cfg), opt_(opt), t0_(std::chrono::steady_clock::now()) {
    require(!opt.out_dir.empty(), command_ + ": an output directory is required");
    fs::create_directories(opt.out_dir);
    nn::MemoryStats::reset_peak();
  }

  void output(const std::string& path) { outputs_.push_back(path); }

  void finish(const ordered_json& extra = ordered_json::object()) {
    ordered_json m;
    m["command"] = command_;
    m["config_path"] = opt_.config_path;
    m["config_hash"] = config::config_hash(cfg_);
    m["seed"] = cfg_.seed;
    m["version"] = kVersion;
    m["deterministic"] = opt_.deterministic;
    m["outputs"] = outputs_;
    m["wall_clock_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    m["peak_memory"] = {{"method", "tensor-allocator"},
                        {"tensor_peak_bytes", nn::MemoryStats::peak_bytes()},
                        {"process_max_rss_bytes", max_rss_bytes()}};
    if (!extra.empty()) m["details"] = extra;
    io::append_line((fs::path(opt_.out_dir) / "manifest.jsonl").string(), m.dump());
  }

 private:
  std::string command_;
  const config::RunConfig& cfg_;
  const RunOptions& opt_;
  std::vector<std::string> outputs_;
  std::chrono::steady_clock::time_point t0_;
};

// Scenes to evaluate: the bundles below data_dir, or the config's held-out
// datasets, grouped by dataset name.
struct EvalSet {
  std::string name;
  bool has_motion = true;
  std::vector<std::pair<std::string, synth::SceneSample>> scenes;
};

std::vector<EvalSet> eval_sets(const config::RunConfig& cfg, const std::string& data_dir) {
  std::vector<EvalSet> sets;
  if (!data_dir.empty()) {
    for (const auto& dir : find_bundles(data_dir)) {
      const fs::path p(dir);
      const std::string ds = p.parent_path().filename().string();
      if (sets.empty() || sets.back().name != ds) sets.push_back({ds, true, {}});
      sets.back().scenes.emplace_back(p.filename().string(), io::load_scene_bundle(dir));
    }
    require(!sets.empty(), "no scene bundles below " + data_dir, ErrorCode::kIo);
    return sets;
  }
  require(!cfg.eval.datasets.empty(), "config has no eval datasets", ErrorCode::kConfig);
  for (const auto& d : cfg.eval.datasets) {
    EvalSet s{d.name, d.has_motion, {}};
    auto scenes = config::generate_dataset(d);
    for (size_t i = 0; i < scenes.size(); ++i) s.scenes.emplace_back(scene_name(static_cast<int>(i)), std::move(scenes[i]));
    sets.push_back(std::move(s));
  }
  return sets;
}

struct PredictorHolder {
  std::unique_ptr<model::Model> model;
  std::unique_ptr<Predictor> base;
  std::unique_ptr<Predictor> wrapped;
  Predictor& get() { return wrapped ? *wrapped : *base; }
};

PredictorHolder make_predictor(const std::string& checkpoint_path, bool oracle, bool zero_motion) {
  PredictorHolder h;
  if (oracle) {
    require(checkpoint_path.empty(), "--oracle and --checkpoint are mutually exclusive");
    h.base = std::make_unique<model::OraclePredictor>();
  } else {
    require(!checkpoint_path.empty(), "a --checkpoint (or --oracle) is required");
    h.model = std::make_unique<model::Model>(checkpoint::load_model(checkpoint_path));
    h.base = std::make_unique<model::ModelPredictor>(*h.model);
  }
  if (zero_motion) h.wrapped = std::make_unique<metrics::ZeroMotionPredictor>(*h.base);
  return h;
}

MetricRecord make_record(const std::string& metric, const std::string& dataset, const std::string& sequence,
                         config::ScaleMode mode, const metrics::TrackSet& tracks, const std::vector<double>& thresholds,
                         metrics::ScalePlacement placement) {
  MetricRecord r;
  r.metric = metric;
  r.dataset = dataset;
  r.sequence = sequence;
  r.scale_mode = config::to_string(mode);
  r.thresholds = thresholds;
  r.points = tracks.size();
  const auto a = metrics::apd(tracks, thresholds, placement);
  r.apd = a.apd;
  r.scale = a.scale;
  r.per_threshold = a.per_threshold;
  r.epe = metrics::epe(tracks);
  return r;
}

MetricRecord mean_record(const std::vector<MetricRecord>& rows) {
  MetricRecord m = rows.front();
  m.sequence = "mean";
  m.scale = 0.0;
  m.apd = m.epe = 0.0;
  m.points = 0;
  std::fill(m.per_threshold.begin(), m.per_threshold.end(), 0.0);
  for (const auto& r : rows) {
    m.apd += r.apd;
    m.epe += r.epe;
    m.points += r.points;
    for (size_t k = 0; k < m.per_threshold.size(); ++k) m.per_threshold[k] += r.per_threshold[k];
  }
  const double n = static_cast<double>(rows.size());
  m.apd /= n;
  m.epe /= n;
  for (auto& v : m.per_threshold) v /= n;
  m.scale = std::nan("");  // per-sequence scales differ
  return m;
}

synth::SceneSample render_scene_input(const config::RunConfig& cfg, const RenderOptions& ro) {
  if (!ro.data_dir.empty()) return io::load_scene_bundle(ro.data_dir);
  const auto& src = !cfg.eval.datasets.empty() ? cfg.eval.datasets.front() : cfg.datasets.front();
  require(ro.scene >= 0 && ro.scene < src.scenes, "--scene index out of range");
  synth::SceneConfig sc = src.scene;
  sc.seed = mix_seed(src.seed, static_cast<uint64_t>(ro.scene));
  return synth::generate_scene(sc);
}

}  // namespace

config::RunConfig resolve_config(const RunOptions& opt) {
  require(!opt.config_path.empty(), "--config is required", ErrorCode::kConfig);
  config::RunConfig cfg = config::load_config(opt.config_path);
  if (opt.seed) {
    cfg.seed = *opt.seed;
    for (size_t k = 0; k < cfg.datasets.size(); ++k) cfg.datasets[k].seed = mix_seed(*opt.seed, k);
    for (size_t k = 0; k < cfg.eval.datasets.size(); ++k) cfg.eval.datasets[k].seed = mix_seed(*opt.seed, 1000 + k);
  }
  cfg.validate();
  return cfg;
}

std::vector<std::string> find_bundles(const std::string& root) {
  std::vector<std::string> out;
  if (!fs::exists(root)) fail(ErrorCode::kIo, "no such directory: " + root);
  if (fs::exists(fs::path(root) / "manifest.json")) return {root};
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file() && e.path().filename() == "manifest.json") out.push_back(e.path().parent_path().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::string> gen_data(const RunOptions& opt) {
  const config::RunConfig cfg = resolve_config(opt);
  RunScope scope("gen-data", cfg, opt);
  std::vector<std::string> dirs;
  auto emit = [&](const char* split, const config::DatasetConfig& d) {
    const auto scenes = config::generate_dataset(d);
    for (size_t i = 0; i < scenes.size(); ++i) {
      const fs::path dir = fs::path(opt.out_dir) / split / d.name / scene_name(static_cast<int>(i));
      fs::remove_all(dir);
      io::write_scene_bundle(dir.string(), scenes[i]);
      dirs.push_back(dir.string());
      scope.output(dir.string());
    }
  };
  for (const auto& d : cfg.datasets) emit("train", d);
  for (const auto& d : cfg.eval.datasets) emit("eval", d);
  scope.finish({{"bundles", dirs.size()}});
  return dirs;
}

std::string train(const RunOptions& opt, const TrainRunOptions& train_opt) {
  const config::RunConfig cfg = resolve_config(opt);
  RunScope scope("train", cfg, opt);
  training::TrainOptions to;
  to.out_dir = opt.out_dir;
  to.resume_from = train_opt.resume_from;
  to.deterministic = opt.deterministic;
  to.stop_after = train_opt.stop_after;
  const int log_every = std::max(1, (cfg.train.phase1.steps + cfg.train.phase2.steps) / 20);
  to.on_step = [&](const training::StepLog& s) {
    if (s.step % log_every == 0) {
      std::fprintf(stderr, "phase %d step %5d  loss %.5f\n", s.phase, s.step, s.loss.total);
    }
  };
  training::Trainer trainer(cfg, std::move(to));
  const std::string last = trainer.run();

  // Loss curves of both phases from the log, which also covers resumed runs.
  const fs::path log = fs::path(opt.out_dir) / "loss_log.jsonl";
  std::vector<io::Series> series{{{}, {}, {200, 40, 40}}, {{}, {}, {40, 90, 200}}};
  if (fs::exists(log)) {
    std::ifstream in(log);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      const int ph = j.at("phase").get<int>();
      auto& s = series[static_cast<size_t>(ph == 2)];
      s.x.push_back(j.at("step").get<double>());
      s.y.push_back(j.at("loss").at("total").get<double>());
    }
    const fs::path png = fs::path(opt.out_dir) / "loss_curve.png";
    io::plot_series(png.string(), series);
    scope.output(log.string());
    scope.output(png.string());
  }
  if (!last.empty()) scope.output(last);
  scope.finish({{"phase", trainer.state().phase},
                {"step", trainer.state().step},
                {"resumed_from", train_opt.resume_from}});
  return last;
}

std::string to_json(const MetricRecord& r) {
  ordered_json j;
  j["metric"] = r.metric;
  j["dataset"] = r.dataset;
  j["sequence"] = r.sequence;
  j["scale_mode"] = r.scale_mode;
  if (std::isfinite(r.scale)) {
    j["scale"] = r.scale;
  } else {
    j["scale"] = nullptr;
  }
  j["thresholds"] = r.thresholds;
  j["per_threshold"] = r.per_threshold;
  j["apd"] = r.apd;
  j["epe"] = r.epe;
  j["points"] = r.points;
  return j.dump();
}

std::string format_table(const std::vector<MetricRecord>& records) {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-15s %-16s %-12s %-8s %8s %10s %10s\n", "metric", "dataset", "sequence", "scale",
                "APD", "EPE", "points");
  os << buf;
  for (const auto& r : records) {
    std::snprintf(buf, sizeof(buf), "%-15s %-16s %-12s %-8s %8.2f %10.4f %10zu\n", r.metric.c_str(), r.dataset.c_str(),
                  r.sequence.c_str(), r.scale_mode.c_str(), r.apd, r.epe, r.points);
    os << buf;
  }
  return os.str();
}

std::vector<MetricRecord> eval(const RunOptions& opt, const EvalOptions& eo) {
  const config::RunConfig cfg = resolve_config(opt);
  RunScope scope("eval", cfg, opt);
  const auto mode = eo.scale_mode.value_or(cfg.eval.scale_mode);
  const auto depth_filter = eo.depth_filter ? eo.depth_filter : cfg.eval.depth_filter;
  const auto placement = (eo.literal_apd || cfg.eval.scale_on_ground_truth) ? metrics::ScalePlacement::kGroundTruth
                                                                              : metrics::ScalePlacement::kPrediction;
  const auto& thresholds = cfg.eval.thresholds;
  PredictorHolder pred = make_predictor(eo.checkpoint, eo.oracle, eo.zero_motion);
  const std::string metric = eo.mode == EvalMode::kTracking ? "tracking" : "reconstruction";

  std::vector<MetricRecord> rows, summary;
  for (const auto& set : eval_sets(cfg, eo.data_dir)) {
    if (eo.mode == EvalMode::kTracking && !set.has_motion) continue;
    std::vector<MetricRecord> per_seq;
    metrics::TrackSet pooled;
    for (const auto& [name, seq] : set.scenes) {
      metrics::TrackSet tracks;
      if (eo.mode == EvalMode::kTracking) {
        tracks = metrics::first_frame_trajectories(pred.get(), seq);
      } else {
        tracks = metrics::reconstruction_tracks(pred.get().predict(seq, 0), seq, depth_filter);
      }
      if (tracks.size() == 0) continue;
      if (mode == config::ScaleMode::kGlobal) {
        pooled.append(tracks);
      } else {
        per_seq.push_back(make_record(metric, set.name, name, mode, tracks, thresholds, placement));
      }
    }
    if (mode == config::ScaleMode::kGlobal) {
      if (pooled.size() == 0) continue;
      summary.push_back(make_record(metric, set.name, "all", mode, pooled, thresholds, placement));
    } else if (!per_seq.empty()) {
      rows.insert(rows.end(), per_seq.begin(), per_seq.end());
      summary.push_back(mean_record(per_seq));
    }
  }
  require(!summary.empty(), "eval: no sequence produced any valid point", ErrorCode::kState);
  rows.insert(rows.end(), summary.begin(), summary.end());

  const fs::path jsonl = fs::path(opt.out_dir) / "metrics.jsonl";
  const fs::path table = fs::path(opt.out_dir) / "summary.txt";
  {
    std::ofstream out(jsonl, std::ios::trunc);
    for (const auto& r : rows) out << to_json(r) << '\n';
    std::ofstream t(table, std::ios::trunc);
    t << format_table(summary);
  }
  std::cout << format_table(summary);
  scope.output(jsonl.string());
  scope.output(table.string());
  scope.finish({{"mode", metric},
                {"scale_mode", config::to_string(mode)},
                {"oracle", eo.oracle},
                {"zero_motion", eo.zero_motion},
                {"literal_apd", placement == metrics::ScalePlacement::kGroundTruth},
                {"checkpoint", eo.checkpoint},
                {"data_dir", eo.data_dir}});
  return rows;
}

baseline::BenchResult bench_mem(const RunOptions& opt, const BenchOptions& bo) {
  const config::RunConfig cfg = resolve_config(opt);
  RunScope scope("bench-mem", cfg, opt);
  const auto& bc = cfg.bench;
  const std::vector<long long> counts = bo.query_counts.value_or(bc.query_counts);

  synth::SceneConfig sc = cfg.datasets.empty() ? synth::SceneConfig{} : cfg.datasets.front().scene;
  sc.height = bc.model.height;
  sc.width = bc.model.width;
  sc.patch_size = bc.model.patch_size;
  sc.num_frames = bc.frames;
  sc.seed = mix_seed(cfg.seed, 0xbe4c);
  const synth::SceneSample seq = synth::generate_scene(sc);

  const model::Model dense(bc.model);
  baseline::BaselineConfig blc;
  blc.dim = bc.baseline_dim;
  blc.heads = bc.baseline_heads;
  blc.patch_size = bc.model.patch_size;
  blc.seed = mix_seed(cfg.seed, 0xba5e);
  const baseline::QueryTokenBaseline base(blc, seq.height, seq.width);

  const auto res = baseline::bench_memory(dense, base, seq, counts, bc.memory_limit_bytes, cfg.seed);

  const fs::path jsonl = fs::path(opt.out_dir) / "bench_memory.jsonl";
  const fs::path png = fs::path(opt.out_dir) / "bench_memory.png";
  {
    std::ofstream out(jsonl, std::ios::trunc);
    for (const auto& r : res.records) out << baseline::to_json(r) << '\n';
  }
  std::vector<io::Series> series{{{}, {}, {40, 90, 200}}, {{}, {}, {200, 40, 40}}};
  std::vector<const baseline::MemoryRecord*> sorted;
  for (const auto& r : res.records) sorted.push_back(&r);
  std::stable_sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->queries < b->queries; });
  for (const auto* r : sorted) {
    auto& s = series[r->method == "dense" ? 0 : 1];
    s.x.push_back(static_cast<double>(r->queries));
    s.y.push_back(static_cast<double>(r->peak_bytes) / (1024.0 * 1024.0));
  }
  io::plot_series(png.string(), series);

  std::printf("%-12s %10s %14s %6s\n", "method", "queries", "peak_MiB", "oom");
  for (const auto* r : sorted) {
    std::printf("%-12s %10lld %14.3f %6s\n", r->method.c_str(), r->queries,
                static_cast<double>(r->peak_bytes) / (1024.0 * 1024.0), r->oom ? "yes" : "no");
  }
  std::printf("dense spread %.4f%%  dense slope %.3f B/query  baseline slope %.3f B/query\n", 100.0 * res.dense_spread,
              res.dense_slope, res.baseline_slope);
  scope.output(jsonl.string());
  scope.output(png.string());
  scope.finish({{"frames", bc.frames},
                {"height", seq.height},
                {"width", seq.width},
                {"query_counts", counts},
                {"dense_spread", res.dense_spread},
                {"dense_slope", res.dense_slope},
                {"baseline_slope", res.baseline_slope},
                {"memory_limit_bytes", bc.memory_limit_bytes}});
  return res;
}

std::vector<std::string> render(const RunOptions& opt, const RenderOptions& ro) {
  const config::RunConfig cfg = resolve_config(opt);
  RunScope scope("render", cfg, opt);
  const synth::SceneSample seq = render_scene_input(cfg, ro);
  require(ro.query >= 0 && ro.query < seq.num_frames(), "--query out of range");
  PredictorHolder pred = make_predictor(ro.checkpoint, ro.oracle, false);
  std::vector<std::string> files;

  const PredictionBundle b = pred.get().predict(seq, ro.query);
  const size_t hw = static_cast<size_t>(seq.height) * seq.width;
  for (int f = 0; f < seq.num_frames(); ++f) {
    std::vector<std::array<double, 3>> pts;
    std::vector<std::array<uint8_t, 3>> cols;
    const auto rgb = io::to_rgb8(seq.frames[static_cast<size_t>(f)].rgb);
    for (size_t p = 0; p < hw; ++p) {
      const size_t o = static_cast<size_t>(f) * hw + p;
      pts.push_back({b.points[o * 3], b.points[o * 3 + 1], b.points[o * 3 + 2]});
      cols.push_back({rgb[p * 3], rgb[p * 3 + 1], rgb[p * 3 + 2]});
    }
    char name[64];
    std::snprintf(name, sizeof(name), "points_f%02d.ply", f);
    const std::string path = (fs::path(opt.out_dir) / name).string();
    io::write_ply(path, pts, cols);
    files.push_back(path);
  }

  // Trajectories of a pixel grid of frame 0, projected into frame 0's
  // camera: predicted in red, ground truth in green.
  const int scale = std::max(1, 256 / std::max(seq.width, seq.height));
  const int stride = std::max(1, seq.width / 8);
  io::Canvas canvas(seq.width * scale, seq.height * scale);
  canvas.blit_scaled(seq.frames[0].rgb, seq.width, seq.height, scale);
  const auto& k0 = seq.frames[0].intrinsics;
  const auto& gt0 = seq.gt_pointmaps[0];
  std::vector<PredictionBundle> per_q;
  std::vector<geometry::MotionMap> targets;
  for (int q = 0; q < seq.num_frames(); ++q) {
    per_q.push_back(pred.get().predict(seq, q));
    targets.push_back(synth::make_motion_target(seq, 0, q));
  }
  auto to_canvas = [&](const geometry::Vec3& x, double& u, double& v) {
    if (x.z() <= 1e-6) return false;
    const auto pr = geometry::project(x, k0);
    u = (pr.u + 0.5) * scale - 0.5;
    v = (pr.v + 0.5) * scale - 0.5;
    return true;
  };
  for (int j = stride / 2; j < seq.height; j += stride) {
    for (int i = stride / 2; i < seq.width; i += stride) {
      const size_t p = static_cast<size_t>(j) * seq.width + i;
      if (!gt0.valid[p]) continue;
      double pu = 0, pv = 0, gu = 0, gv = 0;
      bool have_prev = false;
      for (int q = 0; q < seq.num_frames(); ++q) {
        const auto& pb = per_q[static_cast<size_t>(q)];
        geometry::Vec3 x(pb.points[p * 3], pb.points[p * 3 + 1], pb.points[p * 3 + 2]);
        if (!pb.motion.empty()) x += geometry::Vec3(pb.motion[p * 3], pb.motion[p * 3 + 1], pb.motion[p * 3 + 2]);
        const geometry::Vec3 g = gt0.at(j, i) + targets[static_cast<size_t>(q)].at(j, i);
        double u, v, a, c;
        if (!to_canvas(x, u, v) || !to_canvas(g, a, c)) {
          have_prev = false;
          continue;
        }
        if (have_prev) {
          canvas.line(gu, gv, a, c, {40, 200, 60});
          canvas.line(pu, pv, u, v, {230, 40, 40});
        }
        pu = u, pv = v, gu = a, gv = c;
        have_prev = true;
      }
      if (have_prev) {
        canvas.dot(gu, gv, 1, {40, 200, 60});
        canvas.dot(pu, pv, 1, {230, 40, 40});
      }
    }
  }
  const std::string png = (fs::path(opt.out_dir) / "trajectories.png").string();
  canvas.save(png);
  files.push_back(png);
  for (const auto& f : files) scope.output(f);
  scope.finish({{"query", ro.query}, {"scene", ro.scene}, {"oracle", ro.oracle}, {"checkpoint", ro.checkpoint}});
  return files;
}

}  // namespace densetrack::harness

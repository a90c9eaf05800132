// Command-line front end over the C API.

#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "densetrack/densetrack.h"

namespace {

struct Common {
  std::string config;
  std::string out;
  long long seed = -1;
  bool deterministic = false;

  dt_run_options options() const {
    dt_run_options o{};
    o.config_path = config.c_str();
    o.out_dir = out.c_str();
    o.has_seed = seed >= 0;
    o.seed = seed >= 0 ? static_cast<uint64_t>(seed) : 0;
    // Execution is single-worker and in-order either way; the flag is
    // recorded in the manifest.
    o.deterministic = deterministic ? 1 : 0;
    return o;
  }
};

void add_common(CLI::App* app, Common& c, bool needs_out = true) {
  app->add_option("--config", c.config, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  auto* out = app->add_option("--out", c.out, "Output directory");
  if (needs_out) out->required();
  app->add_option("--seed", c.seed, "Run seed; re-derives dataset seeds")->check(CLI::NonNegativeNumber);
  app->add_flag("--deterministic", c.deterministic, "Bit-reproducible single-worker execution");
}

int report(dt_status s) {
  if (s == DT_OK) return 0;
  std::fprintf(stderr, "error (%s): %s\n", dt_status_name(s), dt_last_error());
  return static_cast<int>(s);
}

std::vector<long long> parse_counts(const std::string& text) {
  std::vector<long long> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "all") {
      out.push_back(-1);
    } else {
      std::size_t used = 0;
      const long long v = std::stoll(item, &used);
      if (used != item.size() || v < 0) throw CLI::ValidationError("--query-counts", "bad count '" + item + "'");
      out.push_back(v);
    }
  }
  if (out.empty()) throw CLI::ValidationError("--query-counts", "empty list");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dense 3D tracking from synthetic video: data, training, evaluation and benchmarks"};
  app.set_version_flag("--version", std::string(dt_version()));
  app.require_subcommand(1);

  Common gen_c, train_c, eval_c, bench_c, render_c;

  auto* gen = app.add_subcommand("gen-data", "Write scene bundles for the train and eval datasets");
  add_common(gen, gen_c);

  auto* train = app.add_subcommand("train", "Run both training phases");
  add_common(train, train_c);
  std::string resume;
  long long stop_after = -1;
  train->add_option("--resume", resume, "Training checkpoint to resume from")->check(CLI::ExistingFile);
  train->add_option("--stop-after", stop_after, "Stop after this many steps and write latest.ckpt");

  auto* ev = app.add_subcommand("eval", "Tracking or reconstruction metrics");
  add_common(ev, eval_c);
  std::string mode = "tracking", checkpoint, scale_mode, depth_filter, data;
  bool oracle = false, zero_motion = false, literal = false;
  ev->add_option("--mode", mode, "tracking | reconstruction")->check(CLI::IsMember({"tracking", "reconstruction"}));
  ev->add_option("--checkpoint", checkpoint, "Model or training checkpoint")->check(CLI::ExistingFile);
  ev->add_flag("--oracle", oracle, "Use ground truth as the prediction");
  ev->add_flag("--zero-motion", zero_motion, "Replace predicted motion by zero");
  ev->add_option("--scale-mode", scale_mode, "per-seq | global")->check(CLI::IsMember({"per-seq", "global"}));
  ev->add_option("--depth-filter", depth_filter, "MIN,MAX ground-truth depth window (reconstruction)");
  ev->add_flag("--literal-apd", literal, "Apply the median scale to ground truth inside APD");
  ev->add_option("--data", data, "Scene bundle directory instead of the config's eval datasets")
      ->check(CLI::ExistingDirectory);

  auto* bench = app.add_subcommand("bench-mem", "Peak memory versus query count, dense head and query-token baseline");
  add_common(bench, bench_c);
  std::string counts;
  bench->add_option("--query-counts", counts, "Comma-separated counts; 'all' for every pixel");

  auto* render = app.add_subcommand("render", "Export predicted pointmaps as PLY and a trajectory overlay as PNG");
  add_common(render, render_c);
  std::string r_checkpoint, r_data;
  bool r_oracle = false;
  int r_scene = 0, r_query = 0;
  render->add_option("--checkpoint", r_checkpoint, "Model or training checkpoint")->check(CLI::ExistingFile);
  render->add_flag("--oracle", r_oracle, "Render ground truth");
  render->add_option("--data", r_data, "One scene bundle directory")->check(CLI::ExistingDirectory);
  render->add_option("--scene", r_scene, "Scene index in the first eval dataset")->check(CLI::NonNegativeNumber);
  render->add_option("--query", r_query, "Query frame")->check(CLI::NonNegativeNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const auto o = gen_c.options();
      return report(dt_run_gen_data(&o));
    }
    if (*train) {
      const auto o = train_c.options();
      dt_train_options t{resume.empty() ? nullptr : resume.c_str(), stop_after};
      return report(dt_run_train(&o, &t));
    }
    if (*ev) {
      const auto o = eval_c.options();
      dt_eval_options e{};
      e.mode = mode == "reconstruction" ? DT_EVAL_RECONSTRUCTION : DT_EVAL_TRACKING;
      e.checkpoint = checkpoint.empty() ? nullptr : checkpoint.c_str();
      e.oracle = oracle;
      e.zero_motion = zero_motion;
      e.scale_mode = scale_mode.empty() ? DT_SCALE_FROM_CONFIG
                     : scale_mode == "global" ? DT_SCALE_GLOBAL
                                              : DT_SCALE_PER_SEQUENCE;
      if (!depth_filter.empty()) {
        const auto comma = depth_filter.find(',');
        if (comma == std::string::npos) throw CLI::ValidationError("--depth-filter", "expected MIN,MAX");
        e.has_depth_filter = 1;
        e.depth_min = std::stod(depth_filter.substr(0, comma));
        e.depth_max = std::stod(depth_filter.substr(comma + 1));
      }
      e.literal_apd = literal;
      e.data_dir = data.empty() ? nullptr : data.c_str();
      return report(dt_run_eval(&o, &e, nullptr, nullptr));
    }
    if (*bench) {
      const auto o = bench_c.options();
      if (counts.empty()) return report(dt_run_bench_mem(&o, nullptr, 0));
      const auto v = parse_counts(counts);
      return report(dt_run_bench_mem(&o, v.data(), v.size()));
    }
    if (*render) {
      const auto o = render_c.options();
      dt_render_options r{r_checkpoint.empty() ? nullptr : r_checkpoint.c_str(), r_oracle,
                          r_data.empty() ? nullptr : r_data.c_str(), r_scene, r_query};
      return report(dt_run_render(&o, &r));
    }
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

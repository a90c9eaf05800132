#include "densetrack/training.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "densetrack/checkpoint.hpp"
#include "densetrack/error.hpp"
#include "densetrack/prediction.hpp"

namespace densetrack::training {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

bool starts_with(const std::string& s, const char* prefix) { return s.rfind(prefix, 0) == 0; }

// [N, C, H, W] float -> N×H×W×C double.
std::vector<double> to_channel_last(const nn::Tensor& t) {
  const int n = t.dim(0), c = t.dim(1);
  const size_t hw = static_cast<size_t>(t.dim(2)) * t.dim(3);
  std::vector<double> out(t.numel());
  for (int f = 0; f < n; ++f) {
    for (int ch = 0; ch < c; ++ch) {
      const float* src = t.ptr() + (static_cast<size_t>(f) * c + ch) * hw;
      for (size_t p = 0; p < hw; ++p) out[(f * hw + p) * c + ch] = src[p];
    }
  }
  return out;
}

// Adds k · g (channel-last double) into a channel-first float gradient.
void add_channel_first(nn::Tensor& grad, const std::vector<double>& g, double k) {
  const int n = grad.dim(0), c = grad.dim(1);
  const size_t hw = static_cast<size_t>(grad.dim(2)) * grad.dim(3);
  for (int f = 0; f < n; ++f) {
    for (int ch = 0; ch < c; ++ch) {
      float* dst = grad.ptr() + (static_cast<size_t>(f) * c + ch) * hw;
      for (size_t p = 0; p < hw; ++p) dst[p] += static_cast<float>(k * g[(f * hw + p) * c + ch]);
    }
  }
}

void accumulate(std::vector<double>& dst, const std::vector<double>& src) {
  if (src.empty()) return;
  if (dst.empty()) dst.assign(src.size(), 0.0);
  for (size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

std::string checkpoint_name(int phase, int step) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "ckpt_p%d_s%06d.ckpt", phase, step);
  return buf;
}

}  // namespace

const ParamGroup* PhaseSpec::group_of(const std::string& param) const {
  for (const auto& g : groups) {
    for (const auto& p : g.params) {
      if (p == param) return &g;
    }
  }
  return nullptr;
}

PhaseSpec build_phase(int id, const model::Model& m, const config::PhaseConfig& phase) {
  if (id != 1 && id != 2) fail(ErrorCode::kInvalidArgument, "unknown training phase " + std::to_string(id));
  phase.validate();
  PhaseSpec s;
  s.id = id;
  s.steps = phase.steps;
  s.warmup = phase.warmup;
  s.intrinsic_embedding = m.config().intrinsic_embedding;
  if (id == 1) {
    ParamGroup special{"intrinsic_embed", 5e-5 * phase.lr_scale, {}};
    ParamGroup rest{"rest", 5e-6 * phase.lr_scale, {}};
    for (const auto& [name, v] : m.params().items()) {
      if (starts_with(name, "query_embed") || starts_with(name, "motion_head.")) continue;
      (starts_with(name, "intrinsic_embed.") ? special : rest).params.push_back(name);
    }
    s.groups = {special, rest};
    return s;
  }
  require(m.config().motion_head && m.config().query_embedding, "phase 2 needs the motion head and query embedding",
          ErrorCode::kConfig);
  s.motion_loss = true;
  s.confidence_terms = false;
  s.query_embedding = true;
  s.motion_datasets_only = true;
  ParamGroup special{"motion_head+query_embed", 1e-5 * phase.lr_scale, {}};
  ParamGroup rest{"rest", 1e-6 * phase.lr_scale, {}};
  for (const auto& [name, v] : m.params().items()) {
    (starts_with(name, "query_embed") || starts_with(name, "motion_head.") ? special : rest).params.push_back(name);
  }
  s.groups = {special, rest};
  return s;
}

double lr_schedule(int step, int warmup, int total, double base_lr) {
  require(warmup >= 0 && warmup < total, "lr_schedule: warmup must be shorter than the total step count");
  require(step >= 0 && step <= total, "lr_schedule: step outside [0, total]");
  if (step < warmup) return base_lr * static_cast<double>(step) / warmup;
  const double progress = static_cast<double>(step - warmup) / (total - warmup);
  return base_lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

Targets make_targets(const synth::SceneSample& seq, int query, bool with_motion) {
  const int n = seq.num_frames();
  const size_t hw = static_cast<size_t>(seq.height) * seq.width;
  Targets t;
  t.shape3 = {n, seq.height, seq.width, 3};
  t.shape1 = {n, seq.height, seq.width, 1};
  t.depth.reserve(n * hw);
  t.points.reserve(n * hw * 3);
  for (int f = 0; f < n; ++f) {
    const auto& frame = seq.frames[static_cast<size_t>(f)];
    const auto enc = encode_camera(synth::relative_pose(seq, f), frame.intrinsics);
    t.camera.insert(t.camera.end(), enc.begin(), enc.end());
    t.depth.insert(t.depth.end(), frame.depth.data.begin(), frame.depth.data.end());
    t.depth_valid.insert(t.depth_valid.end(), frame.depth.valid.begin(), frame.depth.valid.end());
    const auto& pm = seq.gt_pointmaps[static_cast<size_t>(f)];
    t.points.insert(t.points.end(), pm.data.begin(), pm.data.end());
    t.point_valid.insert(t.point_valid.end(), pm.valid.begin(), pm.valid.end());
    if (with_motion) {
      const auto mm = synth::make_motion_target(seq, f, query);
      t.motion.insert(t.motion.end(), mm.data.begin(), mm.data.end());
      t.motion_valid.insert(t.motion_valid.end(), mm.valid.begin(), mm.valid.end());
    }
  }
  return t;
}

LossGraph compute_loss(const model::ForwardResult& out, const Targets& tg, const PhaseSpec& phase,
                       const losses::LossWeights& w) {
  w.validate();
  losses::LossComponents c;
  // Gradients w.r.t. each head output, channel-last, already weighted.
  std::vector<double> g_camera, g_depth, g_depth_sigma, g_points, g_point_sigma, g_motion;

  if (phase.camera_loss) {
    const auto& cam = out.camera->value;
    std::vector<double> pred(cam.data.begin(), cam.data.end());
    auto l = losses::camera_loss(pred, tg.camera, w.huber_eps);
    c.camera = l.value;
    for (double& g : l.d_pred) g *= w.camera;
    g_camera = std::move(l.d_pred);
  }

  auto map_terms = [&](const nn::Var& pred_v, const nn::Var& sigma_v, const std::vector<double>& gt,
                       const std::vector<uint8_t>& valid, const losses::MapShape& shape, double weight, double& reg,
                       double& conf, double& grad, size_t& pixels, std::vector<double>& g_pred,
                       std::vector<double>& g_sigma) {
    const auto pred = to_channel_last(pred_v->value);
    auto r = losses::map_regression_loss(pred, gt, valid, shape);
    reg = r.value;
    pixels = r.count;
    c.empty_mask = c.empty_mask || r.empty_mask;
    accumulate(g_pred, r.d_pred);
    if (phase.confidence_terms) {
      const auto sigma = to_channel_last(sigma_v->value);
      auto cf = losses::confidence_loss(pred, gt, sigma, valid, shape, w.alpha);
      auto gr = losses::gradient_loss(pred, gt, sigma, valid, shape);
      conf = cf.value;
      grad = gr.value;
      accumulate(g_pred, cf.d_pred);
      accumulate(g_pred, gr.d_pred);
      accumulate(g_sigma, cf.d_sigma);
      accumulate(g_sigma, gr.d_sigma);
    }
    for (double& g : g_pred) g *= weight;
    for (double& g : g_sigma) g *= weight;
  };

  if (phase.depth_loss) {
    map_terms(out.depth, out.depth_sigma, tg.depth, tg.depth_valid, tg.shape1, w.depth, c.depth_reg, c.depth_conf,
              c.depth_grad, c.depth_pixels, g_depth, g_depth_sigma);
  }
  if (phase.point_loss) {
    map_terms(out.points, out.point_sigma, tg.points, tg.point_valid, tg.shape3, w.point, c.point_reg, c.point_conf,
              c.point_grad, c.point_pixels, g_points, g_point_sigma);
  }
  if (phase.motion_loss) {
    require(out.motion != nullptr, "motion loss requested but the motion head did not run", ErrorCode::kState);
    require(!tg.motion.empty(), "motion loss requested without motion targets", ErrorCode::kState);
    const auto pred = to_channel_last(out.motion->value);
    auto l = losses::motion_loss(pred, tg.motion, tg.motion_valid, tg.shape3);
    c.motion_reg = l.value;
    c.motion_pixels = l.count;
    for (double& g : l.d_pred) g *= w.motion;
    g_motion = std::move(l.d_pred);
  }

  LossGraph lg;
  lg.report = losses::total_loss(c, w);

  struct Seed {
    nn::Var var;
    std::vector<double> grad;
    bool map;
  };
  std::vector<Seed> seeds;
  if (!g_camera.empty()) seeds.push_back({out.camera, std::move(g_camera), false});
  if (!g_depth.empty()) seeds.push_back({out.depth, std::move(g_depth), true});
  if (!g_depth_sigma.empty()) seeds.push_back({out.depth_sigma, std::move(g_depth_sigma), true});
  if (!g_points.empty()) seeds.push_back({out.points, std::move(g_points), true});
  if (!g_point_sigma.empty()) seeds.push_back({out.point_sigma, std::move(g_point_sigma), true});
  if (!g_motion.empty()) seeds.push_back({out.motion, std::move(g_motion), true});

  std::vector<nn::Var> parents;
  for (const auto& s : seeds) parents.push_back(s.var);
  auto shared = std::make_shared<std::vector<Seed>>(std::move(seeds));
  lg.root = nn::make_node(nn::Tensor({1}, std::vector<float>{static_cast<float>(lg.report.total)}), parents,
                          [shared](nn::Node& self) {
                            const double up = self.grad.data[0];
                            for (auto& s : *shared) {
                              if (!s.var->requires_grad) continue;
                              nn::Tensor& g = s.var->ensure_grad();
                              if (s.map) {
                                add_channel_first(g, s.grad, up);
                              } else {
                                for (size_t i = 0; i < s.grad.size(); ++i) g.data[i] += static_cast<float>(up * s.grad[i]);
                              }
                            }
                          });
  return lg;
}

void Adam::step(model::ParamStore& params, const std::map<std::string, double>& lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (const auto& [name, v] : params.items()) {
    auto it = lr.find(name);
    if (it == lr.end() || v->grad.numel() == 0) continue;
    const double rate = it->second;
    auto& m = m_[name];
    auto& s = v_[name];
    if (m.numel() != v->value.numel()) m = nn::Tensor(v->value.shape);
    if (s.numel() != v->value.numel()) s = nn::Tensor(v->value.shape);
    for (size_t i = 0; i < v->value.numel(); ++i) {
      const double g = v->grad.data[i];
      const double mi = beta1_ * m.data[i] + (1.0 - beta1_) * g;
      const double si = beta2_ * s.data[i] + (1.0 - beta2_) * g * g;
      m.data[i] = static_cast<float>(mi);
      s.data[i] = static_cast<float>(si);
      const double update = rate * (mi / bc1) / (std::sqrt(si / bc2) + eps_);
      v->value.data[i] = static_cast<float>(v->value.data[i] - update);
    }
  }
}

void Adam::reset() {
  t_ = 0;
  m_.clear();
  v_.clear();
}

std::string to_json(const StepLog& s) {
  json j = {{"phase", s.phase},
            {"step", s.step},
            {"batch_seed", s.batch_seed},
            {"dataset", s.dataset},
            {"scene", s.scene},
            {"query", s.query},
            {"frames", s.frames},
            {"lr", s.lr}};
  json loss = json::object();
  for (const auto& [k, v] : s.loss.flat()) loss[k] = v;
  j["loss"] = loss;
  return j.dump();
}

Trainer::Trainer(const config::RunConfig& cfg, TrainOptions opt)
    : cfg_(cfg),
      opt_(std::move(opt)),
      model_(cfg.model),
      adam_(cfg.train.beta1, cfg.train.beta2, cfg.train.adam_eps) {
  cfg_.validate();
  require(!cfg_.datasets.empty(), "training needs at least one dataset", ErrorCode::kConfig);
  for (const auto& d : cfg_.datasets) {
    scenes_.push_back(config::generate_dataset(d));
    specs_.push_back(config::dataset_spec(d, scenes_.back()));
  }
  if (!opt_.out_dir.empty()) {
    fs::create_directories(opt_.out_dir);
    if (opt_.resume_from.empty()) fs::remove(fs::path(opt_.out_dir) / "loss_log.jsonl");
  }
  if (!opt_.resume_from.empty()) {
    load_checkpoint(opt_.resume_from);
    // Drop log records past the checkpoint so the log matches an
    // uninterrupted run.
    if (!opt_.out_dir.empty()) {
      const fs::path log = fs::path(opt_.out_dir) / "loss_log.jsonl";
      if (fs::exists(log)) {
        std::ifstream in(log);
        std::vector<std::string> keep;
        std::string line;
        while (std::getline(in, line)) {
          if (line.empty()) continue;
          const json j = json::parse(line);
          const int ph = j.at("phase").get<int>(), st = j.at("step").get<int>();
          if (ph < state_.phase || (ph == state_.phase && st < state_.step)) keep.push_back(line);
        }
        in.close();
        std::ofstream out(log, std::ios::trunc);
        for (const auto& l : keep) out << l << '\n';
      }
    }
  }
}

PhaseSpec Trainer::phase_spec(int id) const {
  return build_phase(id, model_, id == 1 ? cfg_.train.phase1 : cfg_.train.phase2);
}

void Trainer::enter_phase2() {
  model_.copy_point_head_to_motion_head();
  adam_.reset();
  state_.phase = 2;
  state_.step = 0;
  state_.phase2_initialized = true;
}

StepLog Trainer::train_step(const PhaseSpec& phase, int step) {
  // Each step draws from its own stream, so resuming needs no RNG state
  // beyond (seed, phase, step).
  StepLog log;
  log.phase = phase.id;
  log.step = step;
  log.batch_seed = mix_seed(cfg_.seed, (static_cast<uint64_t>(phase.id) << 32) | static_cast<uint32_t>(step));
  Rng rng(log.batch_seed);

  std::vector<synth::DatasetSpec> specs = specs_;
  if (phase.motion_datasets_only) {
    for (auto& s : specs) {
      if (!s.has_motion) s.weight = 0.0;
    }
  }
  const synth::SequenceDraw draw = synth::sample_batch(specs, rng);
  log.dataset = draw.dataset;
  log.scene = draw.scene;
  log.query = draw.query;
  log.frames = draw.frames;

  synth::SceneSample seq = synth::subsequence(scenes_[static_cast<size_t>(draw.dataset)][static_cast<size_t>(draw.scene)],
                                              draw.frames);
  if (cfg_.train.augment) seq = synth::augment(seq, cfg_.train.augmentation, rng.next_u64());

  model::ForwardOptions fo;
  fo.query = draw.query;
  fo.use_query_embedding = phase.query_embedding;
  fo.run_motion_head = phase.motion_loss;
  model_.params().zero_grad();
  const model::ForwardResult out = model_.forward(model::make_input(seq), fo);
  const Targets targets = make_targets(seq, draw.query, phase.motion_loss);

  auto abort_batch = [&](const std::string& reason) {
    std::ostringstream msg;
    msg << reason << " at phase " << phase.id << " step " << step << " (batch seed " << log.batch_seed << ", dataset "
        << draw.dataset << ", scene " << draw.scene << ", query " << draw.query << ")";
    if (!opt_.out_dir.empty()) {
      const fs::path path = fs::path(opt_.out_dir) / "nonfinite_batch.json";
      std::ofstream(path) << to_json(log) << '\n';
      msg << "; batch written to " << path.string();
    }
    fail(ErrorCode::kNumeric, msg.str());
  };
  // A NaN upstream can surface as an invalid uncertainty inside the losses.
  LossGraph lg;
  try {
    lg = compute_loss(out, targets, phase, cfg_.train.weights);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kNumeric) throw;
    abort_batch(std::string("non-finite loss (") + e.what() + ")");
  }
  log.loss = lg.report;
  if (!std::isfinite(lg.report.total)) abort_batch("non-finite loss");

  nn::backward(lg.root);
  std::map<std::string, double> lr;
  for (const auto& g : phase.groups) {
    const double rate = lr_schedule(step + 1, phase.warmup, phase.steps, g.base_lr);
    log.lr[g.name] = rate;
    for (const auto& p : g.params) lr[p] = rate;
  }
  adam_.step(model_.params(), lr);
  state_.adam_t = adam_.t();
  state_.running_loss = (phase.id == state_.phase && step == 0) ? lg.report.total
                                                                 : 0.98 * state_.running_loss + 0.02 * lg.report.total;
  return log;
}

void Trainer::write_log(const StepLog& s) {
  history_.push_back(s);
  if (opt_.on_step) opt_.on_step(s);
  if (opt_.out_dir.empty()) return;
  if (s.step % cfg_.train.log_every != 0) return;
  std::ofstream out(fs::path(opt_.out_dir) / "loss_log.jsonl", std::ios::app);
  out << to_json(s) << '\n';
}

std::string Trainer::run() {
  std::string last;
  long long ran = 0;
  auto save = [&](const std::string& name) {
    if (opt_.out_dir.empty()) return;
    last = (fs::path(opt_.out_dir) / name).string();
    save_checkpoint(last);
  };
  for (int id = state_.phase; id <= 2; ++id) {
    if (id == 2 && !state_.phase2_initialized) {
      if (cfg_.train.phase2.steps == 0) break;
      enter_phase2();
    }
    const PhaseSpec spec = phase_spec(id);
    const int every = (id == 1 ? cfg_.train.phase1 : cfg_.train.phase2).checkpoint_every;
    while (state_.step < spec.steps) {
      if (opt_.stop_after >= 0 && ran >= opt_.stop_after) {
        save("latest.ckpt");
        return last;
      }
      write_log(train_step(spec, state_.step));
      ++state_.step;
      ++ran;
      if (every > 0 && state_.step % every == 0 && state_.step < spec.steps) save(checkpoint_name(id, state_.step));
    }
    save("phase" + std::to_string(id) + "_final.ckpt");
  }
  save("final.ckpt");
  return last;
}

void Trainer::save_checkpoint(const std::string& path) const {
  checkpoint::Archive a;
  json meta = {{"kind", "train_state"},
               {"phase", state_.phase},
               {"step", state_.step},
               {"phase2_initialized", state_.phase2_initialized},
               {"running_loss", state_.running_loss},
               {"adam_t", adam_.t()},
               {"config", json::parse(config::to_json(cfg_))}};
  a.meta_json = meta.dump();
  checkpoint::add_model(a, model_);
  for (const auto& [name, t] : adam_.first_moments()) a.arrays.emplace_back("adam_m/" + name, t);
  for (const auto& [name, t] : adam_.second_moments()) a.arrays.emplace_back("adam_v/" + name, t);
  checkpoint::save_archive(path, a);
}

void Trainer::load_checkpoint(const std::string& path) {
  const checkpoint::Archive a = checkpoint::load_archive(path);
  const json meta = json::parse(a.meta_json);
  require(meta.value("kind", "") == "train_state", path + " is not a training checkpoint", ErrorCode::kState);
  checkpoint::restore_parameters(a, model_);
  state_.phase = meta.at("phase").get<int>();
  state_.step = meta.at("step").get<int>();
  state_.phase2_initialized = meta.at("phase2_initialized").get<bool>();
  state_.running_loss = meta.at("running_loss").get<double>();
  adam_.reset();
  adam_.set_t(meta.at("adam_t").get<int64_t>());
  state_.adam_t = adam_.t();
  for (const auto& [name, t] : a.arrays) {
    if (starts_with(name, "adam_m/")) adam_.first_moments()[name.substr(7)] = t;
    if (starts_with(name, "adam_v/")) adam_.second_moments()[name.substr(7)] = t;
  }
}

}  // namespace densetrack::training

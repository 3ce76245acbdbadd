// aptrack: dataset synthesis, training, tracking, evaluation, ablation and
// gradient verification for the unified dual-stream tracker.

#include "CLI11.hpp"

#include "aptrack/config.hpp"
#include "aptrack/evalkit.hpp"
#include "aptrack/model.hpp"
#include "aptrack/rng.hpp"
#include "aptrack/synthgen.hpp"
#include "aptrack/tracker.hpp"

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <thread>

namespace fs = std::filesystem;
using namespace aptrack;

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

TrackerConfig resolve_config(const CommonOpts& opts) {
  TrackerConfig cfg;
  if (!opts.config_path.empty()) cfg = load_config(opts.config_path);
  for (const std::string& kv : opts.overrides) {
    const std::size_t eq = kv.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("cli: --set expects key=value, got '" + kv + "'");
    apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (opts.seed) cfg.seed = *opts.seed;
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "flat key = value config file");
  cmd->add_option("--set", opts.overrides, "config override key=value (repeatable)");
  cmd->add_option("--seed", opts.seed, "seed override");
}

std::vector<std::string> sequence_dirs(const std::string& data) {
  if (fs::exists(fs::path(data) / "groundtruth.txt")) return {data};
  std::vector<std::string> dirs;
  if (!fs::is_directory(data)) throw std::runtime_error("cli: no dataset at '" + data + "'");
  for (const auto& entry : fs::directory_iterator(data))
    if (entry.is_directory() && fs::exists(entry.path() / "groundtruth.txt"))
      dirs.push_back(entry.path().string());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw std::runtime_error("cli: no sequences under '" + data + "'");
  return dirs;
}

SceneSpec scene_from_config(const TrackerConfig& cfg, std::uint64_t seq_seed) {
  SceneSpec spec;
  spec.frames = cfg.scene_frames;
  spec.canvas = cfg.scene_canvas;
  spec.distractors = cfg.scene_distractors;
  spec.target_w = cfg.scene_target_size;
  spec.target_h = cfg.scene_target_size;
  spec.alignment_jitter = cfg.scene_alignment_jitter;
  spec.texture_seed = mix_seed(seq_seed, 0x7E87);
  spec.target_shape =
      cfg.scene_target_shape == "disc" ? TargetShape::kDisc : TargetShape::kBox;

  Rng rng(mix_seed(seq_seed, 0x90DE));
  std::string motion = cfg.scene_motion;
  if (motion == "mixed") {
    const char* kinds[3] = {"linear", "sine", "walk"};
    motion = kinds[rng.integer(3)];
  }
  if (motion == "linear") {
    spec.motion = MotionModel::kLinear;
    spec.motion_speed = rng.uniform(0.6, 1.6);
  } else if (motion == "sine") {
    spec.motion = MotionModel::kSine;
    spec.motion_amplitude =
        std::min(0.25 * cfg.scene_canvas, 0.5 * cfg.scene_canvas - spec.target_w);
    spec.motion_period = rng.uniform(30.0, 60.0);
  } else if (motion == "walk") {
    spec.motion = MotionModel::kWalk;
    spec.motion_speed = rng.uniform(1.0, 2.5);
  } else {
    throw std::runtime_error("cli: unknown scene_motion '" + motion + "'");
  }

  if (cfg.scene_degrade == "none") {
    // clean sequences
  } else if (cfg.scene_degrade == "alternating_blackout") {
    // one modality is dark at a time; both are intact at the start so the
    // initial templates carry signal
    const std::size_t n = spec.frames;
    auto add = [&spec](Modality m, std::size_t a, std::size_t b) {
      DegradeEvent e;
      e.modality = m;
      e.first_frame = a;
      e.last_frame = b;
      e.mode = DegradeMode::kBlackout;
      spec.events.push_back(e);
    };
    std::size_t f = n / 10 + 2;
    bool rgb_turn = true;
    const std::size_t span = std::max<std::size_t>(6, n / 5);
    while (f + 1 < n) {
      const std::size_t end = std::min(n - 1, f + span - 1);
      add(rgb_turn ? Modality::kRgb : Modality::kX, f, end);
      rgb_turn = !rgb_turn;
      f = end + 1;
    }
  } else if (cfg.scene_degrade == "noise") {
    DegradeEvent e;
    e.modality = Modality::kRgb;
    e.first_frame = spec.frames / 4;
    e.last_frame = spec.frames - 1;
    e.mode = DegradeMode::kNoise;
    e.noise_sigma = 0.15;
    spec.events.push_back(e);
  } else if (cfg.scene_degrade == "blur") {
    DegradeEvent e;
    e.modality = Modality::kRgb;
    e.first_frame = spec.frames / 4;
    e.last_frame = spec.frames - 1;
    e.mode = DegradeMode::kBlur;
    e.blur_kernel = 5;
    spec.events.push_back(e);
  } else if (cfg.scene_degrade == "occluder") {
    DegradeEvent e;
    e.modality = Modality::kRgb;
    e.first_frame = spec.frames / 3;
    e.last_frame = 2 * spec.frames / 3;
    e.mode = DegradeMode::kOccluder;
    spec.events.push_back(e);
  } else {
    throw std::runtime_error("cli: unknown scene_degrade '" + cfg.scene_degrade + "'");
  }
  return spec;
}

int run_synth(const CommonOpts& common, const std::string& out) {
  TrackerConfig cfg = resolve_config(common);
  fs::create_directories(out);
  for (std::size_t i = 0; i < cfg.scene_sequences; ++i) {
    const std::uint64_t seq_seed = mix_seed(cfg.seed, i);
    SceneSpec spec = scene_from_config(cfg, seq_seed);
    SequenceDataset ds = generate_sequence(spec, seq_seed);
    char name[32];
    std::snprintf(name, sizeof(name), "seq%03zu", i);
    save_dataset(ds, (fs::path(out) / name).string(), &spec);
    std::printf("synth: wrote %s (%zu frames)\n", (fs::path(out) / name).string().c_str(),
                ds.size());
  }
  return 0;
}

int run_train(const CommonOpts& common, const std::string& data, const std::string& out) {
  TrackerConfig cfg = resolve_config(common);
  std::vector<SequenceDataset> datasets;
  for (const std::string& dir : sequence_dirs(data)) datasets.push_back(load_dataset(dir));
  std::printf("train: %zu sequences, %zu epochs x %zu steps, batch %zu\n", datasets.size(),
              cfg.epochs, std::max<std::size_t>(1, cfg.samples_per_epoch / cfg.batch_size),
              cfg.batch_size);

  Model model = Model::init(cfg, cfg.seed);
  TrainResult result = train(model, datasets, cfg, [](std::size_t step, double loss) {
    if (step % 50 == 0) std::printf("train: step %zu loss %.6f\n", step, loss);
  });

  fs::create_directories(fs::path(out).parent_path().empty()
                             ? fs::path(".")
                             : fs::path(out).parent_path());
  save_params(model.params, out + ".aptt", out + ".manifest");
  save_config(cfg, out + ".config");
  std::ofstream trace(out + "_loss.txt");
  for (std::size_t i = 0; i < result.loss_trace.size(); ++i) {
    char line[64];
    std::snprintf(line, sizeof(line), "%zu,%.8f\n", i, result.loss_trace[i]);
    trace << line;
  }
  std::printf("train: checkpoint %s.aptt, final loss %.6f\n", out.c_str(),
              result.loss_trace.empty() ? 0.0 : result.loss_trace.back());
  return 0;
}

void write_attn_dump(const std::string& path, const std::vector<AmiAudit>& per_frame) {
  std::ofstream out(path);
  char buf[32];
  for (std::size_t f = 0; f < per_frame.size(); ++f) {
    for (const AmiCapture& cap : per_frame[f].captures) {
      auto dump = [&](const char* tag, const Tensor& m) {
        if (!m.defined()) return;
        out << "frame " << f + 1 << " layer " << cap.layer << " stream " << cap.direction
            << " " << tag << " " << m.rows() << " " << m.cols() << "\n";
        for (std::size_t i = 0; i < m.rows(); ++i) {
          for (std::size_t j = 0; j < m.cols(); ++j) {
            std::snprintf(buf, sizeof(buf), "%.8f", m.at(i, j));
            out << buf << (j + 1 < m.cols() ? " " : "\n");
          }
        }
      };
      dump("A", cap.token_weights);
      dump("Bw", cap.spatial_weights);
    }
  }
}

int run_track(const CommonOpts& common, const std::string& checkpoint, const std::string& data,
              const std::string& out, unsigned jobs, bool dump_attn) {
  TrackerConfig cfg = resolve_config(common);
  Params loaded = load_params(checkpoint + ".aptt", checkpoint + ".manifest");
  Model model = Model::from_params(cfg, std::move(loaded));
  const std::vector<std::string> dirs = sequence_dirs(data);
  fs::create_directories(out);

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < dirs.size(); i = next.fetch_add(1)) {
      SequenceDataset ds = load_dataset(dirs[i]);
      const std::string name = fs::path(dirs[i]).filename().string();
      std::vector<BBox> preds;
      if (dump_attn) {
        std::vector<AmiAudit> audits(ds.size());
        TrackState st = tracker_init(model, ds.frames[0], ds.gt[0]);
        BBox first = ds.gt[0];
        first.score = 1.0;
        preds.push_back(first);
        for (std::size_t f = 1; f < ds.size(); ++f) {
          TrackHooks hooks;
          hooks.ami_audit = &audits[f - 1];
          preds.push_back(track_step(model, st, ds.frames[f], hooks));
        }
        write_attn_dump((fs::path(out) / (name + "_attn.txt")).string(), audits);
      } else {
        preds = track_sequence(model, ds);
      }
      save_predictions((fs::path(out) / (name + ".txt")).string(), preds);
    }
  };
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  std::printf("track: wrote %zu prediction files to %s\n", dirs.size(), out.c_str());
  return 0;
}

int run_eval(const std::string& preds_dir, const std::string& data, const std::string& out) {
  const std::vector<std::string> dirs = sequence_dirs(data);
  std::vector<BBox> all_preds, all_gt, all_gt_rgb, all_gt_x;
  std::vector<double> all_conf;
  std::vector<int> all_vis;
  bool have_gt_x = false;

  for (const std::string& dir : dirs) {
    const std::string name = fs::path(dir).filename().string();
    fs::path pred_path = fs::path(preds_dir) / (name + ".txt");
    if (!fs::exists(pred_path) && dirs.size() == 1 && fs::is_regular_file(preds_dir))
      pred_path = preds_dir;
    if (!fs::exists(pred_path))
      throw std::runtime_error("cli: no prediction file '" + pred_path.string() + "'");
    SequenceDataset ds = load_dataset(dir);
    std::vector<BBox> preds = load_predictions(pred_path.string());
    if (preds.size() != ds.size())
      throw std::runtime_error("cli: prediction length mismatch for '" + name + "'");
    for (std::size_t f = 0; f < ds.size(); ++f) {
      all_preds.push_back(preds[f]);
      all_gt.push_back(ds.gt[f]);
      all_conf.push_back(preds[f].score.value_or(0.0));
      all_vis.push_back(ds.visibility[f]);
      all_gt_rgb.push_back(ds.gt[f]);
      all_gt_x.push_back(ds.gt_x ? (*ds.gt_x)[f] : ds.gt[f]);
      if (ds.gt_x) have_gt_x = true;
    }
  }

  MetricsReport report = precision_success(all_preds, all_gt, &all_vis);
  if (have_gt_x) {
    MetricsReport dual = mpr_msr(all_preds, all_gt_rgb, all_gt_x, &all_vis);
    report.mpr20 = dual.mpr20;
    report.msr_auc = dual.msr_auc;
  }
  FScoreResult fs_result =
      f_score(all_preds, all_conf, all_gt, all_vis, default_confidence_sweep());
  report.f_score = fs_result.f;
  report.f_precision = fs_result.precision;
  report.f_recall = fs_result.recall;

  save_report(report, out);
  std::printf("eval: pr20 %.4f auc %.4f f %.4f -> %s\n", report.pr20, report.auc,
              *report.f_score, out.c_str());
  return 0;
}

double tracking_auc(const Model& model, const std::vector<SequenceDataset>& eval_sets) {
  std::vector<BBox> preds, gts;
  std::vector<int> vis;
  for (const auto& ds : eval_sets) {
    auto p = track_sequence(model, ds);
    preds.insert(preds.end(), p.begin(), p.end());
    gts.insert(gts.end(), ds.gt.begin(), ds.gt.end());
    vis.insert(vis.end(), ds.visibility.begin(), ds.visibility.end());
  }
  return precision_success(preds, gts, &vis).auc;
}

int run_ablate(const CommonOpts& common, const std::string& data, const std::string& eval_data,
               const std::string& out) {
  TrackerConfig base = resolve_config(common);
  std::vector<SequenceDataset> train_sets, eval_sets;
  for (const std::string& dir : sequence_dirs(data)) train_sets.push_back(load_dataset(dir));
  for (const std::string& dir : sequence_dirs(eval_data))
    eval_sets.push_back(load_dataset(dir));

  struct Row {
    std::string variant;
    std::string tokens;
    double pr20;
    double auc;
  };
  std::vector<Row> rows;
  std::map<std::string, std::pair<double, double>> cache;

  auto run_variant = [&](AmiVariant variant, std::size_t n_tokens) {
    const std::string key = to_string(variant) + "/" + std::to_string(n_tokens);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    TrackerConfig cfg = base;
    cfg.ami_variant = variant;
    if (variant == AmiVariant::kFull || variant == AmiVariant::kLtOnly)
      cfg.n_tokens = n_tokens;
    Model model = Model::init(cfg, cfg.seed);
    train(model, train_sets, cfg);
    std::vector<BBox> preds, gts;
    std::vector<int> vis;
    for (const auto& ds : eval_sets) {
      auto p = track_sequence(model, ds);
      preds.insert(preds.end(), p.begin(), p.end());
      gts.insert(gts.end(), ds.gt.begin(), ds.gt.end());
      vis.insert(vis.end(), ds.visibility.begin(), ds.visibility.end());
    }
    MetricsReport r = precision_success(preds, gts, &vis);
    std::printf("ablate: %s pr20 %.4f auc %.4f\n", key.c_str(), r.pr20, r.auc);
    cache[key] = {r.pr20, r.auc};
    return cache[key];
  };

  // component variants at the default token count
  auto none = run_variant(AmiVariant::kNone, base.n_tokens);
  rows.push_back({"no_ami", "-", none.first, none.second});
  auto gmp = run_variant(AmiVariant::kGmpOnly, 0);
  rows.push_back({"gmp_only", "-", gmp.first, gmp.second});
  auto lt = run_variant(AmiVariant::kLtOnly, base.n_tokens);
  rows.push_back({"lt_only", std::to_string(base.n_tokens), lt.first, lt.second});
  auto full = run_variant(AmiVariant::kFull, base.n_tokens);
  rows.push_back({"full", std::to_string(base.n_tokens), full.first, full.second});

  // learnable-token sweep; 0 is the direct-interaction degenerate case
  for (std::size_t n : {std::size_t{0}, std::size_t{16}, std::size_t{32}, std::size_t{64}}) {
    auto r = n == 0 ? run_variant(AmiVariant::kGmpOnly, 0) : run_variant(AmiVariant::kFull, n);
    rows.push_back({"token_sweep", std::to_string(n), r.first, r.second});
  }

  std::ofstream csv(out);
  if (!csv) throw std::runtime_error("cli: cannot open '" + out + "'");
  csv << "variant,n_tokens,pr20,auc\n";
  char line[128];
  for (const Row& r : rows) {
    std::snprintf(line, sizeof(line), "%s,%s,%.4f,%.4f\n", r.variant.c_str(),
                  r.tokens.c_str(), r.pr20, r.auc);
    csv << line;
  }
  std::printf("ablate: wrote %s\n", out.c_str());
  return 0;
}

TrackerConfig gradcheck_config() {
  TrackerConfig cfg;
  cfg.patch_size = 4;
  cfg.template_size = 8;
  cfg.search_size = 16;
  cfg.embed_dim = 8;
  cfg.n_layers = 2;
  cfg.heads = 2;
  cfg.n_tokens = 2;
  cfg.ami_layers = {1};
  return cfg;
}

int run_gradcheck(const CommonOpts& common) {
  TrackerConfig cfg = common.config_path.empty() && common.overrides.empty()
                          ? gradcheck_config()
                          : resolve_config(common);
  cfg.validate();
  double worst = 0.0;
  auto report = [&worst](const char* name, double err) {
    std::printf("gradcheck: %-24s max rel err %.3e\n", name, err);
    worst = std::max(worst, err);
  };

  {  // primitives
    Rng rng(1);
    auto rand_t = [&rng](std::vector<std::size_t> shape) {
      std::size_t n = 1;
      for (auto e : shape) n *= e;
      std::vector<double> d(n);
      for (double& v : d) v = rng.normal();
      return Tensor(std::move(shape), std::move(d));
    };
    Params p;
    p.add("a", rand_t({4, 5}));
    p.add("b", rand_t({5, 3}));
    p.add("g", rand_t({5}));
    p.add("be", rand_t({5}));
    report("matmul", grad_check([](Params& q) { return sum(matmul(q.at("a"), q.at("b"))); }, p));
    report("softmax", grad_check([](Params& q) { return sum(softmax(q.at("a"), 1)); }, p));
    report("layer_norm", grad_check([](Params& q) {
             return sum(layer_norm(q.at("a"), q.at("g"), q.at("be")));
           }, p));
    report("gelu", grad_check([](Params& q) { return sum(gelu(q.at("a"))); }, p));
    report("sigmoid", grad_check([](Params& q) { return sum(sigmoid(q.at("a"))); }, p));
    Params pa;
    pa.add("q", rand_t({3, 4}));
    pa.add("k", rand_t({5, 4}));
    pa.add("v", rand_t({5, 4}));
    report("attention", grad_check([](Params& q) {
             return sum(attention(q.at("q"), q.at("k"), q.at("v"), 2));
           }, pa));
  }

  {  // full AMI stack on the reduced geometry
    Model model = Model::init(cfg, 7);
    Rng rng(2);
    const std::size_t n = cfg.n_total_tokens(), d = cfg.embed_dim;
    std::vector<double> av(n * d), bv(n * d);
    for (double& v : av) v = rng.normal();
    for (double& v : bv) v = rng.normal();
    Tensor a({n, d}, av), b({n, d}, bv);
    const AmiParams& ap = model.ami.begin()->second;
    auto f = [&a, &b, &ap](Params&) {
      return mean(mul(ami_forward(a, b, ap), ami_forward(b, a, ap)));
    };
    report("ami_stack", grad_check(f, model.params));
  }

  {  // total_loss through the whole toy model
    Model model = Model::init(cfg, 9);
    SceneSpec spec;
    spec.frames = 6;
    spec.canvas = 32;
    spec.target_w = 8.0;
    spec.target_h = 8.0;
    spec.distractors = 1;
    spec.motion = MotionModel::kWalk;
    spec.motion_speed = 1.0;
    SequenceDataset ds = generate_sequence(spec, 11);
    auto f = [&model, &ds](Params&) {
      return training_sample_loss(model, ds, 0, 2, 4, 0.02, -0.03, 1.05);
    };
    report("model_total_loss", grad_check(f, model.params));
  }

  std::printf("gradcheck: overall max rel err %.3e (%s)\n", worst,
              worst < 1e-4 ? "ok" : "FAIL");
  return worst < 1e-4 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"unified dual-stream multi-modal tracker toolkit"};
  app.require_subcommand(1);

  CommonOpts synth_opts, train_opts, track_opts, ablate_opts, gradcheck_opts;
  std::string out, data, eval_data, checkpoint, preds;
  unsigned jobs = 1;
  bool dump_attn = false;

  auto* synth = app.add_subcommand("synth", "generate paired-modality sequences");
  add_common(synth, synth_opts);
  synth->add_option("--out", out, "output dataset directory")->required();

  auto* train_cmd = app.add_subcommand("train", "train a model on sequence directories");
  add_common(train_cmd, train_opts);
  train_cmd->add_option("--data", data, "dataset directory")->required();
  train_cmd->add_option("--out", out, "checkpoint path prefix")->required();

  auto* track_cmd = app.add_subcommand("track", "run the tracker over sequences");
  add_common(track_cmd, track_opts);
  track_cmd->add_option("--checkpoint", checkpoint, "checkpoint path prefix")->required();
  track_cmd->add_option("--data", data, "dataset directory")->required();
  track_cmd->add_option("--out", out, "prediction output directory")->required();
  track_cmd->add_option("--jobs", jobs, "parallel sequences");
  track_cmd->add_flag("--dump-attn", dump_attn, "export A and B_w matrices per frame");

  auto* eval_cmd = app.add_subcommand("eval", "score prediction files against a dataset");
  eval_cmd->add_option("--preds", preds, "prediction directory or file")->required();
  eval_cmd->add_option("--data", data, "dataset directory")->required();
  eval_cmd->add_option("--out", out, "report path")->required();

  auto* ablate_cmd = app.add_subcommand("ablate", "train and score the module variants");
  add_common(ablate_cmd, ablate_opts);
  ablate_cmd->add_option("--data", data, "training dataset directory")->required();
  ablate_cmd->add_option("--eval-data", eval_data, "held-out dataset directory")->required();
  ablate_cmd->add_option("--out", out, "output csv path")->required();

  auto* gradcheck_cmd =
      app.add_subcommand("gradcheck", "finite-difference verification of the gradients");
  add_common(gradcheck_cmd, gradcheck_opts);

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return run_synth(synth_opts, out);
    if (train_cmd->parsed()) return run_train(train_opts, data, out);
    if (track_cmd->parsed())
      return run_track(track_opts, checkpoint, data, out, jobs, dump_attn);
    if (eval_cmd->parsed()) return run_eval(preds, data, out);
    if (ablate_cmd->parsed()) return run_ablate(ablate_opts, data, eval_data, out);
    if (gradcheck_cmd->parsed()) return run_gradcheck(gradcheck_opts);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

// srdl command line: synthetic data generation, segmentation training,
// stereo-frustum inference, KITTI-protocol evaluation, ablation sweeps, and
// numeric self checks.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include <srdl/ablate.hpp>
#include <srdl/gradient_suite.hpp>
#include <srdl/pipeline.hpp>

namespace fs = std::filesystem;
using namespace srdl;

namespace {

struct GlobalArgs {
  std::string config_path;
  std::vector<std::string> sets;  // key=value overrides
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::string debug_dump;
};

PipelineConfig make_config(const GlobalArgs& g) {
  PipelineConfig cfg;
  if (!g.config_path.empty()) cfg = load_config_file(g.config_path);
  for (const std::string& kv : g.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw config_error("--set expects key=value, got '" + kv + "'");
    apply_config_kv(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (g.seed) {
    cfg.seed = *g.seed;
    cfg.segnet.seed = *g.seed;
  }
  if (g.workers) cfg.workers = *g.workers;
  if (!g.debug_dump.empty()) cfg.debug_dump_dir = g.debug_dump;
  cfg.validate();
  return cfg;
}

std::vector<SyntheticScene> scenes_for(const PipelineConfig& cfg) {
  return gen_synthetic(cfg.seed, cfg.n_scenes, cfg.synth);
}

// Scenes either from a KITTI-format directory or the in-memory generator.
std::vector<SceneSample> samples_for_inference(const PipelineConfig& cfg) {
  if (!cfg.data_root.empty()) return load_scene_dir(cfg.data_root, cfg.proposals_path, false);
  std::vector<SceneSample> out;
  for (const SyntheticScene& s : scenes_for(cfg)) out.push_back(s.sample);
  return out;
}

int cmd_gen_synth(const PipelineConfig& cfg, const std::string& out_dir) {
  const auto scenes = scenes_for(cfg);
  write_scene_dir(out_dir, scenes);
  std::printf("wrote %d scenes under %s\n", cfg.n_scenes, out_dir.c_str());
  return kExitOk;
}

int cmd_train(PipelineConfig cfg) {
  std::vector<SyntheticScene> scenes;
  if (cfg.data_root.empty()) {
    scenes = scenes_for(cfg);
  } else {
    // directory scenes: labels give per-point classes by containment
    for (SceneSample& s : load_scene_dir(cfg.data_root, cfg.proposals_path, true)) {
      SyntheticScene sc;
      sc.sample = std::move(s);
      std::vector<Vec3> rect(sc.sample.cloud.size());
      for (std::size_t i = 0; i < rect.size(); ++i)
        rect[i] = sc.sample.calib.velo_to_rect(sc.sample.cloud[i].xyz());
      sc.point_labels.assign(rect.size(), 0);
      for (const LabelRecord& label : sc.sample.labels) {
        if (label.dont_care()) continue;
        const auto mask = points_in_box3d(rect, label.box3d());
        for (std::size_t i = 0; i < mask.size(); ++i)
          if (mask[i]) sc.point_labels[i] = 1;
      }
      scenes.push_back(std::move(sc));
    }
    if (scenes.empty()) throw parse_error("no scenes under " + cfg.data_root);
    cfg.n_scenes = static_cast<int>(scenes.size());
  }

  const std::vector<SyntheticScene> train_slice(scenes.begin(), scenes.begin() + cfg.effective_train_scenes());
  const std::vector<SyntheticScene> holdout_slice(scenes.begin() + cfg.effective_train_scenes(), scenes.end());
  const auto train_items = build_train_items(train_slice, cfg);
  const auto holdout_items = holdout_slice.empty() ? std::vector<TrainItem>{} : build_train_items(holdout_slice, cfg);

  SegNetParams params = init_segnet_params(cfg.segnet);
  if (fs::exists(cfg.checkpoint_path) && cfg.steps > 0) {
    // resume: continue from the stored parameters
    load_segnet(cfg.checkpoint_path, params);
    std::printf("resumed from %s\n", cfg.checkpoint_path.c_str());
  }
  std::string loss_log;
  const TrainReport rep = train_segnet(params, train_items, holdout_items, cfg, &loss_log);
  save_segnet(cfg.checkpoint_path, params);
  if (!cfg.loss_log_path.empty()) write_file(cfg.loss_log_path, loss_log);

  std::printf("steps %d  train_accuracy %s  holdout_accuracy %s\n", rep.steps_run,
              fmt_double(rep.train_accuracy).c_str(), fmt_double(rep.holdout_accuracy).c_str());
  std::printf("checkpoint %s\n", cfg.checkpoint_path.c_str());

  if (cfg.box_head == "learned") {
    BoxHeadParams head = init_box_head(cfg.scheme, cfg.box_head_hidden, cfg.seed);
    const int min_pts = std::max<int>(cfg.min_crop_points, static_cast<int>(cfg.segnet.k) + 2);
    struct Sample {
      Tensor input;
      EncodedBox target;
    };
    std::vector<Sample> pairs;
    for (const SyntheticScene& scene : train_slice) {
      for (std::size_t pi = 0; pi < scene.sample.proposals.size(); ++pi) {
        const CropResult crop = crop_by_proposal(scene.sample, scene.sample.proposals[pi], min_pts);
        if (!crop.ok || scene.sample.labels.empty()) continue;
        Box3D refined;
        try {
          refined = resize_box(fit_yaw_aligned_box(crop.cam_points), cfg.xi);
        } catch (const error&) {
          continue;
        }
        const Box3D gt = scene.sample.labels[pi % scene.sample.labels.size()].box3d();
        pairs.push_back({box_head_input(crop.cam_points, refined), encode(gt, refined, cfg.scheme)});
      }
    }
    if (pairs.empty()) throw error("box head training found no usable pairs");
    double last = 0.0;
    for (int step = 0; step < cfg.box_head_steps; ++step) {
      const Sample& s = pairs[static_cast<std::size_t>(step) % pairs.size()];
      last = box_head_train_step(head, s.input, s.target, cfg.box_head_lr);
    }
    std::vector<std::pair<std::string, Tensor>> tensors;
    visit_box_head(head, [&](const std::string& name, Tensor& t) { tensors.emplace_back(name, t); });
    write_file(cfg.box_head_path, serialize_checkpoint(tensors));
    std::printf("box head loss %s  saved %s\n", fmt_double(last).c_str(), cfg.box_head_path.c_str());
  }
  return kExitOk;
}

int cmd_infer(const PipelineConfig& cfg, const std::string& out_dir) {
  SegNetParams params = init_segnet_params(cfg.segnet);
  if (!fs::exists(cfg.checkpoint_path))
    throw parse_error("checkpoint not found: " + cfg.checkpoint_path + " (run `srdl train` first)");
  load_segnet(cfg.checkpoint_path, params);

  BoxHeadParams head;
  InferenceContext ctx;
  ctx.segnet = &params;
  if (cfg.box_head == "learned") {
    head = init_box_head(cfg.scheme, cfg.box_head_hidden, cfg.seed);
    const auto tensors = parse_checkpoint(read_file(cfg.box_head_path));
    std::size_t i = 0;
    visit_box_head(head, [&](const std::string& name, Tensor& t) {
      if (i >= tensors.size() || tensors[i].first != name || tensors[i].second.shape != t.shape)
        throw parse_error("box head checkpoint does not match the configuration: " + name);
      t = tensors[i++].second;
    });
    ctx.box_head = &head;
  }

  const auto samples = samples_for_inference(cfg);
  std::vector<FrameDebug> debug;
  const auto dets = infer_scenes(samples, ctx, cfg, cfg.debug_dump_dir.empty() ? nullptr : &debug);

  fs::create_directories(out_dir);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::string path = (fs::path(out_dir) / (frame_name(samples[i].frame) + ".txt")).string();
    write_file(path, write_detections(dets[i]));
  }
  if (!cfg.debug_dump_dir.empty()) {
    fs::create_directories(cfg.debug_dump_dir);
    for (std::size_t i = 0; i < samples.size(); ++i)
      write_file((fs::path(cfg.debug_dump_dir) / (frame_name(samples[i].frame) + ".txt")).string(),
                 debug[i].text);
  }
  std::printf("wrote detections for %zu frames under %s\n", samples.size(), out_dir.c_str());
  return kExitOk;
}

int cmd_eval(const PipelineConfig& cfg, const std::string& gt_dir, const std::string& det_dir,
             const std::string& report_path) {
  const DirEvalResult result = evaluate_dirs(gt_dir, det_dir, cfg.eval);
  for (const std::string& warn : result.missing_frames)
    std::fprintf(stderr, "warning: frame %s\n", warn.c_str());
  const std::string report = format_eval_report(result.cells);
  std::printf("%s", report.c_str());
  if (!report_path.empty()) write_file(report_path, report);
  return kExitOk;
}

int cmd_ablate(const PipelineConfig& cfg, const std::string& axis_name, const std::string& out_path) {
  const AblationAxis axis = ablation_axis_from_name(axis_name);
  std::vector<AblationRow> rows;
  if (axis == AblationAxis::attention) {
    rows = ablate_attention(cfg);
  } else {
    SegNetParams params = init_segnet_params(cfg.segnet);
    if (fs::exists(cfg.checkpoint_path)) {
      load_segnet(cfg.checkpoint_path, params);
    } else {
      // no checkpoint: spend the configured training budget once, shared by
      // every cell of the sweep
      const auto scenes = scenes_for(cfg);
      const std::vector<SyntheticScene> train_slice(scenes.begin(), scenes.begin() + cfg.effective_train_scenes());
      const auto items = build_train_items(train_slice, cfg);
      train_segnet(params, items, {}, cfg);
    }
    rows = axis == AblationAxis::xi_sweep ? ablate_xi_sweep(cfg, params) : ablate_encoding(cfg, params);
  }
  const std::string table = format_ablation_table(axis_name, rows);
  std::printf("%s", table.c_str());
  if (!out_path.empty()) write_file(out_path, table);
  return kExitOk;
}

int cmd_gradcheck(int seeds) {
  const auto entries = run_gradient_suite(seeds);
  std::printf("%s", format_gradient_suite(entries).c_str());
  for (const auto& e : entries)
    if (!e.pass()) return kExitNumeric;
  return kExitOk;
}

int cmd_bench_iou(int pairs) {
  Rng rng(0);
  std::vector<Box3D> a, b;
  for (int i = 0; i < pairs; ++i) {
    a.push_back(Box3D::make(rng.uniform(-3, 3), rng.uniform(-1, 2), rng.uniform(5, 15), rng.uniform(0.8, 2.5),
                            rng.uniform(0.8, 2.2), rng.uniform(1.5, 4.5), rng.uniform(-kPi, kPi)));
    Box3D nb = a.back();
    nb.x += rng.uniform(-2, 2);
    nb.z += rng.uniform(-2, 2);
    nb.theta = normalize_angle(nb.theta + rng.uniform(-1, 1));
    b.push_back(nb);
  }
  double checksum = 0.0;
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < pairs; ++i) checksum += iou_bev(a[static_cast<std::size_t>(i)], b[static_cast<std::size_t>(i)]);
  const auto t1 = std::chrono::steady_clock::now();
  for (int i = 0; i < pairs; ++i) checksum += iou_3d(a[static_cast<std::size_t>(i)], b[static_cast<std::size_t>(i)]);
  const auto t2 = std::chrono::steady_clock::now();
  const double bev_s = std::chrono::duration<double>(t1 - t0).count();
  const double iou3d_s = std::chrono::duration<double>(t2 - t1).count();
  std::printf("iou_bev: %d pairs in %.3f s (%.0f pairs/s)\n", pairs, bev_s, pairs / bev_s);
  std::printf("iou_3d:  %d pairs in %.3f s (%.0f pairs/s)\n", pairs, iou3d_s, pairs / iou3d_s);
  std::printf("checksum %s\n", fmt_double(checksum).c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stereo-frustum 3D detection pipeline (desk scale)"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalArgs g;
  app.add_option("--config", g.config_path, "plain-text key=value configuration file");
  app.add_option("--set", g.sets, "override a single config key (key=value), repeatable");
  std::uint64_t seed_val = 0;
  auto* seed_opt = app.add_option("--seed", seed_val, "override the run seed");
  int workers_val = 1;
  auto* workers_opt = app.add_option("--workers", workers_val, "worker threads for frame-level parallelism");
  app.add_option("--debug-dump", g.debug_dump, "directory for per-frame intermediate dumps");

  auto* gen = app.add_subcommand("gen-synth", "generate synthetic KITTI-format scenes");
  std::string gen_out = "synth_data";
  gen->add_option("--out", gen_out, "output directory");

  auto* train = app.add_subcommand("train", "train the segmentation network (and box head if configured)");

  auto* infer = app.add_subcommand("infer", "run the detection pipeline and write KITTI result files");
  std::string infer_out = "detections";
  infer->add_option("--out", infer_out, "output directory for detection files");

  auto* eval = app.add_subcommand("eval", "score detections against ground truth");
  std::string eval_gt, eval_det, eval_report;
  eval->add_option("--gt", eval_gt, "ground-truth label directory")->required();
  eval->add_option("--det", eval_det, "detection directory")->required();
  eval->add_option("--report", eval_report, "also write the report to this file");

  auto* ablate = app.add_subcommand("ablate", "run an ablation sweep");
  std::string ablate_axis, ablate_out;
  ablate->add_option("--axis", ablate_axis, "xi_sweep | encoding | attention")->required();
  ablate->add_option("--out", ablate_out, "write the table to this file");

  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  int gradcheck_seeds = 20;
  gradcheck_cmd->add_option("--seeds", gradcheck_seeds, "number of random seeds");

  auto* bench = app.add_subcommand("bench-iou", "rotated IoU throughput report");
  int bench_pairs = 200000;
  bench->add_option("--pairs", bench_pairs, "number of random box pairs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (seed_opt->count()) g.seed = seed_val;
    if (workers_opt->count()) g.workers = workers_val;
    const PipelineConfig cfg = make_config(g);
    if (gen->parsed()) return cmd_gen_synth(cfg, gen_out);
    if (train->parsed()) return cmd_train(cfg);
    if (infer->parsed()) return cmd_infer(cfg, infer_out);
    if (eval->parsed()) return cmd_eval(cfg, eval_gt, eval_det, eval_report);
    if (ablate->parsed()) return cmd_ablate(cfg, ablate_axis, ablate_out);
    if (gradcheck_cmd->parsed()) return cmd_gradcheck(gradcheck_seeds);
    if (bench->parsed()) return cmd_bench_iou(bench_pairs);
    throw config_error("no subcommand");
  } catch (const config_error& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const parse_error& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const numeric_error& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  }
}

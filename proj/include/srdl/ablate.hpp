#pragma once

#include <string>
#include <vector>

#include "srdl/pipeline.hpp"

namespace srdl {

// Experiment harnesses sweeping one design axis at a time on synthetic
// scenes. Reported numbers are this artifact's synthetic metrics, not any
// published benchmark values.

struct AblationRow {
  std::string setting;
  double mean_iou3d = 0.0;           // matched detections vs ground truth
  double detection_rate = 0.0;       // scenes with a matched detection
  double holdout_accuracy = 0.0;     // segmentation metric (attention axis)
  std::optional<double> ap;          // moderate-difficulty AP where computed
};

enum class AblationAxis { xi_sweep, encoding, attention };

inline AblationAxis ablation_axis_from_name(const std::string& s) {
  if (s == "xi_sweep") return AblationAxis::xi_sweep;
  if (s == "encoding") return AblationAxis::encoding;
  if (s == "attention") return AblationAxis::attention;
  throw config_error("unknown ablation axis: " + s + " (use xi_sweep|encoding|attention)");
}

namespace detail_ablate {

// Mean IoU3D between each scene's ground truth and its best-scoring
// detection, plus the fraction of ground truths matched at all.
inline void score_detections(const std::vector<SyntheticScene>& scenes,
                             const std::vector<std::vector<LabelRecord>>& dets, AblationRow& row) {
  double iou_sum = 0.0;
  int matched = 0, total_gt = 0;
  std::vector<MatchResult> match_frames;
  EvalConfig ecfg;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    for (const LabelRecord& gt : scenes[i].sample.labels) {
      ++total_gt;
      double best = 0.0;
      for (const LabelRecord& det : dets[i]) best = std::max(best, iou_3d(det.box3d(), gt.box3d()));
      iou_sum += best;
      matched += best > 0.0;
    }
    match_frames.push_back(match_detections(dets[i], scenes[i].sample.labels, "Car", Difficulty::moderate, ecfg));
  }
  row.mean_iou3d = total_gt == 0 ? 0.0 : iou_sum / total_gt;
  row.detection_rate = total_gt == 0 ? 0.0 : static_cast<double>(matched) / total_gt;
  row.ap = average_precision(match_frames, ecfg.interp);
}

inline std::vector<SyntheticScene> holdout_slice(const std::vector<SyntheticScene>& scenes,
                                                 const PipelineConfig& cfg) {
  return std::vector<SyntheticScene>(scenes.begin() + cfg.effective_train_scenes(), scenes.end());
}

inline std::vector<SceneSample> samples_of(const std::vector<SyntheticScene>& scenes) {
  std::vector<SceneSample> out;
  for (const SyntheticScene& s : scenes) out.push_back(s.sample);
  return out;
}

}  // namespace detail_ablate

// Proposal refinement sweep over the nine xi grid values. Scenes carry
// proposals padded by +0.5 m with pixel jitter, so shrinking by 0.5 undoes
// the padding; the harness reports how the end metric moves with xi.
inline std::vector<AblationRow> ablate_xi_sweep(const PipelineConfig& base_cfg, const SegNetParams& segnet) {
  PipelineConfig cfg = base_cfg;
  cfg.synth.proposal_pad_m = 0.5;
  if (cfg.synth.jitter_px <= 0.0) cfg.synth.jitter_px = 6.0;
  cfg.validate();
  const auto scenes = gen_synthetic(cfg.seed + 17, cfg.n_scenes, cfg.synth);
  const auto samples = detail_ablate::samples_of(scenes);

  InferenceContext ctx;
  ctx.segnet = &segnet;
  std::vector<AblationRow> rows;
  for (double xi : {1.5, 1.0, 0.8, 0.5, 0.0, -0.5, -0.8, -1.0, -1.5}) {
    PipelineConfig run = cfg;
    run.xi = xi;
    AblationRow row;
    row.setting = str_printf("xi=%+.1fm", xi);
    const auto dets = infer_scenes(samples, ctx, run);
    detail_ablate::score_detections(scenes, dets, row);
    rows.push_back(row);
  }
  return rows;
}

// Box-encoding comparison through the learned regression head: one head per
// scheme, trained on the same crops, evaluated on held-out scenes.
inline std::vector<AblationRow> ablate_encoding(const PipelineConfig& base_cfg, const SegNetParams& segnet) {
  PipelineConfig cfg = base_cfg;
  cfg.validate();
  const auto scenes = gen_synthetic(cfg.seed + 29, cfg.n_scenes, cfg.synth);
  const auto holdout = detail_ablate::holdout_slice(scenes, cfg);

  // training pairs: normalized crop points + target encoding per scheme
  struct Pair {
    std::vector<Vec3> kept;
    Box3D refined;
    Box3D gt;
  };
  std::vector<Pair> pairs;
  const int min_pts = std::max<int>(cfg.min_crop_points, static_cast<int>(cfg.segnet.k) + 2);
  for (int si = 0; si < cfg.effective_train_scenes(); ++si) {
    const SyntheticScene& scene = scenes[static_cast<std::size_t>(si)];
    for (std::size_t pi = 0; pi < scene.sample.proposals.size(); ++pi) {
      const CropResult crop = crop_by_proposal(scene.sample, scene.sample.proposals[pi], min_pts);
      if (!crop.ok) continue;
      Pair pair;
      pair.gt = scene.sample.labels[pi % scene.sample.labels.size()].box3d();
      Box3D rough = fit_yaw_aligned_box(crop.cam_points);
      try {
        pair.refined = resize_box(rough, cfg.xi);
      } catch (const error&) {
        continue;
      }
      pair.kept = crop.cam_points;
      pairs.push_back(std::move(pair));
    }
  }
  if (pairs.empty()) throw error("ablate_encoding: no usable training pairs");

  std::vector<AblationRow> rows;
  for (BoxScheme scheme : {BoxScheme::axis_aligned, BoxScheme::corners8, BoxScheme::corners4_heights2,
                           BoxScheme::points3_heights2}) {
    BoxHeadParams head = init_box_head(scheme, cfg.box_head_hidden, cfg.seed);
    for (int step = 0; step < cfg.box_head_steps; ++step) {
      const Pair& pair = pairs[static_cast<std::size_t>(step) % pairs.size()];
      const EncodedBox target = encode(pair.gt, pair.refined, scheme);
      box_head_train_step(head, box_head_input(pair.kept, pair.refined), target, cfg.box_head_lr);
    }
    PipelineConfig run = cfg;
    run.scheme = scheme;
    run.box_head = "learned";
    InferenceContext ctx;
    ctx.segnet = &segnet;
    ctx.box_head = &head;
    AblationRow row;
    row.setting = scheme_name(scheme);
    const auto dets = infer_scenes(detail_ablate::samples_of(holdout), ctx, run);
    detail_ablate::score_detections(holdout, dets, row);
    rows.push_back(row);
  }
  return rows;
}

// Branch / attention combinations of the segmentation network, each trained
// from scratch on the same data and seed, scored by held-out point accuracy
// and the end-to-end metric.
inline std::vector<AblationRow> ablate_attention(const PipelineConfig& base_cfg) {
  PipelineConfig cfg = base_cfg;
  cfg.validate();
  const auto scenes = gen_synthetic(cfg.seed + 43, cfg.n_scenes, cfg.synth);
  const auto holdout = detail_ablate::holdout_slice(scenes, cfg);

  struct Variant {
    const char* name;
    bool local, global, attention;
  };
  const Variant variants[] = {
      {"global", false, true, false},
      {"local", true, false, false},
      {"global+local", true, true, false},
      {"global+attention", false, true, true},
      {"local+attention", true, false, true},
      {"global+local+attention", true, true, true},
  };

  std::vector<AblationRow> rows;
  for (const Variant& v : variants) {
    PipelineConfig run = cfg;
    run.segnet.use_local = v.local;
    run.segnet.use_global = v.global;
    run.segnet.use_attention = v.attention;
    run.segnet.validate();

    SegNetParams params = init_segnet_params(run.segnet);
    const auto train_items = build_train_items(
        std::vector<SyntheticScene>(scenes.begin(), scenes.begin() + run.effective_train_scenes()), run);
    const auto holdout_items = build_train_items(holdout, run);
    const TrainReport rep = train_segnet(params, train_items, holdout_items, run);

    AblationRow row;
    row.setting = v.name;
    row.holdout_accuracy = rep.holdout_accuracy;
    InferenceContext ctx;
    ctx.segnet = &params;
    const auto dets = infer_scenes(detail_ablate::samples_of(holdout), ctx, run);
    detail_ablate::score_detections(holdout, dets, row);
    rows.push_back(row);
  }
  return rows;
}

inline std::string format_ablation_table(const std::string& axis, const std::vector<AblationRow>& rows) {
  std::string out = "# axis: " + axis + " (synthetic metrics from this implementation)\n";
  out += "#setting,mean_iou3d,detection_rate,holdout_accuracy,ap_moderate\n";
  for (const AblationRow& r : rows) {
    out += str_printf("%s,%s,%s,%s,%s\n", r.setting.c_str(), fmt_double(r.mean_iou3d).c_str(),
                      fmt_double(r.detection_rate).c_str(), fmt_double(r.holdout_accuracy).c_str(),
                      r.ap ? fmt_double(*r.ap).c_str() : "absent");
  }
  return out;
}

}  // namespace srdl

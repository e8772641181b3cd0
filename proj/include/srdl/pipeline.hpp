#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "srdl/box_codec.hpp"
#include "srdl/checkpoint.hpp"
#include "srdl/eval.hpp"
#include "srdl/segnet.hpp"
#include "srdl/synth.hpp"

namespace srdl {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct PipelineConfig {
  // data: a KITTI-format tree (velodyne/, calib/, label_2/, proposals.txt)
  // or, when data_root is empty, in-memory synthetic scenes
  std::string data_root;
  std::string proposals_path;

  SynthConfig synth;
  int n_scenes = 16;
  int train_scene_count = 8;

  SegNetConfig segnet;

  // training
  int steps = 500;
  double lr = 0.2;
  double lr_decay_factor = 0.25;  // learning rate multiplier for the tail
  double lr_decay_at = 0.7;       // fraction of the budget before decaying
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  LossWeights weights;
  double early_stop_acc = 0.995;
  int eval_every = 25;
  // training items: whole scenes, proposal crops, or both. Inference runs on
  // crops, so the default keeps both distributions in the mix.
  std::string train_items = "mixed";  // scenes | crops | mixed
  std::string checkpoint_path = "segnet.srdl";
  std::string loss_log_path;

  // box head ("geometric" fits points, "learned" regresses the encoding)
  std::string box_head = "geometric";
  int box_head_hidden = 32;
  int box_head_steps = 200;
  double box_head_lr = 0.01;
  std::string box_head_path = "boxhead.srdl";

  // proposal refinement and encoding
  double xi = -0.5;
  BoxScheme scheme = BoxScheme::points3_heights2;
  int min_crop_points = 12;
  double min_box_dim = 1.0;  // smallest proposal dimension xi must survive

  EvalConfig eval;

  std::uint64_t seed = 0;
  int workers = 1;
  std::string debug_dump_dir;

  // training scenes actually used; the remainder is held out
  int effective_train_scenes() const { return std::min(train_scene_count, n_scenes); }

  void validate() const {
    synth.validate();
    segnet.validate();
    weights.validate();
    if (n_scenes < 1 || train_scene_count < 1)
      throw config_error("PipelineConfig: scene counts must be positive");
    if (steps < 0 || eval_every < 1) throw config_error("PipelineConfig: bad step counts");
    if (lr < 0.0) throw config_error("PipelineConfig: negative learning rate");
    if (workers < 1) throw config_error("PipelineConfig: need at least one worker");
    if (min_box_dim <= 0.0) throw config_error("PipelineConfig: min_box_dim must be positive");
    if (xi <= -min_box_dim)
      throw config_error(str_printf("PipelineConfig: xi=%g would collapse boxes at the configured minimum "
                                    "dimension %g",
                                    xi, min_box_dim));
    if (box_head != "geometric" && box_head != "learned")
      throw config_error("PipelineConfig: box_head must be 'geometric' or 'learned'");
    if (min_crop_points < 3) throw config_error("PipelineConfig: min_crop_points must be >= 3");
  }
};

namespace detail_pipe {

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "1" || v == "true" || v == "on") return true;
  if (v == "0" || v == "false" || v == "off") return false;
  throw config_error("config: " + key + ": expected a boolean, got '" + v + "'");
}

inline double parse_num(const std::string& v, const std::string& key) {
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (end != v.c_str() + v.size() || v.empty() || !std::isfinite(d))
    throw config_error("config: " + key + ": expected a number, got '" + v + "'");
  return d;
}

inline std::int64_t parse_int(const std::string& v, const std::string& key) {
  const double d = parse_num(v, key);
  if (d != std::floor(d)) throw config_error("config: " + key + ": expected an integer, got '" + v + "'");
  return static_cast<std::int64_t>(d);
}

}  // namespace detail_pipe

// Applies one "key = value" setting. Precedence is caller-defined: defaults,
// then config file, then command-line overrides.
inline void apply_config_kv(PipelineConfig& cfg, const std::string& key, const std::string& value) {
  using detail_pipe::parse_bool;
  using detail_pipe::parse_int;
  using detail_pipe::parse_num;
  if (key == "seed") {
    cfg.seed = static_cast<std::uint64_t>(parse_int(value, key));
    cfg.segnet.seed = cfg.seed;
  } else if (key == "workers") cfg.workers = static_cast<int>(parse_int(value, key));
  else if (key == "data_root") cfg.data_root = value;
  else if (key == "proposals_path") cfg.proposals_path = value;
  else if (key == "scenes") cfg.n_scenes = static_cast<int>(parse_int(value, key));
  else if (key == "train_scenes") cfg.train_scene_count = static_cast<int>(parse_int(value, key));
  else if (key == "synth.points") cfg.synth.points_per_scene = static_cast<int>(parse_int(value, key));
  else if (key == "synth.clutter_ratio") cfg.synth.clutter_ratio = parse_num(value, key);
  else if (key == "synth.jitter_px") cfg.synth.jitter_px = parse_num(value, key);
  else if (key == "synth.depth_pad") cfg.synth.depth_pad = parse_num(value, key);
  else if (key == "synth.proposal_pad_m") cfg.synth.proposal_pad_m = parse_num(value, key);
  else if (key == "synth.objects") cfg.synth.objects_per_scene = static_cast<int>(parse_int(value, key));
  else if (key == "synth.decoy_box_share") cfg.synth.decoy_box_share = parse_num(value, key);
  else if (key == "synth.decoy_wall_share") cfg.synth.decoy_wall_share = parse_num(value, key);
  else if (key == "segnet.k") cfg.segnet.k = parse_int(value, key);
  else if (key == "segnet.layers") {
    cfg.segnet.num_layers = parse_int(value, key);
    cfg.segnet.layer_dims.assign(static_cast<std::size_t>(cfg.segnet.num_layers),
                                 cfg.segnet.layer_dims.empty() ? 64 : cfg.segnet.layer_dims[0]);
  } else if (key == "segnet.width") {
    const std::int64_t w = parse_int(value, key);
    cfg.segnet.layer_dims.assign(static_cast<std::size_t>(cfg.segnet.num_layers), w);
  } else if (key == "segnet.tnet_hidden") cfg.segnet.tnet_hidden = parse_int(value, key);
  else if (key == "segnet.head_hidden") cfg.segnet.head_hidden = parse_int(value, key);
  else if (key == "segnet.classes") cfg.segnet.num_classes = parse_int(value, key);
  else if (key == "segnet.use_local") cfg.segnet.use_local = parse_bool(value, key);
  else if (key == "segnet.use_global") cfg.segnet.use_global = parse_bool(value, key);
  else if (key == "segnet.use_attention") cfg.segnet.use_attention = parse_bool(value, key);
  else if (key == "train.steps") cfg.steps = static_cast<int>(parse_int(value, key));
  else if (key == "train.lr") cfg.lr = parse_num(value, key);
  else if (key == "train.lr_decay_factor") cfg.lr_decay_factor = parse_num(value, key);
  else if (key == "train.lr_decay_at") cfg.lr_decay_at = parse_num(value, key);
  else if (key == "train.focal_alpha") cfg.focal_alpha = parse_num(value, key);
  else if (key == "train.focal_gamma") cfg.focal_gamma = parse_num(value, key);
  else if (key == "train.early_stop_acc") cfg.early_stop_acc = parse_num(value, key);
  else if (key == "train.eval_every") cfg.eval_every = static_cast<int>(parse_int(value, key));
  else if (key == "train.items") cfg.train_items = value;
  else if (key == "loss.alpha") cfg.weights.alpha = parse_num(value, key);
  else if (key == "loss.beta") cfg.weights.beta = parse_num(value, key);
  else if (key == "loss.chi") cfg.weights.chi = parse_num(value, key);
  else if (key == "checkpoint") cfg.checkpoint_path = value;
  else if (key == "loss_log") cfg.loss_log_path = value;
  else if (key == "box_head") cfg.box_head = value;
  else if (key == "box_head.hidden") cfg.box_head_hidden = static_cast<int>(parse_int(value, key));
  else if (key == "box_head.steps") cfg.box_head_steps = static_cast<int>(parse_int(value, key));
  else if (key == "box_head.lr") cfg.box_head_lr = parse_num(value, key);
  else if (key == "box_head.path") cfg.box_head_path = value;
  else if (key == "xi") cfg.xi = parse_num(value, key);
  else if (key == "scheme") cfg.scheme = scheme_from_name(value);
  else if (key == "min_crop_points") cfg.min_crop_points = static_cast<int>(parse_int(value, key));
  else if (key == "min_box_dim") cfg.min_box_dim = parse_num(value, key);
  else if (key == "eval.criterion") {
    if (value == "iou3d") cfg.eval.criterion = IouCriterion::iou3d;
    else if (value == "bev") cfg.eval.criterion = IouCriterion::bev;
    else throw config_error("config: eval.criterion must be iou3d or bev");
  } else if (key == "eval.interp") {
    if (value == "11") cfg.eval.interp = ApInterp::points11;
    else if (value == "40") cfg.eval.interp = ApInterp::points40;
    else throw config_error("config: eval.interp must be 11 or 40");
  } else if (key.rfind("eval.threshold.", 0) == 0) {
    cfg.eval.iou_thresholds[key.substr(15)] = parse_num(value, key);
  } else if (key == "debug_dump") cfg.debug_dump_dir = value;
  else throw config_error("config: unknown key '" + key + "'");
}

inline void apply_config_text(PipelineConfig& cfg, const std::string& text, const std::string& name) {
  std::istringstream iss(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(iss, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw config_error(name + ":" + std::to_string(line_no) + ": expected 'key = value'");
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    apply_config_kv(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

inline PipelineConfig load_config_file(const std::string& path) {
  PipelineConfig cfg;
  apply_config_text(cfg, read_file(path), path);
  return cfg;
}

// ---------------------------------------------------------------------------
// Scene IO (KITTI-format directory tree)
// ---------------------------------------------------------------------------

inline std::string frame_name(int frame) { return str_printf("%06d", frame); }

inline void write_scene_dir(const std::string& root, const std::vector<SyntheticScene>& scenes) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(root) / "velodyne");
  fs::create_directories(fs::path(root) / "calib");
  fs::create_directories(fs::path(root) / "label_2");
  std::vector<StereoProposal> all_props;
  for (const SyntheticScene& s : scenes) {
    const std::string base = frame_name(s.sample.frame);
    write_file((fs::path(root) / "velodyne" / (base + ".bin")).string(), write_velodyne_bin(s.sample.cloud));
    write_file((fs::path(root) / "calib" / (base + ".txt")).string(), write_calib(s.sample.calib));
    write_file((fs::path(root) / "label_2" / (base + ".txt")).string(), write_labels(s.sample.labels));
    for (const StereoProposal& p : s.sample.proposals) all_props.push_back(p);
  }
  write_file((fs::path(root) / "proposals.txt").string(), write_proposals(all_props));
}

inline std::vector<SceneSample> load_scene_dir(const std::string& root, const std::string& proposals_path,
                                               bool need_labels) {
  namespace fs = std::filesystem;
  const fs::path velo_dir = fs::path(root) / "velodyne";
  if (!fs::is_directory(velo_dir)) throw parse_error("data root has no velodyne/ directory: " + root);
  std::vector<std::string> frames;
  for (const auto& entry : fs::directory_iterator(velo_dir)) {
    if (entry.path().extension() == ".bin") frames.push_back(entry.path().stem().string());
  }
  std::sort(frames.begin(), frames.end());

  const std::string props_file = proposals_path.empty() ? (fs::path(root) / "proposals.txt").string()
                                                        : proposals_path;
  std::map<int, std::vector<StereoProposal>> props;
  if (fs::exists(props_file)) props = group_proposals_by_frame(load_proposals(read_file(props_file), props_file));

  std::vector<SceneSample> out;
  for (const std::string& base : frames) {
    SceneSample s;
    s.frame = static_cast<int>(detail_io::parse_long(base, "frame name " + base));
    s.cloud = read_velodyne_bin(read_file((velo_dir / (base + ".bin")).string()), base + ".bin");
    s.calib = parse_calib(read_file((fs::path(root) / "calib" / (base + ".txt")).string()), base + " calib");
    const fs::path label_path = fs::path(root) / "label_2" / (base + ".txt");
    if (fs::exists(label_path)) s.labels = parse_labels(read_file(label_path.string()), base + " labels");
    else if (need_labels) throw parse_error("missing label file: " + label_path.string());
    auto it = props.find(s.frame);
    if (it != props.end()) s.proposals = it->second;
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cropping
// ---------------------------------------------------------------------------

struct CropResult {
  bool ok = false;
  FusedRegion region;
  std::vector<Vec3> cam_points;          // rect-camera frame
  std::vector<std::size_t> cloud_index;  // into the scene cloud
};

inline CropResult crop_by_proposal(const SceneSample& scene, const StereoProposal& prop,
                                   int min_points) {
  CropResult out;
  const Frustum left = frustum_from_box2d(scene.calib, View::left, prop.left, prop.depth);
  const Frustum right = frustum_from_box2d(scene.calib, View::right, prop.right, prop.depth);
  out.region = intersect_frustums(left, right);
  if (out.region.empty) return out;

  std::vector<Vec3> rect(scene.cloud.size());
  for (std::size_t i = 0; i < rect.size(); ++i) rect[i] = scene.calib.velo_to_rect(scene.cloud[i].xyz());
  const auto mask = points_in_region(rect, out.region);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    out.cam_points.push_back(rect[i]);
    out.cloud_index.push_back(i);
  }
  out.ok = static_cast<int>(out.cam_points.size()) >= min_points;
  return out;
}

inline Tensor points_to_tensor(const std::vector<Vec3>& pts, const Vec3& center) {
  Tensor t(Shape{static_cast<std::int64_t>(pts.size()), 3});
  for (std::size_t i = 0; i < pts.size(); ++i) {
    t.data[i * 3 + 0] = pts[i].x - center.x;
    t.data[i * 3 + 1] = pts[i].y - center.y;
    t.data[i * 3 + 2] = pts[i].z - center.z;
  }
  return t;
}

inline Vec3 centroid_of(const std::vector<Vec3>& pts) {
  Vec3 c{0, 0, 0};
  for (const Vec3& p : pts) c = c + p * (1.0 / static_cast<double>(pts.size()));
  return c;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainItem {
  Tensor points;            // centered
  std::vector<int> labels;  // per point
};

// Builds training items per the configured mode: whole scenes, proposal
// crops, or both. A scene with no usable crop always contributes itself.
inline std::vector<TrainItem> build_train_items(const std::vector<SyntheticScene>& scenes,
                                                const PipelineConfig& cfg) {
  if (cfg.train_items != "scenes" && cfg.train_items != "crops" && cfg.train_items != "mixed")
    throw config_error("train.items must be scenes, crops or mixed");
  std::vector<TrainItem> items;
  const int min_pts = std::max<int>(cfg.min_crop_points, static_cast<int>(cfg.segnet.k) + 2);
  const bool want_scenes = cfg.train_items != "crops";
  const bool want_crops = cfg.train_items != "scenes";
  for (const SyntheticScene& scene : scenes) {
    bool made_crop = false;
    if (want_crops) {
      for (const StereoProposal& prop : scene.sample.proposals) {
        const CropResult crop = crop_by_proposal(scene.sample, prop, min_pts);
        if (!crop.ok) continue;
        TrainItem item;
        item.points = points_to_tensor(crop.cam_points, centroid_of(crop.cam_points));
        for (std::size_t idx : crop.cloud_index) item.labels.push_back(scene.point_labels[idx]);
        items.push_back(std::move(item));
        made_crop = true;
      }
    }
    if (want_scenes || !made_crop) {
      std::vector<Vec3> rect(scene.sample.cloud.size());
      for (std::size_t i = 0; i < rect.size(); ++i)
        rect[i] = scene.sample.calib.velo_to_rect(scene.sample.cloud[i].xyz());
      TrainItem item;
      item.points = points_to_tensor(rect, centroid_of(rect));
      item.labels = scene.point_labels;
      items.push_back(std::move(item));
    }
  }
  if (items.empty()) throw error("build_train_items: no usable training items");
  return items;
}

inline double point_accuracy(const std::vector<TrainItem>& items, const SegNetParams& params) {
  std::int64_t correct = 0, total = 0;
  for (const TrainItem& item : items) {
    const Tensor scores = segnet_forward(item.points, params);
    const auto pred = predict_classes(scores);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      correct += pred[i] == item.labels[i];
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

struct TrainReport {
  int steps_run = 0;
  std::vector<double> losses;
  double train_accuracy = 0.0;
  double holdout_accuracy = 0.0;
};

// Round-robin SGD over the items with optional early stopping on training
// accuracy. Aborts on a non-finite loss after saving the last good state.
inline TrainReport train_segnet(SegNetParams& params, const std::vector<TrainItem>& train_items,
                                const std::vector<TrainItem>& holdout_items, const PipelineConfig& cfg,
                                std::string* loss_log = nullptr) {
  TrainReport report;
  SegNetParams last_good = params;
  const int decay_step = static_cast<int>(cfg.lr_decay_at * cfg.steps);
  for (int step = 0; step < cfg.steps; ++step) {
    const TrainItem& item = train_items[static_cast<std::size_t>(step) % train_items.size()];
    const double lr = step < decay_step ? cfg.lr : cfg.lr * cfg.lr_decay_factor;
    double loss = 0.0;
    try {
      loss = segnet_train_step(item.points, item.labels, params, lr, cfg.focal_alpha, cfg.focal_gamma).loss;
    } catch (const numeric_error&) {
      params = last_good;
      if (!cfg.checkpoint_path.empty()) save_segnet(cfg.checkpoint_path, last_good);
      throw;
    }
    last_good = params;
    report.losses.push_back(loss);
    if (loss_log) *loss_log += str_printf("step %d loss %s\n", step, fmt_double(loss).c_str());
    report.steps_run = step + 1;
    if (cfg.early_stop_acc < 1.0 && (step + 1) % cfg.eval_every == 0) {
      if (point_accuracy(train_items, params) >= cfg.early_stop_acc) break;
    }
  }
  report.train_accuracy = point_accuracy(train_items, params);
  report.holdout_accuracy = holdout_items.empty() ? 0.0 : point_accuracy(holdout_items, params);
  return report;
}

// ---------------------------------------------------------------------------
// Learned box head (optional alternative to the geometric fit)
// ---------------------------------------------------------------------------

struct BoxHeadParams {
  BoxScheme scheme = BoxScheme::points3_heights2;
  LinearParams l1, l2, out;

  std::int64_t output_dim() const { return scheme_dim(scheme) + 2; }
};

inline BoxHeadParams init_box_head(BoxScheme scheme, int hidden, std::uint64_t seed) {
  Rng rng(seed + 101);
  BoxHeadParams p;
  p.scheme = scheme;
  p.l1 = detail_net::make_linear(rng, 3, hidden, true);
  p.l2 = detail_net::make_linear(rng, hidden, hidden, true);
  p.out = detail_net::make_linear(rng, hidden, scheme_dim(scheme) + 2, true);
  // start at the zero encoding with a valid orientation pair
  for (double& v : p.out.weight.data) v = 0.0;
  (*p.out.bias).data[static_cast<std::size_t>(scheme_dim(scheme))] = 1.0;  // cos = 1
  return p;
}

inline void visit_box_head(BoxHeadParams& p, const std::function<void(const std::string&, Tensor&)>& fn) {
  fn("l1.weight", p.l1.weight);
  fn("l1.bias", *p.l1.bias);
  fn("l2.weight", p.l2.weight);
  fn("l2.bias", *p.l2.bias);
  fn("out.weight", p.out.weight);
  fn("out.bias", *p.out.bias);
}

// Normalizes camera points into the proposal frame the codec uses.
inline Tensor box_head_input(const std::vector<Vec3>& pts, const Box3D& proposal) {
  const detail_codec::ProposalFrame frame(proposal);
  Tensor t(Shape{static_cast<std::int64_t>(pts.size()), 3});
  const Vec3 anchor = proposal.bottom_center();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto o = frame.offset(pts[i], anchor);
    t.data[i * 3 + 0] = o[0];
    t.data[i * 3 + 1] = o[1];
    t.data[i * 3 + 2] = o[2];
  }
  return t;
}

inline Tensor box_head_forward(const Tensor& pts, const BoxHeadParams& p) {
  Tensor h = relu(detail_net::linear(pts, p.l1));
  h = relu(detail_net::linear(h, p.l2));
  return detail_net::linear(max_pool_points(h), p.out);
}

inline EncodedBox box_head_decode_output(const Tensor& out, BoxScheme scheme) {
  EncodedBox enc;
  enc.scheme = scheme;
  const int dim = scheme_dim(scheme);
  enc.values.assign(out.data.begin(), out.data.begin() + dim);
  enc.cos_theta = out.data[static_cast<std::size_t>(dim)];
  enc.sin_theta = out.data[static_cast<std::size_t>(dim) + 1];
  return enc;
}

// One smooth-L1 regression step toward the target encoding.
inline double box_head_train_step(BoxHeadParams& params, const Tensor& pts, const EncodedBox& target,
                                  double lr) {
  Tensor target_vec(Shape{1, static_cast<std::int64_t>(target.values.size()) + 2});
  for (std::size_t i = 0; i < target.values.size(); ++i) target_vec.data[i] = target.values[i];
  target_vec.data[target.values.size()] = target.cos_theta;
  target_vec.data[target.values.size() + 1] = target.sin_theta;

  Tape tape;
  BoxHeadParams tracked = params;
  visit_box_head(tracked, [&](const std::string&, Tensor& t) { t = tape.leaf(t, true); });
  Tensor out = box_head_forward(tape.leaf(pts, false), tracked);
  Tensor loss = smooth_l1(out, target_vec, 1.0);
  tape.backward(loss);
  std::vector<Tensor*> ptrs;
  visit_box_head(params, [&](const std::string&, Tensor& t) { ptrs.push_back(&t); });
  std::vector<Tensor> grads;
  visit_box_head(tracked, [&](const std::string&, Tensor& t) { grads.push_back(tape.grad(t)); });
  sgd_step(ptrs, grads, lr);
  return loss.value();
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

struct FrameDebug {
  std::string text;
};

struct InferenceContext {
  const SegNetParams* segnet = nullptr;
  const BoxHeadParams* box_head = nullptr;  // used when cfg.box_head == "learned"
};

// Full per-frame pipeline: fuse stereo proposals into regions, crop, score
// points, refine the proposal box by xi with a containment test, fit or
// regress the output box through the configured encoding, decode, emit.
inline std::vector<LabelRecord> infer_frame(const SceneSample& scene, const InferenceContext& ctx,
                                            const PipelineConfig& cfg, FrameDebug* debug = nullptr) {
  std::vector<LabelRecord> detections;
  const int min_pts = std::max<int>(cfg.min_crop_points, static_cast<int>(cfg.segnet.k) + 2);
  int prop_index = -1;
  for (const StereoProposal& prop : scene.proposals) {
    ++prop_index;
    auto note = [&](const std::string& msg) {
      if (debug) debug->text += str_printf("proposal %d: %s\n", prop_index, msg.c_str());
    };
    const CropResult crop = crop_by_proposal(scene, prop, min_pts);
    if (crop.region.empty) {
      note("empty fused region");
      continue;
    }
    if (debug) {
      debug->text += str_printf("proposal %d: region planes=%zu corners=%zu crop=%zu\n", prop_index,
                                crop.region.planes.size(), crop.region.corners.size(), crop.cam_points.size());
      for (const Plane& pl : crop.region.planes)
        debug->text += str_printf("  plane n=(%s,%s,%s) d=%s\n", fmt_double(pl.n.x).c_str(),
                                  fmt_double(pl.n.y).c_str(), fmt_double(pl.n.z).c_str(),
                                  fmt_double(pl.d).c_str());
    }
    if (!crop.ok) {
      note("too few points in the fused region");
      continue;
    }

    // per-point scores on the centered crop
    const Vec3 center = centroid_of(crop.cam_points);
    const Tensor scores = segnet_forward(points_to_tensor(crop.cam_points, center), *ctx.segnet);
    const auto classes = predict_classes(scores);
    std::vector<double> obj_prob(classes.size());
    for (std::size_t i = 0; i < classes.size(); ++i) {
      const double logit = cfg.segnet.num_classes > 1 ? scores.at(static_cast<std::int64_t>(i), 1)
                                                      : scores.at(static_cast<std::int64_t>(i), 0);
      obj_prob[i] = 1.0 / (1.0 + std::exp(-logit));
    }

    // the 3D proposal box is the yaw-aligned box of the fused region itself,
    // so it carries whatever slack the 2D proposals had; xi then resizes it
    Box3D proposal_box = fit_yaw_aligned_box(crop.region.corners);
    Box3D refined;
    try {
      refined = resize_box(proposal_box, cfg.xi);
    } catch (const error&) {
      note("xi collapsed the proposal box");
      continue;
    }

    const auto inside = points_in_box3d(crop.cam_points, refined);
    std::vector<Vec3> kept;
    std::vector<double> kept_prob;
    for (std::size_t i = 0; i < crop.cam_points.size(); ++i) {
      if (inside[i] && classes[i] == 1) {
        kept.push_back(crop.cam_points[i]);
        kept_prob.push_back(obj_prob[i]);
      }
    }
    if (kept.size() < 3) {
      kept.clear();
      kept_prob.clear();
      for (std::size_t i = 0; i < crop.cam_points.size(); ++i) {
        if (classes[i] == 1) {
          kept.push_back(crop.cam_points[i]);
          kept_prob.push_back(obj_prob[i]);
        }
      }
    }
    if (kept.size() < 3) {
      note("segmentation kept too few points");
      continue;
    }

    // extent of n uniform interior samples underestimates the true extent by
    // (n-1)/(n+1) per axis; the geometric head undoes that bias
    auto dilate_fit = [](const Box3D& fit, std::size_t n) {
      const double f = std::min(1.2, (static_cast<double>(n) + 1.0) / std::max(1.0, static_cast<double>(n) - 1.0));
      Box3D out = fit;
      out.w *= f;
      out.h *= f;
      out.l *= f;
      return out;
    };

    Box3D out_box;
    EncodedBox enc;
    if (cfg.box_head == "learned" && ctx.box_head) {
      const Tensor pred = box_head_forward(box_head_input(kept, refined), *ctx.box_head);
      try {
        enc = box_head_decode_output(pred, cfg.scheme);
        out_box = decode(enc, refined);
      } catch (const error&) {
        note("learned head produced an invalid box; falling back to the geometric fit");
        enc = encode(dilate_fit(fit_yaw_aligned_box(kept), kept.size()), refined, cfg.scheme);
        out_box = decode(enc, refined);
      }
    } else {
      const Box3D fitted = dilate_fit(fit_yaw_aligned_box(kept), kept.size());
      enc = encode(fitted, refined, cfg.scheme);
      out_box = decode(enc, refined);
    }

    double score = 0.0;
    for (double p : kept_prob) score += p / static_cast<double>(kept_prob.size());

    Box2D bbox{1e300, 1e300, -1e300, -1e300};
    bool projected = true;
    for (const Vec3& c : box_corners(out_box)) {
      const auto px = project_rect_point(scene.calib, View::left, c);
      if (!px) {
        projected = false;
        break;
      }
      bbox.u_min = std::min(bbox.u_min, (*px)[0]);
      bbox.v_min = std::min(bbox.v_min, (*px)[1]);
      bbox.u_max = std::max(bbox.u_max, (*px)[0]);
      bbox.v_max = std::max(bbox.v_max, (*px)[1]);
    }
    if (!projected) {
      note("output box does not project into the image");
      continue;
    }

    if (debug) {
      debug->text += str_printf("proposal %d: kept=%zu refined=(%s,%s,%s,%s,%s,%s,%s)\n", prop_index,
                                kept.size(), fmt_double(refined.x).c_str(), fmt_double(refined.y).c_str(),
                                fmt_double(refined.z).c_str(), fmt_double(refined.w).c_str(),
                                fmt_double(refined.h).c_str(), fmt_double(refined.l).c_str(),
                                fmt_double(refined.theta).c_str());
      debug->text += "proposal " + std::to_string(prop_index) + ": encoding";
      for (double v : enc.values) debug->text += " " + fmt_double(v);
      debug->text += "\n";
    }
    detections.push_back(LabelRecord::from_box("Car", out_box, bbox, score));
  }
  return detections;
}

// Frame-parallel inference; results land in frame order no matter how many
// workers run.
inline std::vector<std::vector<LabelRecord>> infer_scenes(const std::vector<SceneSample>& scenes,
                                                          const InferenceContext& ctx,
                                                          const PipelineConfig& cfg,
                                                          std::vector<FrameDebug>* debug = nullptr) {
  std::vector<std::vector<LabelRecord>> results(scenes.size());
  if (debug) debug->assign(scenes.size(), {});
  const int workers = std::max(1, std::min<int>(cfg.workers, static_cast<int>(scenes.size())));
  if (workers == 1) {
    for (std::size_t i = 0; i < scenes.size(); ++i)
      results[i] = infer_frame(scenes[i], ctx, cfg, debug ? &(*debug)[i] : nullptr);
    return results;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = next.fetch_add(1); i < scenes.size(); i = next.fetch_add(1))
          results[i] = infer_frame(scenes[i], ctx, cfg, debug ? &(*debug)[i] : nullptr);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return results;
}

// ---------------------------------------------------------------------------
// Evaluation over directories
// ---------------------------------------------------------------------------

struct DirEvalResult {
  std::vector<ApCell> cells;
  std::vector<std::string> missing_frames;
};

inline DirEvalResult evaluate_dirs(const std::string& gt_dir, const std::string& det_dir,
                                   const EvalConfig& cfg) {
  namespace fs = std::filesystem;
  auto list_frames = [](const std::string& dir) {
    std::vector<std::string> out;
    if (!fs::is_directory(dir)) throw parse_error("not a directory: " + dir);
    for (const auto& e : fs::directory_iterator(dir))
      if (e.path().extension() == ".txt") out.push_back(e.path().stem().string());
    std::sort(out.begin(), out.end());
    return out;
  };
  const auto gt_frames = list_frames(gt_dir);
  const auto det_frames = list_frames(det_dir);

  DirEvalResult result;
  std::vector<std::string> common;
  for (const std::string& f : gt_frames) {
    if (std::binary_search(det_frames.begin(), det_frames.end(), f)) common.push_back(f);
    else result.missing_frames.push_back(f + " (no detections)");
  }
  for (const std::string& f : det_frames)
    if (!std::binary_search(gt_frames.begin(), gt_frames.end(), f))
      result.missing_frames.push_back(f + " (no ground truth)");

  std::vector<std::pair<std::vector<LabelRecord>, std::vector<LabelRecord>>> frames;
  for (const std::string& f : common) {
    frames.emplace_back(parse_labels(read_file((fs::path(gt_dir) / (f + ".txt")).string()), f + " gt"),
                        parse_labels(read_file((fs::path(det_dir) / (f + ".txt")).string()), f + " det"));
  }

  for (const auto& [cls, thr] : cfg.iou_thresholds) {
    (void)thr;
    for (Difficulty d : {Difficulty::easy, Difficulty::moderate, Difficulty::hard}) {
      std::vector<MatchResult> matches;
      for (const auto& [gts, dets] : frames) matches.push_back(match_detections(dets, gts, cls, d, cfg));
      ApCell cell;
      cell.cls = cls;
      cell.difficulty = d;
      cell.criterion = cfg.criterion;
      cell.interp = cfg.interp;
      cell.ap = average_precision(matches, cfg.interp);
      result.cells.push_back(cell);
    }
  }
  return result;
}

}  // namespace srdl

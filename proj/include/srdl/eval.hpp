#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "srdl/kitti_io.hpp"

namespace srdl {

enum class Difficulty { easy = 0, moderate = 1, hard = 2, ignored = 3 };

inline const char* difficulty_name(Difficulty d) {
  switch (d) {
    case Difficulty::easy: return "easy";
    case Difficulty::moderate: return "moderate";
    case Difficulty::hard: return "hard";
    case Difficulty::ignored: return "ignored";
  }
  return "?";
}

enum class IouCriterion { iou3d, bev };

inline const char* criterion_name(IouCriterion c) { return c == IouCriterion::iou3d ? "iou3d" : "bev"; }

enum class ApInterp { points11, points40 };

struct EvalConfig {
  // class -> minimum IoU for a match
  std::map<std::string, double> iou_thresholds = {{"Car", 0.7}, {"Pedestrian", 0.5}, {"Cyclist", 0.5}};
  IouCriterion criterion = IouCriterion::iou3d;
  ApInterp interp = ApInterp::points40;

  double threshold_for(const std::string& cls) const {
    auto it = iou_thresholds.find(cls);
    if (it == iou_thresholds.end()) throw config_error("EvalConfig: no IoU threshold for class " + cls);
    if (!(it->second > 0.0) || it->second > 1.0)
      throw config_error("EvalConfig: threshold out of (0,1] for class " + cls);
    return it->second;
  }
};

// Devkit difficulty bands: min 2D box height, max occlusion, max truncation.
// Returns the easiest band a ground truth qualifies for.
inline Difficulty difficulty_filter(const LabelRecord& label) {
  const double height = label.bbox_height();
  const double trunc = label.truncated;
  const int occ = label.occluded;
  if (height >= 40.0 && occ <= 0 && trunc <= 0.15) return Difficulty::easy;
  if (height >= 25.0 && occ <= 1 && trunc <= 0.30) return Difficulty::moderate;
  if (height >= 25.0 && occ <= 2 && trunc <= 0.50) return Difficulty::hard;
  return Difficulty::ignored;
}

enum class DetFlag { tp = 1, fp = 0, ignored = -1 };

struct MatchResult {
  std::vector<DetFlag> det_flags;   // per detection, in score order
  std::vector<double> det_scores;   // matching scores, in score order
  std::vector<char> gt_matched;     // per relevant ground truth
  int relevant_gt = 0;
};

// Greedy single-frame matching for one class and difficulty slice:
// detections in descending score order each take the unmatched relevant GT
// of highest IoU above the class threshold. A detection whose best match is
// an out-of-slice GT is ignored (neither TP nor FP).
inline MatchResult match_detections(const std::vector<LabelRecord>& detections,
                                    const std::vector<LabelRecord>& gts, const std::string& cls,
                                    Difficulty difficulty, const EvalConfig& cfg) {
  const double threshold = cfg.threshold_for(cls);

  std::vector<const LabelRecord*> relevant, out_of_slice;
  for (const LabelRecord& gt : gts) {
    if (gt.dont_care() || gt.type != cls) continue;
    const Difficulty band = difficulty_filter(gt);
    if (band != Difficulty::ignored && static_cast<int>(band) <= static_cast<int>(difficulty))
      relevant.push_back(&gt);
    else
      out_of_slice.push_back(&gt);
  }

  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < detections.size(); ++i)
    if (detections[i].type == cls) order.push_back(i);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return detections[a].score.value_or(0.0) > detections[b].score.value_or(0.0);
  });

  auto overlap = [&](const LabelRecord& det, const LabelRecord& gt) {
    const Box3D db = det.box3d();
    const Box3D gb = gt.box3d();
    return cfg.criterion == IouCriterion::iou3d ? iou_3d(db, gb) : iou_bev(db, gb);
  };

  MatchResult result;
  result.relevant_gt = static_cast<int>(relevant.size());
  result.gt_matched.assign(relevant.size(), 0);
  for (std::size_t oi : order) {
    const LabelRecord& det = detections[oi];
    double best_iou = 0.0;
    std::size_t best_gt = relevant.size();
    for (std::size_t gi = 0; gi < relevant.size(); ++gi) {
      if (result.gt_matched[gi]) continue;
      const double v = overlap(det, *relevant[gi]);
      if (v >= threshold && v > best_iou) {
        best_iou = v;
        best_gt = gi;
      }
    }
    if (best_gt < relevant.size()) {
      result.gt_matched[best_gt] = 1;
      result.det_flags.push_back(DetFlag::tp);
      result.det_scores.push_back(det.score.value_or(0.0));
      continue;
    }
    bool hits_ignored = false;
    for (const LabelRecord* gt : out_of_slice) {
      if (overlap(det, *gt) >= threshold) {
        hits_ignored = true;
        break;
      }
    }
    result.det_flags.push_back(hits_ignored ? DetFlag::ignored : DetFlag::fp);
    result.det_scores.push_back(det.score.value_or(0.0));
  }
  return result;
}

// Interpolated average precision over the fixed recall grid. Ground-truth
// free slices have no defined AP and report an absent value.
inline std::optional<double> average_precision(const std::vector<MatchResult>& frames, ApInterp interp) {
  long total_gt = 0;
  std::vector<std::pair<double, DetFlag>> dets;  // (score, flag)
  for (const MatchResult& fr : frames) {
    total_gt += fr.relevant_gt;
    for (std::size_t i = 0; i < fr.det_flags.size(); ++i)
      if (fr.det_flags[i] != DetFlag::ignored) dets.emplace_back(fr.det_scores[i], fr.det_flags[i]);
  }
  if (total_gt == 0) return std::nullopt;

  std::stable_sort(dets.begin(), dets.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });

  std::vector<double> precision, recall;
  long tp = 0, fp = 0;
  for (const auto& [score, flag] : dets) {
    (flag == DetFlag::tp ? tp : fp) += 1;
    precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(total_gt));
  }

  auto p_interp = [&](double r) {
    double best = 0.0;
    for (std::size_t i = 0; i < recall.size(); ++i)
      if (recall[i] >= r - 1e-12) best = std::max(best, precision[i]);
    return best;
  };

  double sum = 0.0;
  int count = 0;
  if (interp == ApInterp::points11) {
    for (int i = 0; i <= 10; ++i) {
      sum += p_interp(static_cast<double>(i) / 10.0);
      ++count;
    }
  } else {
    for (int i = 1; i <= 40; ++i) {
      sum += p_interp(static_cast<double>(i) / 40.0);
      ++count;
    }
  }
  return sum / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

struct ApCell {
  std::string cls;
  Difficulty difficulty = Difficulty::easy;
  IouCriterion criterion = IouCriterion::iou3d;
  ApInterp interp = ApInterp::points40;
  std::optional<double> ap;
};

// Key/value lines followed by machine-readable delimited rows.
inline std::string format_eval_report(const std::vector<ApCell>& cells) {
  std::string out;
  for (const ApCell& c : cells) {
    out += str_printf("ap %s %s %s %s: %s\n", c.cls.c_str(), difficulty_name(c.difficulty),
                      criterion_name(c.criterion), c.interp == ApInterp::points11 ? "11pt" : "40pt",
                      c.ap ? fmt_double(*c.ap).c_str() : "absent");
  }
  out += "#class,difficulty,criterion,interp,ap\n";
  for (const ApCell& c : cells) {
    out += str_printf("%s,%s,%s,%s,%s\n", c.cls.c_str(), difficulty_name(c.difficulty),
                      criterion_name(c.criterion), c.interp == ApInterp::points11 ? "11pt" : "40pt",
                      c.ap ? fmt_double(*c.ap).c_str() : "absent");
  }
  return out;
}

}  // namespace srdl

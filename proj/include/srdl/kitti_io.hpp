#pragma once

#include <cstring>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "srdl/geometry.hpp"

namespace srdl {

// ---------------------------------------------------------------------------
// Low-level parsing helpers: every failure names file, line and field.
// ---------------------------------------------------------------------------

namespace detail_io {

inline std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream iss(line);
  std::string tok;
  while (iss >> tok) out.push_back(tok);
  return out;
}

inline double parse_double(const std::string& tok, const std::string& where) {
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end != tok.c_str() + tok.size() || tok.empty())
    throw parse_error(where + ": not a number: '" + tok + "'");
  if (!std::isfinite(v)) throw parse_error(where + ": non-finite value: '" + tok + "'");
  return v;
}

inline long parse_long(const std::string& tok, const std::string& where) {
  char* end = nullptr;
  const long v = std::strtol(tok.c_str(), &end, 10);
  if (end != tok.c_str() + tok.size() || tok.empty())
    throw parse_error(where + ": not an integer: '" + tok + "'");
  return v;
}

inline std::string loc(const std::string& name, std::size_t line) {
  return name + ":" + std::to_string(line);
}

}  // namespace detail_io

// ---------------------------------------------------------------------------
// Calibration files
// ---------------------------------------------------------------------------

// Accepts "KEY: v0 v1 ..." lines; requires P2, P3, R0_rect and
// Tr_velo_to_cam. P_left = P2 and P_right = P3 (KITTI color cameras).
inline CameraCalib parse_calib(const std::string& text, const std::string& name = "calib") {
  std::map<std::string, std::vector<double>> fields;
  std::istringstream iss(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(iss, line)) {
    ++line_no;
    if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos)
      throw parse_error(detail_io::loc(name, line_no) + ": expected 'KEY: values' line");
    const std::string key = line.substr(0, colon);
    const auto toks = detail_io::split_ws(line.substr(colon + 1));
    std::vector<double> vals;
    for (const auto& t : toks)
      vals.push_back(detail_io::parse_double(t, detail_io::loc(name, line_no) + ": " + key));
    fields[key] = std::move(vals);
  }

  auto need = [&](const std::string& key, std::size_t count) -> const std::vector<double>& {
    auto it = fields.find(key);
    if (it == fields.end()) throw parse_error(name + ": missing key " + key);
    if (it->second.size() != count)
      throw parse_error(name + ": " + key + ": expected " + std::to_string(count) + " values, got " +
                        std::to_string(it->second.size()));
    return it->second;
  };

  auto fill34 = [](Mat34& m, const std::vector<double>& v) {
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 4; ++j) m.m[i][j] = v[static_cast<std::size_t>(i * 4 + j)];
  };
  CameraCalib calib;
  fill34(calib.P_left, need("P2", 12));
  fill34(calib.P_right, need("P3", 12));
  const auto& r0 = need("R0_rect", 9);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) calib.R0_rect.m[i][j] = r0[static_cast<std::size_t>(i * 3 + j)];
  fill34(calib.Tr_velo_to_cam, need("Tr_velo_to_cam", 12));
  calib.validate();
  return calib;
}

inline std::string write_calib(const CameraCalib& calib) {
  std::string out;
  auto emit34 = [&](const char* key, const Mat34& m) {
    out += key;
    out += ":";
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 4; ++j) out += " " + fmt_double(m.m[i][j]);
    out += "\n";
  };
  emit34("P2", calib.P_left);
  emit34("P3", calib.P_right);
  out += "R0_rect:";
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) out += " " + fmt_double(calib.R0_rect.m[i][j]);
  out += "\n";
  emit34("Tr_velo_to_cam", calib.Tr_velo_to_cam);
  return out;
}

// ---------------------------------------------------------------------------
// Label / detection files
// ---------------------------------------------------------------------------

// One KITTI object row. Field order in the file:
// type truncated occluded alpha bbox(4) dimensions(h w l) location(xyz) rotation_y [score]
struct LabelRecord {
  std::string type;
  double truncated = 0.0;
  int occluded = 0;
  double alpha = 0.0;
  double u_min = 0.0, v_min = 0.0, u_max = 0.0, v_max = 0.0;
  double h = 0.0, w = 0.0, l = 0.0;
  double x = 0.0, y = 0.0, z = 0.0;
  double rotation_y = 0.0;
  std::optional<double> score;

  bool dont_care() const { return type == "DontCare"; }
  double bbox_height() const { return v_max - v_min; }

  Box3D box3d() const {
    if (dont_care()) throw error("LabelRecord::box3d: DontCare row has no box");
    return Box3D::make(x, y, z, w, h, l, rotation_y);
  }

  static LabelRecord from_box(const std::string& type, const Box3D& b, const Box2D& bbox,
                              std::optional<double> score = std::nullopt) {
    LabelRecord r;
    r.type = type;
    r.u_min = bbox.u_min;
    r.v_min = bbox.v_min;
    r.u_max = bbox.u_max;
    r.v_max = bbox.v_max;
    r.h = b.h;
    r.w = b.w;
    r.l = b.l;
    r.x = b.x;
    r.y = b.y;
    r.z = b.z;
    r.rotation_y = b.theta;
    r.alpha = normalize_angle(b.theta - std::atan2(b.x, b.z));
    r.score = score;
    return r;
  }
};

inline std::vector<LabelRecord> parse_labels(const std::string& text, const std::string& name = "labels") {
  std::vector<LabelRecord> out;
  std::istringstream iss(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(iss, line)) {
    ++line_no;
    if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto toks = detail_io::split_ws(line);
    if (toks.size() != 15 && toks.size() != 16)
      throw parse_error(detail_io::loc(name, line_no) + ": expected 15 or 16 fields, got " +
                        std::to_string(toks.size()));
    const std::string where = detail_io::loc(name, line_no);
    LabelRecord r;
    r.type = toks[0];
    r.truncated = detail_io::parse_double(toks[1], where + ": truncated");
    r.occluded = static_cast<int>(detail_io::parse_long(toks[2], where + ": occluded"));
    r.alpha = detail_io::parse_double(toks[3], where + ": alpha");
    r.u_min = detail_io::parse_double(toks[4], where + ": bbox.u_min");
    r.v_min = detail_io::parse_double(toks[5], where + ": bbox.v_min");
    r.u_max = detail_io::parse_double(toks[6], where + ": bbox.u_max");
    r.v_max = detail_io::parse_double(toks[7], where + ": bbox.v_max");
    r.h = detail_io::parse_double(toks[8], where + ": dimensions.h");
    r.w = detail_io::parse_double(toks[9], where + ": dimensions.w");
    r.l = detail_io::parse_double(toks[10], where + ": dimensions.l");
    r.x = detail_io::parse_double(toks[11], where + ": location.x");
    r.y = detail_io::parse_double(toks[12], where + ": location.y");
    r.z = detail_io::parse_double(toks[13], where + ": location.z");
    r.rotation_y = detail_io::parse_double(toks[14], where + ": rotation_y");
    if (toks.size() == 16) r.score = detail_io::parse_double(toks[15], where + ": score");

    if (r.u_max < r.u_min || r.v_max < r.v_min)
      throw parse_error(where + ": bbox corners are not ordered");
    // DontCare rows carry sentinel dims/angles and skip the box checks
    if (!r.dont_care()) {
      if (r.h <= 0.0 || r.w <= 0.0 || r.l <= 0.0)
        throw parse_error(where + ": non-positive dimensions for type " + r.type);
      if (std::fabs(r.rotation_y) > kPi + 1e-6)
        throw parse_error(where + ": rotation_y out of [-pi, pi]: " + toks[14]);
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline std::string write_labels(const std::vector<LabelRecord>& records) {
  std::string out;
  for (const LabelRecord& r : records) {
    out += r.type;
    for (double v : {r.truncated, static_cast<double>(r.occluded), r.alpha, r.u_min, r.v_min, r.u_max,
                     r.v_max, r.h, r.w, r.l, r.x, r.y, r.z, r.rotation_y})
      out += " " + fmt_double(v);
    if (r.score) out += " " + fmt_double(*r.score);
    out += "\n";
  }
  return out;
}

// Detection rows are label rows with a mandatory trailing score.
inline std::string write_detections(const std::vector<LabelRecord>& records) {
  for (const LabelRecord& r : records)
    if (!r.score) throw error("write_detections: record without a score");
  return write_labels(records);
}

// ---------------------------------------------------------------------------
// Velodyne binary clouds
// ---------------------------------------------------------------------------

struct PointXYZR {
  double x = 0.0, y = 0.0, z = 0.0, reflectance = 0.0;
  Vec3 xyz() const { return {x, y, z}; }
};

namespace detail_io {

inline float read_f32le(const unsigned char* p) {
  std::uint32_t u = static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
                    static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
  float f;
  std::memcpy(&f, &u, 4);
  return f;
}

inline void write_f32le(std::string& out, float f) {
  std::uint32_t u;
  std::memcpy(&u, &f, 4);
  out.push_back(static_cast<char>(u & 0xff));
  out.push_back(static_cast<char>((u >> 8) & 0xff));
  out.push_back(static_cast<char>((u >> 16) & 0xff));
  out.push_back(static_cast<char>((u >> 24) & 0xff));
}

}  // namespace detail_io

// Little-endian float32 quadruplets (x, y, z, reflectance), widened to f64.
inline std::vector<PointXYZR> read_velodyne_bin(const std::string& bytes, const std::string& name = "velodyne") {
  if (bytes.size() % 16 != 0)
    throw parse_error(name + ": truncated file: " + std::to_string(bytes.size()) + " bytes is not a multiple of 16");
  std::vector<PointXYZR> out(bytes.size() / 16);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].x = detail_io::read_f32le(p + i * 16);
    out[i].y = detail_io::read_f32le(p + i * 16 + 4);
    out[i].z = detail_io::read_f32le(p + i * 16 + 8);
    out[i].reflectance = detail_io::read_f32le(p + i * 16 + 12);
  }
  return out;
}

inline std::string write_velodyne_bin(const std::vector<PointXYZR>& points) {
  std::string out;
  out.reserve(points.size() * 16);
  for (const PointXYZR& pt : points) {
    detail_io::write_f32le(out, static_cast<float>(pt.x));
    detail_io::write_f32le(out, static_cast<float>(pt.y));
    detail_io::write_f32le(out, static_cast<float>(pt.z));
    detail_io::write_f32le(out, static_cast<float>(pt.reflectance));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stereo proposal files
// ---------------------------------------------------------------------------

// One line per proposal:
// frame  left(umin vmin umax vmax)  right(umin vmin umax vmax)  z_near z_far score
struct StereoProposal {
  int frame = 0;
  Box2D left;
  Box2D right;
  DepthRange depth;
  double score = 0.0;
};

inline std::vector<StereoProposal> load_proposals(const std::string& text,
                                                  const std::string& name = "proposals") {
  std::vector<StereoProposal> out;
  std::istringstream iss(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(iss, line)) {
    ++line_no;
    if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto toks = detail_io::split_ws(line);
    const std::string where = detail_io::loc(name, line_no);
    if (toks.size() != 12)
      throw parse_error(where + ": expected 12 fields, got " + std::to_string(toks.size()));
    StereoProposal p;
    p.frame = static_cast<int>(detail_io::parse_long(toks[0], where + ": frame"));
    p.left = {detail_io::parse_double(toks[1], where + ": left.u_min"),
              detail_io::parse_double(toks[2], where + ": left.v_min"),
              detail_io::parse_double(toks[3], where + ": left.u_max"),
              detail_io::parse_double(toks[4], where + ": left.v_max")};
    p.right = {detail_io::parse_double(toks[5], where + ": right.u_min"),
               detail_io::parse_double(toks[6], where + ": right.v_min"),
               detail_io::parse_double(toks[7], where + ": right.u_max"),
               detail_io::parse_double(toks[8], where + ": right.v_max")};
    p.depth = {detail_io::parse_double(toks[9], where + ": z_near"),
               detail_io::parse_double(toks[10], where + ": z_far")};
    p.score = detail_io::parse_double(toks[11], where + ": score");
    try {
      p.left.validate();
      p.right.validate();
      p.depth.validate();
    } catch (const error& e) {
      throw parse_error(where + ": " + e.what());
    }
    out.push_back(p);
  }
  return out;
}

inline std::string write_proposals(const std::vector<StereoProposal>& proposals) {
  std::string out;
  for (const StereoProposal& p : proposals) {
    out += std::to_string(p.frame);
    for (double v : {p.left.u_min, p.left.v_min, p.left.u_max, p.left.v_max, p.right.u_min, p.right.v_min,
                     p.right.u_max, p.right.v_max, p.depth.z_near, p.depth.z_far, p.score})
      out += " " + fmt_double(v);
    out += "\n";
  }
  return out;
}

inline std::map<int, std::vector<StereoProposal>> group_proposals_by_frame(
    const std::vector<StereoProposal>& proposals) {
  std::map<int, std::vector<StereoProposal>> out;
  for (const StereoProposal& p : proposals) out[p.frame].push_back(p);
  return out;
}

// One unit of work for the pipeline.
struct SceneSample {
  int frame = 0;
  std::vector<PointXYZR> cloud;  // LIDAR frame
  CameraCalib calib;
  std::vector<StereoProposal> proposals;
  std::vector<LabelRecord> labels;
};

}  // namespace srdl

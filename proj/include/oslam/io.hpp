#pragma once

// JSON forms of graph, campaign configuration and campaign result files.
// Readers are strict: unknown keys, wrong types and missing fields are
// schema errors that carry the line of the offending entry.

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>

#include "oslam/sim.hpp"

namespace oslam {

using Json = nlohmann::ordered_json;

inline constexpr const char* kConfigFormat = "oslam-config/1";
inline constexpr const char* kResultFormat = "oslam-result/1";

// ---------------------------------------------------------------------------
// Source positions

/// Line of every object member and array element, keyed by JSON pointer.
class SourceLines {
 public:
  SourceLines() = default;

  /// Assumes `text` is well-formed JSON (parse it first).
  static SourceLines scan(std::string_view text) {
    SourceLines out;
    struct Frame {
      bool object;
      std::string path;
      int index = 0;
      bool expect_key = true;
      std::string key_path;
    };
    std::vector<Frame> stack;
    int line = 1;
    auto value_path = [&]() -> std::string {
      if (stack.empty()) return "";
      Frame& top = stack.back();
      if (top.object) return top.key_path;
      const std::string p = top.path + "/" + std::to_string(top.index);
      out.lines_.emplace(p, line);
      return p;
    };
    auto read_string = [&](std::size_t& i) {
      std::string s;
      for (++i; i < text.size() && text[i] != '"'; ++i) {
        if (text[i] == '\\' && i + 1 < text.size()) ++i;
        s += text[i];
      }
      return s;
    };
    for (std::size_t i = 0; i < text.size(); ++i) {
      const char c = text[i];
      if (c == '\n') {
        ++line;
      } else if (c == '"') {
        if (!stack.empty() && stack.back().object && stack.back().expect_key) {
          Frame& top = stack.back();
          top.key_path = top.path + "/" + escape(read_string(i));
          top.expect_key = false;
          out.lines_.emplace(top.key_path, line);
        } else {
          value_path();
          read_string(i);
        }
      } else if (c == '{' || c == '[') {
        stack.push_back(Frame{c == '{', value_path(), 0, true, {}});
      } else if (c == '}' || c == ']') {
        if (!stack.empty()) stack.pop_back();
      } else if (c == ',') {
        if (!stack.empty()) {
          if (stack.back().object) stack.back().expect_key = true;
          else ++stack.back().index;
        }
      } else if (c != ':' && !std::isspace(static_cast<unsigned char>(c))) {
        value_path();
        while (i + 1 < text.size() && !std::strchr(",}] \t\r\n", text[i + 1])) ++i;
      }
    }
    return out;
  }

  /// Line of `pointer`, else of its nearest recorded ancestor, else 1.
  int line_of(std::string pointer) const {
    for (;;) {
      const auto it = lines_.find(pointer);
      if (it != lines_.end()) return it->second;
      const auto slash = pointer.rfind('/');
      if (slash == std::string::npos || pointer.empty()) return 1;
      pointer.erase(slash);
    }
  }

  static std::string escape(const std::string& key) {
    std::string out;
    for (const char c : key) {
      if (c == '~') out += "~0";
      else if (c == '/') out += "~1";
      else out += c;
    }
    return out;
  }

 private:
  std::map<std::string, int> lines_;
};

inline int line_at_offset(std::string_view text, std::size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

/// Parses `text`; syntax errors report the byte offset and its line.
inline Json parse_json(std::string_view text, const std::string& source) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    const std::size_t byte = e.byte == 0 ? 0 : e.byte - 1;
    throw Error(ErrorCode::kParse, source + ": parse error at byte " + std::to_string(byte) + " (line " +
                                       std::to_string(line_at_offset(text, byte)) + "): " + e.what());
  }
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kInvalidInput, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kInvalidInput, "cannot write '" + path + "'");
  out << text;
  if (!out) throw Error(ErrorCode::kInvalidInput, "write to '" + path + "' failed");
}

// ---------------------------------------------------------------------------
// Typed access with located errors

class Node {
 public:
  Node(const Json& j, const SourceLines& lines, std::string source, std::string path = "")
      : j_(&j), lines_(&lines), source_(std::move(source)), path_(std::move(path)) {}

  [[noreturn]] void fail(const std::string& msg) const {
    throw Error(ErrorCode::kSchema, source_ + ":" + std::to_string(lines_->line_of(path_)) + ": " +
                                        (path_.empty() ? "/" : path_) + ": " + msg);
  }

  const Json& json() const { return *j_; }
  const std::string& path() const { return path_; }

  bool has(const std::string& key) const { return j_->is_object() && j_->contains(key); }

  Node at(const std::string& key) const {
    if (!j_->is_object()) fail("expected an object");
    const auto it = j_->find(key);
    if (it == j_->end()) fail("missing key '" + key + "'");
    return Node(*it, *lines_, source_, path_ + "/" + SourceLines::escape(key));
  }

  std::size_t size() const {
    if (!j_->is_array()) fail("expected an array");
    return j_->size();
  }

  Node operator[](std::size_t i) const {
    if (i >= size()) fail("index " + std::to_string(i) + " out of range");
    return Node((*j_)[i], *lines_, source_, path_ + "/" + std::to_string(i));
  }

  /// Rejects members outside `allowed`, pointing at the offending key.
  void only_keys(std::initializer_list<const char*> allowed) const {
    if (!j_->is_object()) fail("expected an object");
    for (const auto& [key, value] : j_->items()) {
      const bool ok = std::any_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; });
      if (!ok) Node(value, *lines_, source_, path_ + "/" + SourceLines::escape(key)).fail("unknown key '" + key + "'");
    }
  }

  double number() const {
    if (j_->is_number()) return j_->get<double>();
    if (j_->is_string()) {
      const auto& s = j_->get_ref<const std::string&>();
      if (s == "inf") return std::numeric_limits<double>::infinity();
      if (s == "-inf") return -std::numeric_limits<double>::infinity();
      if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    }
    fail("expected a number");
  }

  double finite() const {
    const double v = number();
    if (!std::isfinite(v)) fail("expected a finite number");
    return v;
  }

  long long integer() const {
    if (!j_->is_number_integer()) fail("expected an integer");
    return j_->get<long long>();
  }

  int int32() const {
    const long long v = integer();
    if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) fail("integer out of range");
    return static_cast<int>(v);
  }

  std::uint64_t uint64() const {
    if (j_->is_number_unsigned()) return j_->get<std::uint64_t>();
    if (j_->is_number_integer()) fail("expected a non-negative integer");
    fail("expected an integer");
  }

  bool boolean() const {
    if (!j_->is_boolean()) fail("expected true or false");
    return j_->get<bool>();
  }

  std::string string() const {
    if (!j_->is_string()) fail("expected a string");
    return j_->get<std::string>();
  }

  template <int N>
  Eigen::Matrix<double, N, 1> vec() const {
    if (size() != static_cast<std::size_t>(N)) fail("expected " + std::to_string(N) + " numbers");
    Eigen::Matrix<double, N, 1> v;
    for (int i = 0; i < N; ++i) v(i) = (*this)[static_cast<std::size_t>(i)].finite();
    return v;
  }

  Mat3 mat3() const {
    if (size() != 3) fail("expected 3 rows");
    Mat3 m;
    for (int r = 0; r < 3; ++r) m.row(r) = (*this)[static_cast<std::size_t>(r)].vec<3>().transpose();
    return m;
  }

 private:
  const Json* j_;
  const SourceLines* lines_;
  std::string source_;
  std::string path_;
};

/// Non-finite doubles are written as the strings "inf", "-inf", "nan".
inline Json num(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

template <class Derived>
Json arr(const Eigen::MatrixBase<Derived>& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(num(v(i)));
  return a;
}

inline Json opt(const std::optional<double>& v) { return v ? num(*v) : Json(nullptr); }

inline std::optional<double> opt_number(const Node& n) {
  if (n.json().is_null()) return std::nullopt;
  return n.number();
}

template <class Enum, std::size_t N>
Enum parse_enum(const Node& n, const std::array<Enum, N>& values) {
  const std::string s = n.string();
  std::string names;
  for (const auto v : values) {
    if (s == to_string(v)) return v;
    names += (names.empty() ? "" : ", ") + std::string(to_string(v));
  }
  n.fail("unknown value '" + s + "' (expected one of: " + names + ")");
}

inline constexpr std::array<Parameterization, 3> kParameterizations = {Parameterization::kFull, Parameterization::kRts,
                                                                       Parameterization::kSpd};
inline constexpr std::array<MeasurementModel, 2> kModels = {MeasurementModel::kInverse, MeasurementModel::kSemi};
inline constexpr std::array<NoiseLevel, 3> kNoiseLevels = {NoiseLevel::kLow, NoiseLevel::kMedium, NoiseLevel::kHigh};
inline constexpr std::array<Damping, 2> kDampings = {Damping::kLevenberg, Damping::kMarquardt};
inline constexpr std::array<SpdCoordinates, 2> kSpdCoordinates = {SpdCoordinates::kAmbient, SpdCoordinates::kWhitened};
inline constexpr std::array<SizeForm, 2> kSizeForms = {SizeForm::kSqrt, SizeForm::kDet};

// ---------------------------------------------------------------------------
// Shared pieces

inline Json intrinsics_json(const CameraIntrinsics& k) {
  return {{"fx", num(k.fx)}, {"fy", num(k.fy)}, {"cx", num(k.cx)},
          {"cy", num(k.cy)}, {"width", k.width}, {"height", k.height}};
}

inline CameraIntrinsics read_intrinsics(const Node& n) {
  n.only_keys({"fx", "fy", "cx", "cy", "width", "height"});
  CameraIntrinsics k;
  k.fx = n.at("fx").finite();
  k.fy = n.at("fy").finite();
  k.cx = n.at("cx").finite();
  k.cy = n.at("cy").finite();
  k.width = n.at("width").int32();
  k.height = n.at("height").int32();
  try {
    k.validate();
  } catch (const Error& e) {
    n.fail(e.what());
  }
  return k;
}

/// Quaternion [w, x, y, z]; rejected if its norm is off by more than 1e-6.
/// A quaternion already normalized to rounding is kept bit-exact.
inline Eigen::Quaterniond read_quaternion(const Node& n) {
  const Vec4 v = n.vec<4>();
  const double norm = v.norm();
  if (std::abs(norm - 1.0) > 1e-6) n.fail("quaternion norm " + std::to_string(norm) + " is not 1 within 1e-6");
  Eigen::Quaterniond q(v(0), v(1), v(2), v(3));
  if (std::abs(norm - 1.0) > 1e-15) q.normalize();
  return q;
}

inline Json quaternion_json(const Eigen::Quaterniond& q) {
  return Json::array({num(q.w()), num(q.x()), num(q.y()), num(q.z())});
}

inline Json pose_json(const GraphPose& p) { return {{"q", quaternion_json(p.q)}, {"t", arr(p.t)}}; }

inline GraphPose read_pose(const Node& n) {
  n.only_keys({"q", "t"});
  return {read_quaternion(n.at("q")), n.at("t").vec<3>()};
}

inline Json rts_json(const GraphRts& r) {
  return {{"q", quaternion_json(r.q)}, {"t", arr(r.t)}, {"s", arr(r.s)}};
}

inline GraphRts read_rts_fields(const Node& n) {
  GraphRts r{read_quaternion(n.at("q")), n.at("t").vec<3>(), n.at("s").vec<3>()};
  if (!(r.s.array() > 0.0).all()) n.at("s").fail("semi-axes must be positive");
  return r;
}

// ---------------------------------------------------------------------------
// Graph files

inline Json landmark_json(const GraphLandmark& l) {
  Json j = {{"id", l.id}, {"param", to_string(parameterization_of(l.initial))}};
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, GraphFull>) {
          j["coefficients"] = arr(s.coefficients);
        } else if constexpr (std::is_same_v<T, GraphRts>) {
          j.update(rts_json(s));
        } else {
          Json rows = Json::array();
          for (int r = 0; r < 3; ++r) rows.push_back(arr(s.shape.row(r)));
          j["shape"] = rows;
          j["t"] = arr(s.t);
        }
      },
      l.initial);
  return j;
}

inline GraphLandmark read_landmark(const Node& n) {
  GraphLandmark l;
  l.id = n.at("id").int32();
  switch (parse_enum(n.at("param"), kParameterizations)) {
    case Parameterization::kFull:
      n.only_keys({"id", "param", "coefficients"});
      l.initial = GraphFull{n.at("coefficients").vec<10>()};
      break;
    case Parameterization::kRts:
      n.only_keys({"id", "param", "q", "t", "s"});
      l.initial = read_rts_fields(n);
      break;
    case Parameterization::kSpd: {
      n.only_keys({"id", "param", "shape", "t"});
      const Node shape = n.at("shape");
      const Mat3 m = shape.mat3();
      if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-9 * std::max(1.0, m.cwiseAbs().maxCoeff())) {
        shape.fail("shape matrix is not symmetric");
      }
      l.initial = GraphSpd{0.5 * (m + m.transpose()), n.at("t").vec<3>()};
      break;
    }
  }
  return l;
}

inline Json graph_json(const Graph& g) {
  Json j;
  j["version"] = g.version;
  j["intrinsics"] = intrinsics_json(g.intrinsics);
  j["frames"] = Json::array();
  for (const auto& f : g.frames) j["frames"].push_back({{"id", f.id}, {"pose", pose_json(f.pose)}});
  j["detections"] = Json::array();
  for (const auto& d : g.detections) {
    j["detections"].push_back({{"frame", d.frame}, {"landmark", d.landmark}, {"box", arr(d.box.vector())}});
  }
  j["landmarks"] = Json::array();
  for (const auto& l : g.landmarks) j["landmarks"].push_back(landmark_json(l));
  Json priors = {{"orientation", Json::array()}, {"scale", Json::array()}, {"support", Json::array()},
                 {"pose", Json::array()}};
  for (const auto& o : g.orientation_priors) priors["orientation"].push_back({{"landmark", o.landmark}, {"m", arr(o.m)}});
  for (const auto& s : g.scale_priors) priors["scale"].push_back({{"landmark", s.landmark}, {"abc", arr(s.abc)}});
  for (const auto& s : g.support_planes) {
    priors["support"].push_back({{"landmark", s.landmark}, {"plane", arr(s.plane.pi)}});
  }
  for (const auto& p : g.pose_priors) priors["pose"].push_back({{"frame", p.frame}, {"pose", pose_json(p.pose)}});
  j["priors"] = priors;
  j["fixed"] = g.fixed;
  j["truth"] = Json::array();
  for (const auto& t : g.truth) {
    Json e = {{"landmark", t.landmark}};
    e.update(rts_json(t.state));
    j["truth"].push_back(e);
  }
  return j;
}

inline std::string write_graph(const Graph& g) { return graph_json(g).dump(2) + "\n"; }

/// Parses and schema-checks a graph file; reference checks are left to
/// validate_graph.
inline Graph read_graph(std::string_view text, const std::string& source = "graph") {
  const Json j = parse_json(text, source);
  const SourceLines lines = SourceLines::scan(text);
  const Node root(j, lines, source);
  root.only_keys({"version", "intrinsics", "frames", "detections", "landmarks", "priors", "fixed", "truth"});
  Graph g;
  g.version = root.at("version").string();
  if (g.version != kGraphVersion) root.at("version").fail("unsupported version '" + g.version + "'");
  g.intrinsics = read_intrinsics(root.at("intrinsics"));
  const Node frames = root.at("frames");
  for (std::size_t i = 0; i < frames.size(); ++i) {
    frames[i].only_keys({"id", "pose"});
    g.frames.push_back({frames[i].at("id").int32(), read_pose(frames[i].at("pose"))});
  }
  const Node dets = root.at("detections");
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const Node d = dets[i];
    d.only_keys({"frame", "landmark", "box"});
    g.detections.push_back(
        {d.at("frame").int32(), d.at("landmark").int32(), BoundingBox::from_vector(d.at("box").vec<4>())});
  }
  const Node lms = root.at("landmarks");
  for (std::size_t i = 0; i < lms.size(); ++i) g.landmarks.push_back(read_landmark(lms[i]));
  if (root.has("priors")) {
    const Node priors = root.at("priors");
    priors.only_keys({"orientation", "scale", "support", "pose"});
    if (priors.has("orientation")) {
      const Node a = priors.at("orientation");
      for (std::size_t i = 0; i < a.size(); ++i) {
        a[i].only_keys({"landmark", "m"});
        g.orientation_priors.push_back({a[i].at("landmark").int32(), a[i].at("m").vec<3>()});
      }
    }
    if (priors.has("scale")) {
      const Node a = priors.at("scale");
      for (std::size_t i = 0; i < a.size(); ++i) {
        a[i].only_keys({"landmark", "abc"});
        g.scale_priors.push_back({a[i].at("landmark").int32(), a[i].at("abc").vec<3>()});
      }
    }
    if (priors.has("support")) {
      const Node a = priors.at("support");
      for (std::size_t i = 0; i < a.size(); ++i) {
        a[i].only_keys({"landmark", "plane"});
        const Vec4 pi = a[i].at("plane").vec<4>();
        if (!(pi.head<3>().norm() > 0.0)) a[i].at("plane").fail("plane normal is zero");
        g.support_planes.push_back({a[i].at("landmark").int32(), Plane{pi}});
      }
    }
    if (priors.has("pose")) {
      const Node a = priors.at("pose");
      for (std::size_t i = 0; i < a.size(); ++i) {
        a[i].only_keys({"frame", "pose"});
        g.pose_priors.push_back({a[i].at("frame").int32(), read_pose(a[i].at("pose"))});
      }
    }
  }
  if (root.has("fixed")) {
    const Node a = root.at("fixed");
    for (std::size_t i = 0; i < a.size(); ++i) g.fixed.push_back(a[i].int32());
  }
  if (root.has("truth")) {
    const Node a = root.at("truth");
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i].only_keys({"landmark", "q", "t", "s"});
      g.truth.push_back({a[i].at("landmark").int32(), read_rts_fields(a[i])});
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Campaign configuration

inline Json solve_options_json(const SolveOptions& o) {
  return {{"max_iterations", o.max_iterations},
          {"initial_lambda", num(o.initial_lambda)},
          {"lambda_up", num(o.lambda_up)},
          {"lambda_down", num(o.lambda_down)},
          {"relative_cost_tolerance", num(o.relative_cost_tolerance)},
          {"gradient_tolerance", num(o.gradient_tolerance)},
          {"fd_step", num(o.fd_step)},
          {"max_inner_retries", o.max_inner_retries},
          {"gauss_newton", o.gauss_newton},
          {"damping", to_string(o.damping)},
          {"spd_coordinates", to_string(o.spd_coordinates)}};
}

inline SolveOptions read_solve_options(const Node& n) {
  n.only_keys({"max_iterations", "initial_lambda", "lambda_up", "lambda_down", "relative_cost_tolerance",
               "gradient_tolerance", "fd_step", "max_inner_retries", "gauss_newton", "damping", "spd_coordinates"});
  SolveOptions o;
  auto positive = [](const Node& v) {
    const double x = v.finite();
    if (!(x > 0.0)) v.fail("must be positive");
    return x;
  };
  if (n.has("max_iterations")) o.max_iterations = n.at("max_iterations").int32();
  if (o.max_iterations < 0) n.at("max_iterations").fail("must be non-negative");
  if (n.has("initial_lambda")) o.initial_lambda = positive(n.at("initial_lambda"));
  if (n.has("lambda_up")) o.lambda_up = positive(n.at("lambda_up"));
  if (n.has("lambda_down")) o.lambda_down = positive(n.at("lambda_down"));
  if (n.has("relative_cost_tolerance")) o.relative_cost_tolerance = positive(n.at("relative_cost_tolerance"));
  if (n.has("gradient_tolerance")) o.gradient_tolerance = positive(n.at("gradient_tolerance"));
  if (n.has("fd_step")) o.fd_step = positive(n.at("fd_step"));
  if (n.has("max_inner_retries")) o.max_inner_retries = n.at("max_inner_retries").int32();
  if (o.max_inner_retries < 0) n.at("max_inner_retries").fail("must be non-negative");
  if (n.has("gauss_newton")) o.gauss_newton = n.at("gauss_newton").boolean();
  if (n.has("damping")) o.damping = parse_enum(n.at("damping"), kDampings);
  if (n.has("spd_coordinates")) o.spd_coordinates = parse_enum(n.at("spd_coordinates"), kSpdCoordinates);
  return o;
}

inline Json covariances_json(const Covariances& c) {
  return {{"box_inverse", num(c.box_inverse)},       {"box_semi", num(c.box_semi)},
          {"orientation", num(c.orientation)},       {"shape", num(c.shape)},
          {"size", num(c.size)},                     {"support", num(c.support)},
          {"pose_rotation", num(c.pose_rotation)},   {"pose_translation", num(c.pose_translation)}};
}

inline Covariances read_covariances(const Node& n) {
  n.only_keys({"box_inverse", "box_semi", "orientation", "shape", "size", "support", "pose_rotation",
               "pose_translation"});
  Covariances c;
  auto set = [&](const char* key, double& field) {
    if (!n.has(key)) return;
    const Node v = n.at(key);
    field = v.finite();
    if (!(field > 0.0)) v.fail("variance must be positive");
  };
  set("box_inverse", c.box_inverse);
  set("box_semi", c.box_semi);
  set("orientation", c.orientation);
  set("shape", c.shape);
  set("size", c.size);
  set("support", c.support);
  set("pose_rotation", c.pose_rotation);
  set("pose_translation", c.pose_translation);
  return c;
}

/// Scene generation fields. The per-scene seed and arc come from the
/// campaign grid, so they are not configurable here.
inline Json scene_json(const SceneSpec& s) {
  return {{"frame_count", s.frame_count},
          {"region", arr(s.region)},
          {"radius_min", num(s.radius_min)},
          {"radius_max", num(s.radius_max)},
          {"elevation_deg", num(s.elevation_deg)},
          {"semi_axis_min", num(s.semi_axis_min)},
          {"semi_axis_max", num(s.semi_axis_max)},
          {"max_attempts", s.max_attempts},
          {"intrinsics", intrinsics_json(s.intrinsics)}};
}

inline SceneSpec read_scene(const Node& n) {
  n.only_keys({"frame_count", "region", "radius_min", "radius_max", "elevation_deg", "semi_axis_min",
               "semi_axis_max", "max_attempts", "intrinsics"});
  SceneSpec s;
  if (n.has("frame_count")) s.frame_count = n.at("frame_count").int32();
  if (n.has("region")) s.region = n.at("region").vec<3>();
  if (n.has("radius_min")) s.radius_min = n.at("radius_min").finite();
  if (n.has("radius_max")) s.radius_max = n.at("radius_max").finite();
  if (n.has("elevation_deg")) s.elevation_deg = n.at("elevation_deg").finite();
  if (n.has("semi_axis_min")) s.semi_axis_min = n.at("semi_axis_min").finite();
  if (n.has("semi_axis_max")) s.semi_axis_max = n.at("semi_axis_max").finite();
  if (n.has("max_attempts")) s.max_attempts = n.at("max_attempts").int32();
  if (n.has("intrinsics")) s.intrinsics = read_intrinsics(n.at("intrinsics"));
  if (s.max_attempts < 1) n.at("max_attempts").fail("must be at least 1");
  try {
    s.validate();
  } catch (const Error& e) {
    n.fail(e.what());
  }
  return s;
}

inline Json campaign_json(const CampaignSpec& c) {
  Json noise = Json::array(), params = Json::array(), models = Json::array();
  for (const auto n : c.noise_levels) noise.push_back(to_string(n));
  for (const auto p : c.params) params.push_back(to_string(p));
  for (const auto m : c.models) models.push_back(to_string(m));
  return {{"format", kConfigFormat},
          {"master_seed", c.master_seed},
          {"trials_per_cell", c.trials_per_cell},
          {"noise_levels", noise},
          {"arcs_deg", c.arcs},
          {"params", params},
          {"models", models},
          {"scene", scene_json(c.scene)},
          {"solve", solve_options_json(c.trial.solve)},
          {"covariances", covariances_json(c.trial.covariances)},
          {"success_factor", num(c.trial.success_factor)},
          {"iou_resolution", c.trial.iou_resolution}};
}

template <class Enum, std::size_t N>
std::vector<Enum> read_enum_list(const Node& n, const std::array<Enum, N>& values) {
  std::vector<Enum> out;
  for (std::size_t i = 0; i < n.size(); ++i) {
    const Enum v = parse_enum(n[i], values);
    if (std::find(out.begin(), out.end(), v) != out.end()) n[i].fail("duplicate entry");
    out.push_back(v);
  }
  if (out.empty()) n.fail("must not be empty");
  return out;
}

/// Campaign configuration; every key is optional and defaults to the
/// built-in value. Also reads the "config" block of a result file.
inline CampaignSpec read_campaign_node(const Node& root) {
  root.only_keys({"format", "master_seed", "trials_per_cell", "noise_levels", "arcs_deg", "params", "models",
                  "scene", "solve", "covariances", "success_factor", "iou_resolution"});
  CampaignSpec c;
  if (root.has("format") && root.at("format").string() != kConfigFormat) {
    root.at("format").fail("unsupported format (expected '" + std::string(kConfigFormat) + "')");
  }
  if (root.has("master_seed")) c.master_seed = root.at("master_seed").uint64();
  if (root.has("trials_per_cell")) {
    c.trials_per_cell = root.at("trials_per_cell").int32();
    if (c.trials_per_cell < 1) root.at("trials_per_cell").fail("must be at least 1");
  }
  if (root.has("noise_levels")) c.noise_levels = read_enum_list(root.at("noise_levels"), kNoiseLevels);
  if (root.has("arcs_deg")) {
    const Node a = root.at("arcs_deg");
    c.arcs.clear();
    for (std::size_t i = 0; i < a.size(); ++i) {
      const int arc = a[i].int32();
      if (arc <= 0 || arc > 360) a[i].fail("arc must be in (0, 360]");
      if (std::find(c.arcs.begin(), c.arcs.end(), arc) != c.arcs.end()) a[i].fail("duplicate entry");
      c.arcs.push_back(arc);
    }
    if (c.arcs.empty()) a.fail("must not be empty");
  }
  if (root.has("params")) c.params = read_enum_list(root.at("params"), kParameterizations);
  if (root.has("models")) c.models = read_enum_list(root.at("models"), kModels);
  if (root.has("scene")) c.scene = read_scene(root.at("scene"));
  if (root.has("solve")) c.trial.solve = read_solve_options(root.at("solve"));
  if (root.has("covariances")) c.trial.covariances = read_covariances(root.at("covariances"));
  if (root.has("success_factor")) {
    c.trial.success_factor = root.at("success_factor").finite();
    if (!(c.trial.success_factor >= 1.0)) root.at("success_factor").fail("must be at least 1");
  }
  if (root.has("iou_resolution")) {
    c.trial.iou_resolution = root.at("iou_resolution").int32();
    if (c.trial.iou_resolution < 8) root.at("iou_resolution").fail("must be at least 8");
  }
  return c;
}

inline CampaignSpec read_campaign(std::string_view text, const std::string& source = "config") {
  const Json j = parse_json(text, source);
  const SourceLines lines = SourceLines::scan(text);
  return read_campaign_node(Node(j, lines, source));
}

/// Grid restriction "noise=H,arc=60,param=spd,model=semi"; repeated keys
/// accumulate ("noise=M,noise=H").
inline void apply_cell_filter(CampaignSpec& c, const std::string& filter) {
  if (filter.empty()) return;
  std::vector<NoiseLevel> noise;
  std::vector<int> arcs;
  std::vector<Parameterization> params;
  std::vector<MeasurementModel> models;
  auto bad = [&](const std::string& m) { throw Error(ErrorCode::kInvalidInput, "--cells: " + m); };
  std::stringstream ss(filter);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) bad("expected key=value, got '" + item + "'");
    const std::string key = item.substr(0, eq), value = item.substr(eq + 1);
    auto pick = [&](auto& out, const auto& values) {
      for (const auto v : values) {
        if (value == to_string(v)) return out.push_back(v);
      }
      bad("unknown " + key + " '" + value + "'");
    };
    if (key == "noise") {
      pick(noise, kNoiseLevels);
    } else if (key == "arc") {
      try {
        std::size_t used = 0;
        const int a = std::stoi(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        arcs.push_back(a);
      } catch (const std::exception&) {
        bad("arc must be an integer, got '" + value + "'");
      }
    } else if (key == "param") {
      pick(params, kParameterizations);
    } else if (key == "model") {
      pick(models, kModels);
    } else {
      bad("unknown key '" + key + "' (expected noise, arc, param or model)");
    }
  }
  auto restrict = [&](auto& grid, const auto& keep, const char* what) {
    if (keep.empty()) return;
    std::decay_t<decltype(grid)> out;
    for (const auto& v : grid) {
      if (std::find(keep.begin(), keep.end(), v) != keep.end()) out.push_back(v);
    }
    if (out.empty()) bad(std::string("no configured ") + what + " matches the filter");
    grid = out;
  };
  restrict(c.noise_levels, noise, "noise level");
  restrict(c.arcs, arcs, "arc");
  restrict(c.params, params, "parameterization");
  restrict(c.models, models, "model");
}

// ---------------------------------------------------------------------------
// Campaign results

/// Fixed protocol choices that are not configuration fields.
inline Json protocol_json() {
  Json noise;
  for (const auto level : kNoiseLevels) {
    const NoiseSpec n = NoiseSpec::table(level);
    noise[to_string(level)] = {{"sigma_box_px", num(n.sigma_box_px)},
                               {"sigma_rotation_deg", num(n.sigma_rot_rad * 180.0 / std::numbers::pi)},
                               {"sigma_translation_m", num(n.sigma_trans_m)},
                               {"sigma_semi_axis_rel", num(n.sigma_rel)}};
  }
  return {{"noise_table", noise},
          {"initial_perturbation", "T = Exp(xi) T_truth, left-multiplied; semi-axes scaled by 1 + sigma N(0,1)"},
          {"success_rule", "not diverged, all factors evaluable, final cost <= success_factor * truth cost + " +
                               std::to_string(kSuccessSlack)},
          {"iou", "circumscribed oriented boxes, voxel grid over the union's axis-aligned bounds"},
          {"orientation_error", "minimum over the 24 proper signed axis permutations"},
          {"semi_residual", "pi^T Q pi with Q normalized to q33 = -1 and unit plane normals"},
          {"spd_tangent_coordinates", "whitened: step E applied as P^1/2 Exp(E) P^1/2"},
          {"full_regularization", "J = -1, shape eigenvalues clamped to >= " + std::to_string(kFullMinEigenvalue)},
          {"size_form", to_string(SizeForm::kSqrt)},
          {"seeding", "splitmix64 over (master, noise, arc, scene, stream); scenes paired across param and model"}};
}

inline Json trial_json(const TrialResult& t) {
  Json trace = Json::array();
  for (const double c : t.cost_trace) trace.push_back(num(c));
  return {{"scene", t.scene},
          {"success", t.success},
          {"iou", num(t.iou)},
          {"orientation_error_deg", num(t.orientation_error_deg)},
          {"iterations", t.iterations},
          {"attempts", t.attempts},
          {"initial_cost", num(t.initial_cost)},
          {"final_cost", num(t.final_cost)},
          {"truth_cost", num(t.truth_cost)},
          {"termination", t.termination},
          {"dropped_factors", t.dropped_factors},
          {"cost_trace", trace}};
}

inline TrialResult read_trial(const Node& n) {
  n.only_keys({"scene", "success", "iou", "orientation_error_deg", "iterations", "attempts", "initial_cost",
               "final_cost", "truth_cost", "termination", "dropped_factors", "cost_trace"});
  TrialResult t;
  t.scene = n.at("scene").int32();
  t.success = n.at("success").boolean();
  t.iou = n.at("iou").number();
  t.orientation_error_deg = n.at("orientation_error_deg").number();
  t.iterations = n.at("iterations").int32();
  t.attempts = n.at("attempts").int32();
  t.initial_cost = n.at("initial_cost").number();
  t.final_cost = n.at("final_cost").number();
  t.truth_cost = n.at("truth_cost").number();
  t.termination = n.at("termination").string();
  t.dropped_factors = n.at("dropped_factors").int32();
  const Node trace = n.at("cost_trace");
  for (std::size_t i = 0; i < trace.size(); ++i) t.cost_trace.push_back(trace[i].number());
  return t;
}

inline Json summary_json(const CellSummary& s) {
  return {{"trials", s.trials},
          {"successes", s.successes},
          {"mean_iou", num(s.mean_iou)},
          {"mean_success_iou", opt(s.mean_success_iou)},
          {"mean_success_iterations", opt(s.mean_success_iterations)},
          {"median_success_iterations", opt(s.median_success_iterations)},
          {"mean_orientation_error_deg", opt(s.mean_orientation_error_deg)}};
}

inline CellSummary read_summary(const Node& n) {
  n.only_keys({"trials", "successes", "mean_iou", "mean_success_iou", "mean_success_iterations",
               "median_success_iterations", "mean_orientation_error_deg"});
  CellSummary s;
  s.trials = n.at("trials").int32();
  s.successes = n.at("successes").int32();
  s.mean_iou = n.at("mean_iou").number();
  s.mean_success_iou = opt_number(n.at("mean_success_iou"));
  s.mean_success_iterations = opt_number(n.at("mean_success_iterations"));
  s.median_success_iterations = opt_number(n.at("median_success_iterations"));
  s.mean_orientation_error_deg = opt_number(n.at("mean_orientation_error_deg"));
  return s;
}

struct ResultTiming {
  std::string timestamp;  // ISO 8601, UTC
  double wall_seconds = 0.0;
  int jobs = 1;
};

struct ResultFile {
  CampaignSpec config;
  CampaignResult campaign;
  std::vector<CellSummary> summaries;  // parallel to campaign.cells
  ResultTiming timing;
};

inline ResultFile make_result_file(const CampaignSpec& config, CampaignResult campaign, ResultTiming timing) {
  ResultFile r{config, std::move(campaign), {}, std::move(timing)};
  for (const auto& c : r.campaign.cells) r.summaries.push_back(summarize(c.trials));
  return r;
}

/// Everything except the "timing" member is a deterministic function of the
/// configuration.
inline Json result_json(const ResultFile& r) {
  Json cells = Json::array();
  Json timing_cells = Json::array();
  for (std::size_t i = 0; i < r.campaign.cells.size(); ++i) {
    const Cell& c = r.campaign.cells[i];
    Json trials = Json::array();
    Json ms = Json::array();
    for (const auto& t : c.trials) {
      trials.push_back(trial_json(t));
      Json row = Json::array();
      for (const double v : t.iteration_ms) row.push_back(num(v));
      ms.push_back(row);
    }
    cells.push_back({{"noise", to_string(c.key.noise)},
                     {"arc_deg", c.key.arc_deg},
                     {"param", to_string(c.key.param)},
                     {"model", to_string(c.key.model)},
                     {"summary", summary_json(i < r.summaries.size() ? r.summaries[i] : summarize(c.trials))},
                     {"trials", trials}});
    timing_cells.push_back({{"cell", c.key.label()}, {"iteration_ms", ms}});
  }
  return {{"format", kResultFormat},
          {"config", campaign_json(r.config)},
          {"protocol", protocol_json()},
          {"cells", cells},
          {"timing",
           {{"timestamp", r.timing.timestamp},
            {"wall_seconds", num(r.timing.wall_seconds)},
            {"jobs", r.timing.jobs},
            {"cells", timing_cells}}}};
}

inline std::string write_result(const ResultFile& r) { return result_json(r).dump(2) + "\n"; }

inline ResultFile read_result(std::string_view text, const std::string& source = "result") {
  const Json j = parse_json(text, source);
  const SourceLines lines = SourceLines::scan(text);
  const Node root(j, lines, source);
  root.only_keys({"format", "config", "protocol", "cells", "timing"});
  if (root.at("format").string() != kResultFormat) root.at("format").fail("not a result file");
  ResultFile r;
  r.config = read_campaign_node(root.at("config"));
  const Node cells = root.at("cells");
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const Node c = cells[i];
    c.only_keys({"noise", "arc_deg", "param", "model", "summary", "trials"});
    Cell cell;
    cell.key = CellKey{parse_enum(c.at("noise"), kNoiseLevels), c.at("arc_deg").int32(),
                       parse_enum(c.at("param"), kParameterizations), parse_enum(c.at("model"), kModels)};
    const Node trials = c.at("trials");
    for (std::size_t k = 0; k < trials.size(); ++k) cell.trials.push_back(read_trial(trials[k]));
    r.summaries.push_back(read_summary(c.at("summary")));
    r.campaign.cells.push_back(std::move(cell));
  }
  if (root.has("timing")) {
    const Node t = root.at("timing");
    t.only_keys({"timestamp", "wall_seconds", "jobs", "cells"});
    r.timing.timestamp = t.at("timestamp").string();
    r.timing.wall_seconds = t.at("wall_seconds").number();
    r.timing.jobs = t.at("jobs").int32();
    const Node tc = t.at("cells");
    if (tc.size() != r.campaign.cells.size()) tc.fail("timing does not match the cell list");
    for (std::size_t i = 0; i < tc.size(); ++i) {
      tc[i].only_keys({"cell", "iteration_ms"});
      if (tc[i].at("cell").string() != r.campaign.cells[i].key.label()) tc[i].at("cell").fail("cell label mismatch");
      const Node ms = tc[i].at("iteration_ms");
      auto& trials = r.campaign.cells[i].trials;
      if (ms.size() != trials.size()) ms.fail("timing does not match the trial list");
      for (std::size_t k = 0; k < ms.size(); ++k) {
        for (std::size_t m = 0; m < ms[k].size(); ++m) trials[k].iteration_ms.push_back(ms[k][m].number());
      }
    }
  }
  return r;
}

/// Per-trial records without timing, for determinism comparisons.
inline std::string records_text(const ResultFile& r) {
  Json j = result_json(r);
  j.erase("timing");
  return j.dump();
}

}  // namespace oslam

#include "twipr/config.hpp"

#include "twipr/errors.hpp"

#include <fmt/format.h>
#include <zlib.h>

#include <fstream>
#include <initializer_list>
#include <limits>
#include <sstream>

namespace twipr {

namespace {

using nlohmann::json;

// Read access to one JSON object with the dotted key path kept for messages.
class Node {
 public:
  Node(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(fmt::format("'{}' must be an object", display()));
  }

  void allow(std::initializer_list<const char*> keys) const {
    for (const auto& [key, value] : j_.items()) {
      bool known = false;
      for (const char* k : keys) known = known || key == k;
      if (!known) throw ConfigError(fmt::format("unknown key '{}'", child(key)));
    }
  }

  bool has(const char* key) const { return j_.contains(key); }
  const json& raw(const char* key) const {
    if (!has(key)) throw ConfigError(fmt::format("missing key '{}'", child(key)));
    return j_.at(key);
  }
  Node object(const char* key) const { return Node(raw(key), child(key)); }

  double number(const char* key) const {
    const json& v = raw(key);
    if (!v.is_number()) throw ConfigError(fmt::format("'{}' must be a number", child(key)));
    return v.get<double>();
  }
  double number(const char* key, double fallback) const {
    return has(key) ? number(key) : fallback;
  }
  std::int64_t integer(const char* key, std::int64_t fallback) const {
    if (!has(key)) return fallback;
    const json& v = raw(key);
    if (!v.is_number_integer()) {
      throw ConfigError(fmt::format("'{}' must be an integer", child(key)));
    }
    return v.get<std::int64_t>();
  }
  std::uint64_t unsigned_integer(const char* key, std::uint64_t fallback) const {
    const std::int64_t v = integer(key, static_cast<std::int64_t>(fallback));
    if (v < 0) throw ConfigError(fmt::format("'{}' must be >= 0", child(key)));
    return static_cast<std::uint64_t>(v);
  }
  bool boolean(const char* key, bool fallback) const {
    if (!has(key)) return fallback;
    const json& v = raw(key);
    if (!v.is_boolean()) throw ConfigError(fmt::format("'{}' must be true or false", child(key)));
    return v.get<bool>();
  }
  std::string string(const char* key, const std::string& fallback) const {
    if (!has(key)) return fallback;
    const json& v = raw(key);
    if (!v.is_string()) throw ConfigError(fmt::format("'{}' must be a string", child(key)));
    return v.get<std::string>();
  }

  std::string child(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }
  std::string display() const { return path_.empty() ? "<root>" : path_; }
  const json& value() const { return j_; }

 private:
  const json& j_;
  std::string path_;
};

// A flat array of n numbers is a diagonal; an n x n nested array is taken as is.
Eigen::MatrixXd read_matrix(const json& v, const std::string& path, Eigen::Index n) {
  auto bad = [&] {
    return ConfigError(fmt::format(
        "'{}' must be an array of {} numbers (diagonal) or a {}x{} nested array", path, n, n, n));
  };
  if (!v.is_array() || static_cast<Eigen::Index>(v.size()) != n) throw bad();
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n, n);
  if (v.front().is_number()) {
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!v[i].is_number()) throw bad();
      M(i, i) = v[i].get<double>();
    }
    return M;
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const json& row = v[i];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != n) throw bad();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (!row[j].is_number()) throw bad();
      M(i, j) = row[j].get<double>();
    }
  }
  return M;
}

json matrix_json(const Eigen::MatrixXd& M) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < M.cols(); ++j) row.push_back(M(i, j));
    rows.push_back(row);
  }
  return rows;
}

DelayModel read_delay(const Node& n) {
  n.allow({"kind", "value", "min", "max", "shift", "mean"});
  const std::string kind = n.string("kind", "constant");
  if (kind == "constant") return DelayModel::constant(n.number("value", 0.0));
  if (kind == "uniform") return DelayModel::uniform(n.number("min"), n.number("max"));
  if (kind == "shifted_exponential") {
    return DelayModel::shifted_exponential(n.number("shift", 0.0), n.number("mean"));
  }
  throw ConfigError(fmt::format("'{}' must be constant, uniform or shifted_exponential",
                                n.child("kind")));
}

json delay_json(const DelayModel& d) {
  switch (d.kind) {
    case DelayModel::Kind::constant:
      return {{"kind", "constant"}, {"value", d.a}};
    case DelayModel::Kind::uniform:
      return {{"kind", "uniform"}, {"min", d.a}, {"max", d.b}};
    case DelayModel::Kind::shifted_exponential:
      return {{"kind", "shifted_exponential"}, {"shift", d.a}, {"mean", d.b}};
  }
  return {};
}

LossModel read_loss(const Node& n) {
  n.allow({"kind", "p", "p_good_to_bad", "p_bad_to_good", "loss_in_good", "loss_in_bad"});
  LossModel m;
  const std::string kind = n.string("kind", "none");
  if (kind == "none") {
    m.kind = LossModel::Kind::none;
  } else if (kind == "bernoulli") {
    m.kind = LossModel::Kind::bernoulli;
    m.p = n.number("p");
  } else if (kind == "gilbert_elliott") {
    m.kind = LossModel::Kind::gilbert_elliott;
    m.p_good_to_bad = n.number("p_good_to_bad");
    m.p_bad_to_good = n.number("p_bad_to_good");
    m.loss_in_good = n.number("loss_in_good", 0.0);
    m.loss_in_bad = n.number("loss_in_bad", 1.0);
  } else {
    throw ConfigError(
        fmt::format("'{}' must be none, bernoulli or gilbert_elliott", n.child("kind")));
  }
  return m;
}

json loss_json(const LossModel& m) {
  switch (m.kind) {
    case LossModel::Kind::none:
      return {{"kind", "none"}};
    case LossModel::Kind::bernoulli:
      return {{"kind", "bernoulli"}, {"p", m.p}};
    case LossModel::Kind::gilbert_elliott:
      return {{"kind", "gilbert_elliott"},
              {"p_good_to_bad", m.p_good_to_bad},
              {"p_bad_to_good", m.p_bad_to_good},
              {"loss_in_good", m.loss_in_good},
              {"loss_in_bad", m.loss_in_bad}};
  }
  return {};
}

ChannelConfig read_channel(const Node& n) {
  n.allow({"uplink", "downlink", "compute_time", "loss", "forced_losses", "forced_bursts",
           "timeout", "dilate"});
  ChannelConfig c;
  if (n.has("uplink")) c.uplink = read_delay(n.object("uplink"));
  if (n.has("downlink")) c.downlink = read_delay(n.object("downlink"));
  c.compute_time = n.number("compute_time", c.compute_time);
  if (n.has("loss")) c.loss = read_loss(n.object("loss"));
  if (n.has("forced_losses")) {
    const json& v = n.raw("forced_losses");
    const std::string path = n.child("forced_losses");
    if (!v.is_array()) throw ConfigError(fmt::format("'{}' must be an array of cycles", path));
    for (const json& e : v) {
      if (!e.is_number_unsigned()) {
        throw ConfigError(fmt::format("'{}' entries must be non-negative integers", path));
      }
      c.forced_losses.insert(e.get<std::uint64_t>());
    }
  }
  if (n.has("forced_bursts")) {
    const Node b = n.object("forced_bursts");
    b.allow({"start", "period", "length"});
    c.forced_bursts.start = b.unsigned_integer("start", 0);
    c.forced_bursts.period = b.unsigned_integer("period", 0);
    c.forced_bursts.length = b.unsigned_integer("length", 0);
  }
  c.timeout = n.number("timeout", c.timeout);
  c.dilate = n.boolean("dilate", c.dilate);
  return c;
}

ReferenceSpec read_reference(const Node& n) {
  n.allow({"phi_dot_steps", "gamma_steps", "filter_tau"});
  ReferenceSpec r;
  r.filter_tau = n.number("filter_tau", r.filter_tau);
  auto steps = [&](const char* key) {
    std::vector<ReferenceStep> out;
    if (!n.has(key)) return out;
    const json& v = n.raw(key);
    if (!v.is_array()) throw ConfigError(fmt::format("'{}' must be an array", n.child(key)));
    for (std::size_t i = 0; i < v.size(); ++i) {
      const Node s(v[i], n.child(key) + "[" + std::to_string(i) + "]");
      s.allow({"onset", "amplitude"});
      out.push_back({s.number("onset"), s.number("amplitude")});
    }
    return out;
  };
  r.phi_dot_steps = steps("phi_dot_steps");
  r.gamma_steps = steps("gamma_steps");
  return r;
}

json steps_json(const std::vector<ReferenceStep>& steps) {
  json out = json::array();
  for (const auto& s : steps) out.push_back({{"onset", s.onset}, {"amplitude", s.amplitude}});
  return out;
}

Mode read_mode(const std::string& s, const std::string& path) {
  if (s == "local") return Mode::local;
  if (s == "networked") return Mode::networked;
  if (s == "wire" || s == "networked-over-wire") return Mode::wire;
  throw ConfigError(fmt::format("'{}' must be local, networked or wire", path));
}

json parse_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open {}", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    // Translate the byte offset into line and column.
    std::size_t line = 1;
    std::size_t col = 1;
    const std::size_t stop = std::min(e.byte == 0 ? 0 : e.byte - 1, text.size());
    for (std::size_t i = 0; i < stop; ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    std::string what = e.what();
    if (const auto p = what.find("syntax error"); p != std::string::npos) what = what.substr(p);
    throw ConfigError(fmt::format("{}:{}:{}: {}", path.string(), line, col, what));
  }
}

std::string json_type_error(const json::exception& e) { return e.what(); }

}  // namespace

RobotParams robot_params_from_json(const json& j, const std::string& where) {
  const Node n(j, where);
  n.allow({"wheel_radius", "track_width", "body_mass", "wheel_mass", "com_height",
           "pitch_inertia", "yaw_inertia", "wheel_inertia", "motor_inertia", "torque_constant",
           "back_emf_constant", "armature_resistance", "motor_friction", "ground_friction",
           "gravity", "max_voltage"});
  RobotParams p;
  p.wheel_radius = n.number("wheel_radius", p.wheel_radius);
  p.track_width = n.number("track_width", p.track_width);
  p.body_mass = n.number("body_mass", p.body_mass);
  p.wheel_mass = n.number("wheel_mass", p.wheel_mass);
  p.com_height = n.number("com_height", p.com_height);
  p.pitch_inertia = n.number("pitch_inertia", p.pitch_inertia);
  p.yaw_inertia = n.number("yaw_inertia", p.yaw_inertia);
  p.wheel_inertia = n.number("wheel_inertia", p.wheel_inertia);
  p.motor_inertia = n.number("motor_inertia", p.motor_inertia);
  p.torque_constant = n.number("torque_constant", p.torque_constant);
  p.back_emf_constant = n.number("back_emf_constant", p.back_emf_constant);
  p.armature_resistance = n.number("armature_resistance", p.armature_resistance);
  p.motor_friction = n.number("motor_friction", p.motor_friction);
  p.ground_friction = n.number("ground_friction", p.ground_friction);
  p.gravity = n.number("gravity", p.gravity);
  p.max_voltage = n.number("max_voltage", p.max_voltage);
  p.validate();
  return p;
}

RobotParams load_robot_params(const std::filesystem::path& path) {
  try {
    return robot_params_from_json(parse_file(path));
  } catch (const ConfigError& e) {
    if (std::string(e.what()).starts_with(path.string())) throw;
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

Scenario scenario_from_json(const json& j, const std::filesystem::path& base_dir) {
  const Node n(j, "");
  n.allow({"name", "mode", "duration", "Ts", "trials", "seed", "robot", "lqr", "reference",
           "lift", "channel", "noise", "netctrl", "plant", "measurement", "backlash",
           "substeps", "bias_window", "fall_pitch", "wire"});
  Scenario s;
  s.name = n.string("name", s.name);
  if (n.has("mode")) s.mode = read_mode(n.string("mode", ""), "mode");
  s.duration = n.number("duration", s.duration);
  s.Ts = n.number("Ts", s.Ts);
  s.trials = static_cast<int>(n.integer("trials", s.trials));
  s.seed = n.unsigned_integer("seed", s.seed);

  if (n.has("robot")) {
    const json& r = n.raw("robot");
    if (r.is_string()) {
      std::filesystem::path p = r.get<std::string>();
      if (p.is_relative()) p = base_dir / p;
      s.robot = load_robot_params(p);
    } else {
      s.robot = robot_params_from_json(r, "robot");
    }
  }
  if (n.has("lqr")) {
    const Node l = n.object("lqr");
    l.allow({"Q", "R"});
    s.weights.Q = read_matrix(l.raw("Q"), "lqr.Q", 6);
    s.weights.R = read_matrix(l.raw("R"), "lqr.R", 2);
  }
  if (n.has("reference")) s.reference = read_reference(n.object("reference"));
  if (n.has("lift")) {
    const Node l = n.object("lift");
    l.allow({"start_pitch", "duration", "close_threshold"});
    s.lift.start_pitch = l.number("start_pitch", s.lift.start_pitch);
    s.lift.duration = l.number("duration", s.lift.duration);
    s.lift.close_threshold = l.number("close_threshold", s.lift.close_threshold);
  }
  if (n.has("channel")) s.channel = read_channel(n.object("channel"));
  if (n.has("noise")) {
    const Node z = n.object("noise");
    z.allow({"gyro_std", "encoder_resolution", "gyro_bias"});
    s.noise.gyro_std = z.number("gyro_std", s.noise.gyro_std);
    s.noise.encoder_resolution = z.number("encoder_resolution", s.noise.encoder_resolution);
    s.noise.gyro_bias = z.number("gyro_bias", s.noise.gyro_bias);
  }
  if (n.has("netctrl")) {
    const Node c = n.object("netctrl");
    c.allow({"M", "predictor", "substeps"});
    s.netctrl.horizon = static_cast<int>(c.integer("M", s.netctrl.horizon));
    const std::string pred = c.string("predictor", "linear");
    if (pred == "linear") {
      s.netctrl.predictor = Predictor::linear;
    } else if (pred == "nonlinear") {
      s.netctrl.predictor = Predictor::nonlinear;
    } else {
      throw ConfigError("'netctrl.predictor' must be linear or nonlinear");
    }
    s.netctrl.substeps = static_cast<int>(c.integer("substeps", s.netctrl.substeps));
  }
  const std::string plant = n.string("plant", "nonlinear");
  if (plant == "nonlinear") {
    s.plant = PlantKind::nonlinear;
  } else if (plant == "linear") {
    s.plant = PlantKind::linear;
  } else {
    throw ConfigError("'plant' must be nonlinear or linear");
  }
  const std::string meas = n.string("measurement", "estimated");
  if (meas == "estimated") {
    s.measurement = Measurement::estimated;
  } else if (meas == "perfect") {
    s.measurement = Measurement::perfect;
  } else {
    throw ConfigError("'measurement' must be estimated or perfect");
  }
  s.backlash = n.number("backlash", s.backlash);
  s.substeps = static_cast<int>(n.integer("substeps", s.substeps));
  s.bias_window = n.unsigned_integer("bias_window", s.bias_window);
  s.fall_pitch = n.number("fall_pitch", s.fall_pitch);
  if (n.has("wire")) {
    const Node w = n.object("wire");
    w.allow({"host", "robot_port", "controller_port", "proxy_port", "pace", "reply_timeout",
             "startup_timeout"});
    s.wire.host = w.string("host", s.wire.host);
    s.wire.robot_port = static_cast<int>(w.integer("robot_port", 0));
    s.wire.controller_port = static_cast<int>(w.integer("controller_port", 0));
    s.wire.proxy_port = static_cast<int>(w.integer("proxy_port", 0));
    s.wire.pace = w.boolean("pace", s.wire.pace);
    s.wire.reply_timeout = w.number("reply_timeout", s.wire.reply_timeout);
    s.wire.startup_timeout = w.number("startup_timeout", s.wire.startup_timeout);
  }
  s.validate();
  s.config_hash = config_hash(s);
  return s;
}

Scenario load_scenario(const std::filesystem::path& path) {
  const json j = parse_file(path);
  try {
    return scenario_from_json(j, path.parent_path());
  } catch (const ConfigError& e) {
    if (std::string(e.what()).starts_with(path.string())) throw;
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), json_type_error(e)));
  }
}

json to_json(const Scenario& s) {
  const RobotParams& p = s.robot;
  json j;
  j["name"] = s.name;
  j["mode"] = to_string(s.mode);
  j["duration"] = s.duration;
  j["Ts"] = s.Ts;
  j["trials"] = s.trials;
  j["seed"] = s.seed;
  j["robot"] = {{"wheel_radius", p.wheel_radius},
                {"track_width", p.track_width},
                {"body_mass", p.body_mass},
                {"wheel_mass", p.wheel_mass},
                {"com_height", p.com_height},
                {"pitch_inertia", p.pitch_inertia},
                {"yaw_inertia", p.yaw_inertia},
                {"wheel_inertia", p.wheel_inertia},
                {"motor_inertia", p.motor_inertia},
                {"torque_constant", p.torque_constant},
                {"back_emf_constant", p.back_emf_constant},
                {"armature_resistance", p.armature_resistance},
                {"motor_friction", p.motor_friction},
                {"ground_friction", p.ground_friction},
                {"gravity", p.gravity},
                {"max_voltage", p.max_voltage}};
  j["lqr"] = {{"Q", matrix_json(s.weights.Q)}, {"R", matrix_json(s.weights.R)}};
  if (s.reference) {
    j["reference"] = {{"phi_dot_steps", steps_json(s.reference->phi_dot_steps)},
                      {"gamma_steps", steps_json(s.reference->gamma_steps)},
                      {"filter_tau", s.reference->filter_tau}};
  }
  j["lift"] = {{"start_pitch", s.lift.start_pitch},
               {"duration", s.lift.duration},
               {"close_threshold", s.lift.close_threshold}};
  const ChannelConfig& c = s.channel;
  j["channel"] = {{"uplink", delay_json(c.uplink)},
                  {"downlink", delay_json(c.downlink)},
                  {"compute_time", c.compute_time},
                  {"loss", loss_json(c.loss)},
                  {"forced_losses", c.forced_losses},
                  {"forced_bursts",
                   {{"start", c.forced_bursts.start},
                    {"period", c.forced_bursts.period},
                    {"length", c.forced_bursts.length}}},
                  {"timeout", c.timeout},
                  {"dilate", c.dilate}};
  j["noise"] = {{"gyro_std", s.noise.gyro_std},
                {"encoder_resolution", s.noise.encoder_resolution},
                {"gyro_bias", s.noise.gyro_bias}};
  j["netctrl"] = {{"M", s.netctrl.horizon},
                  {"predictor", s.netctrl.predictor == Predictor::linear ? "linear" : "nonlinear"},
                  {"substeps", s.netctrl.substeps}};
  j["plant"] = s.plant == PlantKind::linear ? "linear" : "nonlinear";
  j["measurement"] = s.measurement == Measurement::perfect ? "perfect" : "estimated";
  j["backlash"] = s.backlash;
  j["substeps"] = s.substeps;
  j["bias_window"] = s.bias_window;
  j["fall_pitch"] = s.fall_pitch;
  j["wire"] = {{"host", s.wire.host},
               {"robot_port", s.wire.robot_port},
               {"controller_port", s.wire.controller_port},
               {"proxy_port", s.wire.proxy_port},
               {"pace", s.wire.pace},
               {"reply_timeout", s.wire.reply_timeout},
               {"startup_timeout", s.wire.startup_timeout}};
  return j;
}

std::string config_hash(const Scenario& scn) {
  const std::string dump = to_json(scn).dump();
  const auto* data = reinterpret_cast<const Bytef*>(dump.data());
  const auto crc = crc32(0L, data, static_cast<uInt>(dump.size()));
  return fmt::format("{:08x}", static_cast<std::uint32_t>(crc));
}

std::filesystem::path find_scenario(const std::string& name) {
  namespace fs = std::filesystem;
  if (fs::exists(name)) return name;
  const fs::path file = fs::path("scenarios") / (name + ".json");
  if (fs::exists(file)) return file;
  const fs::path installed = fs::path(TWIPR_SOURCE_DIR) / file;
  if (fs::exists(installed)) return installed;
  throw ConfigError("scenario not found: " + name);
}

}  // namespace twipr

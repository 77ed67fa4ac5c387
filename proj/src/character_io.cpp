#include <algorithm>
#include <map>
#include <nlohmann/json.hpp>

#include "conr/synthdata.hpp"

namespace conr {

namespace {

using nlohmann::json;
using K = ParseError::Kind;

std::size_t line_at(const std::string& text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

// JSON values carry no positions, so schema errors point at the first
// occurrence of the offending key.
std::size_t line_of_key(const std::string& text, const std::string& key) {
  const auto pos = text.find('"' + key + '"');
  return pos == std::string::npos ? 1 : line_at(text, pos);
}

json parse(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    const std::size_t line = line_at(text, e.byte == 0 ? 0 : e.byte - 1);
    throw ParseError(K::kSyntax, line, "line " + std::to_string(line) + ": " + e.what());
  }
}

struct Reader {
  const std::string& text;

  [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
    const std::size_t line = line_of_key(text, key);
    throw ParseError(K::kSchema, line, "line " + std::to_string(line) + ": " + msg);
  }

  const json& need(const json& obj, const std::string& key) const {
    if (!obj.is_object()) fail(key, "expected an object holding '" + key + "'");
    const auto it = obj.find(key);
    if (it == obj.end()) fail(key, "missing key '" + key + "'");
    return *it;
  }

  double number(const json& obj, const std::string& key) const {
    const json& v = need(obj, key);
    if (!v.is_number()) fail(key, "'" + key + "' must be a number");
    return v.get<double>();
  }

  Vec3 vec3(const json& v, const std::string& key) const {
    if (!v.is_array() || v.size() != 3 || !std::all_of(v.begin(), v.end(), [](const json& x) { return x.is_number(); }))
      fail(key, "'" + key + "' must be an array of 3 numbers");
    return Vec3(v[0].get<double>(), v[1].get<double>(), v[2].get<double>());
  }

  Vec3 vec3(const json& obj, const std::string& key, int) const { return vec3(need(obj, key), key); }

  std::string string(const json& obj, const std::string& key) const {
    const json& v = need(obj, key);
    if (!v.is_string()) fail(key, "'" + key + "' must be a string");
    return v.get<std::string>();
  }
};

json vec(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

const char* shape_name(PartShape s) {
  switch (s) {
    case PartShape::kBox: return "box";
    case PartShape::kSphere: return "sphere";
    case PartShape::kFrustum: return "frustum";
  }
  return "box";
}

}  // namespace

std::string character_to_json(const CharacterSpec& spec) {
  json joints = json::array();
  for (const auto& j : spec.skeleton.joints) {
    joints.push_back({{"name", j.name},
                      {"parent", j.parent < 0 ? json(nullptr) : json(spec.skeleton.joints[j.parent].name)},
                      {"pivot", vec(j.pivot)},
                      {"min", vec(j.min_angle)},
                      {"max", vec(j.max_angle)}});
  }
  json parts = json::array();
  for (const auto& p : spec.parts) {
    parts.push_back({{"name", p.name},
                     {"shape", shape_name(p.shape)},
                     {"joint", spec.skeleton.joints[p.joint].name},
                     {"center", vec(p.center)},
                     {"half_size", vec(p.half_size)},
                     {"tilt", vec(p.tilt)},
                     {"taper", p.taper},
                     {"color", vec(p.color)},
                     {"accent", vec(p.accent)}});
  }
  json doc = {{"seed", spec.seed}, {"yaw_limit", spec.yaw_limit}, {"joints", joints}, {"parts", parts}};
  return doc.dump(2) + "\n";
}

CharacterSpec character_from_json(const std::string& text) {
  const json doc = parse(text);
  const Reader rd{text};
  CharacterSpec spec;
  const json& seed = rd.need(doc, "seed");
  if (!seed.is_number_unsigned()) rd.fail("seed", "'seed' must be a non-negative integer");
  spec.seed = seed.get<std::uint64_t>();
  if (doc.contains("yaw_limit")) spec.yaw_limit = rd.number(doc, "yaw_limit");

  const json& joints = rd.need(doc, "joints");
  if (!joints.is_array() || joints.empty()) rd.fail("joints", "'joints' must be a non-empty array");
  for (const auto& jj : joints) {
    Joint j;
    j.name = rd.string(jj, "name");
    const json& parent = rd.need(jj, "parent");
    if (parent.is_null()) {
      j.parent = -1;
    } else {
      if (!parent.is_string()) rd.fail("parent", "'parent' must be a joint name or null");
      j.parent = spec.skeleton.find(parent.get<std::string>());
      if (j.parent < 0) rd.fail(parent.get<std::string>(), "joint '" + j.name + "' has unknown or later parent '" +
                                                               parent.get<std::string>() + "'");
    }
    j.pivot = rd.vec3(jj, "pivot", 0);
    j.min_angle = rd.vec3(jj, "min", 0);
    j.max_angle = rd.vec3(jj, "max", 0);
    spec.skeleton.joints.push_back(std::move(j));
  }

  const json& parts = rd.need(doc, "parts");
  if (!parts.is_array() || parts.empty()) rd.fail("parts", "'parts' must be a non-empty array");
  for (const auto& pj : parts) {
    Part p;
    p.name = rd.string(pj, "name");
    const std::string shape = rd.string(pj, "shape");
    if (shape == "box")
      p.shape = PartShape::kBox;
    else if (shape == "sphere")
      p.shape = PartShape::kSphere;
    else if (shape == "frustum")
      p.shape = PartShape::kFrustum;
    else
      rd.fail(shape, "unknown shape '" + shape + "'");
    const std::string joint = rd.string(pj, "joint");
    p.joint = spec.skeleton.find(joint);
    if (p.joint < 0) rd.fail(joint, "part '" + p.name + "' references unknown joint '" + joint + "'");
    p.center = rd.vec3(pj, "center", 0);
    p.half_size = rd.vec3(pj, "half_size", 0);
    p.tilt = pj.contains("tilt") ? rd.vec3(pj, "tilt", 0) : Vec3::Zero();
    p.taper = pj.contains("taper") ? rd.number(pj, "taper") : 1.0;
    p.color = rd.vec3(pj, "color", 0);
    p.accent = pj.contains("accent") ? rd.vec3(pj, "accent", 0) : p.color;
    spec.parts.push_back(std::move(p));
  }
  try {
    spec.validate();
  } catch (const ContractError& e) {
    throw ParseError(K::kSchema, 1, std::string("invalid character: ") + e.what());
  }
  return spec;
}

std::string pose_to_json(const Pose& pose, const Skeleton& skeleton) {
  json joints = json::object();
  for (std::size_t j = 0; j < pose.angles.size() && j < skeleton.joints.size(); ++j)
    joints[skeleton.joints[j].name] = vec(pose.angles[j]);
  json doc = {{"yaw", pose.yaw}, {"joints", joints}};
  return doc.dump(2) + "\n";
}

Pose pose_from_json(const std::string& text, const Skeleton& skeleton) {
  const json doc = parse(text);
  const Reader rd{text};
  if (!doc.is_object()) throw ParseError(K::kSchema, 1, "pose must be a JSON object");
  Pose pose = Pose::identity(skeleton);
  if (doc.contains("yaw")) pose.yaw = rd.number(doc, "yaw");
  if (doc.contains("joints")) {
    const json& joints = doc["joints"];
    if (!joints.is_object()) rd.fail("joints", "'joints' must be an object of name -> [x, y, z]");
    for (const auto& [name, angles] : joints.items()) {
      const int j = skeleton.find(name);
      if (j < 0) rd.fail(name, "unknown joint '" + name + "'");
      pose.angles[j] = rd.vec3(angles, name);
    }
  }
  return pose;
}

}  // namespace conr

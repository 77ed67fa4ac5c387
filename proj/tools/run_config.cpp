#include "run_config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "conr/errors.hpp"

namespace conr::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename N>
bool parse_number(const std::string& s, N& out) {
  const char* end = s.data() + s.size();
  const auto r = std::from_chars(s.data(), end, out);
  return r.ec == std::errc() && r.ptr == end;
}

bool parse_bool(const std::string& s, bool& out) {
  static const char* const kTrue[] = {"true", "1", "yes", "on"};
  static const char* const kFalse[] = {"false", "0", "no", "off"};
  for (const char* t : kTrue)
    if (s == t) return out = true, true;
  for (const char* f : kFalse)
    if (s == f) return out = false, true;
  return false;
}

bool parse_vec3(const std::string& s, Vec3& out) {
  std::stringstream ss(s);
  std::string part;
  int i = 0;
  while (std::getline(ss, part, ',')) {
    if (i == 3 || !parse_number(trim(part), out[i])) return false;
    ++i;
  }
  return i == 3;
}

const KeyInfo& key_info(const std::string& key) {
  const auto& keys = config_keys();
  const auto it = std::find_if(keys.begin(), keys.end(), [&](const KeyInfo& k) { return k.name == key; });
  if (it == keys.end()) throw ConfigError("unknown configuration key '" + key + "'");
  return *it;
}

void check_value(const KeyInfo& k, const std::string& v) {
  bool ok = false;
  switch (k.type) {
    case KeyType::kInt: {
      int x;
      ok = parse_number(v, x);
      break;
    }
    case KeyType::kUint: {
      std::uint64_t x;
      ok = parse_number(v, x);
      break;
    }
    case KeyType::kDouble: {
      double x;
      ok = parse_number(v, x);
      break;
    }
    case KeyType::kBool: {
      bool x;
      ok = parse_bool(v, x);
      break;
    }
    case KeyType::kChoice:
      ok = std::find(k.choices.begin(), k.choices.end(), v) != k.choices.end();
      break;
    case KeyType::kVec3: {
      Vec3 x;
      ok = parse_vec3(v, x);
      break;
    }
  }
  if (!ok) throw ConfigError("invalid value '" + v + "' for key '" + k.name + "'");
}

}  // namespace

const std::vector<KeyInfo>& config_keys() {
  using K = KeyType;
  static const std::vector<KeyInfo> keys = {
      {"seed", K::kUint, "0", "master seed of every random stream", {}},
      {"m", K::kInt, "4", "sheet views per training sample", {}},
      {"k", K::kInt, "4", "detector augmentations per training sample", {}},
      {"n", K::kInt, "1", "sheet views at evaluation", {}},
      {"iterations", K::kInt, "1000", "training iterations", {}},
      {"batch_size", K::kInt, "4", "samples per optimizer step", {}},
      {"resolution", K::kInt, "64", "image side in pixels, a multiple of 16", {}},
      {"message_blocks", K::kInt, "3", "decoder blocks that exchange cross-view messages (0..3)", {}},
      {"cinn", K::kBool, "true", "cross-view message passing on", {}},
      {"use_mask", K::kBool, "true", "train with the occupancy loss", {}},
      {"use_photo", K::kBool, "true", "train with the photometric loss", {}},
      {"use_perc", K::kBool, "true", "train with the perceptual loss", {}},
      {"random_crop", K::kBool, "true", "random-crop augmentation", {}},
      {"unlabeled_fraction", K::kDouble, "0", "fraction of samples without UDP ground truth", {}},
      {"poses_per_character", K::kInt, "0", "fixed training poses per character (0: fresh poses)", {}},
      {"log_every", K::kInt, "1", "iterations per metrics line", {}},
      {"save_every", K::kInt, "0", "iterations between checkpoints (0: only at the end)", {}},
      {"divergence_window", K::kInt, "100", "iterations the divergence guard tolerates", {}},
      {"divergence_factor", K::kDouble, "10", "loss ratio over the initial loss counted as diverging", {}},
      {"lr", K::kDouble, "0.0003", "AdamW learning rate", {}},
      {"beta1", K::kDouble, "0.9", "AdamW first-moment decay", {}},
      {"beta2", K::kDouble, "0.999", "AdamW second-moment decay", {}},
      {"epsilon", K::kDouble, "1e-08", "AdamW epsilon", {}},
      {"weight_decay", K::kDouble, "0.0001", "AdamW decoupled weight decay", {}},
      {"alpha", K::kDouble, "1", "weight of the occupancy loss", {}},
      {"beta", K::kDouble, "0.05", "weight of the perceptual loss", {}},
      {"gamma", K::kDouble, "1", "weight of the photometric loss", {}},
      {"theta", K::kDouble, "1", "weight of the consistency loss", {}},
      {"base_channels", K::kInt, "16", "renderer width C", {}},
      {"detector_channels", K::kInt, "16", "detector width", {}},
      {"renderer_res_units", K::kInt, "1", "residual units per renderer encoder stage", {}},
      {"detector_res_units", K::kInt, "2", "residual units per detector encoder stage", {}},
      {"share_encoder", K::kBool, "false", "detector reuses the renderer encoder", {}},
      {"grid_sample", K::kBool, "true", "warp remote branches by the predicted flow", {}},
      {"characters", K::kInt, "17", "characters generated by synth-data", {}},
      {"split_ratio", K::kInt, "16", "train:validation character ratio", {}},
      {"sheet_views", K::kInt, "4", "sheet images written per dataset character", {}},
      {"augmentations", K::kInt, "4", "augmented targets written per dataset character", {}},
      {"camera", K::kChoice, "orthographic", "bake-udp projection", {"orthographic", "perspective"}},
      {"camera_eye", K::kVec3, "0,0,10", "bake-udp camera position", {}},
      {"camera_target", K::kVec3, "0,0,0", "bake-udp look-at point", {}},
      {"camera_up", K::kVec3, "0,1,0", "bake-udp up vector", {}},
      {"camera_scale", K::kDouble, "0", "orthographic pixels per world unit (0: frame the character)", {}},
      {"camera_fov", K::kDouble, "0.8", "perspective vertical field of view, radians", {}},
  };
  return keys;
}

RunConfig::RunConfig() {
  for (const auto& k : config_keys()) values_[k.name] = k.default_value;
}

void RunConfig::merge_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(number) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    try {
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
}

void RunConfig::merge_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  merge_text(ss.str(), path.string());
}

void RunConfig::set(const std::string& key, const std::string& value) {
  check_value(key_info(key), value);
  values_[key] = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  key_info(key);
  return values_.at(key);
}

int RunConfig::get_int(const std::string& key) const {
  int v = 0;
  parse_number(get(key), v);
  return v;
}

std::uint64_t RunConfig::get_uint(const std::string& key) const {
  std::uint64_t v = 0;
  parse_number(get(key), v);
  return v;
}

double RunConfig::get_double(const std::string& key) const {
  double v = 0;
  parse_number(get(key), v);
  return v;
}

bool RunConfig::get_bool(const std::string& key) const {
  bool v = false;
  parse_bool(get(key), v);
  return v;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig c;
  c.seed = get_uint("seed");
  c.m = get_int("m");
  c.k = get_int("k");
  c.n = get_int("n");
  c.iterations = get_int("iterations");
  c.batch_size = get_int("batch_size");
  c.resolution = get_int("resolution");
  c.message_blocks = get_int("message_blocks");
  c.cinn = get_bool("cinn");
  c.use_mask = get_bool("use_mask");
  c.use_photo = get_bool("use_photo");
  c.use_perc = get_bool("use_perc");
  c.random_crop = get_bool("random_crop");
  c.unlabeled_fraction = get_double("unlabeled_fraction");
  c.poses_per_character = get_int("poses_per_character");
  c.log_every = get_int("log_every");
  c.divergence_window = get_int("divergence_window");
  c.divergence_factor = get_double("divergence_factor");
  c.optim.learning_rate = get_double("lr");
  c.optim.beta1 = get_double("beta1");
  c.optim.beta2 = get_double("beta2");
  c.optim.epsilon = get_double("epsilon");
  c.optim.weight_decay = get_double("weight_decay");
  c.weights.alpha = get_double("alpha");
  c.weights.beta = get_double("beta");
  c.weights.gamma = get_double("gamma");
  c.weights.theta = get_double("theta");
  c.model.base_channels = get_int("base_channels");
  c.model.detector_channels = get_int("detector_channels");
  c.model.renderer_res_units = get_int("renderer_res_units");
  c.model.detector_res_units = get_int("detector_res_units");
  c.model.share_encoder = get_bool("share_encoder");
  c.model.grid_sample = get_bool("grid_sample");
  c.validate();
  return c;
}

Camera RunConfig::camera(double character_height) const {
  const int res = get_int("resolution");
  if (res < 1) throw ConfigError("resolution must be positive");
  Camera c = default_camera(res, res, character_height);
  c.mode = get("camera") == "perspective" ? Projection::kPerspective : Projection::kOrthographic;
  parse_vec3(get("camera_eye"), c.eye);
  parse_vec3(get("camera_target"), c.look_at);
  parse_vec3(get("camera_up"), c.up);
  if (const double s = get_double("camera_scale"); s != 0.0) c.scale = s;
  c.fov_y = get_double("camera_fov");
  c.validate();
  return c;
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& k : config_keys()) out += k.name + " = " + values_.at(k.name) + "\n";
  return out;
}

}  // namespace conr::cli

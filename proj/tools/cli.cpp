#include "cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "conr/errors.hpp"
#include "conr/image.hpp"
#include "conr/network.hpp"
#include "conr/raster.hpp"
#include "conr/rng.hpp"
#include "conr/training.hpp"
#include "run_config.hpp"

namespace conr::cli {

namespace fs = std::filesystem;

namespace {

struct Globals {
  std::string config;
  std::string seed;
  std::string out;
  bool force = false;
  std::string overrides;  // `key = value` lines from command flags
};

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
  if (!out) throw Error("cannot write " + path.string());
}

bool non_empty_dir(const fs::path& p) { return fs::is_directory(p) && !fs::is_empty(p); }

fs::path require_out(const Globals& g) {
  if (g.out.empty()) throw ConfigError("--out is required");
  return g.out;
}

/// Refuses to replace an existing file unless --force.
void check_writable(const fs::path& file, bool force) {
  if (fs::exists(file) && !force) throw ConfigError(file.string() + " exists; pass --force to overwrite");
}

// Defaults, then the run directory's echoed config, then --config, then flags.
RunConfig build_config(const Globals& g, const fs::path& base = {}) {
  RunConfig cfg;
  if (!base.empty() && fs::exists(base)) cfg.merge_file(base);
  if (!g.config.empty()) cfg.merge_file(g.config);
  if (!g.seed.empty()) cfg.set("seed", g.seed);
  if (!g.overrides.empty()) cfg.merge_text(g.overrides, "command line");
  return cfg;
}

std::string format_parse_error(const fs::path& path, const ParseError& e) { return path.string() + ": " + e.what(); }

CharacterSpec load_character(const fs::path& path) {
  try {
    return character_from_json(read_text(path));
  } catch (const ParseError& e) {
    throw ParseError(e.kind(), e.offset(), format_parse_error(path, e));
  }
}

struct CheckpointPaths {
  fs::path model;
  fs::path config;
};

CheckpointPaths checkpoint_paths(const std::string& arg) {
  if (arg.empty()) throw ConfigError("--checkpoint is required");
  const fs::path p(arg);
  const fs::path dir = fs::is_directory(p) ? p : p.parent_path();
  return {fs::is_directory(p) ? p / "model.ckpt" : p, dir / "config.txt"};
}

std::unique_ptr<Model<float>> load_model(const TrainConfig& tc, const fs::path& ckpt) {
  auto model = std::make_unique<Model<float>>(tc.model, 0);
  load_checkpoint(model->params(), ckpt.string());
  return model;
}

std::vector<CharacterSpec> load_split(const fs::path& data, const std::vector<std::uint64_t>& seeds) {
  std::vector<CharacterSpec> specs;
  for (const auto s : seeds) specs.push_back(load_character(character_dir(data, s) / "character.json"));
  return specs;
}

std::vector<TrainingSample> load_samples(const fs::path& data, const std::vector<std::uint64_t>& seeds) {
  std::vector<TrainingSample> out;
  for (const auto s : seeds) out.push_back(load_sample(character_dir(data, s)));
  return out;
}

std::vector<fs::path> udp_inputs(const fs::path& p) {
  std::vector<fs::path> files;
  if (fs::is_directory(p)) {
    for (const auto& e : fs::directory_iterator(p))
      if (e.is_regular_file() && e.path().extension() == ".udpf") files.push_back(e.path());
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(p);
  }
  if (files.empty()) throw ConfigError("no .udpf files in " + p.string());
  return files;
}

// ---- commands ----

int cmd_synth_data(const Globals& g, std::ostream& out) {
  const RunConfig cfg = build_config(g);
  const fs::path dir = require_out(g);
  const int n = cfg.get_int("characters");
  const int res = cfg.get_int("resolution");
  const int views = cfg.get_int("sheet_views");
  const int augs = cfg.get_int("augmentations");
  const std::uint64_t seed = cfg.get_uint("seed");
  if (n < 1) throw ConfigError("--characters must be positive");
  if (res < 16 || res % 16 != 0) throw ConfigError("resolution must be a positive multiple of 16");
  if (views < 1 || augs < 1) throw ConfigError("sheet_views and augmentations must be positive");

  const std::uint64_t base = derive_seed(seed, hash_name("characters"));
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < n; ++i) seeds.push_back(derive_seed(base, static_cast<std::uint64_t>(i)));
  const Split split = split_dataset(seeds, cfg.get_int("split_ratio"), seed);

  if (non_empty_dir(dir)) {
    if (!g.force) throw ConfigError("output directory " + dir.string() + " is not empty; pass --force to overwrite");
    fs::remove_all(dir / "characters");
    fs::remove(dir / "manifest.tsv");
    fs::remove(dir / "config.txt");
  }
  fs::create_directories(dir);

  SampleOptions opt;
  opt.random_crop = cfg.get_bool("random_crop");
  for (const auto s : seeds) {
    const fs::path cdir = character_dir(dir, s);
    fs::create_directories(cdir);
    const CharacterSpec spec = gen_character(s);
    write_text(cdir / "character.json", character_to_json(spec));
    const TrainingSample sample = make_sample(spec, views, augs, derive_seed(s, hash_name("dataset")), res, opt);
    for (std::size_t i = 0; i < sample.sheet.size(); ++i)
      write_png(sample.sheet[i], cdir / ("sheet_" + std::to_string(i) + ".png"));
    write_png(sample.target, cdir / "target.png");
    write_udp(sample.target_udp, cdir / "target.udpf");
    for (std::size_t j = 0; j < sample.augmented.size(); ++j)
      write_png(sample.augmented[j], cdir / ("aug_" + std::to_string(j) + ".png"));
  }

  std::string manifest;
  for (const auto s : seeds) {
    const bool val = std::find(split.val.begin(), split.val.end(), s) != split.val.end();
    manifest += std::to_string(s) + (val ? "\tval\n" : "\ttrain\n");
  }
  write_text(dir / "manifest.tsv", manifest);
  write_text(dir / "config.txt", cfg.to_text());
  out << "wrote " << n << " characters (" << split.train.size() << " train, " << split.val.size() << " val) to "
      << dir.string() << "\n";
  return kOk;
}

int cmd_bake_udp(const Globals& g, const std::string& mesh_path, const std::string& pose_path, bool preview,
                 std::ostream& out, std::ostream& err) {
  const RunConfig cfg = build_config(g);
  const fs::path dir = require_out(g);
  if (mesh_path.empty()) throw ConfigError("--mesh is required");
  const CharacterSpec spec = load_character(mesh_path);
  Pose pose = Pose::identity(spec.skeleton);
  std::string name = "identity";
  if (!pose_path.empty()) {
    try {
      pose = pose_from_json(read_text(pose_path), spec.skeleton);
    } catch (const ParseError& e) {
      throw ParseError(e.kind(), e.offset(), format_parse_error(pose_path, e));
    }
    name = fs::path(pose_path).stem().string();
  }

  const MeshApose mesh = build_mesh(spec);
  const LandmarkSet lms = bake_landmarks(mesh);
  const Camera cam = cfg.camera(framing_height(mesh));
  const UdpImage udp = rasterize_udp(pose_mesh(mesh, pose), lms, cam);

  fs::create_directories(dir);
  const fs::path file = dir / (name + ".udpf");
  check_writable(file, g.force);
  write_udp(udp, file);
  if (preview) write_udp_preview_png(udp, dir / (name + "_preview.png"));

  bool any = false;
  for (std::size_t p = 0; p < udp.pixels() && !any; ++p) any = udp.data[p * 4 + 3] > 0.0f;
  if (!any) err << "warning: the camera sees no part of the character; the UDP is empty\n";
  out << "wrote " << file.string() << "\n";
  return kOk;
}

struct TrainFlags {
  std::string data;
  int iters = -1;
  double lr = -1;
  bool resume = false;
};

int cmd_train(const Globals& g, const TrainFlags& f, std::ostream& out, std::ostream& err) {
  const fs::path dir = require_out(g);
  if (f.data.empty()) throw ConfigError("--data is required");
  RunConfig cfg = build_config(g);
  if (f.iters >= 0) cfg.set("iterations", std::to_string(f.iters));
  if (f.lr >= 0) {
    std::ostringstream lr;
    lr.precision(17);
    lr << f.lr;
    cfg.set("lr", lr.str());
  }
  const TrainConfig tc = cfg.train_config();
  const int save_every = cfg.get_int("save_every");
  if (save_every < 0) throw ConfigError("save_every must be >= 0");

  const Split split = read_manifest(f.data);
  if (split.train.empty()) throw ConfigError("the dataset has no training characters");
  auto pool = std::make_shared<CharacterPool>(load_split(f.data, split.train), tc.poses_per_character, tc.resolution);

  const fs::path metrics = dir / "metrics.tsv";
  if (!f.resume && non_empty_dir(dir)) {
    if (!g.force) throw ConfigError("output directory " + dir.string() + " is not empty; pass --force or --resume");
    for (const char* name : {"model.ckpt", "optimizer.ckpt", "trainer.json", "metrics.tsv", "config.txt"})
      fs::remove(dir / name);
  }
  fs::create_directories(dir);

  Trainer trainer(tc, pool);
  if (f.resume) trainer.resume(dir.string());
  trainer.set_metrics_path(metrics.string());
  write_text(dir / "config.txt", cfg.to_text());

  StepMetrics last;
  bool stepped = false;
  try {
    while (trainer.iteration() < tc.iterations) {
      last = trainer.step();
      stepped = true;
      if (save_every > 0 && trainer.iteration() % save_every == 0) trainer.save(dir.string());
    }
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << "\n";
    if (stepped) err << "last metrics: " << format_metrics_line(last.iteration, last.losses, last.total) << "\n";
    return kRuntime;
  }
  trainer.save(dir.string());
  if (stepped) out << format_metrics_line(last.iteration, last.losses, last.total) << "\n";
  out << "checkpoint at iteration " << trainer.iteration() << " in " << dir.string() << "\n";
  return kOk;
}

int cmd_infer(const Globals& g, const std::string& checkpoint, const std::vector<std::string>& sheet_paths,
              const std::string& udp_arg, std::ostream& out) {
  const fs::path dir = require_out(g);
  const auto ck = checkpoint_paths(checkpoint);
  const TrainConfig tc = build_config(g, ck.config).train_config();
  if (sheet_paths.empty()) throw ConfigError("--sheet needs at least one image");
  if (udp_arg.empty()) throw ConfigError("--udp is required");
  const auto udps = udp_inputs(udp_arg);
  const auto model = load_model(tc, ck.model);

  NoGradGuard no_grad;
  std::vector<Tensor<float>> views;
  for (const auto& p : sheet_paths) views.push_back(to_tensor<float>(read_png(p)));
  const auto encoded = model->encode_sheet(views);  // shared by every UDP
  fs::create_directories(dir);
  for (const auto& u : udps) {
    const fs::path file = dir / (u.stem().string() + ".png");
    check_writable(file, g.force);
    const auto rendered = model->renderer_forward(encoded, to_tensor<float>(read_udp(u)), tc.effective_message_blocks());
    write_png(to_rgba(rendered), file);
    out << "wrote " << file.string() << "\n";
  }
  return kOk;
}

int cmd_detect(const Globals& g, const std::string& checkpoint, const std::string& image, int k, bool preview,
               std::ostream& out) {
  const fs::path dir = require_out(g);
  const auto ck = checkpoint_paths(checkpoint);
  const RunConfig cfg = build_config(g, ck.config);
  const TrainConfig tc = cfg.train_config();
  if (image.empty()) throw ConfigError("--image is required");
  if (k < 1) throw ConfigError("--k must be >= 1");
  const auto model = load_model(tc, ck.model);

  const RgbaImage img = read_png(image);
  std::vector<Tensor<float>> inputs;
  if (k == 1) {
    inputs.push_back(to_tensor<float>(img));
  } else {
    const std::uint64_t base = derive_seed(cfg.get_uint("seed"), hash_name("detect"));
    for (int j = 0; j < k; ++j)
      inputs.push_back(to_tensor<float>(composite_over(img, gen_background(derive_seed(base, j), img.height, img.width))));
  }
  NoGradGuard no_grad;
  const UdpImage udp = to_udp(model->detect_averaged(inputs).mean);

  fs::create_directories(dir);
  const std::string stem = fs::path(image).stem().string();
  const fs::path file = dir / (stem + ".udpf");
  check_writable(file, g.force);
  write_udp(udp, file);
  if (preview) write_udp_preview_png(udp, dir / (stem + "_preview.png"));
  out << "wrote " << file.string() << "\n";
  return kOk;
}

int cmd_eval(const Globals& g, const std::string& checkpoint, const std::string& data, const std::vector<int>& views,
             const std::string& split_name, std::ostream& out) {
  const auto ck = checkpoint_paths(checkpoint);
  const TrainConfig tc = build_config(g, ck.config).train_config();
  if (data.empty()) throw ConfigError("--data is required");
  if (views.empty()) throw ConfigError("--views needs at least one value");
  for (const int n : views)
    if (n < 1) throw ConfigError("--views values must be >= 1");
  const Split split = read_manifest(data);
  const auto& seeds = split_name == "train" ? split.train : split.val;
  if (seeds.empty()) throw ConfigError("the " + split_name + " split is empty");
  const auto samples = load_samples(data, seeds);
  const auto model = load_model(tc, ck.model);
  const PerceptualProxy<float> proxy;

  std::ostringstream table;
  table << "n\tL_photo\tL_perc\tL_udp\tL_mask\n";
  table.precision(6);
  for (const int n : views) {
    const EvalMetrics m = evaluate(*model, samples, n, tc.effective_message_blocks(), proxy);
    table << n << '\t' << m.photo << '\t' << m.perc << '\t' << m.udp << '\t' << m.mask << '\n';
  }
  out << table.str();
  if (!g.out.empty()) {
    fs::create_directories(g.out);
    const fs::path file = fs::path(g.out) / "eval.tsv";
    check_writable(file, g.force);
    write_text(file, table.str());
  }
  return kOk;
}

int cmd_ablate(const Globals& g, const std::string& data, int iters, std::ostream& out) {
  const fs::path dir = require_out(g);
  if (data.empty()) throw ConfigError("--data is required");
  RunConfig cfg = build_config(g);
  if (iters >= 0) cfg.set("iterations", std::to_string(iters));
  const TrainConfig tc = cfg.train_config();
  const Split split = read_manifest(data);
  if (split.train.empty()) throw ConfigError("the dataset has no training characters");
  auto pool = std::make_shared<CharacterPool>(load_split(data, split.train), tc.poses_per_character, tc.resolution);
  const auto validation = load_samples(data, split.val);

  const auto rows = ablation_run(default_ablation_grid(tc), pool, validation);
  std::ostringstream report;
  write_ablation_report(rows, report);
  fs::create_directories(dir);
  const fs::path file = dir / "ablation.tsv";
  check_writable(file, g.force);
  write_text(file, report.str());
  write_text(dir / "config.txt", cfg.to_text());
  out << report.str();
  return kOk;
}

}  // namespace

fs::path character_dir(const fs::path& data, std::uint64_t seed) {
  return data / "characters" / std::to_string(seed);
}

Split read_manifest(const fs::path& data) {
  const fs::path path = data / "manifest.tsv";
  std::istringstream in(read_text(path));
  Split split;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    const std::string seed = line.substr(0, tab), role = tab == std::string::npos ? "" : line.substr(tab + 1);
    std::uint64_t s = 0;
    std::size_t used = 0;
    try {
      s = std::stoull(seed, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != seed.size() || (role != "train" && role != "val"))
      throw ParseError(ParseError::Kind::kSyntax, number,
                       path.string() + ": line " + std::to_string(number) + ": expected '<seed>\\t<train|val>'");
    (role == "val" ? split.val : split.train).push_back(s);
  }
  return split;
}

TrainingSample load_sample(const fs::path& dir) {
  TrainingSample s;
  for (int i = 0; fs::exists(dir / ("sheet_" + std::to_string(i) + ".png")); ++i)
    s.sheet.push_back(read_png(dir / ("sheet_" + std::to_string(i) + ".png")));
  for (int j = 0; fs::exists(dir / ("aug_" + std::to_string(j) + ".png")); ++j)
    s.augmented.push_back(read_png(dir / ("aug_" + std::to_string(j) + ".png")));
  if (s.sheet.empty() || s.augmented.empty()) throw Error(dir.string() + " has no sheet or augmented images");
  s.target = read_png(dir / "target.png");
  s.has_udp_gt = fs::exists(dir / "target.udpf");
  if (s.has_udp_gt) s.target_udp = read_udp(dir / "target.udpf");
  return s;
}

int gradcheck_report(const std::vector<GradCheckCase>& cases, int instances, double tolerance, std::uint64_t seed,
                     std::ostream& out) {
  bool ok = true;
  for (const auto& r : run_gradcheck(cases, instances, tolerance, seed)) {
    ok = ok && r.passed;
    out << r.op << '\t' << (r.passed ? "PASS" : "FAIL") << "\tmax_rel_error=" << r.max_rel_error
        << "\tinstances=" << r.instances << "\tshapes=" << r.shapes << '\n';
  }
  return ok ? kOk : kSelfCheck;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Character sheet renderer: data synthesis, training and inference", "conr"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "key = value configuration file");
  app.add_option("--seed", g.seed, "master seed (unsigned 64-bit)");
  app.add_option("--out", g.out, "output directory");
  app.add_flag("--force", g.force, "overwrite existing outputs");

  auto* synth = app.add_subcommand("synth-data", "write a synthetic character dataset");
  std::string characters, split_ratio;
  synth->add_option("--characters", characters, "number of characters");
  synth->add_option("--split-ratio", split_ratio, "train:validation character ratio");

  auto* bake = app.add_subcommand("bake-udp", "rasterize the UDP of a character in a pose");
  std::string mesh, pose, camera, eye, target, scale, resolution;
  bool preview = false;
  bake->add_option("--mesh", mesh, "character JSON file")->required();
  bake->add_option("--pose", pose, "pose JSON file (default: rest pose)");
  bake->add_option("--camera", camera, "orthographic or perspective");
  bake->add_option("--camera-eye", eye, "camera position x,y,z");
  bake->add_option("--camera-target", target, "look-at point x,y,z");
  bake->add_option("--camera-scale", scale, "orthographic pixels per world unit");
  bake->add_option("--resolution", resolution, "image side in pixels");
  bake->add_flag("--png-preview", preview, "also write an 8-bit preview");

  auto* train = app.add_subcommand("train", "train detector and renderer jointly");
  TrainFlags tf;
  train->add_option("--data", tf.data, "dataset directory")->required();
  train->add_option("--iters", tf.iters, "total iterations");
  train->add_option("--lr", tf.lr, "learning rate");
  train->add_flag("--resume", tf.resume, "continue from the checkpoint in --out");

  auto* infer = app.add_subcommand("infer", "render a character sheet in target poses");
  std::string checkpoint, udp;
  std::vector<std::string> sheet;
  infer->add_option("--checkpoint", checkpoint, "model.ckpt or run directory")->required();
  infer->add_option("--sheet", sheet, "reference images, any order")->required();
  infer->add_option("--udp", udp, ".udpf file or directory")->required();

  auto* detect = app.add_subcommand("detect", "predict the UDP of an image");
  std::string image;
  int k = 1;
  bool detect_preview = false;
  detect->add_option("--checkpoint", checkpoint, "model.ckpt or run directory")->required();
  detect->add_option("--image", image, "input PNG")->required();
  detect->add_option("--k", k, "background augmentations averaged");
  detect->add_flag("--png-preview", detect_preview, "also write an 8-bit preview");

  auto* eval = app.add_subcommand("eval", "losses of a checkpoint on a dataset split");
  std::string data, split = "val";
  std::vector<int> views{1};
  eval->add_option("--checkpoint", checkpoint, "model.ckpt or run directory")->required();
  eval->add_option("--data", data, "dataset directory")->required();
  eval->add_option("--views", views, "sheet view counts, comma separated")->delimiter(',');
  eval->add_option("--split", split, "train or val")->check(CLI::IsMember({"train", "val"}));

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");
  int instances = 10;
  double tolerance = 1e-3;
  bool pipeline = false;
  gradcheck->add_option("--instances", instances, "random instances per op");
  gradcheck->add_option("--tolerance", tolerance, "max relative error");
  gradcheck->add_flag("--pipeline", pipeline, "also check the full training loss");

  auto* ablate = app.add_subcommand("ablate", "train the ablation grid and write a report");
  int ablate_iters = -1;
  ablate->add_option("--data", data, "dataset directory")->required();
  ablate->add_option("--iters", ablate_iters, "iterations per configuration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    auto add_override = [&](const char* key, const std::string& value) {
      if (!value.empty()) g.overrides += std::string(key) + " = " + value + "\n";
    };
    if (synth->parsed()) {
      add_override("characters", characters);
      add_override("split_ratio", split_ratio);
    }
    if (bake->parsed()) {
      add_override("camera", camera);
      add_override("camera_eye", eye);
      add_override("camera_target", target);
      add_override("camera_scale", scale);
      add_override("resolution", resolution);
    }
    if (synth->parsed()) return cmd_synth_data(g, out);
    if (bake->parsed()) return cmd_bake_udp(g, mesh, pose, preview, out, err);
    if (train->parsed()) return cmd_train(g, tf, out, err);
    if (infer->parsed()) return cmd_infer(g, checkpoint, sheet, udp, out);
    if (detect->parsed()) return cmd_detect(g, checkpoint, image, k, detect_preview, out);
    if (eval->parsed()) return cmd_eval(g, checkpoint, data, views, split, out);
    if (gradcheck->parsed()) {
      std::uint64_t seed = 0;
      if (!g.seed.empty()) seed = build_config(g).get_uint("seed");
      int code = gradcheck_report(tensor_gradcheck_cases(), instances, tolerance, seed, out);
      if (pipeline) {
        const auto r = pipeline_gradcheck(seed);
        const bool ok = r.max_rel_error < 1e-2;
        out << "pipeline\t" << (ok ? "PASS" : "FAIL") << "\tmax_rel_error=" << r.max_rel_error
            << "\tparameters=" << r.checked.size() << '\n';
        if (!ok) code = kSelfCheck;
      }
      return code;
    }
    if (ablate->parsed()) return cmd_ablate(g, data, ablate_iters, out);
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << "\n";
    return kUsage;
  } catch (const ParseError& e) {
    err << "parse error: " << e.what() << "\n";
    return kRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}

}  // namespace conr::cli

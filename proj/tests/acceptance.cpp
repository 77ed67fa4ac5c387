// Acceptance run: one PASS/FAIL line per criterion. Exit 0 when every
// selected criterion passes, 3 otherwise. Criteria named in --known-failures
// still print FAIL but do not change the exit status.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "conr/gradcheck.hpp"
#include "conr/losses.hpp"
#include "conr/network.hpp"
#include "conr/ops.hpp"
#include "conr/raster.hpp"
#include "conr/rng.hpp"
#include "conr/synthdata.hpp"
#include "conr/training.hpp"
#include "support/pose_consistency.hpp"
#include "support/random_scene.hpp"
#include "support/raster_oracle.hpp"

namespace fs = std::filesystem;
using namespace conr;

namespace {

// Pinned tolerances and budgets.
constexpr double kOpGradTol = 1e-3;
constexpr int kOpGradInstances = 10;
constexpr double kPipelineGradTol = 1e-2;
constexpr int kPipelineParams = 20;
constexpr double kGradBudgetSec = 120;
constexpr double kRasterBudgetSec = 60;
constexpr double kConsistencyTol = 1e-6;
constexpr double kConsistencyBudgetSec = 60;
constexpr double kPermutationTol = 1e-4;
constexpr double kDuplicateTol = 1e-6;
constexpr double kBceTol = 1e-6;
constexpr double kTotalLossTol = 1e-12;
constexpr double kOverfitPhoto = 0.05;
constexpr double kOverfitUdp = 0.05;
constexpr double kOverfitBudgetSec = 30 * 60;
constexpr double kMessageParity = 0.005;

using Clock = std::chrono::steady_clock;
double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

double max_abs_diff(const Tensor<float>& a, const Tensor<float>& b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(double(a.data()[i]) - b.data()[i]));
  return worst;
}

Tensor<float> random_image(Rng& rng, int h, int w) {
  std::vector<float> v(static_cast<std::size_t>(4) * h * w);
  for (auto& x : v) x = static_cast<float>(rng.uniform());
  return Tensor<float>({1, 4, h, w}, std::move(v));
}

// ---- 1: gradients ----
Outcome gradients() {
  const auto t0 = Clock::now();
  int failed = 0;
  double worst = 0;
  std::string names;
  const auto reports = run_gradcheck(tensor_gradcheck_cases(), kOpGradInstances, kOpGradTol, 2024);
  for (const auto& r : reports) {
    worst = std::max(worst, r.max_rel_error);
    if (!r.passed) {
      ++failed;
      names += " " + r.op;
    }
  }
  const auto pipe = pipeline_gradcheck(7, kPipelineParams, 16, 4);
  const double secs = since(t0);
  Outcome o;
  o.pass = failed == 0 && pipe.max_rel_error < kPipelineGradTol && secs < kGradBudgetSec;
  o.detail = std::to_string(reports.size()) + " ops, worst op rel err " + fmt("%.2e", worst) + ", pipeline rel err " +
             fmt("%.2e over ", pipe.max_rel_error) + std::to_string(pipe.checked.size()) + " params, " +
             fmt("%.1fs", secs) + (failed ? ", failing:" + names : "");
  return o;
}

// ---- 2: rasterizer vs brute force ----
Outcome rasterizer() {
  const auto t0 = Clock::now();
  Skeleton sk;
  sk.joints.push_back(Joint{"root", -1, Vec3::Zero(), Vec3::Constant(-1), Vec3::Constant(1)});
  Rng rng(2);
  int meshes = 0, mismatched = 0;
  for (const auto [count, size] : {std::pair{50, 16}, std::pair{10, 32}}) {
    Camera cam;
    cam.height = cam.width = size;
    cam.scale = size / 2.0;
    for (int t = 0; t < count; ++t) {
      const auto s = oracle::random_scene(rng, 10, 1.0 / size);
      MeshApose m;
      m.vertices = s.pos;
      m.triangles = s.tris;
      m.colors.assign(s.pos.size(), Vec3(1, 1, 1));
      m.vertex_joint.assign(s.pos.size(), 0);
      m.skeleton = sk;
      const auto got = rasterize_udp(pose_mesh(m, Pose::identity(sk)), LandmarkSet{s.lms}, cam);
      mismatched += !(got == oracle::oracle_udp(s.pos, s.tris, s.lms, cam));
      ++meshes;
    }
  }
  const double secs = since(t0);
  return {mismatched == 0 && secs < kRasterBudgetSec,
          std::to_string(meshes) + " meshes, " + std::to_string(mismatched) + " differ, " + fmt("%.1fs", secs)};
}

// ---- 3: landmark consistency across poses ----
Outcome consistency() {
  const auto t0 = Clock::now();
  double worst = 0;
  int compared = 0;
  for (std::uint64_t c = 0; c < 20; ++c) {
    const auto spec = gen_character(5000 + c);
    const auto mesh = build_mesh(spec);
    const auto lms = bake_landmarks(mesh);
    for (std::uint64_t p = 0; p < 3; ++p) {
      const auto st = oracle::pose_consistency(mesh, lms, gen_pose(derive_seed(c, 2 * p), spec),
                                               gen_pose(derive_seed(c, 2 * p + 1), spec), 48, 1);
      worst = std::max(worst, st.max_error);
      compared += st.compared;
    }
  }
  const double secs = since(t0);
  return {compared > 0 && worst <= kConsistencyTol && secs < kConsistencyBudgetSec,
          "20 characters x 3 pose pairs, " + std::to_string(compared) + " vertices compared, max error " +
              fmt("%.2e, %.1fs", worst, secs)};
}

// ---- 4: set invariance ----
Outcome set_invariance() {
  const Model<float> model(ModelConfig{}, 11);
  Rng rng(4);
  std::vector<Tensor<float>> views;
  for (int i = 0; i < 4; ++i) views.push_back(random_image(rng, 32, 32));
  const auto udp = random_image(rng, 32, 32);
  NoGradGuard ng;
  const auto reference = model.renderer_forward(model.encode_sheet(views), udp, 3);
  std::vector<int> order{0, 1, 2, 3};
  double worst = 0;
  int perms = 0;
  do {
    std::vector<Tensor<float>> p;
    for (int i : order) p.push_back(views[i]);
    worst = std::max(worst, max_abs_diff(reference, model.renderer_forward(model.encode_sheet(p), udp, 3)));
    ++perms;
  } while (std::next_permutation(order.begin(), order.end()));
  const std::vector<Tensor<float>> one{views[0]}, two{views[0], views[0]};
  const double dup = max_abs_diff(model.renderer_forward(model.encode_sheet(one), udp, 3),
                                  model.renderer_forward(model.encode_sheet(two), udp, 3));
  return {perms == 24 && worst <= kPermutationTol && dup <= kDuplicateTol,
          std::to_string(perms) + " permutations max abs " + fmt("%.2e, duplicate view %.2e", worst, dup)};
}

// ---- 5-7: training ----
TrainConfig overfit_config(int message_blocks) {
  TrainConfig c;
  c.m = 2;
  c.k = 2;
  c.resolution = 48;
  c.batch_size = 1;
  c.iterations = 3000;
  c.poses_per_character = 8;
  c.random_crop = false;
  c.message_blocks = message_blocks;
  c.model.base_channels = 16;
  c.seed = 48;
  return c;
}

struct TrainedRun {
  std::unique_ptr<Trainer> trainer;
  double tail_photo = 0, tail_udp = 0;  // mean over the last 10% of iterations
  double seconds = 0;
  bool failed = false;
  std::string error;
};

TrainedRun train_overfit(std::shared_ptr<const CharacterPool> pool, int message_blocks) {
  TrainedRun r;
  const TrainConfig cfg = overfit_config(message_blocks);
  r.trainer = std::make_unique<Trainer>(cfg, pool);
  const auto t0 = Clock::now();
  const int tail = cfg.iterations / 10;
  try {
    for (int i = 0; i < cfg.iterations; ++i) {
      const auto m = r.trainer->step();
      if (i >= cfg.iterations - tail) {
        r.tail_photo += m.losses.photo / tail;
        r.tail_udp += m.losses.udp / tail;
      }
      if ((i + 1) % 500 == 0) {
        std::printf("  [message_blocks=%d] iteration %d, %.0fs\n", message_blocks, i + 1, since(t0));
        std::fflush(stdout);
      }
    }
  } catch (const std::exception& e) {
    r.failed = true;
    r.error = e.what();
  }
  r.seconds = since(t0);
  return r;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Fixed uncropped draws from the training poses, shared by every run.
std::vector<TrainingSample> training_probe(const CharacterPool& pool) {
  std::vector<TrainingSample> s;
  SampleOptions opt;
  opt.random_crop = false;
  for (int i = 0; i < 48; ++i) s.push_back(pool.draw(derive_seed(hash_name("probe"), i), 2, 1, opt));
  return s;
}

// ---- 8: loss values ----
Outcome loss_values() {
  const auto bce = loss_mask(Tensor<double>({1, 1, 1, 1}, {0.5}), Tensor<double>({1, 1, 1, 1}, {1.0})).item();
  const Tensor<double> d({1, 4, 2, 2}, std::vector<double>(16, 0.3));
  const std::vector<Tensor<double>> same{d, d, d};
  const double cons = loss_cons<double>(same, d).item();
  const LossValues parts{0.1, 0.2, 0.3, 0.4, 0.5};
  const double full = total_loss(parts, LossWeights{}, true), semi = total_loss(parts, LossWeights{}, false);
  const bool ok = std::abs(bce - std::log(2.0)) <= kBceTol && cons == 0.0 && std::abs(full - 1.215) <= kTotalLossTol &&
                  std::abs(semi - 0.915) <= kTotalLossTol;
  return {ok, fmt("BCE(0.5,1)=%.9f, L_cons(identical)=%g, total=%.15f, semi-supervised=%.15f", bce, cons, full, semi)};
}

// ---- 9: bit-exact I/O and split ----
Outcome io_and_split() {
  const fs::path dir = fs::temp_directory_path() / ("conr_acceptance_io_" + std::to_string(Clock::now().time_since_epoch().count()));
  fs::create_directories(dir);
  const auto spec = gen_character(9);
  const auto mesh = build_mesh(spec);
  const UdpImage udp = render_pose(mesh, bake_landmarks(mesh), gen_pose(3, spec), 32).udp;
  write_udp(udp, dir / "a.udpf");
  write_udp(read_udp(dir / "a.udpf"), dir / "b.udpf");
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  const bool udp_ok = slurp(dir / "a.udpf") == slurp(dir / "b.udpf") && read_udp(dir / "a.udpf") == udp;

  ModelConfig mc;
  mc.base_channels = 8;
  const Model<float> a(mc, 1);
  Model<float> b(mc, 2);
  save_checkpoint(a.params(), (dir / "a.ckpt").string());
  load_checkpoint(b.params(), (dir / "a.ckpt").string());
  save_checkpoint(b.params(), (dir / "b.ckpt").string());
  const bool ckpt_ok = slurp(dir / "a.ckpt") == slurp(dir / "b.ckpt");
  fs::remove_all(dir);

  std::vector<std::uint64_t> seeds;
  for (std::uint64_t i = 0; i < 17; ++i) seeds.push_back(1000 + i);
  const Split split = split_dataset(seeds, 16, 3);
  std::set<std::uint64_t> tr(split.train.begin(), split.train.end());
  bool disjoint = true;
  for (const auto s : split.val) disjoint = disjoint && !tr.count(s);
  const bool split_ok = split.train.size() == 16 && split.val.size() == 1 && disjoint;
  return {udp_ok && ckpt_ok && split_ok, std::string("udpf round trip ") + (udp_ok ? "identical" : "DIFFERS") +
                                             ", checkpoint round trip " + (ckpt_ok ? "identical" : "DIFFERS") +
                                             ", split " + std::to_string(split.train.size()) + ":" +
                                             std::to_string(split.val.size()) + (disjoint ? " disjoint" : " OVERLAP")};
}

// ---- 10: determinism and resume ----
Outcome determinism() {
  const fs::path dir = fs::temp_directory_path() / ("conr_acceptance_resume_" + std::to_string(Clock::now().time_since_epoch().count()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  TrainConfig cfg;
  cfg.m = 2;
  cfg.k = 2;
  cfg.resolution = 32;
  cfg.batch_size = 2;
  cfg.model.base_channels = 4;
  cfg.model.detector_channels = 4;
  cfg.seed = 10;
  auto pool = std::make_shared<CharacterPool>(CharacterPool::from_seeds({1, 2}, 0, 32));
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  auto run = [&](const std::string& name, int iters) {
    Trainer t(cfg, pool);
    t.set_metrics_path((dir / (name + ".tsv")).string());
    t.run(iters);
    return t.model().params().entries()[0].tensor.data()[0];
  };
  run("a", 6);
  run("b", 6);
  {
    Trainer t(cfg, pool);
    t.set_metrics_path((dir / "c.tsv").string());
    t.run(3);
    t.save((dir / "ckpt").string());
  }
  Trainer resumed(cfg, pool);
  resumed.resume((dir / "ckpt").string());
  resumed.set_metrics_path((dir / "c.tsv").string());
  resumed.run(3);
  Trainer straight(cfg, pool);
  straight.run(6);
  bool params_equal = true;
  const auto& pa = resumed.model().params().entries();
  const auto& pb = straight.model().params().entries();
  for (std::size_t i = 0; i < pa.size(); ++i)
    params_equal = params_equal && std::equal(pa[i].tensor.data().begin(), pa[i].tensor.data().end(),
                                              pb[i].tensor.data().begin());
  const bool same_seed = slurp(dir / "a.tsv") == slurp(dir / "b.tsv") && !slurp(dir / "a.tsv").empty();
  const bool resume_ok = slurp(dir / "a.tsv") == slurp(dir / "c.tsv") && params_equal;
  fs::remove_all(dir);
  return {same_seed && resume_ok, std::string("identical-seed metric streams ") + (same_seed ? "equal" : "DIFFER") +
                                      ", resumed run " + (resume_ok ? "matches" : "DIFFERS FROM") +
                                      " the uninterrupted run"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> selected{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::vector<int> known;
  app.add_option("--criteria", selected, "criteria to run, comma separated")->delimiter(',');
  app.add_option("--known-failures", known, "criteria whose failure is documented")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  const std::set<int> want(selected.begin(), selected.end()), tolerated(known.begin(), known.end());

  bool all = true;
  auto report = [&](int n, const Outcome& o) {
    const bool excused = !o.pass && tolerated.count(n);
    std::printf("criterion %d: %s  %s%s\n", n, o.pass ? "PASS" : "FAIL", o.detail.c_str(),
                excused ? " (known failure)" : "");
    std::fflush(stdout);
    all = all && (o.pass || excused);
  };
  const std::vector<std::pair<int, std::function<Outcome()>>> quick = {
      {1, gradients}, {2, rasterizer}, {3, consistency}, {4, set_invariance}};
  for (const auto& [n, f] : quick)
    if (want.count(n)) report(n, f());

  if (want.count(5) || want.count(6) || want.count(7)) {
    auto pool = std::make_shared<CharacterPool>(CharacterPool::from_seeds({1, 2, 3}, 8, 48));
    const auto full = train_overfit(pool, 3);
    if (want.count(5)) {
      Outcome o;
      o.pass = !full.failed && full.tail_photo < kOverfitPhoto && full.tail_udp < kOverfitUdp &&
               full.seconds < kOverfitBudgetSec;
      o.detail = full.failed ? "training failed: " + full.error
                             : fmt("L_photo %.4f, L_udp %.4f (mean of the last 300 of 3000 iterations), %.0fs",
                                   full.tail_photo, full.tail_udp, full.seconds);
      report(5, o);
    }
    if (want.count(6)) {
      Outcome o;
      if (full.failed) {
        o.detail = "training failed";
      } else {
        const auto held = heldout_samples(*pool, 4, 2);
        const auto& model = full.trainer->model();
        const auto& proxy = full.trainer->proxy();
        const double one = median(evaluate(model, held, 1, 3, proxy).photo_per_sample);
        const double two = median(evaluate(model, held, 2, 3, proxy).photo_per_sample);
        o.pass = held.size() >= 8 && two <= one;
        o.detail = std::to_string(held.size()) + " held-out poses, median L_photo n=2 " +
                   fmt("%.5f vs n=1 %.5f", two, one);
      }
      report(6, o);
    }
    if (want.count(7)) {
      const auto probe = training_probe(*pool);
      auto final_photo = [&](const TrainedRun& r, int blocks) {
        return evaluate(r.trainer->model(), probe, 2, blocks, r.trainer->proxy()).photo;
      };
      const auto one = train_overfit(pool, 1);
      const auto zero = train_overfit(pool, 0);
      Outcome o;
      if (full.failed || one.failed || zero.failed) {
        o.detail = "a training run failed";
      } else {
        const double p3 = final_photo(full, 3), p1 = final_photo(one, 1), p0 = final_photo(zero, 0);
        o.pass = p1 < p0 && p3 <= p1 + kMessageParity;
        o.detail = std::to_string(probe.size()) +
                   fmt(" fixed training draws, final L_photo: blocks=0 %.5f, blocks=1 %.5f, blocks=3 %.5f", p0, p1, p3);
      }
      report(7, o);
    }
  }

  const std::vector<std::pair<int, std::function<Outcome()>>> rest = {
      {8, loss_values}, {9, io_and_split}, {10, determinism}};
  for (const auto& [n, f] : rest)
    if (want.count(n)) report(n, f());
  return all ? 0 : 3;
}

#include "conr/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <ostream>

#include "conr/errors.hpp"
#include "conr/ops.hpp"
#include "conr/rng.hpp"

namespace conr {

namespace {

template <typename T>
std::vector<Tensor<T>> to_tensors(const std::vector<RgbaImage>& images) {
  std::vector<Tensor<T>> out;
  out.reserve(images.size());
  for (const auto& img : images) out.push_back(to_tensor<T>(img));
  return out;
}

template <typename T>
Tensor<T> occupancy(const Tensor<T>& udp) {
  return ops::slice_channels(udp, 3, 1);
}

struct LossSwitches {
  bool mask = true, photo = true, perc = true;
};

// Detector on the k augmented targets, renderer on the averaged UDP and the
// sheet, then every enabled loss.
template <typename T>
LossTerms<T> pipeline_losses(const Model<T>& model, const PerceptualProxy<T>& proxy, const TrainingSample& s,
                             int message_blocks, const LossSwitches& on) {
  const auto augmented = to_tensors<T>(s.augmented);
  const auto det = model.detect_averaged(augmented);
  const auto sheet = to_tensors<T>(s.sheet);
  const auto rendered = model.renderer_forward(model.encode_sheet(sheet), det.mean, message_blocks);
  const auto target = to_tensor<T>(s.target);

  LossTerms<T> t;
  if (s.has_udp_gt) {
    const auto gt = to_tensor<T>(s.target_udp);
    t.udp = loss_udp(det.mean, gt).value;
    if (on.mask) t.mask = loss_mask(occupancy(det.mean), occupancy(gt));
  }
  t.cons = loss_cons<T>(det.single, det.mean);
  if (on.photo) t.photo = loss_photo(rendered, target);
  if (on.perc) t.perc = proxy.loss(rendered, target);
  return t;
}

double value_or_zero(const Tensor<float>& t) { return t.defined() ? double(t.item()) : 0.0; }

LossValues values_of(const LossTerms<float>& t) {
  return {value_or_zero(t.udp), value_or_zero(t.mask), value_or_zero(t.perc), value_or_zero(t.photo),
          value_or_zero(t.cons)};
}

void add_into(LossValues& a, const LossValues& b, double scale) {
  a.udp += scale * b.udp;
  a.mask += scale * b.mask;
  a.perc += scale * b.perc;
  a.photo += scale * b.photo;
  a.cons += scale * b.cons;
}

nlohmann::json losses_to_json(const LossValues& l) {
  return {{"udp", l.udp}, {"mask", l.mask}, {"perc", l.perc}, {"photo", l.photo}, {"cons", l.cons}};
}

LossValues losses_from_json(const nlohmann::json& j) {
  return {j.at("udp").get<double>(), j.at("mask").get<double>(), j.at("perc").get<double>(),
          j.at("photo").get<double>(), j.at("cons").get<double>()};
}

}  // namespace

void TrainConfig::validate() const {
  if (m < 1 || k < 1 || n < 1) throw ConfigError("m, k and n must be >= 1");
  if (iterations < 0) throw ConfigError("iterations must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (resolution < 16 || resolution % 16 != 0) throw ConfigError("resolution must be a positive multiple of 16");
  if (message_blocks < 0 || message_blocks > 3) throw ConfigError("message_blocks must be in [0, 3]");
  if (!(unlabeled_fraction >= 0 && unlabeled_fraction <= 1)) throw ConfigError("unlabeled_fraction must be in [0, 1]");
  if (poses_per_character < 0) throw ConfigError("poses_per_character must be >= 0");
  if (poses_per_character > 0 && poses_per_character < m + 1)
    throw ConfigError("poses_per_character must be 0 or at least m + 1 = " + std::to_string(m + 1));
  if (log_every < 1) throw ConfigError("log_every must be >= 1");
  if (divergence_window < 1 || !(divergence_factor > 1)) throw ConfigError("invalid divergence guard settings");
  optim.validate();
  weights.validate();
  model.validate();
}

// ---- data ----

CharacterPool::CharacterPool(std::vector<CharacterSpec> specs, int poses_per_character, int resolution)
    : poses_per_character_(poses_per_character), resolution_(resolution) {
  if (specs.empty()) throw ConfigError("the character pool is empty");
  if (poses_per_character < 0) throw ConfigError("poses_per_character must be >= 0");
  if (resolution < 16) throw ConfigError("resolution must be at least 16");
  for (auto& spec : specs) {
    PoolCharacter c;
    c.mesh = build_mesh(spec);
    c.landmarks = bake_landmarks(c.mesh);
    const std::uint64_t stream = derive_seed(spec.seed, hash_name("pool"));
    for (int i = 0; i < poses_per_character; ++i) {
      c.poses.push_back(gen_pose(derive_seed(stream, i), spec));
      c.renders.push_back(render_pose(c.mesh, c.landmarks, c.poses.back(), resolution));
    }
    c.spec = std::move(spec);
    characters_.push_back(std::move(c));
  }
}

CharacterPool CharacterPool::from_seeds(const std::vector<std::uint64_t>& seeds, int poses_per_character,
                                        int resolution) {
  std::vector<CharacterSpec> specs;
  for (auto s : seeds) specs.push_back(gen_character(s));
  return CharacterPool(std::move(specs), poses_per_character, resolution);
}

TrainingSample CharacterPool::draw(std::uint64_t seed, int m, int k, const SampleOptions& opt) const {
  Rng rng(seed);
  const auto& c = characters_[rng.uniform_int(0, static_cast<int>(characters_.size()) - 1)];
  const std::uint64_t sample_seed = derive_seed(seed, 1);
  if (c.renders.empty()) return make_sample(c.mesh, c.landmarks, c.spec, m, k, sample_seed, resolution_, opt);
  const int count = static_cast<int>(c.renders.size());
  if (count < m + 1) throw ConfigError("character pool has fewer than m + 1 poses per character");
  std::vector<int> idx(count);
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = 0; i <= m; ++i) std::swap(idx[i], idx[rng.uniform_int(i, count - 1)]);
  std::vector<const PoseRender*> sheet;
  for (int i = 0; i < m; ++i) sheet.push_back(&c.renders[idx[i]]);
  return assemble_sample(sheet, c.renders[idx[m]], k, sample_seed, resolution_, opt);
}

TrainingSample CharacterPool::heldout(std::size_t character, int index, int m) const {
  const auto& c = characters_.at(character);
  const std::uint64_t stream = derive_seed(c.spec.seed, hash_name("heldout"));
  std::vector<PoseRender> fresh;
  std::vector<const PoseRender*> sheet;
  for (int i = 0; i < m; ++i) {
    if (i < static_cast<int>(c.renders.size())) {
      sheet.push_back(&c.renders[i]);
    } else {
      fresh.reserve(m);
      fresh.push_back(render_pose(c.mesh, c.landmarks, gen_pose(derive_seed(stream, 100000 + i), c.spec), resolution_));
      sheet.push_back(&fresh.back());
    }
  }
  const auto target = render_pose(c.mesh, c.landmarks, gen_pose(derive_seed(stream, index), c.spec), resolution_);
  SampleOptions opt;
  opt.random_crop = false;
  return assemble_sample(sheet, target, 1, derive_seed(stream, 200000 + index), resolution_, opt);
}

std::vector<TrainingSample> heldout_samples(const CharacterPool& pool, int per_character, int m) {
  std::vector<TrainingSample> out;
  for (int i = 0; i < per_character; ++i)
    for (std::size_t c = 0; c < pool.size(); ++c) out.push_back(pool.heldout(c, i, m));
  return out;
}

// ---- evaluation ----

EvalMetrics evaluate(const Model<float>& model, std::span<const TrainingSample> samples, int n, int message_blocks,
                     const PerceptualProxy<float>& proxy) {
  if (samples.empty()) throw ConfigError("evaluation split is empty");
  if (n < 1) throw ConfigError("evaluation needs n >= 1 views");
  NoGradGuard no_grad;
  EvalMetrics m;
  int labeled = 0;
  for (const auto& s : samples) {
    TrainingSample view = s;
    view.sheet = fill_views(s.sheet, n);
    view.sheet.resize(n);
    view.augmented.resize(1);
    const auto t = pipeline_losses<float>(model, proxy, view, message_blocks, {});
    const auto v = values_of(t);
    m.photo += v.photo;
    m.perc += v.perc;
    m.photo_per_sample.push_back(v.photo);
    if (s.has_udp_gt) {
      m.udp += v.udp;
      m.mask += v.mask;
      ++labeled;
    }
  }
  m.samples = static_cast<int>(samples.size());
  m.photo /= m.samples;
  m.perc /= m.samples;
  if (labeled > 0) {
    m.udp /= labeled;
    m.mask /= labeled;
  }
  return m;
}

// ---- training ----

Trainer::Trainer(const TrainConfig& cfg, std::shared_ptr<const CharacterPool> pool)
    : cfg_(cfg), pool_(std::move(pool)), model_((cfg.validate(), cfg.model), derive_seed(cfg.seed, hash_name("model"))) {
  if (!pool_ || pool_->size() == 0) throw ConfigError("training needs at least one character");
  if (pool_->resolution() != cfg_.resolution)
    throw ConfigError("character pool resolution " + std::to_string(pool_->resolution()) +
                      " differs from the training resolution " + std::to_string(cfg_.resolution));
  if (pool_->poses_per_character() > 0 && pool_->poses_per_character() < cfg_.m + 1)
    throw ConfigError("character pool has fewer than m + 1 poses per character");
}

TrainingSample Trainer::sample_for(int it, int b) const {
  const std::uint64_t seed = derive_seed(derive_seed(cfg_.seed, static_cast<std::uint64_t>(it)), b);
  SampleOptions opt;
  opt.random_crop = cfg_.random_crop;
  opt.has_udp_gt = !(Rng(derive_seed(seed, hash_name("unlabeled"))).uniform() < cfg_.unlabeled_fraction);
  return pool_->draw(seed, cfg_.m, cfg_.k, opt);
}

LossTerms<float> Trainer::forward(const TrainingSample& s) const {
  return pipeline_losses<float>(model_, proxy_, s, cfg_.effective_message_blocks(),
                                {cfg_.use_mask, cfg_.use_photo, cfg_.use_perc});
}

LossValues Trainer::sample_losses(const TrainingSample& s) const {
  NoGradGuard no_grad;
  return values_of(forward(s));
}

StepMetrics Trainer::step() {
  const auto start = std::chrono::steady_clock::now();
  const int it = iteration_ + 1;
  auto& params = model_.params();
  params.zero_grad();
  StepMetrics out;
  out.iteration = it;
  const double inv_batch = 1.0 / cfg_.batch_size;
  for (int b = 0; b < cfg_.batch_size; ++b) {
    const auto sample = sample_for(it, b);
    const auto terms = forward(sample);
    auto total = total_loss(terms, cfg_.weights, sample.has_udp_gt);
    add_into(out.losses, values_of(terms), inv_batch);
    out.total += inv_batch * double(total.item());
    if (total.requires_grad()) ops::scale(total, float(inv_batch)).backward();
  }
  adamw_step(params, opt_, cfg_.optim);
  iteration_ = it;
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  if (!initial_total_) initial_total_ = out.total;
  over_count_ = out.total > cfg_.divergence_factor * *initial_total_ ? over_count_ + 1 : 0;
  log(out);
  if (over_count_ >= cfg_.divergence_window) {
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "training diverged at iteration %d: total loss %.6g stayed above %.3g x the initial %.6g for %d "
                  "consecutive steps",
                  it, out.total, cfg_.divergence_factor, *initial_total_, over_count_);
    throw DivergenceError(buf);
  }
  return out;
}

std::vector<StepMetrics> Trainer::run(int iterations) {
  std::vector<StepMetrics> out;
  out.reserve(iterations);
  for (int i = 0; i < iterations; ++i) out.push_back(step());
  return out;
}

std::string format_metrics_line(int iteration, const LossValues& l, double total) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%d\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g", iteration, l.udp, l.mask, l.photo, l.perc,
                l.cons, total);
  return buf;
}

void Trainer::log(const StepMetrics& m) {
  add_into(acc_.sum, m.losses, 1.0);
  acc_.total += m.total;
  ++acc_.count;
  if (acc_.count < cfg_.log_every) return;
  LossValues mean;
  add_into(mean, acc_.sum, 1.0 / acc_.count);
  const double total = acc_.total / acc_.count;
  acc_ = {};
  if (metrics_path_.empty()) return;
  std::ofstream out(metrics_path_, std::ios::app);
  if (!out) throw Error("cannot append to " + metrics_path_);
  out << format_metrics_line(m.iteration, mean, total) << '\n';
}

void Trainer::save(const std::string& dir) const {
  std::filesystem::create_directories(dir);
  const std::filesystem::path d(dir);
  save_checkpoint(model_.params(), (d / "model.ckpt").string());

  std::vector<TensorRecord> moments;
  const auto& entries = model_.params().entries();
  for (std::size_t i = 0; i < opt_.first_moment.size(); ++i) {
    const auto& e = entries[i];
    const auto& m1 = opt_.first_moment[i];
    const auto& m2 = opt_.second_moment[i];
    moments.push_back({"m/" + e.name, e.tensor.shape(), std::vector<float>(m1.begin(), m1.end())});
    moments.push_back({"v/" + e.name, e.tensor.shape(), std::vector<float>(m2.begin(), m2.end())});
  }
  write_records(moments, (d / "optimizer.ckpt").string());

  nlohmann::json state = {{"iteration", iteration_},
                          {"optimizer_step", opt_.step},
                          {"over_count", over_count_},
                          {"acc_losses", losses_to_json(acc_.sum)},
                          {"acc_total", acc_.total},
                          {"acc_count", acc_.count}};
  state["initial_total"] = initial_total_ ? nlohmann::json(*initial_total_) : nlohmann::json(nullptr);
  std::ofstream(d / "trainer.json") << state.dump(2) << '\n';
}

void Trainer::resume(const std::string& dir) {
  const std::filesystem::path d(dir);
  load_checkpoint(model_.params(), (d / "model.ckpt").string());

  const auto moments = read_records((d / "optimizer.ckpt").string());
  const auto& entries = model_.params().entries();
  OptState<float> opt;
  if (!moments.empty()) {
    if (moments.size() != 2 * entries.size())
      throw ParseError(ParseError::Kind::kMismatch, 0, "optimizer state does not match the model");
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto& m1 = moments[2 * i];
      const auto& m2 = moments[2 * i + 1];
      if (m1.name != "m/" + entries[i].name || m2.name != "v/" + entries[i].name || m1.shape != entries[i].tensor.shape())
        throw ParseError(ParseError::Kind::kMismatch, 0, "optimizer state mismatch at '" + entries[i].name + "'");
      opt.first_moment.emplace_back(m1.data.begin(), m1.data.end());
      opt.second_moment.emplace_back(m2.data.begin(), m2.data.end());
    }
  }

  std::ifstream in(d / "trainer.json");
  if (!in) throw Error("cannot open " + (d / "trainer.json").string());
  nlohmann::json state;
  try {
    state = nlohmann::json::parse(in);
    opt.step = state.at("optimizer_step").get<std::uint64_t>();
    iteration_ = state.at("iteration").get<int>();
    over_count_ = state.at("over_count").get<int>();
    acc_.sum = losses_from_json(state.at("acc_losses"));
    acc_.total = state.at("acc_total").get<double>();
    acc_.count = state.at("acc_count").get<int>();
    const auto& init = state.at("initial_total");
    initial_total_ = init.is_null() ? std::nullopt : std::optional<double>(init.get<double>());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(ParseError::Kind::kSchema, 0, std::string("trainer.json: ") + e.what());
  }
  opt_ = std::move(opt);
}

// ---- ablation ----

std::vector<AblationSpec> default_ablation_grid(const TrainConfig& base) {
  std::vector<AblationSpec> grid;
  auto add = [&](std::string label, auto&& edit) {
    TrainConfig c = base;
    edit(c);
    grid.push_back({std::move(label), c});
  };
  for (int m : {1, 4})
    for (int n : {1, 4})
      add("views m=" + std::to_string(m) + " n=" + std::to_string(n), [&](TrainConfig& c) {
        c.m = m;
        c.n = n;
        if (c.poses_per_character > 0) c.poses_per_character = std::max(c.poses_per_character, m + 1);
      });
  for (int b : {0, 1, 3})
    add("message_blocks=" + std::to_string(b), [&](TrainConfig& c) { c.message_blocks = b; });
  add("no grid-sample", [](TrainConfig& c) { c.model.grid_sample = false; });
  add("no CINN (U-Net only)", [](TrainConfig& c) { c.cinn = false; });
  add("no L_mask", [](TrainConfig& c) { c.use_mask = false; });
  add("no L_photo", [](TrainConfig& c) { c.use_photo = false; });
  add("no L_perc", [](TrainConfig& c) { c.use_perc = false; });
  return grid;
}

std::vector<AblationRow> ablation_run(const std::vector<AblationSpec>& grid, std::shared_ptr<const CharacterPool> pool,
                                      std::span<const TrainingSample> validation) {
  std::vector<AblationRow> rows;
  for (const auto& spec : grid) {
    AblationRow row;
    row.label = spec.label;
    row.cfg = spec.cfg;
    std::shared_ptr<const CharacterPool> p = pool;
    if (pool->poses_per_character() > 0 && pool->poses_per_character() < spec.cfg.m + 1) {
      std::vector<CharacterSpec> specs;
      for (std::size_t i = 0; i < pool->size(); ++i) specs.push_back(pool->character(i).spec);
      p = std::make_shared<CharacterPool>(std::move(specs), spec.cfg.m + 1, pool->resolution());
    }
    Trainer trainer(spec.cfg, p);
    std::vector<double> photo;
    try {
      for (int i = 0; i < spec.cfg.iterations; ++i) photo.push_back(trainer.step().losses.photo);
      const std::size_t tail = std::max<std::size_t>(1, photo.size() / 10);
      if (!photo.empty())
        row.train_photo = std::accumulate(photo.end() - static_cast<std::ptrdiff_t>(tail), photo.end(), 0.0) / tail;
      if (!validation.empty())
        row.eval = evaluate(trainer.model(), validation, spec.cfg.n, spec.cfg.effective_message_blocks(), trainer.proxy());
    } catch (const DivergenceError& e) {
      row.diverged = true;
      row.note = e.what();
    } catch (const NumericError& e) {
      row.diverged = true;
      row.note = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_ablation_report(const std::vector<AblationRow>& rows, std::ostream& out) {
  out << "config\tm\tn\tmessage_blocks\tgrid_sample\tCINN\tL_mask_on\tL_photo_on\tL_perc_on\tstatus\ttrain_L_photo\t"
         "L_photo\tL_perc\tL_udp\tL_mask\n";
  for (const auto& r : rows) {
    const auto& c = r.cfg;
    out << r.label << '\t' << c.m << '\t' << c.n << '\t' << c.effective_message_blocks() << '\t'
        << (c.model.grid_sample ? "yes" : "no") << '\t' << (c.cinn ? "yes" : "no") << '\t' << (c.use_mask ? "yes" : "no")
        << '\t' << (c.use_photo ? "yes" : "no") << '\t' << (c.use_perc ? "yes" : "no") << '\t';
    if (r.diverged) {
      out << "Divergence\t-\t-\t-\t-\t-\n";
      continue;
    }
    char buf[256];
    std::snprintf(buf, sizeof buf, "ok\t%.5f\t%.5f\t%.5f\t%.5f\t%.5f\n", r.train_photo, r.eval.photo, r.eval.perc,
                  r.eval.udp, r.eval.mask);
    out << buf;
  }
}

// ---- end-to-end gradient check ----

PipelineGradCheck pipeline_gradcheck(std::uint64_t seed, int parameters, int resolution, int base_channels) {
  ModelConfig mc;
  mc.base_channels = base_channels;
  mc.detector_channels = std::max(1, base_channels / 2);
  mc.renderer_res_units = 1;
  mc.detector_res_units = 1;
  Model<double> model(mc, derive_seed(seed, 1));
  const PerceptualProxy<double> proxy;
  const auto pool = CharacterPool::from_seeds({derive_seed(seed, 2)}, 0, resolution);
  const auto sample = pool.draw(derive_seed(seed, 3), 2, 2, {});
  const LossWeights weights;
  auto loss = [&]() { return total_loss(pipeline_losses<double>(model, proxy, sample, 3, {}), weights, true); };

  auto& params = model.params();
  Rng rng(derive_seed(seed, 4));
  // Zero biases put transparent-pixel activations exactly on the leaky-ReLU
  // kink, where finite differences are meaningless. Move off it.
  for (auto& e : params.entries())
    if (e.tensor.rank() == 1)
      for (auto& v : e.tensor.mutable_data()) v = rng.uniform(-0.1, 0.1);
  loss().backward();

  PipelineGradCheck out;
  const double h = 1e-6;
  for (int p = 0; p < parameters; ++p) {
    auto& e = params.entries()[rng.uniform_int(0, static_cast<int>(params.size()) - 1)];
    const int idx = rng.uniform_int(0, static_cast<int>(e.tensor.size()) - 1);
    const double analytic = e.tensor.has_grad() ? e.tensor.grad()[idx] : 0.0;
    auto data = e.tensor.mutable_data();
    const double saved = data[idx];
    double plus, minus;
    {
      NoGradGuard no_grad;
      data[idx] = saved + h;
      plus = loss().item();
      data[idx] = saved - h;
      minus = loss().item();
    }
    data[idx] = saved;
    const double numeric = (plus - minus) / (2 * h);
    const double err = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    out.max_rel_error = std::max(out.max_rel_error, err);
    out.checked.push_back(e.name + "[" + std::to_string(idx) + "]");
    out.analytic.push_back(analytic);
    out.numeric.push_back(numeric);
    out.rel_error.push_back(err);
  }
  return out;
}

}  // namespace conr

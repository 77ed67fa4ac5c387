#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "conr/adamw.hpp"
#include "conr/losses.hpp"
#include "conr/network.hpp"
#include "conr/synthdata.hpp"

namespace conr {

struct TrainConfig {
  int m = 4;  // sheet views per training sample
  int k = 4;  // detector augmentations per training sample
  int n = 1;  // views at inference / evaluation
  int iterations = 1000;
  int batch_size = 4;
  int resolution = 64;
  int message_blocks = 3;
  bool cinn = true;  // false: views never exchange messages before the head
  bool use_mask = true;
  bool use_photo = true;
  bool use_perc = true;
  bool random_crop = true;
  double unlabeled_fraction = 0.0;
  int poses_per_character = 0;  // 0: fresh random poses for every sample
  int log_every = 1;
  int divergence_window = 100;
  double divergence_factor = 10.0;
  std::uint64_t seed = 0;
  AdamWConfig optim;
  LossWeights weights;
  ModelConfig model;

  void validate() const;
  /// message_blocks actually used by the renderer (0 when CINN is off).
  int effective_message_blocks() const { return cinn ? message_blocks : 0; }
};

struct PoolCharacter {
  CharacterSpec spec;
  MeshApose mesh;
  LandmarkSet landmarks;
  std::vector<Pose> poses;  // fixed training poses, may be empty
  std::vector<PoseRender> renders;
};

/// Training characters with prebuilt meshes and, optionally, a fixed set of
/// pre-rendered poses per character.
class CharacterPool {
 public:
  CharacterPool(std::vector<CharacterSpec> specs, int poses_per_character, int resolution);
  static CharacterPool from_seeds(const std::vector<std::uint64_t>& seeds, int poses_per_character, int resolution);

  std::size_t size() const { return characters_.size(); }
  int resolution() const { return resolution_; }
  int poses_per_character() const { return poses_per_character_; }
  const PoolCharacter& character(std::size_t i) const { return characters_.at(i); }

  /// One random sample: a random character, m sheet poses and a distinct
  /// target pose (from the fixed set when there is one).
  TrainingSample draw(std::uint64_t seed, int m, int k, const SampleOptions& opt) const;

  /// Uncropped sample whose target pose is outside the fixed training set.
  /// The sheet holds the first m fixed poses (or seeded random ones).
  TrainingSample heldout(std::size_t character, int index, int m) const;

 private:
  std::vector<PoolCharacter> characters_;
  int poses_per_character_;
  int resolution_;
};

/// Held-out samples for every character, `per_character` each.
std::vector<TrainingSample> heldout_samples(const CharacterPool& pool, int per_character, int m);

struct StepMetrics {
  int iteration = 0;  // 1-based
  LossValues losses;  // batch means
  double total = 0;
  double seconds = 0;
};

struct EvalMetrics {
  double photo = 0, perc = 0, udp = 0, mask = 0;
  int samples = 0;
  std::vector<double> photo_per_sample;
};

/// Renders every sample's target from its first n sheet views (cycled when
/// there are fewer) and a single detection of its first augmented image.
EvalMetrics evaluate(const Model<float>& model, std::span<const TrainingSample> samples, int n, int message_blocks,
                     const PerceptualProxy<float>& proxy);

/// Joint detector + renderer training with AdamW.
class Trainer {
 public:
  Trainer(const TrainConfig& cfg, std::shared_ptr<const CharacterPool> pool);

  const TrainConfig& config() const { return cfg_; }
  Model<float>& model() { return model_; }
  const Model<float>& model() const { return model_; }
  const PerceptualProxy<float>& proxy() const { return proxy_; }
  int iteration() const { return iteration_; }

  /// Sample b of the batch for 1-based iteration `it`; depends only on the
  /// seed, so a resumed run sees the same data.
  TrainingSample sample_for(int it, int b) const;

  /// Losses of the current model on one sample, no gradient.
  LossValues sample_losses(const TrainingSample& s) const;

  /// One optimizer step. Throws DivergenceError when the guard trips and
  /// NumericError on non-finite values.
  StepMetrics step();
  std::vector<StepMetrics> run(int iterations);

  /// Appends one `iter l_udp l_mask l_photo l_perc l_cons total` line per
  /// log interval.
  void set_metrics_path(std::string path) { metrics_path_ = std::move(path); }

  /// model.ckpt, optimizer.ckpt and trainer.json inside `dir`.
  void save(const std::string& dir) const;
  void resume(const std::string& dir);

 private:
  struct Accumulator {
    LossValues sum;
    double total = 0;
    int count = 0;
  };

  LossTerms<float> forward(const TrainingSample& s) const;
  void log(const StepMetrics& m);

  TrainConfig cfg_;
  std::shared_ptr<const CharacterPool> pool_;
  Model<float> model_;
  PerceptualProxy<float> proxy_;
  OptState<float> opt_;
  int iteration_ = 0;
  std::optional<double> initial_total_;
  int over_count_ = 0;
  Accumulator acc_;
  std::string metrics_path_;
};

std::string format_metrics_line(int iteration, const LossValues& l, double total);

struct AblationSpec {
  std::string label;
  TrainConfig cfg;
};

struct AblationRow {
  std::string label;
  TrainConfig cfg;
  bool diverged = false;
  std::string note;          // divergence diagnostic
  double train_photo = 0;    // mean L_photo over the last 10% of iterations
  EvalMetrics eval;          // on the validation samples with cfg.n views
};

/// Rows for the view-count grid {m,n} in {1,4}^2, message blocks {0,1,3},
/// the warp and CINN toggles and the mask/photo/perc loss toggles, all
/// derived from `base`.
std::vector<AblationSpec> default_ablation_grid(const TrainConfig& base);

/// Trains every configuration from scratch. A diverging run becomes a row
/// marked "Divergence".
std::vector<AblationRow> ablation_run(const std::vector<AblationSpec>& grid, std::shared_ptr<const CharacterPool> pool,
                                      std::span<const TrainingSample> validation);

/// Tab-separated table with a header row.
void write_ablation_report(const std::vector<AblationRow>& rows, std::ostream& out);

struct PipelineGradCheck {
  double max_rel_error = 0;
  std::vector<std::string> checked;  // "name[index]"
  std::vector<double> analytic, numeric, rel_error;
};

/// Finite-difference check of the full training loss (double precision)
/// against backprop for `parameters` randomly chosen scalar parameters.
PipelineGradCheck pipeline_gradcheck(std::uint64_t seed, int parameters = 20, int resolution = 16,
                                     int base_channels = 4);

}  // namespace conr

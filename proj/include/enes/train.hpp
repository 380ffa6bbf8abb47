#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "enes/field.hpp"
#include "enes/model.hpp"

namespace enes {

enum class LossKind { Abs, LogCosh };
enum class FitMode { AutodecodeSteps, MetaInner };

struct TrainConfig {
  int batch_fields = 8;  // B
  int pairs = 256;       // N_sr per field and step
  int epochs = 500;
  double lr_model = 1e-4;
  double lr_context = 1e-2;
  double lr_pose = 1e-3;
  // Cosine decay of the model rate down to lr_min over the run.
  bool cosine = false;
  double lr_min = 1e-6;
  LossKind loss = LossKind::Abs;
  std::uint64_t seed = 0;
  int threads = 1;

  // Validation: hold out this fraction when the dataset has at least
  // `min_fields_for_holdout` fields, else validate on the training fields.
  double holdout_fraction = 0.2;
  int min_fields_for_holdout = 5;
  int validate_every = 10;
  int validation_pairs = 512;
  int holdout_fit_steps = 20;

  // Meta-learning.
  int inner_steps = 5;  // S
  double inner_lr_context = 30.0;
  double inner_lr_pose = 2.0;
  double lr_inner = 1e-3;  // outer rate for log inner rates

  // Latent fitting with frozen parameters (autodecode_steps mode).
  int fit_steps = 100;

  // Optional per-epoch CSV log (epoch, train_loss, val_loss, wall_time).
  std::string log_path;

  void validate() const;
};

// ---- pairs and losses -------------------------------------------------------------------

struct PairSample {
  PairBatch pairs;
  Eigen::VectorXd v_s, v_r;
  int size() const { return pairs.size(); }
};

// Uniform i.i.d. pairs over the extent (normalized Gaussians on the sphere),
// resampled until the semimetric exceeds its epsilon.
PairSample sample_pairs(const Manifold& m, const VelocityField& v, int n, std::uint64_t seed);

double penalty(double residual, LossKind kind);

// Loss for an arbitrary travel-time closure returning (T, grad_s, grad_r);
// used for oracle solutions.
using TravelTimeClosure = std::function<TimeAndGradients(const Point& s, const Point& r)>;
double eikonal_loss(const PairSample& batch, const Manifold& m, const TravelTimeClosure& fn, LossKind kind);

struct LossAndGrads {
  double loss = 0.0;
  ModelParameters params;  // valid when requested
  Mat poses, contexts;     // latent gradients when requested
};

// Mean over pairs of penalty(v(s)^2 |grad_s T|^2 - 1) + penalty(v(r)^2 |grad_r T|^2 - 1).
double eikonal_loss(const PairSample& batch, const PoseContextCloud& z, const ModelParameters& p, LossKind kind);
LossAndGrads eikonal_loss_and_grads(const PairSample& batch, const PoseContextCloud& z, const ModelParameters& p,
                                    LossKind kind, bool param_grads, bool latent_grads);

// ---- optimizers -------------------------------------------------------------------------

struct AdamState {
  Mat m, v;
  long step = 0;
};

// One Adam update (beta 0.9/0.999, eps 1e-8, bias-corrected).
void adam_update(Mat& param, const Mat& grad, AdamState& state, double lr);

double cosine_lr(double lr_max, double lr_min, int step, int total_steps);

// ---- training ---------------------------------------------------------------------------

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;  // NaN when not validated this epoch
  double wall_time = 0.0;
};

struct TrainResult {
  ModelParameters params;
  std::vector<PoseContextCloud> latents;  // one per input field, in order
  std::vector<EpochRecord> history;
  std::vector<int> holdout;  // indices of held-out fields
  double best_val_loss = 0.0;
  int best_epoch = 0;
  Mat inner_log_lr;  // meta-learning only: 1 x 2 (context, pose)
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Joint optimization of parameters and one latent cloud per field.
TrainResult autodecode(const std::vector<VelocityField>& fields, const ModelConfig& model, const TrainConfig& config,
                       const EpochCallback& on_epoch = {});
// Same, continuing from given parameters.
TrainResult autodecode_from(const std::vector<VelocityField>& fields, const ModelParameters& start,
                            const TrainConfig& config, const EpochCallback& on_epoch = {});

// First-order meta-learning: S inner SGD steps on fresh latents with learned
// per-group rates, outer update of parameters and rates at the adapted
// latents. `warm_start` may supply pretrained parameters.
TrainResult meta_train(const std::vector<VelocityField>& fields, const ModelConfig& model, const TrainConfig& config,
                       const ModelParameters* warm_start = nullptr, const EpochCallback& on_epoch = {});

// Shared initial cloud used by meta-learning and fitting.
PoseContextCloud initial_latents(const ModelConfig& model, std::uint64_t seed);

struct FitResult {
  PoseContextCloud latents;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double seconds = 0.0;
};

// Fits a latent cloud to a new field with frozen parameters. Losses are
// measured on a fixed evaluation batch of `config.validation_pairs` pairs.
// MetaInner uses `inner_log_lr` (1 x 2); pass an empty matrix for the
// configured initial rates.
FitResult fit_latents(const ModelParameters& params, const VelocityField& field, FitMode mode,
                      const TrainConfig& config, const Mat& inner_log_lr = Mat());

// Runs fn(i) for i in [0, n) on up to `threads` threads.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

}  // namespace enes

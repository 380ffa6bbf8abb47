#include "enes/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <numbers>
#include <numeric>
#include <thread>

#include "enes/error.hpp"
#include "enes/random.hpp"

namespace enes {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<Mat*> tensors(ModelParameters& p) {
  std::vector<Mat*> out;
  p.for_each([&](const std::string&, Mat& m) { out.push_back(&m); });
  return out;
}

// |P g|^2 per pair for the tangent block starting at `first`, where P is the
// tangent projection at the given points (identity on Euclidean domains).
ad::Var projected_grad_sq(ad::Tape& t, ad::Var time, const Mat& points, int first, bool sphere) {
  const int dim = static_cast<int>(points.cols());
  return t.push(
      {time},
      [=](ad::Tape& tp, ad::DualTensor& out) {
        const ad::DualTensor& tv = tp.value(time);
        out = ad::DualTensor(tv.items, 1, 1);
        for (int m = 0; m < tv.items; ++m) {
          Eigen::Vector3d g = Eigen::Vector3d::Zero();
          for (int c = 0; c < dim; ++c) g[c] = tv.data((first + c) * tv.items + m, 0);
          double n = g.head(dim).squaredNorm();
          if (sphere) {
            const double dot = points.row(m).dot(g.head(dim).transpose());
            n -= dot * dot;
          }
          out.data(m, 0) = n;
        }
      },
      [=](ad::Tape& tp, const ad::DualTensor&, const Mat& grad) {
        if (!tp.requires_grad(time)) return;
        const ad::DualTensor& tv = tp.value(time);
        Mat& gt = tp.grad_acc(time);
        for (int m = 0; m < tv.items; ++m) {
          Eigen::VectorXd g(dim);
          for (int c = 0; c < dim; ++c) g[c] = tv.data((first + c) * tv.items + m, 0);
          if (sphere) {
            const Eigen::VectorXd p = points.row(m).transpose();
            g -= p.dot(g) * p;
          }
          for (int c = 0; c < dim; ++c) gt((first + c) * tv.items + m, 0) += 2.0 * g[c] * grad(m, 0);
        }
      });
}

std::vector<int> holdout_indices(int n, const TrainConfig& c) {
  if (n < c.min_fields_for_holdout || c.holdout_fraction <= 0.0) return {};
  const int k = std::clamp(static_cast<int>(std::lround(n * c.holdout_fraction)), 1, n - 1);
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = make_rng(c.seed, "holdout");
  for (int i = n - 1; i > 0; --i) std::swap(idx[i], idx[rng() % static_cast<std::uint64_t>(i + 1)]);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

void check_fields(const std::vector<VelocityField>& fields, const ModelConfig& model) {
  if (fields.empty()) throw ContractViolation("training needs at least one field");
  for (const VelocityField& f : fields) {
    if (f.domain().kind != model.domain.kind) throw ContractViolation("field domain does not match the model");
  }
}

void check_finite(double loss, const std::string& where) {
  if (!std::isfinite(loss)) throw NumericFailure("non-finite loss " + std::to_string(loss) + " at " + where);
}

class CsvLog {
 public:
  explicit CsvLog(const std::string& path) {
    if (path.empty()) return;
    out_.open(path);
    if (!out_) throw Error("cannot write " + path);
    out_ << "epoch,train_loss,val_loss,wall_time\n";
  }
  void write(const EpochRecord& r) {
    if (!out_.is_open()) return;
    out_ << r.epoch << ',' << r.train_loss << ',';
    if (std::isfinite(r.val_loss)) out_ << r.val_loss;
    out_ << ',' << r.wall_time << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};


std::uint64_t pair_seed(std::uint64_t seed, std::string_view stream, long step, int field) {
  return derive_seed(derive_seed(seed, stream, static_cast<std::uint64_t>(step)), "field",
                     static_cast<std::uint64_t>(field));
}

// Per-field Adam states for a latent cloud.
struct LatentOpt {
  AdamState poses, contexts;
};

void latent_adam(PoseContextCloud& z, const LossAndGrads& g, LatentOpt& s, const TrainConfig& c) {
  adam_update(z.poses, g.poses, s.poses, c.lr_pose);
  adam_update(z.contexts, g.contexts, s.contexts, c.lr_context);
}

double mean_loss(const std::vector<int>& idx, const std::vector<PairSample>& batches,
                 const std::vector<PoseContextCloud>& z, const ModelParameters& p, LossKind kind, int threads) {
  std::vector<double> losses(idx.size());
  parallel_for(static_cast<int>(idx.size()), threads,
               [&](int k) { losses[k] = eikonal_loss(batches[idx[k]], z[idx[k]], p, kind); });
  double sum = 0.0;
  for (double l : losses) sum += l;
  return sum / static_cast<double>(idx.size());
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_fields < 1 || pairs < 1 || epochs < 0) throw ContractViolation("batch sizes must be positive");
  for (double lr : {lr_model, lr_context, lr_pose, lr_min, inner_lr_context, inner_lr_pose, lr_inner}) {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ContractViolation("learning rates must be positive");
  }
  if (inner_steps < 1) throw ContractViolation("meta-learning needs at least one inner step");
  if (validate_every < 1 || validation_pairs < 1 || fit_steps < 0 || holdout_fit_steps < 0) {
    throw ContractViolation("invalid validation settings");
  }
  if (threads < 1) throw ContractViolation("thread count must be positive");
}

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (int w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int i = w; i < n; i += threads) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// ---- pairs and losses -------------------------------------------------------------------

PairSample sample_pairs(const Manifold& m, const VelocityField& v, int n, std::uint64_t seed) {
  if (n < 1) throw ContractViolation("pair count must be positive");
  Rng rng = make_rng(seed, "pairs");
  const int dim = m.dim();
  const Semimetric metric = Semimetric::for_manifold(m);
  auto draw = [&]() {
    Point p(dim);
    if (m.is_sphere()) {
      do {
        // Box-Muller from raw-bit uniforms.
        for (int a = 0; a < 3; ++a) {
          const double u1 = 1.0 - uniform(rng, 0.0, 1.0), u2 = uniform(rng, 0.0, 1.0);
          p[a] = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
        }
      } while (p.norm() < 1e-12);
      return Point(p.normalized());
    }
    for (int a = 0; a < dim; ++a) p[a] = uniform(rng, m.lo[a], m.hi[a]);
    return p;
  };
  PairSample b;
  b.pairs.s.resize(n, dim);
  b.pairs.r.resize(n, dim);
  b.v_s.resize(n);
  b.v_r.resize(n);
  for (int i = 0; i < n; ++i) {
    Point s, r;
    do {
      s = draw();
      r = draw();
    } while (semimetric_value(metric, s, r) <= metric.epsilon);
    b.pairs.s.row(i) = s.transpose();
    b.pairs.r.row(i) = r.transpose();
    b.v_s[i] = v.sample(s);
    b.v_r[i] = v.sample(r);
  }
  return b;
}

double penalty(double residual, LossKind kind) {
  if (kind == LossKind::Abs) return std::abs(residual);
  const double a = std::abs(residual);
  return a + std::log1p(std::exp(-2.0 * a)) - std::numbers::ln2;
}

double eikonal_loss(const PairSample& batch, const Manifold& m, const TravelTimeClosure& fn, LossKind kind) {
  double sum = 0.0;
  for (int i = 0; i < batch.size(); ++i) {
    const Point s = batch.pairs.s.row(i).transpose(), r = batch.pairs.r.row(i).transpose();
    const TimeAndGradients tg = fn(s, r);
    const double ns = std::pow(metric_norm(m, s, tg.grad_s), 2);
    const double nr = std::pow(metric_norm(m, r, tg.grad_r), 2);
    sum += penalty(batch.v_s[i] * batch.v_s[i] * ns - 1.0, kind) + penalty(batch.v_r[i] * batch.v_r[i] * nr - 1.0, kind);
  }
  return sum / batch.size();
}

LossAndGrads eikonal_loss_and_grads(const PairSample& batch, const PoseContextCloud& z, const ModelParameters& p,
                                    LossKind kind, bool param_grads, bool latent_grads) {
  const ModelConfig& config = p.config;
  const int dim = config.space_dim();
  const bool sphere = config.domain.is_sphere();
  const int n = batch.size();
  ad::Tape t(2 * dim);
  const ParamVars pv = bind_parameters(t, p, param_grads);
  const LatentVars lv = bind_latents(t, z, latent_grads);
  const TravelTimeGraph g = build_travel_time(t, config, pv, lv, z.kind, batch.pairs);

  auto residual = [&](const Mat& points, int first, const Eigen::VectorXd& v) {
    const ad::Var sq = projected_grad_sq(t, g.time, points, first, sphere);
    const Mat v2 = v.array().square().matrix();
    const ad::Var r = ad::add_const(t, ad::mul(t, sq, t.constant(v2)), -1.0);
    return kind == LossKind::Abs ? ad::abs(t, r) : ad::logcosh(t, r);
  };
  const ad::Var ps = residual(batch.pairs.s, 1, batch.v_s);
  const ad::Var pr = residual(batch.pairs.r, 1 + dim, batch.v_r);
  const ad::Var loss = ad::scale(t, ad::sum(t, ad::add(t, ps, pr)), 1.0 / n);

  LossAndGrads out;
  out.loss = t.value(loss).data(0, 0);
  if (param_grads || latent_grads) {
    t.backward(loss);
    if (param_grads) out.params = collect_gradients(t, pv, p);
    if (latent_grads) {
      out.poses = t.grad(lv.poses);
      out.contexts = t.grad(lv.contexts);
    }
  }
  return out;
}

double eikonal_loss(const PairSample& batch, const PoseContextCloud& z, const ModelParameters& p, LossKind kind) {
  return eikonal_loss_and_grads(batch, z, p, kind, false, false).loss;
}

// ---- optimizers -------------------------------------------------------------------------

void adam_update(Mat& param, const Mat& grad, AdamState& s, double lr) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  if (s.m.size() == 0) {
    s.m = Mat::Zero(param.rows(), param.cols());
    s.v = Mat::Zero(param.rows(), param.cols());
  }
  ++s.step;
  s.m = b1 * s.m + (1 - b1) * grad;
  s.v = b2 * s.v + (1 - b2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(s.step));
  param.array() -= lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + eps);
}

double cosine_lr(double lr_max, double lr_min, int step, int total_steps) {
  if (total_steps <= 1) return lr_max;
  const double frac = std::clamp(static_cast<double>(step) / (total_steps - 1), 0.0, 1.0);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * frac));
}

// ---- training ---------------------------------------------------------------------------

PoseContextCloud initial_latents(const ModelConfig& model, std::uint64_t seed) {
  return init_latents(model.domain, model.group, model.latents, model.context_dim, derive_seed(seed, "z0"));
}

TrainResult autodecode(const std::vector<VelocityField>& fields, const ModelConfig& model, const TrainConfig& config,
                       const EpochCallback& on_epoch) {
  return autodecode_from(fields, init_parameters(model, derive_seed(config.seed, "params")), config, on_epoch);
}

TrainResult autodecode_from(const std::vector<VelocityField>& fields, const ModelParameters& start,
                            const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  check_fields(fields, start.config);
  const auto t0 = Clock::now();
  const int n = static_cast<int>(fields.size());
  const Manifold& m = start.config.domain;

  TrainResult res;
  res.holdout = holdout_indices(n, config);
  std::vector<int> train_idx;
  for (int i = 0; i < n; ++i) {
    if (!std::binary_search(res.holdout.begin(), res.holdout.end(), i)) train_idx.push_back(i);
  }
  const std::vector<int>& val_idx = res.holdout.empty() ? train_idx : res.holdout;

  ModelParameters params = start;
  std::vector<PoseContextCloud> z(n, initial_latents(start.config, config.seed));
  std::vector<AdamState> param_opt(tensors(params).size());
  std::vector<LatentOpt> latent_opt(n);

  std::vector<PairSample> val_batches(n);
  for (int i = 0; i < n; ++i) {
    val_batches[i] = sample_pairs(m, fields[i], config.validation_pairs, derive_seed(config.seed, "val", i));
  }

  const int batch = std::min(config.batch_fields, static_cast<int>(train_idx.size()));
  const int steps_per_epoch = (static_cast<int>(train_idx.size()) + batch - 1) / batch;
  const int total_steps = config.epochs * steps_per_epoch;
  CsvLog log(config.log_path);

  res.params = params;
  res.latents = z;
  res.best_val_loss = std::numeric_limits<double>::infinity();
  long step = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<int> order = train_idx;
    Rng rng = make_rng(config.seed, "order", epoch);
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) {
      std::swap(order[i], order[rng() % static_cast<std::uint64_t>(i + 1)]);
    }
    double epoch_loss = 0.0;
    for (int b0 = 0; b0 < static_cast<int>(order.size()); b0 += batch, ++step) {
      const int nb = std::min(batch, static_cast<int>(order.size()) - b0);
      std::vector<LossAndGrads> grads(nb);
      parallel_for(nb, config.threads, [&](int k) {
        const int f = order[b0 + k];
        const PairSample s = sample_pairs(m, fields[f], config.pairs, pair_seed(config.seed, "train", step, f));
        grads[k] = eikonal_loss_and_grads(s, z[f], params, config.loss, true, true);
      });
      for (int k = 0; k < nb; ++k) {
        check_finite(grads[k].loss, "epoch " + std::to_string(epoch) + ", field " + std::to_string(order[b0 + k]));
        epoch_loss += grads[k].loss;
      }
      // Parameter gradient of the batch-mean loss, reduced in batch order.
      std::vector<Mat*> pt = tensors(params);
      const double lr = config.cosine ? cosine_lr(config.lr_model, config.lr_min, static_cast<int>(step), total_steps)
                                      : config.lr_model;
      for (std::size_t j = 0; j < pt.size(); ++j) {
        Mat g = Mat::Zero(pt[j]->rows(), pt[j]->cols());
        for (int k = 0; k < nb; ++k) g += *tensors(grads[k].params)[j];
        adam_update(*pt[j], g / nb, param_opt[j], lr);
      }
      for (int k = 0; k < nb; ++k) latent_adam(z[order[b0 + k]], grads[k], latent_opt[order[b0 + k]], config);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_loss / static_cast<double>(order.size());
    rec.val_loss = std::numeric_limits<double>::quiet_NaN();
    if ((epoch + 1) % config.validate_every == 0 || epoch + 1 == config.epochs) {
      for (int f : res.holdout) {
        // Held-out latents follow the frozen parameters.
        for (int s = 0; s < config.holdout_fit_steps; ++s) {
          const PairSample b = sample_pairs(m, fields[f], config.pairs, pair_seed(config.seed, "holdout", step + s, f));
          latent_adam(z[f], eikonal_loss_and_grads(b, z[f], params, config.loss, false, true), latent_opt[f], config);
        }
      }
      rec.val_loss = mean_loss(val_idx, val_batches, z, params, config.loss, config.threads);
      check_finite(rec.val_loss, "validation after epoch " + std::to_string(epoch));
      if (rec.val_loss < res.best_val_loss) {
        res.best_val_loss = rec.val_loss;
        res.best_epoch = epoch;
        res.params = params;
        res.latents = z;
      }
    }
    rec.wall_time = seconds_since(t0);
    res.history.push_back(rec);
    log.write(rec);
    if (on_epoch) on_epoch(rec);
  }
  return res;
}

namespace {

struct InnerRates {
  double context, pose;
};

InnerRates rates_from(const Mat& log_lr, const TrainConfig& c) {
  if (log_lr.size() == 0) return {c.inner_lr_context, c.inner_lr_pose};
  if (log_lr.size() != 2) throw ContractViolation("inner rates must be a 1 x 2 matrix");
  return {std::exp(log_lr(0, 0)), std::exp(log_lr(0, 1))};
}

struct InnerResult {
  PoseContextCloud z;
  std::vector<LossAndGrads> steps;
};

InnerResult inner_loop(const ModelParameters& params, const VelocityField& field, const PoseContextCloud& z0,
                       const InnerRates& eta, int steps, LossKind kind, int pairs,
                       const std::function<std::uint64_t(int)>& seed_of) {
  InnerResult r{z0, {}};
  for (int s = 0; s < steps; ++s) {
    const PairSample b = sample_pairs(params.config.domain, field, pairs, seed_of(s));
    LossAndGrads g = eikonal_loss_and_grads(b, r.z, params, kind, false, true);
    check_finite(g.loss, "inner step " + std::to_string(s));
    r.z.contexts -= eta.context * g.contexts;
    r.z.poses -= eta.pose * g.poses;
    r.steps.push_back(std::move(g));
  }
  return r;
}

}  // namespace

TrainResult meta_train(const std::vector<VelocityField>& fields, const ModelConfig& model, const TrainConfig& config,
                       const ModelParameters* warm_start, const EpochCallback& on_epoch) {
  config.validate();
  const ModelConfig& mc = warm_start ? warm_start->config : model;
  check_fields(fields, mc);
  const auto t0 = Clock::now();
  const int n = static_cast<int>(fields.size());
  const Manifold& m = mc.domain;

  TrainResult res;
  res.holdout = holdout_indices(n, config);
  std::vector<int> train_idx;
  for (int i = 0; i < n; ++i) {
    if (!std::binary_search(res.holdout.begin(), res.holdout.end(), i)) train_idx.push_back(i);
  }
  const std::vector<int>& val_idx = res.holdout.empty() ? train_idx : res.holdout;

  ModelParameters params = warm_start ? *warm_start : init_parameters(mc, derive_seed(config.seed, "params"));
  Mat log_eta(1, 2);
  log_eta << std::log(config.inner_lr_context), std::log(config.inner_lr_pose);
  const PoseContextCloud z0 = initial_latents(mc, config.seed);
  std::vector<AdamState> param_opt(tensors(params).size());
  AdamState eta_opt;

  std::vector<PairSample> val_batches(n);
  for (int i = 0; i < n; ++i) {
    val_batches[i] = sample_pairs(m, fields[i], config.validation_pairs, derive_seed(config.seed, "val", i));
  }

  const int batch = std::min(config.batch_fields, static_cast<int>(train_idx.size()));
  const int steps_per_epoch = (static_cast<int>(train_idx.size()) + batch - 1) / batch;
  const int total_steps = config.epochs * steps_per_epoch;
  CsvLog log(config.log_path);

  res.params = params;
  res.inner_log_lr = log_eta;
  res.best_val_loss = std::numeric_limits<double>::infinity();
  std::vector<PoseContextCloud> adapted(n, z0);
  res.latents = adapted;
  long step = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<int> order = train_idx;
    Rng rng = make_rng(config.seed, "order", epoch);
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) {
      std::swap(order[i], order[rng() % static_cast<std::uint64_t>(i + 1)]);
    }
    double epoch_loss = 0.0;
    for (int b0 = 0; b0 < static_cast<int>(order.size()); b0 += batch, ++step) {
      const int nb = std::min(batch, static_cast<int>(order.size()) - b0);
      const InnerRates eta = rates_from(log_eta, config);
      std::vector<LossAndGrads> outer(nb);
      std::vector<Eigen::Vector2d> hyper(nb);
      parallel_for(nb, config.threads, [&](int k) {
        const int f = order[b0 + k];
        const InnerResult in = inner_loop(params, fields[f], z0, eta, config.inner_steps, config.loss, config.pairs,
                                          [&](int s) { return pair_seed(config.seed, "inner", step * 64 + s, f); });
        const PairSample b = sample_pairs(m, fields[f], config.pairs, pair_seed(config.seed, "outer", step, f));
        outer[k] = eikonal_loss_and_grads(b, in.z, params, config.loss, true, true);
        // First-order rate hypergradient: dz_S/d eta ~ -sum_t g_t.
        double hc = 0.0, hp = 0.0;
        for (const LossAndGrads& g : in.steps) {
          hc -= outer[k].contexts.cwiseProduct(g.contexts).sum();
          hp -= outer[k].poses.cwiseProduct(g.poses).sum();
        }
        hyper[k] = Eigen::Vector2d(eta.context * hc, eta.pose * hp);
        adapted[f] = in.z;
      });
      for (int k = 0; k < nb; ++k) {
        check_finite(outer[k].loss, "epoch " + std::to_string(epoch) + ", field " + std::to_string(order[b0 + k]));
        epoch_loss += outer[k].loss;
      }
      std::vector<Mat*> pt = tensors(params);
      const double lr = cosine_lr(config.lr_model, config.lr_min, static_cast<int>(step), total_steps);
      for (std::size_t j = 0; j < pt.size(); ++j) {
        Mat g = Mat::Zero(pt[j]->rows(), pt[j]->cols());
        for (int k = 0; k < nb; ++k) g += *tensors(outer[k].params)[j];
        adam_update(*pt[j], g / nb, param_opt[j], lr);
      }
      Mat ge = Mat::Zero(1, 2);
      for (int k = 0; k < nb; ++k) ge += hyper[k].transpose();
      adam_update(log_eta, ge / nb, eta_opt, config.lr_inner);
      if (!log_eta.allFinite()) throw NumericFailure("inner learning rates diverged");
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_loss / static_cast<double>(order.size());
    rec.val_loss = std::numeric_limits<double>::quiet_NaN();
    if ((epoch + 1) % config.validate_every == 0 || epoch + 1 == config.epochs) {
      const InnerRates eta = rates_from(log_eta, config);
      std::vector<double> losses(val_idx.size());
      std::vector<PoseContextCloud> fitted(val_idx.size());
      parallel_for(static_cast<int>(val_idx.size()), config.threads, [&](int k) {
        const int f = val_idx[k];
        fitted[k] = inner_loop(params, fields[f], z0, eta, config.inner_steps, config.loss, config.pairs,
                               [&](int s) { return pair_seed(config.seed, "meta-val", s, f); })
                        .z;
        losses[k] = eikonal_loss(val_batches[f], fitted[k], params, config.loss);
      });
      double sum = 0.0;
      for (double l : losses) sum += l;
      rec.val_loss = sum / static_cast<double>(losses.size());
      check_finite(rec.val_loss, "validation after epoch " + std::to_string(epoch));
      if (rec.val_loss < res.best_val_loss) {
        res.best_val_loss = rec.val_loss;
        res.best_epoch = epoch;
        res.params = params;
        res.inner_log_lr = log_eta;
        for (std::size_t k = 0; k < val_idx.size(); ++k) adapted[val_idx[k]] = fitted[k];
        res.latents = adapted;
      }
    }
    rec.wall_time = seconds_since(t0);
    res.history.push_back(rec);
    log.write(rec);
    if (on_epoch) on_epoch(rec);
  }
  return res;
}

FitResult fit_latents(const ModelParameters& params, const VelocityField& field, FitMode mode,
                      const TrainConfig& config, const Mat& inner_log_lr) {
  config.validate();
  check_fields({field}, params.config);
  const Manifold& m = params.config.domain;
  const PairSample eval = sample_pairs(m, field, config.validation_pairs, derive_seed(config.seed, "fit-eval"));
  FitResult r;
  r.latents = initial_latents(params.config, config.seed);
  r.initial_loss = eikonal_loss(eval, r.latents, params, config.loss);

  const auto t0 = Clock::now();
  if (mode == FitMode::MetaInner) {
    r.latents = inner_loop(params, field, r.latents, rates_from(inner_log_lr, config), config.inner_steps, config.loss,
                           config.pairs, [&](int s) { return derive_seed(config.seed, "fit", s); })
                    .z;
  } else {
    LatentOpt opt;
    for (int s = 0; s < config.fit_steps; ++s) {
      const PairSample b = sample_pairs(m, field, config.pairs, derive_seed(config.seed, "fit", s));
      const LossAndGrads g = eikonal_loss_and_grads(b, r.latents, params, config.loss, false, true);
      check_finite(g.loss, "fit step " + std::to_string(s));
      latent_adam(r.latents, g, opt, config);
    }
  }
  r.seconds = seconds_since(t0);
  r.final_loss = eikonal_loss(eval, r.latents, params, config.loss);
  return r;
}

}  // namespace enes

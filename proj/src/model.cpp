#include "enes/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include "detail/binary_io.hpp"
#include "enes/error.hpp"
#include "enes/field.hpp"
#include "enes/random.hpp"

namespace enes {

namespace {

double normal(Rng& rng) {
  // Box-Muller on raw-bit uniforms for platform-stable draws.
  const double u1 = 1.0 - uniform(rng, 0.0, 1.0);
  const double u2 = uniform(rng, 0.0, 1.0);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Mat normal_matrix(Rng& rng, int rows, int cols, double std) {
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) m(i, j) = std * normal(rng);
  }
  return m;
}

Dense init_dense(Rng& rng, int in, int out) {
  return {normal_matrix(rng, out, in, 1.0 / std::sqrt(static_cast<double>(in))), Mat::Zero(1, out)};
}

FeedForward init_ffn(Rng& rng, int in, int width, int out) {
  return {init_dense(rng, in, width), init_dense(rng, width, out)};
}

bool all_finite(const Mat& m) { return m.allFinite(); }

}  // namespace

// ---- latents ---------------------------------------------------------------------------

GroupElement PoseContextCloud::pose(int i) const {
  PoseParams p;
  p.kind = kind;
  p.values = poses.row(i).transpose();
  return pseudo_exp(p);
}

void PoseContextCloud::validate() const {
  if (poses.rows() < 1) throw ContractViolation("latent cloud needs at least one pose");
  if (poses.cols() != pose_param_count(kind)) throw ContractViolation("pose rows have the wrong width");
  if (contexts.rows() != poses.rows()) throw ContractViolation("pose and context counts differ");
  if (!all_finite(poses) || !all_finite(contexts)) throw ContractViolation("latent cloud has non-finite entries");
}

PoseContextCloud init_latents(const Manifold& m, GroupKind kind, int n, int d, std::uint64_t seed) {
  if (n < 1) throw ContractViolation("latent count must be at least 1");
  if (d < 1) throw ContractViolation("context width must be at least 1");
  if (!compatible(kind, m)) throw ContractViolation("group does not act on the domain");
  Rng rng = make_rng(seed, "latents");
  PoseContextCloud z;
  z.kind = kind;
  z.poses = Mat::Zero(n, pose_param_count(kind));
  z.contexts = Mat::Constant(n, d, 1.0 / std::sqrt(static_cast<double>(d)));

  switch (kind) {
    case GroupKind::SE2:
    case GroupKind::SE3: {
      const int dim = m.dim();
      int per_axis = 1;
      while (std::pow(per_axis, dim) < n) ++per_axis;
      for (int i = 0; i < n; ++i) {
        int rest = i;
        for (int a = dim - 1; a >= 0; --a) {
          const int cell = rest % per_axis;
          rest /= per_axis;
          z.poses(i, a) = m.lo[a] + (cell + 0.5) * (m.hi[a] - m.lo[a]) / per_axis;
        }
        if (kind == GroupKind::SE2) {
          z.poses(i, 2) = uniform(rng, -std::numbers::pi, std::numbers::pi);
        } else {
          z.poses(i, 3) = uniform(rng, -std::numbers::pi, std::numbers::pi);
          z.poses(i, 4) = uniform(rng, -std::numbers::pi / 2, std::numbers::pi / 2);
          z.poses(i, 5) = uniform(rng, -std::numbers::pi, std::numbers::pi);
        }
      }
      break;
    }
    case GroupKind::SO2aboutZ:
      for (int i = 0; i < n; ++i) z.poses(i, 0) = uniform(rng, -std::numbers::pi, std::numbers::pi);
      break;
    case GroupKind::PosScaling:
      break;
  }
  return z;
}

PoseContextCloud act_latents(const GroupElement& g, const PoseContextCloud& z) {
  if (g.kind() != z.kind) throw ContractViolation("group kind does not match the latent cloud");
  PoseContextCloud out = z;
  for (int i = 0; i < z.size(); ++i) {
    const PoseParams p = pseudo_log(compose(g, z.pose(i)));
    out.poses.row(i) = p.values.transpose();
  }
  return out;
}

// ---- configuration -----------------------------------------------------------------------

double ModelConfig::tau_max() const {
  const double widen = domain.is_sphere() ? std::numbers::pi / 2 : 1.0;
  return widen / v_min;
}

void ModelConfig::validate() const {
  domain.validate();
  if (!compatible(group, domain)) throw ContractViolation("model group does not act on its domain");
  if (hidden < 1 || heads < 1 || hidden % heads != 0) throw ContractViolation("hidden width must split evenly across heads");
  if (latents < 1 || context_dim < 1 || frequencies < 1) throw ContractViolation("model sizes must be positive");
  if (!(v_min > 0.0) || !(v_max >= v_min) || !std::isfinite(v_max)) throw ContractViolation("invalid velocity bounds");
}

ModelConfig preset_2d() { return ModelConfig{}; }

ModelConfig preset_sphere_constant() {
  ModelConfig c;
  c.domain = Manifold::sphere();
  c.group = GroupKind::SO2aboutZ;
  c.hidden = 64;
  c.heads = 1;
  c.latents = 4;
  c.context_dim = 16;
  return c;
}

ModelConfig preset_sphere_obstacle() {
  ModelConfig c = preset_sphere_constant();
  c.heads = 2;
  c.latents = 9;
  c.context_dim = 32;
  return c;
}

// ---- parameters ---------------------------------------------------------------------------

namespace {

template <typename Self, typename Fn>
void visit_params(Self& p, Fn&& fn) {
  fn("rff_query", p.rff_query);
  fn("rff_value", p.rff_value);
  fn("w_q", p.w_q);
  fn("w_c", p.w_c);
  fn("w_k", p.w_k);
  fn("w_v", p.w_v);
  auto ffn = [&](const std::string& name, auto& f) {
    fn(name + ".l1.w", f.l1.w);
    fn(name + ".l1.b", f.l1.b);
    fn(name + ".l2.w", f.l2.w);
    fn(name + ".l2.b", f.l2.b);
  };
  ffn("ffn_v", p.ffn_v);
  ffn("ffn_gamma", p.ffn_gamma);
  ffn("ffn_beta", p.ffn_beta);
  ffn("ffn_e", p.ffn_e);
  fn("proj_in.w", p.proj_in.w);
  fn("proj_in.b", p.proj_in.b);
  fn("proj_alpha", p.proj_alpha);
  fn("proj_out.w", p.proj_out.w);
  fn("proj_out.b", p.proj_out.b);
  fn("log_alpha0", p.log_alpha0);
}

}  // namespace

void ModelParameters::for_each(const std::function<void(const std::string&, Mat&)>& fn) { visit_params(*this, fn); }

void ModelParameters::for_each(const std::function<void(const std::string&, const Mat&)>& fn) const {
  visit_params(*this, fn);
}

std::size_t ModelParameters::parameter_count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Mat& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

ModelParameters init_parameters(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng = make_rng(seed, "init");
  const int dim = config.space_dim();
  const int f = config.frequencies;
  const int d = config.hidden;
  ModelParameters p;
  p.config = config;
  p.rff_query = normal_matrix(rng, f, 2 * dim, config.query_freq_std);
  p.rff_value = normal_matrix(rng, f, 2 * dim, config.value_freq_std);
  p.w_q = init_dense(rng, 2 * f, d).w;
  p.w_c = init_dense(rng, config.context_dim, d).w;
  p.w_k = init_dense(rng, d, d).w;
  p.w_v = init_dense(rng, d, d).w;
  p.ffn_v = init_ffn(rng, d, d, d);
  p.ffn_gamma = init_ffn(rng, 2 * f, d, d);
  p.ffn_beta = init_ffn(rng, 2 * f, d, d);
  p.ffn_e = init_ffn(rng, d, d, d);
  p.proj_in = init_dense(rng, d, d);
  p.proj_alpha = Mat::Ones(1, d);
  p.proj_out = init_dense(rng, d, 1);
  p.log_alpha0 = Mat::Zero(1, 1);
  return p;
}

Mat rff_embed(const Mat& freqs, const Mat& x) {
  if (freqs.cols() != x.cols()) throw ContractViolation("RFF frequency width does not match the input");
  const Mat z = 2.0 * std::numbers::pi * x * freqs.transpose();
  Mat out(x.rows(), 2 * freqs.rows());
  out.leftCols(freqs.rows()) = z.array().cos().matrix();
  out.rightCols(freqs.rows()) = z.array().sin().matrix();
  return out;
}

// ---- graph ---------------------------------------------------------------------------------

ParamVars bind_parameters(ad::Tape& t, const ModelParameters& p, bool requires_grad) {
  auto leaf = [&](const Mat& m) { return t.leaf(ad::DualTensor::value_only(m), requires_grad); };
  auto dense = [&](const Dense& d) { return ParamVars::DenseVars{leaf(d.w), leaf(d.b)}; };
  auto ffn = [&](const FeedForward& f) { return ParamVars::FfnVars{dense(f.l1), dense(f.l2)}; };
  ParamVars v;
  v.rff_query = leaf(p.rff_query);
  v.rff_value = leaf(p.rff_value);
  v.w_q = leaf(p.w_q);
  v.w_c = leaf(p.w_c);
  v.w_k = leaf(p.w_k);
  v.w_v = leaf(p.w_v);
  v.ffn_v = ffn(p.ffn_v);
  v.ffn_gamma = ffn(p.ffn_gamma);
  v.ffn_beta = ffn(p.ffn_beta);
  v.ffn_e = ffn(p.ffn_e);
  v.proj_in = dense(p.proj_in);
  v.proj_alpha = leaf(p.proj_alpha);
  v.proj_out = dense(p.proj_out);
  v.log_alpha0 = leaf(p.log_alpha0);
  return v;
}

ModelParameters collect_gradients(const ad::Tape& t, const ParamVars& v, const ModelParameters& like) {
  ModelParameters g = like;
  auto dense = [&](Dense& d, const ParamVars::DenseVars& dv) {
    d.w = t.grad(dv.w);
    d.b = t.grad(dv.b);
  };
  auto ffn = [&](FeedForward& f, const ParamVars::FfnVars& fv) {
    dense(f.l1, fv.l1);
    dense(f.l2, fv.l2);
  };
  g.rff_query = t.grad(v.rff_query);
  g.rff_value = t.grad(v.rff_value);
  g.w_q = t.grad(v.w_q);
  g.w_c = t.grad(v.w_c);
  g.w_k = t.grad(v.w_k);
  g.w_v = t.grad(v.w_v);
  ffn(g.ffn_v, v.ffn_v);
  ffn(g.ffn_gamma, v.ffn_gamma);
  ffn(g.ffn_beta, v.ffn_beta);
  ffn(g.ffn_e, v.ffn_e);
  dense(g.proj_in, v.proj_in);
  g.proj_alpha = t.grad(v.proj_alpha);
  dense(g.proj_out, v.proj_out);
  g.log_alpha0 = t.grad(v.log_alpha0);
  return g;
}

LatentVars bind_latents(ad::Tape& t, const PoseContextCloud& z, bool requires_grad) {
  return {t.leaf(ad::DualTensor::value_only(z.poses), requires_grad),
          t.leaf(ad::DualTensor::value_only(z.contexts), requires_grad)};
}

double invariant_scale(const Manifold& m) { return m.is_sphere() ? 1.0 : 2.0 / m.max_width(); }

namespace {

// Canonicalized pair coordinates [A_i^{-1}(a - t_i), A_i^{-1}(b - t_i)] * scale
// for every (pair, pose) item, with (a, b) = (s, r), or (r, s) when swapped.
ad::Var canonicalize(ad::Tape& t, ad::Var poses, GroupKind kind, const Mat& s, const Mat& r, int dim,
                     double scale, bool swap) {
  const int m_pairs = static_cast<int>(s.rows());
  const int tangents = t.tangents();
  if (tangents != 0 && tangents != 2 * dim) throw ContractViolation("tape tangent count must be 0 or 2*dim");

  auto jacobians = [kind](const ad::Tape& tp, ad::Var pv) {
    const Mat& pm = tp.value(pv).data;
    std::vector<PoseChartJacobian> js;
    js.reserve(pm.rows());
    for (int i = 0; i < pm.rows(); ++i) js.push_back(pose_chart_jacobian(kind, pm.row(i).data()));
    return js;
  };
  const Mat& first = swap ? r : s;
  const Mat& second = swap ? s : r;

  return t.push(
      {poses},
      [=](ad::Tape& tp, ad::DualTensor& out) {
        const auto js = jacobians(tp, poses);
        const int n = static_cast<int>(js.size());
        out = ad::DualTensor(m_pairs * n, tp.dual_comps(), 2 * dim);
        auto val = out.value();
        for (int i = 0; i < n; ++i) {
          const Eigen::MatrixXd ainv = scale * js[i].inv_linear.topLeftCorner(dim, dim);
          const Eigen::VectorXd ti = js[i].translation.head(dim);
          for (int m = 0; m < m_pairs; ++m) {
            const int row = m * n + i;
            val.row(row).head(dim) = (ainv * (first.row(m).transpose() - ti)).transpose();
            val.row(row).tail(dim) = (ainv * (second.row(m).transpose() - ti)).transpose();
          }
          if (tp.tangents() == 0) continue;
          // d/ds_c lands in the block holding s, d/dr_c in the block holding r.
          const int s_block = swap ? dim : 0;
          const int r_block = swap ? 0 : dim;
          for (int c = 0; c < dim; ++c) {
            const Eigen::RowVectorXd col = ainv.col(c).transpose();
            auto ts = out.comp(1 + c);
            auto tr = out.comp(1 + dim + c);
            for (int m = 0; m < m_pairs; ++m) {
              ts.row(m * n + i).segment(s_block, dim) = col;
              tr.row(m * n + i).segment(r_block, dim) = col;
            }
          }
        }
      },
      [=](ad::Tape& tp, const ad::DualTensor& out, const Mat& g) {
        if (!tp.requires_grad(poses)) return;
        const auto js = jacobians(tp, poses);
        const int n = static_cast<int>(js.size());
        Mat& gp = tp.grad_acc(poses);
        const auto g0 = g.topRows(out.items);
        const int s_block = swap ? dim : 0;
        const int r_block = swap ? 0 : dim;
        for (int i = 0; i < n; ++i) {
          const PoseChartJacobian& j = js[i];
          const Eigen::MatrixXd ainv = j.inv_linear.topLeftCorner(dim, dim);
          const Eigen::VectorXd ti = j.translation.head(dim);
          for (int k = 0; k < j.n; ++k) {
            const Eigen::MatrixXd da = scale * j.d_inv_linear[k].topLeftCorner(dim, dim);
            const Eigen::VectorXd dt = scale * (ainv * j.d_translation[k].head(dim));
            double acc = 0.0;
            for (int m = 0; m < m_pairs; ++m) {
              const int row = m * n + i;
              const Eigen::VectorXd d1 = da * (first.row(m).transpose() - ti) - dt;
              const Eigen::VectorXd d2 = da * (second.row(m).transpose() - ti) - dt;
              acc += g0.row(row).head(dim).dot(d1.transpose()) + g0.row(row).tail(dim).dot(d2.transpose());
              if (out.comps == 1) continue;
              for (int c = 0; c < dim; ++c) {
                const Eigen::RowVectorXd dcol = da.col(c).transpose();
                acc += g.row((1 + c) * out.items + row).segment(s_block, dim).dot(dcol);
                acc += g.row((1 + dim + c) * out.items + row).segment(r_block, dim).dot(dcol);
              }
            }
            gp(i, k) += acc;
          }
        }
      });
}

ad::Var fourier(ad::Tape& t, ad::Var x, ad::Var freqs) {
  const ad::Var z = ad::scale(t, ad::affine(t, x, freqs), 2.0 * std::numbers::pi);
  return ad::concat_cols(t, ad::cos(t, z), ad::sin(t, z));
}

ad::Var dense(ad::Tape& t, ad::Var x, const ParamVars::DenseVars& d) { return ad::affine(t, x, d.w, d.b); }

ad::Var ffn(ad::Tape& t, ad::Var x, const ParamVars::FfnVars& f) {
  return dense(t, ad::gelu(t, dense(t, x, f.l1)), f.l2);
}

}  // namespace

TravelTimeGraph build_travel_time(ad::Tape& t, const ModelConfig& config, const ParamVars& p,
                                  const LatentVars& latents, GroupKind kind, const PairBatch& pairs) {
  const int dim = config.space_dim();
  const int m_pairs = pairs.size();
  if (m_pairs < 1) throw ContractViolation("empty pair batch");
  if (pairs.s.cols() != dim || pairs.r.cols() != dim || pairs.r.rows() != m_pairs) {
    throw ContractViolation("pair batch does not match the model's ambient dimension");
  }
  const int n = t.value(latents.poses).items;
  if (n < 1) throw ContractViolation("latent cloud is empty");
  const int heads = config.heads;
  const int hd = config.head_dim();
  const double sc = invariant_scale(config.domain);

  // Reynolds-symmetrized invariant embeddings.
  const ad::Var x1 = canonicalize(t, latents.poses, kind, pairs.s, pairs.r, dim, sc, false);
  const ad::Var x2 = canonicalize(t, latents.poses, kind, pairs.s, pairs.r, dim, sc, true);
  const ad::Var aq = ad::scale(t, ad::add(t, fourier(t, x1, p.rff_query), fourier(t, x2, p.rff_query)), 0.5);
  const ad::Var av = ad::scale(t, ad::add(t, fourier(t, x1, p.rff_value), fourier(t, x2, p.rff_value)), 0.5);

  // Attention over the latents.
  const ad::Var q = ad::affine(t, aq, p.w_q);
  const ad::Var cn = ad::layer_norm(t, ad::affine(t, latents.contexts, p.w_c));
  const ad::Var k = ad::tile_items(t, ad::affine(t, cn, p.w_k), m_pairs);
  const ad::Var score = ad::scale(t, ad::group_cols_sum(t, ad::mul(t, q, k), heads), 1.0 / std::sqrt(hd));
  const ad::Var alpha = ad::segment_softmax(t, score, n);

  const ad::Var vbase = ad::tile_items(t, ad::affine(t, cn, p.w_v), m_pairs);
  const ad::Var gamma = ffn(t, av, p.ffn_gamma);
  const ad::Var beta = ffn(t, av, p.ffn_beta);
  const ad::Var v = ffn(t, ad::add(t, ad::mul(t, vbase, ad::add_const(t, gamma, 1.0)), beta), p.ffn_v);
  const ad::Var pooled = ad::segment_sum(t, ad::mul(t, v, ad::expand_cols(t, alpha, hd)), n);
  const ad::Var hidden = ffn(t, pooled, p.ffn_e);

  // Bounded projection head.
  const ad::Var h1 = ad::gaussian_adaptive(t, dense(t, hidden, p.proj_in), p.proj_alpha);
  const ad::Var logit = ad::mul_scalar(t, dense(t, h1, p.proj_out), ad::exp(t, p.log_alpha0));
  const double lo = config.tau_min(), hi = config.tau_max();
  const ad::Var tau = ad::add_const(t, ad::scale(t, ad::sigmoid(t, logit), hi - lo), lo);

  // Semimetric factor with its input derivatives.
  const Semimetric metric = config.semimetric();
  ad::DualTensor dist(m_pairs, t.dual_comps(), 1);
  for (int m = 0; m < m_pairs; ++m) {
    const Point s = pairs.s.row(m).transpose();
    const Point r = pairs.r.row(m).transpose();
    if (t.tangents() == 0) {
      dist.data(m, 0) = semimetric_value(metric, s, r);
      continue;
    }
    const SemimetricValue sv = semimetric_value_and_grad(metric, s, r);
    dist.data(m, 0) = sv.value;
    for (int c = 0; c < dim; ++c) {
      dist.data((1 + c) * m_pairs + m, 0) = sv.grad_s[c];
      dist.data((1 + dim + c) * m_pairs + m, 0) = sv.grad_r[c];
    }
  }
  const ad::Var d = t.leaf(std::move(dist), false);
  return {ad::mul(t, d, tau), tau, {hidden, alpha}};
}

// ---- evaluation -----------------------------------------------------------------------------

namespace {

PairBatch single_pair(const Point& s, const Point& r) {
  PairBatch b;
  b.s = s.transpose();
  b.r = r.transpose();
  return b;
}

void check_model_inputs(const ModelParameters& p, const PoseContextCloud& z) {
  z.validate();
  if (z.kind != p.config.group) throw ContractViolation("latent cloud group does not match the model");
  if (z.contexts.cols() != p.config.context_dim) throw ContractViolation("context width does not match the model");
}

}  // namespace

Eigen::VectorXd encode(const Point& s, const Point& r, const PoseContextCloud& z, const ModelParameters& p) {
  check_model_inputs(p, z);
  ad::Tape t(0);
  const ParamVars pv = bind_parameters(t, p, false);
  const LatentVars lv = bind_latents(t, z, false);
  const TravelTimeGraph g = build_travel_time(t, p.config, pv, lv, z.kind, single_pair(s, r));
  return t.value(g.encode.hidden).data.row(0).transpose();
}

Mat attention_weights(const Point& s, const Point& r, const PoseContextCloud& z, const ModelParameters& p) {
  check_model_inputs(p, z);
  ad::Tape t(0);
  const ParamVars pv = bind_parameters(t, p, false);
  const LatentVars lv = bind_latents(t, z, false);
  const TravelTimeGraph g = build_travel_time(t, p.config, pv, lv, z.kind, single_pair(s, r));
  return t.value(g.encode.attention).data;
}

double project(const Eigen::VectorXd& hidden, const ModelParameters& p, double v_min, double v_max) {
  if (!(v_min > 0.0) || !(v_max >= v_min)) throw ContractViolation("invalid velocity bounds");
  const Eigen::VectorXd h1 = p.proj_in.w * hidden + p.proj_in.b.row(0).transpose();
  const Eigen::ArrayXd u = h1.array() * p.proj_alpha.row(0).transpose().array();
  const Eigen::VectorXd g = (-u.square()).exp().matrix();
  const double out = (p.proj_out.w * g)(0) + p.proj_out.b(0, 0);
  const double logit = std::exp(p.log_alpha0(0, 0)) * out;
  const double sig = 1.0 / (1.0 + std::exp(-logit));
  return (1.0 / v_min - 1.0 / v_max) * sig + 1.0 / v_max;
}

double travel_time(const Point& s, const Point& r, const PoseContextCloud& z, const ModelParameters& p) {
  return travel_times(single_pair(s, r), z, p)(0);
}

Eigen::VectorXd travel_times(const PairBatch& pairs, const PoseContextCloud& z, const ModelParameters& p, int chunk) {
  check_model_inputs(p, z);
  Eigen::VectorXd out(pairs.size());
  for (int start = 0; start < pairs.size(); start += chunk) {
    const int len = std::min(chunk, pairs.size() - start);
    PairBatch part{pairs.s.middleRows(start, len), pairs.r.middleRows(start, len)};
    ad::Tape t(0);
    const ParamVars pv = bind_parameters(t, p, false);
    const LatentVars lv = bind_latents(t, z, false);
    const TravelTimeGraph g = build_travel_time(t, p.config, pv, lv, z.kind, part);
    out.segment(start, len) = t.value(g.time).data.col(0);
  }
  return out;
}

std::vector<TimeAndGradients> travel_times_with_gradients(const PairBatch& pairs, const PoseContextCloud& z,
                                                          const ModelParameters& p, int chunk) {
  check_model_inputs(p, z);
  const int dim = p.config.space_dim();
  const Manifold& m = p.config.domain;
  std::vector<TimeAndGradients> out(pairs.size());
  for (int start = 0; start < pairs.size(); start += chunk) {
    const int len = std::min(chunk, pairs.size() - start);
    PairBatch part{pairs.s.middleRows(start, len), pairs.r.middleRows(start, len)};
    ad::Tape t(2 * dim);
    const ParamVars pv = bind_parameters(t, p, false);
    const LatentVars lv = bind_latents(t, z, false);
    const TravelTimeGraph g = build_travel_time(t, p.config, pv, lv, z.kind, part);
    const ad::DualTensor& tv = t.value(g.time);
    for (int i = 0; i < len; ++i) {
      TimeAndGradients& o = out[start + i];
      o.time = tv.data(i, 0);
      Point gs(dim), gr(dim);
      for (int c = 0; c < dim; ++c) {
        gs[c] = tv.data((1 + c) * len + i, 0);
        gr[c] = tv.data((1 + dim + c) * len + i, 0);
      }
      o.grad_s = riemannian_gradient(m, part.s.row(i).transpose(), gs);
      o.grad_r = riemannian_gradient(m, part.r.row(i).transpose(), gr);
    }
  }
  return out;
}

TimeAndGradients travel_time_with_gradients(const Point& s, const Point& r, const PoseContextCloud& z,
                                            const ModelParameters& p) {
  return travel_times_with_gradients(single_pair(s, r), z, p)[0];
}

// ---- checkpoints ----------------------------------------------------------------------------

namespace {

struct Section {
  std::string name;
  std::vector<std::uint32_t> shape;
  std::vector<double> data;
};

Section section_of(const std::string& name, const Mat& m) {
  Section s;
  s.name = name;
  s.shape = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
  s.data.assign(m.data(), m.data() + m.size());
  return s;
}

Mat matrix_of(const Section& s) {
  if (s.shape.size() != 2) throw FormatError(FormatErrorCode::Invalid, "section " + s.name + " is not a matrix");
  Mat m(s.shape[0], s.shape[1]);
  std::copy(s.data.begin(), s.data.end(), m.data());
  return m;
}

std::vector<double> config_values(const ModelConfig& c) {
  std::vector<double> v{static_cast<double>(c.domain.kind),
                        static_cast<double>(c.group),
                        static_cast<double>(c.hidden),
                        static_cast<double>(c.heads),
                        static_cast<double>(c.latents),
                        static_cast<double>(c.context_dim),
                        static_cast<double>(c.frequencies),
                        c.query_freq_std,
                        c.value_freq_std,
                        c.v_min,
                        c.v_max};
  for (int a = 0; a < 3; ++a) v.push_back(a < c.domain.lo.size() ? c.domain.lo[a] : 0.0);
  for (int a = 0; a < 3; ++a) v.push_back(a < c.domain.hi.size() ? c.domain.hi[a] : 0.0);
  return v;
}

ModelConfig config_from(const std::vector<double>& v) {
  if (v.size() != 17) throw FormatError(FormatErrorCode::Invalid, "config section has the wrong length");
  ModelConfig c;
  const auto kind = static_cast<ManifoldKind>(static_cast<int>(v[0]));
  if (kind == ManifoldKind::Sphere2) {
    c.domain = Manifold::sphere();
  } else {
    const int dim = kind == ManifoldKind::Euclidean1 ? 1 : kind == ManifoldKind::Euclidean2 ? 2 : 3;
    Point lo(dim), hi(dim);
    for (int a = 0; a < dim; ++a) {
      lo[a] = v[11 + a];
      hi[a] = v[14 + a];
    }
    c.domain = Manifold::euclidean(lo, hi);
  }
  c.group = static_cast<GroupKind>(static_cast<int>(v[1]));
  c.hidden = static_cast<int>(v[2]);
  c.heads = static_cast<int>(v[3]);
  c.latents = static_cast<int>(v[4]);
  c.context_dim = static_cast<int>(v[5]);
  c.frequencies = static_cast<int>(v[6]);
  c.query_freq_std = v[7];
  c.value_freq_std = v[8];
  c.v_min = v[9];
  c.v_max = v[10];
  try {
    c.validate();
  } catch (const ContractViolation& e) {
    throw FormatError(FormatErrorCode::Invalid, std::string("checkpoint config: ") + e.what());
  }
  return c;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  std::vector<Section> sections;
  {
    Section s;
    s.name = "config";
    s.data = config_values(c.params.config);
    s.shape = {static_cast<std::uint32_t>(s.data.size())};
    sections.push_back(std::move(s));
  }
  c.params.for_each([&](const std::string& name, const Mat& m) { sections.push_back(section_of("params/" + name, m)); });
  for (std::size_t i = 0; i < c.latents.size(); ++i) {
    const std::string base = "latents/" + std::to_string(i) + "/";
    sections.push_back(section_of(base + "poses", c.latents[i].poses));
    sections.push_back(section_of(base + "contexts", c.latents[i].contexts));
  }
  if (c.inner_log_lr.size() > 0) sections.push_back(section_of("meta/inner_log_lr", c.inner_log_lr));

  std::size_t header = 4 + 2 + 4;
  for (const Section& s : sections) header += 2 + s.name.size() + 8 + 8 + 1 + 1 + 4 * s.shape.size();

  detail::ByteWriter w;
  w.put_bytes("ENES", 4);
  w.put<std::uint16_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(sections.size()));
  std::uint64_t offset = header;
  for (const Section& s : sections) {
    w.put<std::uint16_t>(static_cast<std::uint16_t>(s.name.size()));
    w.put_bytes(s.name.data(), s.name.size());
    w.put<std::uint64_t>(offset);
    w.put<std::uint64_t>(8 * s.data.size());
    w.put<std::uint8_t>(1);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(s.shape.size()));
    for (std::uint32_t d : s.shape) w.put<std::uint32_t>(d);
    offset += 8 * s.data.size();
  }
  for (const Section& s : sections) w.put_bytes(s.data.data(), 8 * s.data.size());
  return std::move(w.bytes());
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader rd(bytes);
  char magic[4];
  rd.get_bytes(magic, 4);
  if (std::string(magic, 4) != "ENES") throw FormatError(FormatErrorCode::BadMagic, "not an ENES checkpoint");
  const auto version = rd.get<std::uint16_t>();
  if (version != kCheckpointVersion) {
    throw FormatError(FormatErrorCode::VersionMismatch, "unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = rd.get<std::uint32_t>();
  std::map<std::string, Section> by_name;
  struct Entry {
    std::string name;
    std::uint64_t offset, length;
    std::vector<std::uint32_t> shape;
  };
  std::vector<Entry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    Entry e;
    e.name.resize(rd.get<std::uint16_t>());
    rd.get_bytes(e.name.data(), e.name.size());
    e.offset = rd.get<std::uint64_t>();
    e.length = rd.get<std::uint64_t>();
    if (rd.get<std::uint8_t>() != 1) throw FormatError(FormatErrorCode::Invalid, "unsupported dtype in " + e.name);
    e.shape.resize(rd.get<std::uint8_t>());
    std::uint64_t elems = 1;
    for (auto& d : e.shape) {
      d = rd.get<std::uint32_t>();
      elems *= d;
    }
    if (elems * 8 != e.length) throw FormatError(FormatErrorCode::Invalid, "shape and length disagree for " + e.name);
    entries.push_back(std::move(e));
  }
  for (const Entry& e : entries) {
    if (e.offset > bytes.size() || e.length > bytes.size() - e.offset) {
      throw FormatError(FormatErrorCode::Truncated, "section " + e.name + " runs past the end of the data");
    }
    Section s;
    s.name = e.name;
    s.shape = e.shape;
    s.data.resize(e.length / 8);
    rd.seek(e.offset);
    rd.get_bytes(s.data.data(), e.length);
    by_name[e.name] = std::move(s);
  }

  auto take = [&](const std::string& name) -> const Section& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError(FormatErrorCode::Invalid, "missing section " + name);
    return it->second;
  };

  Checkpoint c;
  const ModelConfig config = config_from(take("config").data);
  c.params = init_parameters(config, 0);
  c.params.for_each([&](const std::string& name, Mat& m) {
    Mat loaded = matrix_of(take("params/" + name));
    if (loaded.rows() != m.rows() || loaded.cols() != m.cols()) {
      throw FormatError(FormatErrorCode::Invalid, "parameter " + name + " has the wrong shape");
    }
    m = std::move(loaded);
  });
  for (int i = 0;; ++i) {
    const std::string base = "latents/" + std::to_string(i) + "/";
    if (!by_name.count(base + "poses")) break;
    PoseContextCloud z;
    z.kind = config.group;
    z.poses = matrix_of(take(base + "poses"));
    z.contexts = matrix_of(take(base + "contexts"));
    try {
      z.validate();
    } catch (const ContractViolation& e) {
      throw FormatError(FormatErrorCode::Invalid, base + ": " + e.what());
    }
    c.latents.push_back(std::move(z));
  }
  if (by_name.count("meta/inner_log_lr")) c.inner_log_lr = matrix_of(take("meta/inner_log_lr"));
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& c) { write_file_bytes(path, encode_checkpoint(c)); }

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file_bytes(path)); }

}  // namespace enes

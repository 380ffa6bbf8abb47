#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "enes/autodiff.hpp"
#include "enes/geometry.hpp"
#include "enes/groups.hpp"

namespace enes {

using ad::Mat;

// Latent z: N poses (chart coordinates, one row each) paired with N contexts.
struct PoseContextCloud {
  GroupKind kind = GroupKind::SE2;
  Mat poses;     // N x pose_param_count(kind)
  Mat contexts;  // N x d

  int size() const { return static_cast<int>(poses.rows()); }
  GroupElement pose(int i) const;
  void validate() const;
};

// Lattice translations over the extent (first N cells of a ceil(N^(1/dim))
// per-axis lattice), orientations uniform in [-pi, pi), unit-norm constant
// contexts.
PoseContextCloud init_latents(const Manifold& m, GroupKind kind, int n, int d, std::uint64_t seed);

// g . z: every pose left-multiplied by g.
PoseContextCloud act_latents(const GroupElement& g, const PoseContextCloud& z);

struct ModelConfig {
  Manifold domain = Manifold::unit_square();
  GroupKind group = GroupKind::SE2;
  int hidden = 64;        // D
  int heads = 2;          // H, divides D
  int latents = 4;        // N
  int context_dim = 32;   // d
  int frequencies = 32;   // rows of each RFF matrix
  double query_freq_std = 0.05;
  double value_freq_std = 0.2;
  double v_min = 0.1;
  double v_max = 2.0;

  int space_dim() const { return domain.dim(); }
  int head_dim() const { return hidden / heads; }
  Semimetric semimetric() const { return Semimetric::for_manifold(domain); }
  // Bounds used by the projection head. Chordal distance underestimates arc
  // length by up to pi/2, so the upper slowness bound is widened by that
  // factor on the sphere.
  double tau_min() const { return 1.0 / v_max; }
  double tau_max() const;
  void validate() const;
};

// Desk presets.
ModelConfig preset_2d();
ModelConfig preset_sphere_constant();
ModelConfig preset_sphere_obstacle();

struct Dense {
  Mat w;  // out x in
  Mat b;  // 1 x out
};

struct FeedForward {
  Dense l1, l2;
};

struct ModelParameters {
  ModelConfig config;
  Mat rff_query;   // F x 2*dim
  Mat rff_value;   // F x 2*dim
  Mat w_q;         // D x 2F
  Mat w_c;         // D x d
  Mat w_k;         // D x D
  Mat w_v;         // D x D
  FeedForward ffn_v, ffn_gamma, ffn_beta, ffn_e;
  Dense proj_in;       // D -> D
  Mat proj_alpha;      // 1 x D adaptive Gauss scales
  Dense proj_out;      // D -> 1
  Mat log_alpha0;      // 1 x 1

  // Visits every tensor in a fixed order with a stable name.
  void for_each(const std::function<void(const std::string&, Mat&)>& fn);
  void for_each(const std::function<void(const std::string&, const Mat&)>& fn) const;
  std::size_t parameter_count() const;
};

ModelParameters init_parameters(const ModelConfig& config, std::uint64_t seed);

// [cos(2 pi B x), sin(2 pi B x)] for each row of x.
Mat rff_embed(const Mat& freqs, const Mat& x);

// ---- graph construction ------------------------------------------------------------

// Parameter and latent leaves of one tape. Latent leaves are always present;
// they carry gradients only when requested.
struct ParamVars {
  ad::Var rff_query, rff_value, w_q, w_c, w_k, w_v;
  struct DenseVars {
    ad::Var w, b;
  };
  struct FfnVars {
    DenseVars l1, l2;
  };
  FfnVars ffn_v, ffn_gamma, ffn_beta, ffn_e;
  DenseVars proj_in, proj_out;
  ad::Var proj_alpha, log_alpha0;
};

ParamVars bind_parameters(ad::Tape& t, const ModelParameters& p, bool requires_grad);
// Accumulated parameter gradients, laid out like the parameters.
ModelParameters collect_gradients(const ad::Tape& t, const ParamVars& vars, const ModelParameters& like);

struct LatentVars {
  ad::Var poses, contexts;
};
LatentVars bind_latents(ad::Tape& t, const PoseContextCloud& z, bool requires_grad);

// Pair batch in ambient coordinates, one pair per row.
struct PairBatch {
  Mat s;  // M x dim
  Mat r;  // M x dim
  int size() const { return static_cast<int>(s.rows()); }
};

struct EncodeTrace {
  ad::Var hidden;     // M x D
  ad::Var attention;  // (M*N) x H
};

// Builds the travel-time graph for a batch. With `tangents` the tape must
// carry 2*dim tangents: components 1..dim differentiate with respect to s,
// dim+1..2*dim with respect to r (ambient coordinates).
struct TravelTimeGraph {
  ad::Var time;  // M x 1
  ad::Var tau;   // M x 1
  EncodeTrace encode;
};

TravelTimeGraph build_travel_time(ad::Tape& t, const ModelConfig& config, const ParamVars& params,
                                  const LatentVars& latents, GroupKind kind, const PairBatch& pairs);

// Invariant-coordinate scale applied before the Fourier features.
double invariant_scale(const Manifold& m);

// ---- evaluation ------------------------------------------------------------------------

Eigen::VectorXd encode(const Point& s, const Point& r, const PoseContextCloud& z, const ModelParameters& p);
// Attention weights, N x H, for one pair.
Mat attention_weights(const Point& s, const Point& r, const PoseContextCloud& z, const ModelParameters& p);
double project(const Eigen::VectorXd& hidden, const ModelParameters& p, double v_min, double v_max);

double travel_time(const Point& s, const Point& r, const PoseContextCloud& z, const ModelParameters& p);
// Batched, value-only. Chunks of `chunk` pairs per tape.
Eigen::VectorXd travel_times(const PairBatch& pairs, const PoseContextCloud& z, const ModelParameters& p,
                             int chunk = 512);

struct TimeAndGradients {
  double time = 0.0;
  Point grad_s;
  Point grad_r;
};
// Gradients from one dual pass; on the sphere they are projected onto the
// tangent planes at s and r.
TimeAndGradients travel_time_with_gradients(const Point& s, const Point& r, const PoseContextCloud& z,
                                            const ModelParameters& p);
std::vector<TimeAndGradients> travel_times_with_gradients(const PairBatch& pairs, const PoseContextCloud& z,
                                                          const ModelParameters& p, int chunk = 256);

// ---- checkpoints -----------------------------------------------------------------------

// "ENES", u16 version, u32 section count, then per section: u16 name length,
// name, u64 offset, u64 byte length, u8 dtype (1 = f64), u8 ndim, u32 shape;
// followed by the little-endian blobs. Offsets are absolute.
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelParameters params;
  std::vector<PoseContextCloud> latents;
  Mat inner_log_lr;  // 1 x 2 learned inner rates (context, pose); empty when absent
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace enes

#pragma once

#include <string>
#include <vector>

#include "enes/model.hpp"
#include "enes/oracle.hpp"

namespace enes {

// Squared: sqrt(sum |T - T^|^2 / sum |T|^2). Literal: sqrt(sum |T - T^| / sum |T|^2).
enum class ReForm { Squared, Literal };

struct Metrics {
  double re = 0.0;
  double rmae = 0.0;
};

// One sample. Throws ContractViolation on length mismatch or empty input,
// NumericDomainError when the reference is all zero.
Metrics metrics(const Eigen::VectorXd& pred, const Eigen::VectorXd& ref, ReForm form = ReForm::Squared);
// Per-sample metrics, averaged.
Metrics metrics(const std::vector<Eigen::VectorXd>& pred, const std::vector<Eigen::VectorXd>& ref,
                ReForm form = ReForm::Squared);

// max |T(s, r; g.z) - T(g^-1 s, g^-1 r; z)| over the probe pairs.
double steerability_check(const ModelParameters& p, const PoseContextCloud& z, const GroupElement& g,
                          const PairBatch& probes);

// max |grad_s T(gs, gr; g.z) - A^-T grad_s T(s, r; z)| over the probes, same
// for grad_r.
double gradient_equivariance_check(const ModelParameters& p, const PoseContextCloud& z, const GroupElement& g,
                                   const PairBatch& probes);

// 1 / |grad_s T(s, anchor)|, +inf for a zero gradient. Throws DegenerateError
// when s and the anchor are closer than the semimetric epsilon.
double recovered_velocity(const ModelParameters& p, const PoseContextCloud& z, const Point& s, const Point& anchor);
// Batched over rows of probes.s, each with its own anchor in probes.r.
Eigen::VectorXd recovered_velocities(const ModelParameters& p, const PoseContextCloud& z, const PairBatch& probes);

// Normalized: each step moves alpha along -grad / |grad|.
// Literal: each step moves along -alpha |grad| grad.
enum class GeodesicStep { Normalized, Literal };

struct GeodesicOptions {
  double alpha = 1e-3;
  double stop = 2e-3;
  int max_steps = 10000;
  GeodesicStep step = GeodesicStep::Normalized;
};

struct GeodesicPath {
  std::vector<Point> points;  // s side forward, then r side reversed
  int steps = 0;
  bool partial = false;
  double final_gap = 0.0;  // semimetric between the two fronts at the end
};

// Bidirectional backtracking: s and r both descend T until they meet.
GeodesicPath geodesic_trace(const ModelParameters& p, const PoseContextCloud& z, const Point& s, const Point& r,
                            const GeodesicOptions& options = {});

// ---- reports ------------------------------------------------------------------------

struct FieldEval {
  std::string name;
  double re = 0.0;
  double rmae = 0.0;
  int probes = 0;
};

struct EvalReport {
  std::vector<FieldEval> fields;
  double mean_re = 0.0;
  double mean_rmae = 0.0;
  double fit_seconds = 0.0;
  int probes = 0;
  ReForm form = ReForm::Squared;

  void add(const FieldEval& f);  // updates the aggregates
};

// Model times at every node of a reference grid, for a given source.
Eigen::VectorXd predict_on_grid(const ModelParameters& p, const PoseContextCloud& z, const TravelTimeGrid& grid,
                                const Point& source);

// Metrics of the model against reference grids, one grid per source.
FieldEval evaluate_field(const std::string& name, const ModelParameters& p, const PoseContextCloud& z,
                         const std::vector<TravelTimeGrid>& references, ReForm form = ReForm::Squared);

// Reference times for `sources`: fmm on Euclidean grids (rasterized first if
// needed, at `resolution` nodes per axis), analytic for constant fields,
// shortest paths on other sphere fields.
std::vector<TravelTimeGrid> reference_times(const VelocityField& v, const std::vector<Point>& sources,
                                            int resolution);

// Sources spread over the domain: interior lattice points for Euclidean
// kinds, a fixed spread of directions on the sphere.
std::vector<Point> default_sources(const Manifold& m, int count);

void write_report_csv(const std::string& path, const EvalReport& r);
void write_report_json(const std::string& path, const EvalReport& r);
void write_path_csv(const std::string& path, const GeodesicPath& g);

}  // namespace enes

#include "enes/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>

#include "json.hpp"

#include "enes/error.hpp"

namespace enes {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path + " for writing");
  out << std::setprecision(17);
  return out;
}

PairBatch repeat_source(const Point& source, const std::vector<Point>& targets) {
  PairBatch b;
  const int dim = static_cast<int>(source.size());
  b.s.resize(static_cast<Eigen::Index>(targets.size()), dim);
  b.r.resize(static_cast<Eigen::Index>(targets.size()), dim);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    b.s.row(static_cast<Eigen::Index>(i)) = source.transpose();
    b.r.row(static_cast<Eigen::Index>(i)) = targets[i].transpose();
  }
  return b;
}

Eigen::MatrixXd apply_rows(const GroupElement& g, const Mat& x) {
  Mat out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) out.row(i) = g.apply(x.row(i).transpose()).transpose();
  return out;
}

TravelTimeGrid analytic_grid(const VelocityField& v, const Point& source, int resolution) {
  TravelTimeGrid t;
  t.domain = v.domain();
  t.source = source;
  t.dims = t.domain.is_sphere() ? std::vector<int>{resolution / 2, resolution} : std::vector<int>{resolution, resolution};
  t.times.resize(static_cast<std::size_t>(t.dims[0]) * t.dims[1]);
  for (std::size_t i = 0; i < t.times.size(); ++i) {
    t.times[i] = analytic_constant(v.constant_value(), source, t.node_position(i), t.domain);
  }
  return t;
}

}  // namespace

Metrics metrics(const Eigen::VectorXd& pred, const Eigen::VectorXd& ref, ReForm form) {
  if (pred.size() != ref.size() || ref.size() == 0) throw ContractViolation("metrics: length mismatch or empty input");
  const double den_abs = ref.cwiseAbs().sum();
  const double den_sq = ref.squaredNorm();
  if (den_abs == 0.0) throw NumericDomainError("metrics: reference is all zero");
  const Eigen::VectorXd diff = (pred - ref).cwiseAbs();
  Metrics m;
  m.rmae = diff.sum() / den_abs;
  m.re = std::sqrt((form == ReForm::Squared ? diff.squaredNorm() : diff.sum()) / den_sq);
  return m;
}

Metrics metrics(const std::vector<Eigen::VectorXd>& pred, const std::vector<Eigen::VectorXd>& ref, ReForm form) {
  if (pred.size() != ref.size() || ref.empty()) throw ContractViolation("metrics: sample count mismatch or empty");
  Metrics total;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const Metrics m = metrics(pred[i], ref[i], form);
    total.re += m.re;
    total.rmae += m.rmae;
  }
  total.re /= static_cast<double>(ref.size());
  total.rmae /= static_cast<double>(ref.size());
  return total;
}

double steerability_check(const ModelParameters& p, const PoseContextCloud& z, const GroupElement& g,
                          const PairBatch& probes) {
  const GroupElement gi = inverse(g);
  const Eigen::VectorXd lhs = travel_times(probes, act_latents(g, z), p);
  const Eigen::VectorXd rhs = travel_times(PairBatch{apply_rows(gi, probes.s), apply_rows(gi, probes.r)}, z, p);
  return probes.size() == 0 ? 0.0 : (lhs - rhs).cwiseAbs().maxCoeff();
}

double gradient_equivariance_check(const ModelParameters& p, const PoseContextCloud& z, const GroupElement& g,
                                   const PairBatch& probes) {
  const int dim = g.dim();
  const Eigen::MatrixXd jac = g.linear().topLeftCorner(dim, dim).inverse().transpose();
  const auto lhs = travel_times_with_gradients(PairBatch{apply_rows(g, probes.s), apply_rows(g, probes.r)},
                                               act_latents(g, z), p);
  const auto rhs = travel_times_with_gradients(probes, z, p);
  double worst = 0.0;
  for (std::size_t i = 0; i < lhs.size(); ++i) {
    worst = std::max(worst, (lhs[i].grad_s - jac * rhs[i].grad_s).cwiseAbs().maxCoeff());
    worst = std::max(worst, (lhs[i].grad_r - jac * rhs[i].grad_r).cwiseAbs().maxCoeff());
  }
  return worst;
}

double recovered_velocity(const ModelParameters& p, const PoseContextCloud& z, const Point& s, const Point& anchor) {
  semimetric_value_and_grad(p.config.semimetric(), s, anchor);
  const TimeAndGradients tg = travel_time_with_gradients(s, anchor, z, p);
  const double n = metric_norm(p.config.domain, s, tg.grad_s);
  return n == 0.0 ? std::numeric_limits<double>::infinity() : 1.0 / n;
}

Eigen::VectorXd recovered_velocities(const ModelParameters& p, const PoseContextCloud& z, const PairBatch& probes) {
  const Semimetric d = p.config.semimetric();
  for (int i = 0; i < probes.size(); ++i) semimetric_value_and_grad(d, probes.s.row(i).transpose(), probes.r.row(i).transpose());
  const auto tg = travel_times_with_gradients(probes, z, p);
  Eigen::VectorXd out(probes.size());
  for (int i = 0; i < probes.size(); ++i) {
    const double n = metric_norm(p.config.domain, probes.s.row(i).transpose(), tg[i].grad_s);
    out[i] = n == 0.0 ? std::numeric_limits<double>::infinity() : 1.0 / n;
  }
  return out;
}

GeodesicPath geodesic_trace(const ModelParameters& p, const PoseContextCloud& z, const Point& s, const Point& r,
                            const GeodesicOptions& options) {
  if (!(options.alpha > 0) || !(options.stop > 0) || options.max_steps < 0) {
    throw ContractViolation("geodesic_trace: alpha and stop must be positive, max_steps non-negative");
  }
  const Manifold& m = p.config.domain;
  check_point(m, s);
  check_point(m, r);
  semimetric_value_and_grad(p.config.semimetric(), s, r);

  auto step = [&](const Point& g) -> Point {
    const double n = g.norm();
    if (n == 0.0) return Point::Zero(g.size());
    return options.step == GeodesicStep::Normalized ? Point(options.alpha / n * g) : Point(options.alpha * n * g);
  };

  std::vector<Point> fwd{s}, bwd{r};
  Point a = s, b = r;
  GeodesicPath out;
  double gap = (a - b).norm();
  while (gap >= options.stop && out.steps < options.max_steps) {
    const TimeAndGradients tg = travel_time_with_gradients(a, b, z, p);
    if (!tg.grad_s.allFinite() || !tg.grad_r.allFinite()) throw NumericFailure("geodesic_trace: non-finite gradient");
    a = retract(m, a, -step(tg.grad_s));
    b = retract(m, b, -step(tg.grad_r));
    fwd.push_back(a);
    bwd.push_back(b);
    ++out.steps;
    gap = (a - b).norm();
  }
  out.final_gap = gap;
  out.partial = gap >= options.stop;
  out.points = std::move(fwd);
  out.points.insert(out.points.end(), bwd.rbegin(), bwd.rend());
  return out;
}

void EvalReport::add(const FieldEval& f) {
  fields.push_back(f);
  probes += f.probes;
  mean_re = mean_rmae = 0.0;
  for (const FieldEval& e : fields) {
    mean_re += e.re;
    mean_rmae += e.rmae;
  }
  mean_re /= static_cast<double>(fields.size());
  mean_rmae /= static_cast<double>(fields.size());
}

Eigen::VectorXd predict_on_grid(const ModelParameters& p, const PoseContextCloud& z, const TravelTimeGrid& grid,
                                const Point& source) {
  if (source.size() == 0) throw ContractViolation("predict_on_grid: reference grid has no source");
  std::vector<Point> nodes(grid.node_count());
  for (std::size_t i = 0; i < nodes.size(); ++i) nodes[i] = grid.node_position(i);
  return travel_times(repeat_source(source, nodes), z, p);
}

FieldEval evaluate_field(const std::string& name, const ModelParameters& p, const PoseContextCloud& z,
                         const std::vector<TravelTimeGrid>& references, ReForm form) {
  std::vector<Eigen::VectorXd> pred, ref;
  FieldEval f;
  f.name = name;
  for (const TravelTimeGrid& g : references) {
    pred.push_back(predict_on_grid(p, z, g, g.source));
    ref.push_back(Eigen::Map<const Eigen::VectorXd>(g.times.data(), static_cast<Eigen::Index>(g.times.size())));
    f.probes += static_cast<int>(g.node_count());
  }
  const Metrics m = metrics(pred, ref, form);
  f.re = m.re;
  f.rmae = m.rmae;
  return f;
}

std::vector<TravelTimeGrid> reference_times(const VelocityField& v, const std::vector<Point>& sources,
                                            int resolution) {
  const Manifold& m = v.domain();
  if (resolution < 4) throw ContractViolation("reference_times: resolution must be >= 4");
  if (m.kind == ManifoldKind::Euclidean3) throw ContractViolation("reference_times: no 3D reference solver");
  const bool constant = v.kind() == FieldKind::Constant || v.kind() == FieldKind::SphereConstant;
  std::vector<TravelTimeGrid> out;
  if (m.is_sphere()) {
    for (const Point& s : sources) {
      out.push_back(constant ? analytic_grid(v, s, resolution) : sphere_shortest_path(v, s, resolution));
    }
    return out;
  }
  const VelocityField grid = v.kind() == FieldKind::Grid2 || constant ? v : rasterize(v, {resolution, resolution});
  for (const Point& s : sources) out.push_back(constant ? analytic_grid(v, s, resolution) : fmm_solve(grid, s));
  return out;
}

std::vector<Point> default_sources(const Manifold& m, int count) {
  if (count < 1) throw ContractViolation("default_sources: count must be >= 1");
  std::vector<Point> out;
  if (m.is_sphere()) {
    // Fibonacci spiral, offset away from the poles.
    const double golden = kPi * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < count; ++i) {
      const double zc = 1.0 - 2.0 * (i + 0.5) / count;
      const double rho = std::sqrt(1.0 - zc * zc);
      out.push_back(Point(Eigen::Vector3d(rho * std::cos(golden * i), rho * std::sin(golden * i), zc)));
    }
    return out;
  }
  const int dim = m.dim();
  int per = 1;
  while (std::pow(per, dim) < count) ++per;
  for (int k = 0; k < count; ++k) {
    Point p(dim);
    int rest = k;
    for (int a = 0; a < dim; ++a) {
      const int i = rest % per;
      rest /= per;
      p[a] = m.lo[a] + (i + 0.5) / per * (m.hi[a] - m.lo[a]);
    }
    out.push_back(p);
  }
  return out;
}

void write_report_csv(const std::string& path, const EvalReport& r) {
  std::ofstream out = open_out(path);
  out << "field,re,rmae,probes\n";
  for (const FieldEval& f : r.fields) out << f.name << ',' << f.re << ',' << f.rmae << ',' << f.probes << '\n';
}

void write_report_json(const std::string& path, const EvalReport& r) {
  nlohmann::ordered_json j;
  j["re_form"] = r.form == ReForm::Squared ? "squared" : "literal";
  j["mean_re"] = r.mean_re;
  j["mean_rmae"] = r.mean_rmae;
  j["fit_seconds"] = r.fit_seconds;
  j["probes"] = r.probes;
  j["fields"] = nlohmann::ordered_json::array();
  for (const FieldEval& f : r.fields) {
    j["fields"].push_back({{"name", f.name}, {"re", f.re}, {"rmae", f.rmae}, {"probes", f.probes}});
  }
  std::ofstream out = open_out(path);
  out << j.dump(2) << '\n';
}

void write_path_csv(const std::string& path, const GeodesicPath& g) {
  std::ofstream out = open_out(path);
  static const char* names[] = {"x", "y", "z"};
  const int dim = g.points.empty() ? 0 : static_cast<int>(g.points.front().size());
  out << "index";
  for (int a = 0; a < dim; ++a) out << ',' << names[dim == 2 && a == 1 ? 2 : a];
  out << '\n';
  for (std::size_t i = 0; i < g.points.size(); ++i) {
    out << i;
    for (int a = 0; a < dim; ++a) out << ',' << g.points[i][a];
    out << '\n';
  }
}

}  // namespace enes

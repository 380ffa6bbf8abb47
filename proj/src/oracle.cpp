#include "enes/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <queue>

#include "enes/error.hpp"

namespace enes {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kInf = std::numeric_limits<double>::infinity();

using HeapItem = std::pair<double, std::size_t>;
using MinHeap = std::priority_queue<HeapItem, std::vector<HeapItem>, std::greater<>>;

double arc_length(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  // atan2 form stays accurate for nearly equal and nearly antipodal points.
  return std::atan2(a.cross(b).norm(), a.dot(b));
}

Eigen::Vector3d as3(const Point& p) { return Eigen::Vector3d(p[0], p[1], p[2]); }

// One axis term of the factored update: d_a T = A tau + B.
struct AxisTerm {
  double a = 0.0, b = 0.0, sign = 1.0;
};

struct Candidate {
  bool ok = false;
  double tau = 0.0;
};

Candidate solve_terms(const AxisTerm* terms, int count, double slowness) {
  double qa = 0.0, qb = 0.0, qc = -slowness * slowness;
  for (int k = 0; k < count; ++k) {
    qa += terms[k].a * terms[k].a;
    qb += 2.0 * terms[k].a * terms[k].b;
    qc += terms[k].b * terms[k].b;
  }
  if (qa <= 0.0) return {};
  const double disc = qb * qb - 4.0 * qa * qc;
  if (disc < 0.0) return {};
  const double tau = (-qb + std::sqrt(disc)) / (2.0 * qa);
  if (!(tau > 0.0)) return {};
  for (int k = 0; k < count; ++k) {
    if (terms[k].sign * (terms[k].a * tau + terms[k].b) < -1e-12 * slowness) return {};
  }
  return {true, tau};
}

}  // namespace

Point TravelTimeGrid::node_position(std::size_t index) const {
  if (domain.is_sphere()) {
    return sphere_node(static_cast<int>(index / dims[1]), static_cast<int>(index % dims[1]), dims[0], dims[1]);
  }
  const int i = static_cast<int>(index / dims[1]), k = static_cast<int>(index % dims[1]);
  Point p(2);
  p[0] = domain.lo[0] + i * (domain.hi[0] - domain.lo[0]) / (dims[0] - 1);
  p[1] = domain.lo[1] + k * (domain.hi[1] - domain.lo[1]) / (dims[1] - 1);
  return p;
}

std::size_t TravelTimeGrid::nearest_node(const Point& p) const {
  check_point(domain, p);
  if (domain.is_sphere()) {
    const Point u = p.normalized();
    const double colat = std::acos(std::clamp(u[2], -1.0, 1.0));
    double lon = std::atan2(u[1], u[0]);
    if (lon < 0) lon += 2 * kPi;
    const int i = std::clamp(static_cast<int>(std::lround(colat * dims[0] / kPi - 0.5)), 0, dims[0] - 1);
    const int j = static_cast<int>(std::lround(lon * dims[1] / (2 * kPi))) % dims[1];
    return static_cast<std::size_t>(i) * dims[1] + j;
  }
  std::size_t idx = 0;
  for (int a = 0; a < 2; ++a) {
    const double h = (domain.hi[a] - domain.lo[a]) / (dims[a] - 1);
    const int i = std::clamp(static_cast<int>(std::lround((p[a] - domain.lo[a]) / h)), 0, dims[a] - 1);
    idx = idx * dims[a] + i;
  }
  return idx;
}

TravelTimeGrid fmm_solve(const VelocityField& v, const Point& source) {
  if (v.kind() != FieldKind::Grid2) throw ContractViolation("fast marching needs a Grid2 field");
  const Manifold& m = v.domain();
  check_point(m, source);
  for (int a = 0; a < 2; ++a) {
    if (source[a] < m.lo[a] || source[a] > m.hi[a]) throw ContractViolation("source lies outside the grid extent");
  }

  TravelTimeGrid out;
  out.domain = m;
  out.dims = v.dims();
  out.source = source;
  const int nx = out.dims[0], nz = out.dims[1];
  const std::size_t n = static_cast<std::size_t>(nx) * nz;
  const double h[2] = {(m.hi[0] - m.lo[0]) / (nx - 1), (m.hi[1] - m.lo[1]) / (nz - 1)};
  const int extent[2] = {nx, nz};
  const int stride[2] = {nz, 1};

  const std::size_t pivot = out.nearest_node(source);
  const double v0 = v.samples()[pivot];
  std::vector<double> t0(n), px(n), pz(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Point x = out.node_position(i);
    const double d = (x - source).norm();
    t0[i] = d / v0;
    if (d > 0.0) {
      px[i] = (x[0] - source[0]) / (d * v0);
      pz[i] = (x[1] - source[1]) / (d * v0);
    }
  }

  std::vector<double> tau(n, kInf), time(n, kInf);
  std::vector<char> accepted(n, 0), seeded(n, 0);
  MinHeap heap;
  // Corners of the cell holding the source start from a trapezoid estimate
  // of the straight-ray time and are not updated afterwards.
  int cell_lo[2], cell_hi[2];
  for (int a = 0; a < 2; ++a) {
    const double u = (source[a] - m.lo[a]) / h[a];
    cell_lo[a] = std::clamp(static_cast<int>(std::floor(u)), 0, extent[a] - 1);
    cell_hi[a] = std::clamp(static_cast<int>(std::ceil(u)), 0, extent[a] - 1);
    if (std::abs(u - std::round(u)) < 1e-9) cell_lo[a] = cell_hi[a] = static_cast<int>(std::lround(u));
  }
  const double slowness_src = 1.0 / v.sample(source);
  for (int i = cell_lo[0]; i <= cell_hi[0]; ++i) {
    for (int k = cell_lo[1]; k <= cell_hi[1]; ++k) {
      const std::size_t idx = static_cast<std::size_t>(i) * nz + k;
      const double d = (out.node_position(idx) - source).norm();
      time[idx] = 0.5 * d * (slowness_src + 1.0 / v.samples()[idx]);
      tau[idx] = t0[idx] > 0.0 ? time[idx] / t0[idx] : 1.0;
      seeded[idx] = 1;
      heap.push({time[idx], idx});
    }
  }

  auto coord = [&](std::size_t idx, int axis) {
    return axis == 0 ? static_cast<int>(idx / nz) : static_cast<int>(idx % nz);
  };

  auto update = [&](std::size_t idx) -> double {
    const double slowness = 1.0 / v.samples()[idx];
    const double p[2] = {px[idx], pz[idx]};
    AxisTerm second[2], first[2];
    int count = 0;
    bool has_second[2] = {false, false};
    bool upwind[2] = {false, false};
    double upwind_time[2] = {kInf, kInf};
    long upwind_node[2] = {-1, -1};
    for (int a = 0; a < 2; ++a) {
      const int c = coord(idx, a);
      long best = -1;
      double sign = 0.0;
      for (int dir : {-1, 1}) {
        const int cn = c + dir;
        if (cn < 0 || cn >= extent[a]) continue;
        const std::size_t nb = idx + static_cast<long>(dir) * stride[a];
        if (!accepted[nb]) continue;
        if (best < 0 || time[nb] < time[best]) {
          best = static_cast<long>(nb);
          sign = -dir;  // +1 when the upwind node sits at the lower index
        }
      }
      if (best < 0) continue;
      const double tau1 = tau[best];
      first[a] = {p[a] + sign * t0[idx] / h[a], -sign * t0[idx] * tau1 / h[a], sign};
      second[a] = first[a];
      const int c2 = c - 2 * static_cast<int>(sign);
      if (c2 >= 0 && c2 < extent[a]) {
        const std::size_t nb2 = idx - static_cast<long>(2 * sign) * stride[a];
        if (accepted[nb2] && time[nb2] <= time[best]) {
          const double beta = 2.0 * tau1 - 0.5 * tau[nb2];
          second[a] = {p[a] + sign * 1.5 * t0[idx] / h[a], -sign * t0[idx] * beta / h[a], sign};
          has_second[a] = true;
        }
      }
      upwind[a] = true;
      upwind_time[a] = time[best];
      upwind_node[a] = best;
      ++count;
    }
    if (count == 0) return kInf;

    auto best_of = [&](const AxisTerm* terms) {
      if (count == 2) {
        const Candidate c = solve_terms(terms, 2, slowness);
        if (c.ok) return c.tau;
      }
      if (count == 1) {
        const int a = upwind[0] ? 0 : 1;
        // Next to the source line along the other axis the straight-ray term
        // is kept; elsewhere it is dropped so the estimate stays an upper bound.
        const int b = 1 - a;
        const Point x = out.node_position(idx);
        const bool near_line = std::abs(x[b] - source[b]) < h[b];
        AxisTerm other{0.0, 0.0, 0.0};
        if (near_line) {
          // d tau along b, borrowed from the upwind node's accepted neighbors.
          const std::size_t u = static_cast<std::size_t>(upwind_node[a]);
          const int cb = coord(u, b);
          const bool lo_ok = cb > 0 && accepted[u - stride[b]];
          const bool hi_ok = cb + 1 < extent[b] && accepted[u + stride[b]];
          double dtau = 0.0;
          if (lo_ok && hi_ok) {
            dtau = (tau[u + stride[b]] - tau[u - stride[b]]) / (2 * h[b]);
          } else if (hi_ok) {
            dtau = (tau[u + stride[b]] - tau[u]) / h[b];
          } else if (lo_ok) {
            dtau = (tau[u] - tau[u - stride[b]]) / h[b];
          }
          other = {p[b], t0[idx] * dtau, 0.0};
        }
        const AxisTerm one[2] = {terms[a], other};
        const Candidate c = solve_terms(one, 2, slowness);
        if (c.ok) return c.tau;
      }
      return kInf;
    };
    double t = kInf;
    if (has_second[0] || has_second[1]) t = best_of(second);
    if (!std::isfinite(t)) t = best_of(first);
    if (!std::isfinite(t) && t0[idx] > 0.0) {
      // Unfactored one-sided step, an upper bound on the arrival time.
      double best = kInf;
      for (int a = 0; a < 2; ++a) {
        if (upwind[a]) best = std::min(best, upwind_time[a] + h[a] * slowness);
      }
      t = best / t0[idx];
    }
    return t;
  };

  double front = 0.0;
  while (!heap.empty()) {
    const auto [t, idx] = heap.top();
    heap.pop();
    if (accepted[idx] || t != time[idx]) continue;
    if (t < front) throw NumericFailure("fast marching acceptance order is not monotone");
    front = t;
    accepted[idx] = 1;
    out.order.push_back(idx);
    for (int a = 0; a < 2; ++a) {
      const int c = coord(idx, a);
      for (int dir : {-1, 1}) {
        const int cn = c + dir;
        if (cn < 0 || cn >= extent[a]) continue;
        const std::size_t nb = idx + static_cast<long>(dir) * stride[a];
        if (accepted[nb] || seeded[nb]) continue;
        const double tn = update(nb);
        if (!std::isfinite(tn)) throw NumericFailure("fast marching update failed");
        // Causality: never below the current front.
        // The latest update uses the most upwind information, so it replaces
        // the previous tentative value instead of competing with it.
        const double cand = std::max(t0[nb] * tn, front);
        if (cand != time[nb]) {
          time[nb] = cand;
          tau[nb] = t0[nb] > 0.0 ? cand / t0[nb] : 1.0;
          heap.push({cand, nb});
        }
      }
    }
  }
  out.times = std::move(time);
  return out;
}

double analytic_constant(double v, const Point& s, const Point& r, const Manifold& m) {
  if (!(v > 0.0)) throw ContractViolation("velocity must be positive");
  check_point(m, s);
  check_point(m, r);
  if (m.is_sphere()) return arc_length(as3(s), as3(r)) / v;
  return (s - r).norm() / v;
}

double analytic_linear_gradient(double v0, double g, const Point& s, const Point& r) {
  if (s.size() != r.size() || s.size() == 0) throw ContractViolation("points must share a dimension");
  const int z = static_cast<int>(s.size()) - 1;
  const double vs = v0 + g * s[z], vr = v0 + g * r[z];
  if (!(vs > 0.0) || !(vr > 0.0)) throw ContractViolation("velocity must be positive along the segment");
  const double d2 = (s - r).squaredNorm();
  if (g == 0.0) return std::sqrt(d2) / v0;
  // arccosh(1 + x) = log1p(x + sqrt(x (x + 2))), stable for small x.
  const double x = g * g * d2 / (2.0 * vs * vr);
  return std::log1p(x + std::sqrt(x * (x + 2.0))) / std::abs(g);
}

TravelTimeGrid sphere_shortest_path(const VelocityField& v, const Point& source, int resolution, int stencil) {
  if (!v.domain().is_sphere()) throw ContractViolation("sphere shortest paths need a sphere field");
  if (resolution < 16 || resolution % 2 != 0) throw ContractViolation("resolution must be even and at least 16");
  if (stencil < 1) throw ContractViolation("stencil must be positive");
  check_point(v.domain(), source);
  const Point src = source.normalized();

  TravelTimeGrid out;
  out.domain = Manifold::sphere();
  const int n_lat = resolution / 2, n_lon = resolution;
  out.dims = {n_lat, n_lon};
  out.source = src;
  const std::size_t n = static_cast<std::size_t>(n_lat) * n_lon;
  std::vector<Eigen::Vector3d> pos(n);
  for (std::size_t i = 0; i < n; ++i) pos[i] = as3(out.node_position(i));

  std::vector<double> sin_row(n_lat);
  for (int i = 0; i < n_lat; ++i) sin_row[i] = std::sin((i + 0.5) * kPi / n_lat);
  const double dlat = kPi / n_lat, dlon = 2 * kPi / n_lon;
  auto col_span = [&](int i, int i2) {
    const double s = std::min(sin_row[i], sin_row[i2]);
    const double span = std::ceil(stencil * dlat / (s * dlon));
    return static_cast<int>(std::min<double>(span, n_lon / 2));
  };
  auto edge_time = [&](const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
    const Eigen::Vector3d mid = a + b;
    const double len = std::atan2(a.cross(b).norm(), a.dot(b));
    if (mid.norm() < 1e-12) return kInf;
    return len / v.sample(Point(mid.normalized()));
  };
  auto for_neighbors = [&](std::size_t idx, auto&& fn) {
    const int i = static_cast<int>(idx / n_lon), j = static_cast<int>(idx % n_lon);
    for (int i2 = std::max(0, i - stencil); i2 <= std::min(n_lat - 1, i + stencil); ++i2) {
      const int span = col_span(i, i2);
      const int lo = j - span, hi = span * 2 + 1 >= n_lon ? j - span + n_lon - 1 : j + span;
      for (int j2 = lo; j2 <= hi; ++j2) {
        const std::size_t nb = static_cast<std::size_t>(i2) * n_lon + ((j2 % n_lon) + n_lon) % n_lon;
        if (nb != idx) fn(nb);
      }
    }
  };

  std::vector<double> time(n, kInf);
  std::vector<char> done(n, 0);
  MinHeap heap;
  const Eigen::Vector3d s3 = as3(src);
  const std::size_t start = out.nearest_node(src);
  auto seed = [&](std::size_t idx) {
    const double t = (pos[idx] - s3).norm() < 1e-15 ? 0.0 : edge_time(s3, pos[idx]);
    if (t < time[idx]) {
      time[idx] = t;
      heap.push({t, idx});
    }
  };
  seed(start);
  for_neighbors(start, seed);

  while (!heap.empty()) {
    const auto [t, idx] = heap.top();
    heap.pop();
    if (done[idx] || t > time[idx]) continue;
    done[idx] = 1;
    out.order.push_back(idx);
    for_neighbors(idx, [&](std::size_t nb) {
      if (done[nb]) return;
      const double cand = t + edge_time(pos[idx], pos[nb]);
      if (cand < time[nb]) {
        time[nb] = cand;
        heap.push({cand, nb});
      }
    });
  }
  out.times = std::move(time);
  return out;
}

std::vector<std::uint8_t> write_time_grid(const TravelTimeGrid& t) {
  if (t.dims.size() != 2 || t.times.size() != static_cast<std::size_t>(t.dims[0]) * t.dims[1]) {
    throw ContractViolation("time grid shape does not match its samples");
  }
  RawGrid g;
  g.kind = t.domain.is_sphere() ? kSphereTimeGridKind : kTimeGridKind;
  g.dims = {static_cast<std::uint32_t>(t.dims[0]), static_cast<std::uint32_t>(t.dims[1])};
  if (t.domain.is_sphere()) {
    g.lo = {0.0, 0.0};
    g.hi = {kPi, 2 * kPi};
  } else {
    g.lo = {t.domain.lo[0], t.domain.lo[1]};
    g.hi = {t.domain.hi[0], t.domain.hi[1]};
  }
  const auto [mn, mx] = std::minmax_element(t.times.begin(), t.times.end());
  g.v_min = *mn;
  g.v_max = *mx;
  g.samples.assign(t.times.begin(), t.times.end());
  return encode_vgrid(g);
}

TravelTimeGrid read_time_grid(const std::vector<std::uint8_t>& bytes) {
  const RawGrid g = decode_vgrid(bytes);
  if (g.kind != kTimeGridKind && g.kind != kSphereTimeGridKind) {
    throw FormatError(FormatErrorCode::Invalid, "VGRID kind " + std::to_string(g.kind) + " is not a time grid");
  }
  if (g.dims.size() != 2 || g.dims[0] < 2 || g.dims[1] < 2) {
    throw FormatError(FormatErrorCode::Invalid, "time grids are two-dimensional");
  }
  TravelTimeGrid t;
  if (g.kind == kSphereTimeGridKind) {
    t.domain = Manifold::sphere();
  } else {
    try {
      t.domain = Manifold::euclidean(Point(Eigen::Vector2d(g.lo[0], g.lo[1])), Point(Eigen::Vector2d(g.hi[0], g.hi[1])));
    } catch (const ContractViolation& e) {
      throw FormatError(FormatErrorCode::Invalid, e.what());
    }
  }
  t.dims = {static_cast<int>(g.dims[0]), static_cast<int>(g.dims[1])};
  t.times.assign(g.samples.begin(), g.samples.end());
  return t;
}

void save_time_grid(const std::string& path, const TravelTimeGrid& t) { write_file_bytes(path, write_time_grid(t)); }

TravelTimeGrid load_time_grid(const std::string& path) { return read_time_grid(read_file_bytes(path)); }

}  // namespace enes

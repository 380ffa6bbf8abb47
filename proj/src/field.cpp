#include "enes/field.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>

#include "detail/binary_io.hpp"
#include "enes/error.hpp"
#include "enes/random.hpp"

namespace enes {

struct VelocityField::Impl {
  FieldKind kind = FieldKind::Constant;
  Manifold domain;
  double v_min = 1.0;
  double v_max = 1.0;
  std::vector<int> dims;
  std::vector<float> samples;
  double constant = 1.0;
  double v0 = 1.0;
  double gradient = 0.0;
  std::vector<VmfBump> bumps;
  double density_lo = 0.0;
  double density_hi = 1.0;
  std::function<double(const Point&)> fn;

  double evaluate(const Point& p) const;
  double grid2(const Point& p) const;
  double grid3(const Point& p) const;
  double sphere(const Point& p) const;
  double obstacle(const Point& p) const;
};

namespace {

constexpr double kPi = std::numbers::pi;

// Fractional grid coordinate of x along one axis, clamped into the grid.
std::pair<int, double> locate(double x, double lo, double hi, int n) {
  double u = (x - lo) / (hi - lo) * (n - 1);
  u = std::clamp(u, 0.0, static_cast<double>(n - 1));
  int i = static_cast<int>(std::floor(u));
  if (i >= n - 1) i = n - 2;
  return {i, u - i};
}

void check_finite(const Point& p) {
  if (!p.allFinite()) throw ContractViolation("velocity sampled at a non-finite point");
}

double vmf_density(const std::vector<VmfBump>& bumps, const Point& p) {
  double f = 0.0;
  for (const auto& b : bumps) f += std::exp(b.kappa * (b.mean.dot(Eigen::Vector3d(p[0], p[1], p[2])) - 1.0));
  return f;
}

void check_bounds(double v_min, double v_max) {
  if (!(v_min > 0.0) || !(v_min <= v_max) || !std::isfinite(v_max)) {
    throw ContractViolation("velocity bounds must satisfy 0 < v_min <= v_max");
  }
}

std::shared_ptr<VelocityField::Impl> grid_impl(FieldKind kind, const Manifold& m, std::vector<int> dims,
                                               std::vector<float> samples) {
  std::size_t count = 1;
  for (int d : dims) {
    if (d < 2) throw ContractViolation("grid fields need at least 2 nodes per axis");
    count *= static_cast<std::size_t>(d);
  }
  if (samples.size() != count) throw ContractViolation("sample count does not match grid dims");
  auto impl = std::make_shared<VelocityField::Impl>();
  impl->kind = kind;
  impl->domain = m;
  impl->dims = std::move(dims);
  impl->samples = std::move(samples);
  const auto [lo, hi] = std::minmax_element(impl->samples.begin(), impl->samples.end());
  impl->v_min = *lo;
  impl->v_max = *hi;
  check_bounds(impl->v_min, impl->v_max);
  return impl;
}

}  // namespace

std::string to_string(FieldKind kind) {
  switch (kind) {
    case FieldKind::Grid2: return "grid2";
    case FieldKind::Grid3: return "grid3";
    case FieldKind::SphereGrid: return "sphere_grid";
    case FieldKind::Constant: return "constant";
    case FieldKind::SphereConstant: return "sphere_constant";
    case FieldKind::LinearGradient: return "linear_gradient";
    case FieldKind::GaussianObstacle: return "gaussian_obstacle";
    case FieldKind::Analytic: return "analytic";
  }
  return "unknown";
}

Point sphere_node(int i, int j, int n_lat, int n_lon) {
  const double colat = (i + 0.5) * kPi / n_lat;
  const double lon = 2.0 * kPi * j / n_lon;
  Point p(3);
  p << std::sin(colat) * std::cos(lon), std::sin(colat) * std::sin(lon), std::cos(colat);
  return p;
}

double VelocityField::Impl::grid2(const Point& p) const {
  const auto [i, fx] = locate(p[0], domain.lo[0], domain.hi[0], dims[0]);
  const auto [j, fz] = locate(p[1], domain.lo[1], domain.hi[1], dims[1]);
  const int nz = dims[1];
  auto at = [&](int a, int b) { return static_cast<double>(samples[static_cast<std::size_t>(a) * nz + b]); };
  const double v0 = at(i, j) * (1 - fz) + at(i, j + 1) * fz;
  const double v1 = at(i + 1, j) * (1 - fz) + at(i + 1, j + 1) * fz;
  return v0 * (1 - fx) + v1 * fx;
}

double VelocityField::Impl::grid3(const Point& p) const {
  const auto [i, fx] = locate(p[0], domain.lo[0], domain.hi[0], dims[0]);
  const auto [j, fy] = locate(p[1], domain.lo[1], domain.hi[1], dims[1]);
  const auto [k, fz] = locate(p[2], domain.lo[2], domain.hi[2], dims[2]);
  const std::size_t ny = dims[1], nz = dims[2];
  auto at = [&](int a, int b, int c) { return static_cast<double>(samples[(a * ny + b) * nz + c]); };
  double acc = 0.0;
  for (int da = 0; da < 2; ++da) {
    for (int db = 0; db < 2; ++db) {
      for (int dc = 0; dc < 2; ++dc) {
        const double w = (da ? fx : 1 - fx) * (db ? fy : 1 - fy) * (dc ? fz : 1 - fz);
        acc += w * at(i + da, j + db, k + dc);
      }
    }
  }
  return acc;
}

double VelocityField::Impl::sphere(const Point& p) const {
  const int n_lat = dims[0], n_lon = dims[1];
  const Point u = p / p.norm();
  const double colat = std::acos(std::clamp(u[2], -1.0, 1.0));
  double lon = std::atan2(u[1], u[0]);
  if (lon < 0) lon += 2 * kPi;
  const int ic = static_cast<int>(std::floor(colat / kPi * n_lat - 0.5));
  const int jc = static_cast<int>(std::floor(lon / (2 * kPi) * n_lon));

  // Keep the four largest dot products (smallest cosine distances).
  std::array<double, 4> best_dot{-2, -2, -2, -2};
  std::array<std::size_t, 4> best_idx{0, 0, 0, 0};
  auto consider = [&](int i, int j) {
    j = ((j % n_lon) + n_lon) % n_lon;
    const double d = sphere_node(i, j, n_lat, n_lon).dot(u);
    const std::size_t idx = static_cast<std::size_t>(i) * n_lon + j;
    for (int k = 0; k < 4; ++k) {
      if (best_idx[k] == idx && best_dot[k] > -2) return;
    }
    int slot = -1;
    for (int k = 0; k < 4; ++k) {
      if (d > best_dot[k] && (slot < 0 || best_dot[k] < best_dot[slot])) slot = k;
    }
    if (slot >= 0) {
      best_dot[slot] = d;
      best_idx[slot] = idx;
    }
  };
  for (int i = std::max(0, ic - 1); i <= std::min(n_lat - 1, ic + 2); ++i) {
    // Near the poles longitude cells shrink; scan the whole ring.
    const bool polar = i <= 1 || i >= n_lat - 2;
    if (polar) {
      for (int j = 0; j < n_lon; ++j) consider(i, j);
    } else {
      for (int j = jc - 1; j <= jc + 2; ++j) consider(i, j);
    }
  }
  double wsum = 0.0, acc = 0.0;
  for (int k = 0; k < 4; ++k) {
    const double dist = 1.0 - best_dot[k];
    if (dist <= 1e-15) return samples[best_idx[k]];
    const double w = 1.0 / dist;
    wsum += w;
    acc += w * samples[best_idx[k]];
  }
  return acc / wsum;
}

double VelocityField::Impl::obstacle(const Point& p) const {
  const Point u = p / p.norm();
  const double f = (vmf_density(bumps, u) - density_lo) / (density_hi - density_lo);
  return v_max - (v_max - v_min) * f;
}

double VelocityField::Impl::evaluate(const Point& p) const {
  switch (kind) {
    case FieldKind::Grid2: return grid2(domain.clamp(p));
    case FieldKind::Grid3: return grid3(domain.clamp(p));
    case FieldKind::SphereGrid: return sphere(p);
    case FieldKind::Constant:
    case FieldKind::SphereConstant: return constant;
    case FieldKind::LinearGradient: {
      const Point q = domain.clamp(p);
      return v0 + gradient * q[q.size() - 1];
    }
    case FieldKind::GaussianObstacle: return obstacle(p);
    case FieldKind::Analytic: return fn(p);
  }
  return constant;
}

VelocityField VelocityField::constant(double v, const Manifold& m) {
  check_bounds(v, v);
  auto impl = std::make_shared<Impl>();
  impl->kind = m.is_sphere() ? FieldKind::SphereConstant : FieldKind::Constant;
  impl->domain = m;
  impl->constant = v;
  impl->v_min = impl->v_max = v;
  return VelocityField(impl);
}

VelocityField VelocityField::grid2(const Manifold& m, int nx, int nz, std::vector<float> samples) {
  if (m.kind != ManifoldKind::Euclidean2) throw ContractViolation("grid2 needs a 2D Euclidean domain");
  return VelocityField(grid_impl(FieldKind::Grid2, m, {nx, nz}, std::move(samples)));
}

VelocityField VelocityField::grid3(const Manifold& m, int nx, int ny, int nz, std::vector<float> samples) {
  if (m.kind != ManifoldKind::Euclidean3) throw ContractViolation("grid3 needs a 3D Euclidean domain");
  return VelocityField(grid_impl(FieldKind::Grid3, m, {nx, ny, nz}, std::move(samples)));
}

VelocityField VelocityField::sphere_grid(int n_lat, int n_lon, std::vector<float> samples) {
  return VelocityField(grid_impl(FieldKind::SphereGrid, Manifold::sphere(), {n_lat, n_lon}, std::move(samples)));
}

VelocityField VelocityField::linear_gradient(double v0, double gradient, const Manifold& m) {
  if (m.is_sphere()) throw ContractViolation("linear gradient fields live on Euclidean domains");
  const int last = m.dim() - 1;
  const double a = v0 + gradient * m.lo[last];
  const double b = v0 + gradient * m.hi[last];
  auto impl = std::make_shared<Impl>();
  impl->kind = FieldKind::LinearGradient;
  impl->domain = m;
  impl->v0 = v0;
  impl->gradient = gradient;
  impl->v_min = std::min(a, b);
  impl->v_max = std::max(a, b);
  check_bounds(impl->v_min, impl->v_max);
  return VelocityField(impl);
}

VelocityField VelocityField::gaussian_obstacle(std::vector<VmfBump> bumps, double v_min, double v_max) {
  check_bounds(v_min, v_max);
  if (bumps.empty()) throw ContractViolation("obstacle field needs at least one bump");
  for (auto& b : bumps) {
    if (!(b.kappa > 0.0)) throw ContractViolation("vMF concentration must be positive");
    b.mean.normalize();
  }
  auto impl = std::make_shared<Impl>();
  impl->kind = FieldKind::GaussianObstacle;
  impl->domain = Manifold::sphere();
  impl->v_min = v_min;
  impl->v_max = v_max;
  impl->bumps = std::move(bumps);
  if (impl->bumps.size() == 1) {
    // Peak at the mean, minimum at the antipode.
    impl->density_hi = 1.0;
    impl->density_lo = std::exp(-2.0 * impl->bumps[0].kappa);
  } else {
    // Dense Fibonacci probe for the mixture's range.
    constexpr int probes = 20000;
    double lo = 1e300, hi = -1e300;
    const double golden = kPi * (3.0 - std::sqrt(5.0));
    for (int k = 0; k < probes; ++k) {
      const double z = 1.0 - 2.0 * (k + 0.5) / probes;
      const double rad = std::sqrt(1.0 - z * z);
      Point p(3);
      p << rad * std::cos(golden * k), rad * std::sin(golden * k), z;
      const double f = vmf_density(impl->bumps, p);
      lo = std::min(lo, f);
      hi = std::max(hi, f);
    }
    for (const auto& b : impl->bumps) {
      Point p(3);
      p << b.mean[0], b.mean[1], b.mean[2];
      hi = std::max(hi, vmf_density(impl->bumps, p));
    }
    impl->density_lo = lo;
    impl->density_hi = hi;
  }
  return VelocityField(impl);
}

VelocityField VelocityField::analytic(const Manifold& m, std::function<double(const Point&)> fn, double v_min,
                                      double v_max) {
  check_bounds(v_min, v_max);
  auto impl = std::make_shared<Impl>();
  impl->kind = FieldKind::Analytic;
  impl->domain = m;
  impl->fn = std::move(fn);
  impl->v_min = v_min;
  impl->v_max = v_max;
  return VelocityField(impl);
}

FieldKind VelocityField::kind() const { return impl_->kind; }
const Manifold& VelocityField::domain() const { return impl_->domain; }
double VelocityField::v_min() const { return impl_->v_min; }
double VelocityField::v_max() const { return impl_->v_max; }
const std::vector<int>& VelocityField::dims() const { return impl_->dims; }
const std::vector<float>& VelocityField::samples() const { return impl_->samples; }

double VelocityField::constant_value() const {
  if (impl_->kind != FieldKind::Constant && impl_->kind != FieldKind::SphereConstant) {
    throw ContractViolation("constant_value() on a non-constant field");
  }
  return impl_->constant;
}

bool VelocityField::is_grid() const {
  return impl_->kind == FieldKind::Grid2 || impl_->kind == FieldKind::Grid3 || impl_->kind == FieldKind::SphereGrid;
}

double VelocityField::sample(const Point& p) const {
  check_point(impl_->domain, p);
  check_finite(p);
  return std::clamp(impl_->evaluate(p), impl_->v_min, impl_->v_max);
}

std::size_t VelocityField::node_count() const {
  std::size_t n = 1;
  for (int d : impl_->dims) n *= static_cast<std::size_t>(d);
  return impl_->dims.empty() ? 0 : n;
}

Point VelocityField::node_position(std::size_t index) const {
  const auto& d = impl_->dims;
  if (!is_grid() || index >= node_count()) throw ContractViolation("node index out of range");
  if (impl_->kind == FieldKind::SphereGrid) {
    return sphere_node(static_cast<int>(index / d[1]), static_cast<int>(index % d[1]), d[0], d[1]);
  }
  const auto& m = impl_->domain;
  const int n = static_cast<int>(d.size());
  Point p(n);
  for (int a = n - 1; a >= 0; --a) {
    const int i = static_cast<int>(index % d[a]);
    index /= d[a];
    p[a] = m.lo[a] + (m.hi[a] - m.lo[a]) * i / (d[a] - 1);
  }
  return p;
}

VelocityField rasterize(const VelocityField& v, const std::vector<int>& dims) {
  const Manifold& m = v.domain();
  std::size_t count = 1;
  for (int d : dims) count *= static_cast<std::size_t>(d);
  std::vector<float> samples(count);
  if (m.is_sphere()) {
    if (dims.size() != 2) throw ContractViolation("sphere grids have two axes");
    for (int i = 0; i < dims[0]; ++i) {
      for (int j = 0; j < dims[1]; ++j) {
        samples[static_cast<std::size_t>(i) * dims[1] + j] =
            static_cast<float>(v.sample(sphere_node(i, j, dims[0], dims[1])));
      }
    }
    return VelocityField::sphere_grid(dims[0], dims[1], std::move(samples));
  }
  if (static_cast<int>(dims.size()) != m.dim()) throw ContractViolation("grid dims do not match the domain");
  for (int d : dims) {
    if (d < 2) throw ContractViolation("grid fields need at least 2 nodes per axis");
  }
  for (std::size_t idx = 0; idx < count; ++idx) {
    std::size_t rem = idx;
    Point p(m.dim());
    for (int a = m.dim() - 1; a >= 0; --a) {
      const int i = static_cast<int>(rem % dims[a]);
      rem /= dims[a];
      p[a] = m.lo[a] + (m.hi[a] - m.lo[a]) * i / (dims[a] - 1);
    }
    samples[idx] = static_cast<float>(v.sample(p));
  }
  if (m.dim() == 2) return VelocityField::grid2(m, dims[0], dims[1], std::move(samples));
  if (m.dim() == 3) return VelocityField::grid3(m, dims[0], dims[1], dims[2], std::move(samples));
  throw ContractViolation("rasterize supports 2D/3D Euclidean domains and the sphere");
}

VelocityField generate(const GeneratorParams& params, std::uint64_t seed) {
  Rng rng = make_rng(seed, "field");
  const Manifold& m = params.domain;
  switch (params.kind) {
    case GeneratorKind::Constant: {
      if (!(params.v_lo > 0.0) || !(params.v_lo <= params.v_hi)) throw ContractViolation("invalid speed range");
      return VelocityField::constant(uniform(rng, params.v_lo, params.v_hi), m);
    }
    case GeneratorKind::Layered: {
      if (m.is_sphere()) throw ContractViolation("layered fields live on Euclidean domains");
      std::vector<double> speeds = params.speeds;
      if (speeds.empty()) {
        if (params.layers < 1) throw ContractViolation("need at least one layer");
        if (!(params.v_lo > 0.0) || !(params.v_lo <= params.v_hi)) throw ContractViolation("invalid speed range");
        for (int k = 0; k < params.layers; ++k) speeds.push_back(uniform(rng, params.v_lo, params.v_hi));
        std::sort(speeds.begin(), speeds.end());
      }
      for (double s : speeds) {
        if (!(s > 0.0)) throw ContractViolation("layer speeds must be positive");
      }
      const int n_layers = static_cast<int>(speeds.size());
      // Interfaces in normalized depth (0, 1) with a minimum gap.
      std::vector<double> cuts;
      const double gap = params.min_layer_gap;
      if (gap * (n_layers + 1) >= 1.0) throw ContractViolation("layers do not fit with the requested gap");
      for (int attempt = 0; attempt < 10000; ++attempt) {
        cuts.clear();
        for (int k = 0; k + 1 < n_layers; ++k) cuts.push_back(uniform(rng, gap, 1.0 - gap));
        std::sort(cuts.begin(), cuts.end());
        bool ok = true;
        for (std::size_t k = 1; k < cuts.size(); ++k) ok = ok && (cuts[k] - cuts[k - 1] >= gap);
        if (ok) break;
      }
      const int last = m.dim() - 1;
      const double lo = m.lo[last], hi = m.hi[last];
      auto fn = [speeds, cuts, lo, hi](const Point& p) {
        const double depth = (p[p.size() - 1] - lo) / (hi - lo);
        const auto layer = std::upper_bound(cuts.begin(), cuts.end(), depth) - cuts.begin();
        return speeds[static_cast<std::size_t>(layer)];
      };
      const auto [vmin, vmax] = std::minmax_element(speeds.begin(), speeds.end());
      return rasterize(VelocityField::analytic(m, fn, *vmin, *vmax), params.dims);
    }
    case GeneratorKind::LinearGradient:
      return rasterize(VelocityField::linear_gradient(params.v0, params.gradient, m), params.dims);
    case GeneratorKind::GaussianObstacle: {
      if (!m.is_sphere()) throw ContractViolation("obstacle fields live on the sphere");
      if (!(params.v_lo > 0.0) || !(params.v_lo < params.v_hi)) throw ContractViolation("invalid speed range");
      if (!(params.kappa_lo > 0.0) || !(params.kappa_lo <= params.kappa_hi)) {
        throw ContractViolation("invalid concentration range");
      }
      std::vector<VmfBump> bumps;
      std::normal_distribution<double> normal(0.0, 1.0);
      for (int b = 0; b < std::max(1, params.bumps); ++b) {
        Eigen::Vector3d mu(normal(rng), normal(rng), normal(rng));
        bumps.push_back({mu.normalized(), uniform(rng, params.kappa_lo, params.kappa_hi)});
      }
      const VelocityField exact = VelocityField::gaussian_obstacle(bumps, params.v_lo, params.v_hi);
      const VelocityField grid = rasterize(exact, params.dims);
      // Stretch node values onto exactly [v_lo, v_hi].
      std::vector<float> s = grid.samples();
      const auto [lo_it, hi_it] = std::minmax_element(s.begin(), s.end());
      const double lo = *lo_it, hi = *hi_it;
      for (float& x : s) x = static_cast<float>(params.v_lo + (params.v_hi - params.v_lo) * (x - lo) / (hi - lo));
      for (float& x : s) x = std::clamp(x, static_cast<float>(params.v_lo), static_cast<float>(params.v_hi));
      return VelocityField::sphere_grid(params.dims[0], params.dims[1], std::move(s));
    }
  }
  throw ContractViolation("unknown generator kind");
}

std::vector<std::uint8_t> encode_vgrid(const RawGrid& g) {
  detail::ByteWriter w;
  w.put_bytes("VGRD", 4);
  w.put<std::uint16_t>(kVgridVersion);
  w.put<std::uint8_t>(g.kind);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(g.dims.size()));
  for (auto d : g.dims) w.put<std::uint32_t>(d);
  for (std::size_t a = 0; a < g.dims.size(); ++a) {
    w.put<double>(g.lo[a]);
    w.put<double>(g.hi[a]);
  }
  w.put<double>(g.v_min);
  w.put<double>(g.v_max);
  w.put_bytes(g.samples.data(), g.samples.size() * sizeof(float));
  return std::move(w.bytes());
}

RawGrid decode_vgrid(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes);
  char magic[4];
  r.get_bytes(magic, 4);
  if (std::string(magic, 4) != "VGRD") throw FormatError(FormatErrorCode::BadMagic, "not a VGRID file");
  const auto version = r.get<std::uint16_t>();
  if (version != kVgridVersion) {
    throw FormatError(FormatErrorCode::VersionMismatch, "unsupported VGRID version " + std::to_string(version));
  }
  RawGrid g;
  g.kind = r.get<std::uint8_t>();
  const int ndim = r.get<std::uint8_t>();
  std::size_t count = 1;
  for (int a = 0; a < ndim; ++a) {
    g.dims.push_back(r.get<std::uint32_t>());
    count *= g.dims.back();
  }
  for (int a = 0; a < ndim; ++a) {
    g.lo.push_back(r.get<double>());
    g.hi.push_back(r.get<double>());
  }
  g.v_min = r.get<double>();
  g.v_max = r.get<double>();
  if (ndim == 0) count = 0;
  if (r.remaining() < count * sizeof(float)) throw FormatError(FormatErrorCode::Truncated, "VGRID payload truncated");
  g.samples.resize(count);
  r.get_bytes(g.samples.data(), count * sizeof(float));
  if (r.remaining() != 0) throw FormatError(FormatErrorCode::Invalid, "trailing bytes after VGRID payload");
  return g;
}

std::vector<std::uint8_t> write_vgrid(const VelocityField& v) {
  RawGrid g;
  g.kind = static_cast<std::uint8_t>(v.kind());
  g.v_min = v.v_min();
  g.v_max = v.v_max();
  const Manifold& m = v.domain();
  switch (v.kind()) {
    case FieldKind::Grid2:
    case FieldKind::Grid3:
      for (int a = 0; a < m.dim(); ++a) {
        g.dims.push_back(static_cast<std::uint32_t>(v.dims()[a]));
        g.lo.push_back(m.lo[a]);
        g.hi.push_back(m.hi[a]);
      }
      g.samples = v.samples();
      break;
    case FieldKind::SphereGrid:
      g.dims = {static_cast<std::uint32_t>(v.dims()[0]), static_cast<std::uint32_t>(v.dims()[1])};
      g.lo = {0.0, 0.0};
      g.hi = {kPi, 2 * kPi};
      g.samples = v.samples();
      break;
    case FieldKind::Constant:
      for (int a = 0; a < m.dim(); ++a) {
        g.dims.push_back(1);
        g.lo.push_back(m.lo[a]);
        g.hi.push_back(m.hi[a]);
      }
      g.samples = {static_cast<float>(v.constant_value())};
      break;
    case FieldKind::SphereConstant:
      g.samples = {};
      break;
    default:
      throw ContractViolation("VGRID stores grid and constant fields; rasterize " + to_string(v.kind()) + " first");
  }
  return encode_vgrid(g);
}

VelocityField read_vgrid(const std::vector<std::uint8_t>& bytes) {
  const RawGrid g = decode_vgrid(bytes);
  auto domain = [&]() {
    Point lo(static_cast<int>(g.dims.size())), hi(static_cast<int>(g.dims.size()));
    for (std::size_t a = 0; a < g.dims.size(); ++a) {
      lo[a] = g.lo[a];
      hi[a] = g.hi[a];
    }
    try {
      return Manifold::euclidean(lo, hi);
    } catch (const ContractViolation& e) {
      throw FormatError(FormatErrorCode::Invalid, e.what());
    }
  };
  try {
    switch (static_cast<FieldKind>(g.kind)) {
      case FieldKind::Grid2:
        if (g.dims.size() != 2) break;
        return VelocityField::grid2(domain(), g.dims[0], g.dims[1], g.samples);
      case FieldKind::Grid3:
        if (g.dims.size() != 3) break;
        return VelocityField::grid3(domain(), g.dims[0], g.dims[1], g.dims[2], g.samples);
      case FieldKind::SphereGrid:
        if (g.dims.size() != 2) break;
        return VelocityField::sphere_grid(g.dims[0], g.dims[1], g.samples);
      case FieldKind::Constant:
        return VelocityField::constant(g.v_min, domain());
      case FieldKind::SphereConstant:
        return VelocityField::constant(g.v_min, Manifold::sphere());
      default:
        break;
    }
  } catch (const ContractViolation& e) {
    throw FormatError(FormatErrorCode::Invalid, e.what());
  }
  throw FormatError(FormatErrorCode::Invalid, "VGRID kind " + std::to_string(g.kind) + " is not a velocity field");
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("short write to " + path);
}

void save_vgrid(const std::string& path, const VelocityField& v) { write_file_bytes(path, write_vgrid(v)); }

VelocityField load_vgrid(const std::string& path) { return read_vgrid(read_file_bytes(path)); }

}  // namespace enes

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "enes/geometry.hpp"

namespace enes {

// On-disk kind codes are the enumerator values.
enum class FieldKind : std::uint8_t {
  Grid2 = 1,
  Grid3 = 2,
  SphereGrid = 3,
  Constant = 4,
  SphereConstant = 5,
  LinearGradient = 6,
  GaussianObstacle = 7,
  Analytic = 8,
};

std::string to_string(FieldKind kind);

// One von Mises-Fisher bump on the sphere, peak-normalized:
// exp(kappa (mu . x - 1)).
struct VmfBump {
  Eigen::Vector3d mean;
  double kappa = 1.0;
};

// Positive scalar velocity on a manifold with declared bounds
// 0 < v_min <= v_max. Immutable; copies share the underlying data.
//
// Grid layouts (row-major, last axis fastest):
//   Grid2/Grid3  nodes at lo + i (hi - lo) / (n - 1) per axis.
//   SphereGrid   dims (n_lat, n_lon); node (i, j) at colatitude
//                (i + 1/2) pi / n_lat and longitude 2 pi j / n_lon.
class VelocityField {
 public:
  static VelocityField constant(double v, const Manifold& m);
  static VelocityField grid2(const Manifold& m, int nx, int nz, std::vector<float> samples);
  static VelocityField grid3(const Manifold& m, int nx, int ny, int nz, std::vector<float> samples);
  static VelocityField sphere_grid(int n_lat, int n_lon, std::vector<float> samples);
  // v(p) = v0 + gradient * p[last axis].
  static VelocityField linear_gradient(double v0, double gradient, const Manifold& m);
  // Mixture of vMF bumps mapped affinely so the bump peak has speed v_min and
  // the lowest density has speed v_max.
  static VelocityField gaussian_obstacle(std::vector<VmfBump> bumps, double v_min, double v_max);
  // `fn` receives unclamped points; the result is clamped to [v_min, v_max].
  static VelocityField analytic(const Manifold& m, std::function<double(const Point&)> fn, double v_min,
                                double v_max);

  FieldKind kind() const;
  const Manifold& domain() const;
  double v_min() const;
  double v_max() const;
  // Grid kinds only.
  const std::vector<int>& dims() const;
  const std::vector<float>& samples() const;
  // Constant kinds only.
  double constant_value() const;
  bool is_grid() const;

  // Interpolated (grid) or evaluated (analytic) velocity, clamped to
  // [v_min, v_max]. Out-of-extent points are clamped to the extent.
  double sample(const Point& p) const;

  // Grid node position for a flat sample index.
  Point node_position(std::size_t index) const;
  std::size_t node_count() const;

  struct Impl;

 private:
  explicit VelocityField(std::shared_ptr<const Impl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<const Impl> impl_;
};

// Unit vector for a sphere lat-lon node.
Point sphere_node(int i, int j, int n_lat, int n_lon);

// Samples any field onto a grid kind (Grid2/Grid3 for Euclidean domains,
// SphereGrid for the sphere).
VelocityField rasterize(const VelocityField& v, const std::vector<int>& dims);

enum class GeneratorKind { Constant, Layered, LinearGradient, GaussianObstacle };

struct GeneratorParams {
  GeneratorKind kind = GeneratorKind::Constant;
  Manifold domain = Manifold::unit_square();
  std::vector<int> dims{48, 48};
  // Constant: v ~ U(v_lo, v_hi). Layered: per-layer speeds ~ U(v_lo, v_hi),
  // sorted to increase with depth unless `speeds` is given.
  double v_lo = 0.1;
  double v_hi = 2.0;
  int layers = 3;
  std::vector<double> speeds;
  // Smallest depth gap between interfaces, as a fraction of the extent.
  double min_layer_gap = 0.12;
  // LinearGradient: v = v0 + gradient * depth.
  double v0 = 1.0;
  double gradient = 1.0;
  // GaussianObstacle: kappa ~ U(kappa_lo, kappa_hi), normalized to [v_lo, v_hi].
  double kappa_lo = 1.0;
  double kappa_hi = 5.0;
  int bumps = 1;
};

// Deterministic in `seed`. Layered and linear-gradient fields come back as
// Grid2/Grid3, obstacles as SphereGrid, constants as Constant/SphereConstant.
VelocityField generate(const GeneratorParams& params, std::uint64_t seed);

// VGRID: "VGRD", u16 version, u8 kind, u8 ndim, u32 dims[ndim],
// f64 (lo, hi)[ndim], f64 v_min, f64 v_max, f32 samples, little-endian.
inline constexpr std::uint16_t kVgridVersion = 1;

struct RawGrid {
  std::uint8_t kind = 0;
  std::vector<std::uint32_t> dims;
  std::vector<double> lo, hi;
  double v_min = 0.0, v_max = 0.0;
  std::vector<float> samples;
};

std::vector<std::uint8_t> encode_vgrid(const RawGrid& grid);
RawGrid decode_vgrid(const std::vector<std::uint8_t>& bytes);

std::vector<std::uint8_t> write_vgrid(const VelocityField& v);
VelocityField read_vgrid(const std::vector<std::uint8_t>& bytes);

void save_vgrid(const std::string& path, const VelocityField& v);
VelocityField load_vgrid(const std::string& path);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes);

}  // namespace enes

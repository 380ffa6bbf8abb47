#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "enes/field.hpp"
#include "enes/geometry.hpp"

namespace enes {

// Reference travel times on the nodes of a velocity grid. Euclidean grids use
// the Grid2 layout, sphere grids the SphereGrid layout (dims n_lat, n_lon).
struct TravelTimeGrid {
  Manifold domain;
  std::vector<int> dims;
  Point source;  // empty when loaded from disk
  std::vector<double> times;
  // Nodes in acceptance order (solver output only).
  std::vector<std::size_t> order;

  std::size_t node_count() const { return times.size(); }
  Point node_position(std::size_t index) const;
  std::size_t nearest_node(const Point& p) const;
};

// Factored fast marching on a Grid2 field: T = T0 tau with
// T0 = |x - source| / v(pivot), pivot = node nearest the source. Second-order
// upwind differences where two accepted upwind nodes exist.
TravelTimeGrid fmm_solve(const VelocityField& v, const Point& source);

// |s - r| / v on Euclidean kinds, arccos(s . r) / v on the sphere.
double analytic_constant(double v, const Point& s, const Point& r, const Manifold& m);

// Closed form for v = v0 + g z, z the last coordinate.
double analytic_linear_gradient(double v0, double g, const Point& s, const Point& r);

// Dijkstra on a (resolution / 2) x resolution lat-lon graph. Each node links
// to every node within `stencil` rows and a latitude-adapted number of
// columns (roughly `stencil` rows' worth of arc); edge weight is great-circle
// length over the velocity at the arc midpoint.
TravelTimeGrid sphere_shortest_path(const VelocityField& v, const Point& source, int resolution, int stencil = 3);

// Time grids reuse VGRID with kinds 16 (Euclidean) and 17 (sphere); samples
// are stored as f32 and v_min/v_max hold the time range.
inline constexpr std::uint8_t kTimeGridKind = 16;
inline constexpr std::uint8_t kSphereTimeGridKind = 17;

std::vector<std::uint8_t> write_time_grid(const TravelTimeGrid& t);
TravelTimeGrid read_time_grid(const std::vector<std::uint8_t>& bytes);
void save_time_grid(const std::string& path, const TravelTimeGrid& t);
TravelTimeGrid load_time_grid(const std::string& path);

}  // namespace enes

#pragma once

#include "sabma/models.hpp"

#include <array>
#include <string>

namespace sabma {

// 2-D affine slice through weight space spanned by three anchor points:
// origin w0, u along w1 - w0, v the Gram-Schmidt completion from w2 - w0.
struct SurfacePlane {
    ParamVector origin;
    Vector u; // unit
    Vector v; // unit, orthogonal to u
    std::array<std::array<double, 2>, 3> coords; // (a, b) of w0, w1, w2
};

SurfacePlane plane_from_points(const ParamVector& w0, const ParamVector& w1,
                               const ParamVector& w2);

struct SurfaceExtent {
    double a_min = 0.0, a_max = 1.0;
    double b_min = 0.0, b_max = 1.0;
};

// 1.5x the bounding box of the three anchor coordinates, centered on it.
SurfaceExtent default_extent(const SurfacePlane& plane);

struct SurfaceGrid {
    SurfaceExtent extent;
    int na = 0, nb = 0;
    std::vector<double> a_values; // na
    std::vector<double> b_values; // nb
    Matrix loss;                  // na x nb, loss(i, j) at (a_i, b_j)
};

// Mean NLL (weight decay 0) at origin + a*u + b*v over the lattice.
SurfaceGrid grid_eval(const Model& model, const SurfacePlane& plane, const SurfaceExtent& extent,
                      int na, int nb, const Dataset& data);

// CSV "a,b,loss" with 17 significant digits, row-major over the lattice, plus a
// companion JSON (plane coordinates, extent, resolution) next to it.
void write_surface_csv(const SurfaceGrid& grid, const SurfacePlane& plane,
                       const std::string& csv_path);

} // namespace sabma

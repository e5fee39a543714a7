#include "sabma/losssurface.hpp"
#include "sabma/error.hpp"

#include "json.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace sabma {

SurfacePlane plane_from_points(const ParamVector& w0, const ParamVector& w1,
                               const ParamVector& w2) {
    const size_t p = w0.values.size();
    if (w1.values.size() != p || w2.values.size() != p)
        fail_config("plane_from_points: weight vectors differ in length");

    auto as_vec = [p](const ParamVector& w) {
        return Eigen::Map<const Vector>(w.values.data(), static_cast<Eigen::Index>(p));
    };
    Vector d1 = as_vec(w1) - as_vec(w0);
    Vector d2 = as_vec(w2) - as_vec(w0);
    const double n1 = d1.norm();
    const double n2 = d2.norm();
    if (n1 == 0.0 || n2 == 0.0)
        fail_config("plane_from_points: anchor points coincide");

    SurfacePlane plane;
    plane.origin = w0;
    plane.u = d1 / n1;
    Vector v_raw = d2 - d2.dot(plane.u) * plane.u;
    // reject (near-)collinear anchors: angle below ~1e-6 rad
    if (v_raw.norm() <= 1e-6 * n2)
        fail_config("plane_from_points: anchor points are collinear");
    plane.v = v_raw / v_raw.norm();
    plane.coords[0] = {0.0, 0.0};
    plane.coords[1] = {n1, 0.0};
    plane.coords[2] = {d2.dot(plane.u), v_raw.norm()};
    return plane;
}

SurfaceExtent default_extent(const SurfacePlane& plane) {
    double a_lo = plane.coords[0][0], a_hi = a_lo;
    double b_lo = plane.coords[0][1], b_hi = b_lo;
    for (const auto& c : plane.coords) {
        a_lo = std::min(a_lo, c[0]);
        a_hi = std::max(a_hi, c[0]);
        b_lo = std::min(b_lo, c[1]);
        b_hi = std::max(b_hi, c[1]);
    }
    const double ac = 0.5 * (a_lo + a_hi), bc = 0.5 * (b_lo + b_hi);
    const double ah = 0.75 * (a_hi - a_lo), bh = 0.75 * (b_hi - b_lo);
    return {ac - ah, ac + ah, bc - bh, bc + bh};
}

SurfaceGrid grid_eval(const Model& model, const SurfacePlane& plane, const SurfaceExtent& extent,
                      int na, int nb, const Dataset& data) {
    if (na < 2 || nb < 2) fail_config("grid_eval: resolution must be at least 2x2");
    if (!(extent.a_max > extent.a_min) || !(extent.b_max > extent.b_min))
        fail_config("grid_eval: empty extent");
    if (static_cast<int>(plane.origin.values.size()) != model.param_count())
        fail_config("grid_eval: plane does not match model");

    SurfaceGrid grid;
    grid.extent = extent;
    grid.na = na;
    grid.nb = nb;
    grid.a_values.resize(static_cast<size_t>(na));
    grid.b_values.resize(static_cast<size_t>(nb));
    for (int i = 0; i < na; ++i)
        grid.a_values[static_cast<size_t>(i)] =
            extent.a_min + (extent.a_max - extent.a_min) * i / (na - 1);
    for (int j = 0; j < nb; ++j)
        grid.b_values[static_cast<size_t>(j)] =
            extent.b_min + (extent.b_max - extent.b_min) * j / (nb - 1);

    grid.loss.resize(na, nb);
    ParamVector w = plane.origin;
    for (int i = 0; i < na; ++i) {
        const double a = grid.a_values[static_cast<size_t>(i)];
        for (int j = 0; j < nb; ++j) {
            const double b = grid.b_values[static_cast<size_t>(j)];
            for (size_t c = 0; c < w.values.size(); ++c)
                w.values[c] = plane.origin.values[c] + a * plane.u(static_cast<Eigen::Index>(c)) +
                              b * plane.v(static_cast<Eigen::Index>(c));
            grid.loss(i, j) = nll_loss(model, w, data, 0.0);
        }
    }
    return grid;
}

void write_surface_csv(const SurfaceGrid& grid, const SurfacePlane& plane,
                       const std::string& csv_path) {
    std::ofstream out(csv_path);
    if (!out) fail_io("cannot write '" + csv_path + "'");
    out << "a,b,loss\n";
    char buf[96];
    for (int i = 0; i < grid.na; ++i)
        for (int j = 0; j < grid.nb; ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g\n",
                          grid.a_values[static_cast<size_t>(i)],
                          grid.b_values[static_cast<size_t>(j)], grid.loss(i, j));
            out << buf;
        }
    if (!out) fail_io("failed writing '" + csv_path + "'");

    nlohmann::json meta;
    meta["resolution"] = {grid.na, grid.nb};
    meta["extent"] = {{"a_min", grid.extent.a_min},
                      {"a_max", grid.extent.a_max},
                      {"b_min", grid.extent.b_min},
                      {"b_max", grid.extent.b_max}};
    meta["anchors"] = {{"w0", {plane.coords[0][0], plane.coords[0][1]}},
                       {"w1", {plane.coords[1][0], plane.coords[1][1]}},
                       {"w2", {plane.coords[2][0], plane.coords[2][1]}}};
    std::string json_path = csv_path;
    const size_t dot = json_path.rfind('.');
    if (dot != std::string::npos) json_path.resize(dot);
    json_path += ".json";
    std::ofstream jout(json_path);
    if (!jout) fail_io("cannot write '" + json_path + "'");
    jout << meta.dump(2) << '\n';
}

} // namespace sabma

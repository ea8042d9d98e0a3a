#pragma once

#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "mbw/rng.hpp"
#include "mbw/types.hpp"

/// Closed-form weak-perspective multi-view geometry.
///
/// All functions are pure; none of them keeps state between calls.
namespace mbw::geometry {

/// Projects a shape through a weak-perspective camera. The result has no missing points.
Landmarks2D project(const Shape3D& shape, const WeakPerspectiveCamera& cam);

struct OnpResult
{
    WeakPerspectiveCamera camera;
    double residual = 0.0;  ///< Frobenius norm of the fit over the non-missing rows.
};

/// Orthographic-N-point: weak-perspective camera aligning `shape` to `obs`.
///
/// Fits the 2x3 affine map between the centred point sets by least squares, projects it to
/// a scaled partial rotation with an SVD (scale = mean of the two singular values) and
/// completes the third rotation row by a cross product. Missing rows of `obs` are ignored.
/// Throws DegenerateConfiguration with fewer than 3 usable points or a shape of rank < 2.
OnpResult solve_onp(const Landmarks2D& obs, const Shape3D& shape);

struct ProcrustesResult
{
    Shape3D aligned;
    SimilarityTransform transform;  ///< maps pred onto ref
};

/// Similarity (rotation, translation, isotropic scale) that best maps `pred` onto `ref`.
ProcrustesResult procrustes_align(const Shape3D& pred, const Shape3D& ref);

/// Per-point linear least squares over every view that observes the point.
Shape3D triangulate(std::span<const std::pair<Landmarks2D, WeakPerspectiveCamera>> views);

struct TomasiKanadeResult
{
    Shape3D shape;
    std::vector<WeakPerspectiveCamera> cameras;  ///< one per input observation, in input order
    Eigen::VectorXd singular_values;             ///< of the centred measurement matrix
};

/// Rigid weak-perspective factorization with metric upgrade.
///
/// Each entry of `observations` is one image (frame-view) of the same rigid object.
TomasiKanadeResult tomasi_kanade(std::span<const Landmarks2D> observations);

/// Closest rotation (det = +1) to `m` in the Frobenius sense.
Eigen::Matrix3d nearest_rotation(const Eigen::Matrix3d& m);

/// Makes the largest-magnitude entry of every column of `u` positive, flipping the matching
/// column of `v` so that u * diag(s) * v^T is unchanged.
void canonicalize_svd_signs(Eigen::MatrixXd& u, Eigen::MatrixXd& v);

/// Frobenius norm of obs - project(shape, cam) over the non-missing rows.
double reprojection_error(const Landmarks2D& obs, const Shape3D& shape, const WeakPerspectiveCamera& cam);

/// Largest pairwise distance between non-missing points (0 with fewer than two points).
double diameter(const Landmarks2D& lm);
double diameter(const Shape3D& shape);

Eigen::Matrix3d rotation_from_axis_angle(const Eigen::Vector3d& axis_angle);
Eigen::Matrix3d random_rotation(Rng& rng);

}  // namespace mbw::geometry

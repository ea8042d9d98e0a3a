#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Core>

namespace mbw {

using Mat2X = Eigen::Matrix<double, Eigen::Dynamic, 2>;
using Mat3X = Eigen::Matrix<double, Eigen::Dynamic, 3>;
using Mask = Eigen::Array<bool, Eigen::Dynamic, 1>;

/// P x 2 image landmarks with a per-point missing flag.
///
/// Coordinates under a set missing flag are unspecified and must not be read.
struct Landmarks2D
{
    Mat2X points;
    Mask missing;

    Landmarks2D() = default;
    explicit Landmarks2D(Mat2X pts) : points(std::move(pts)), missing(Mask::Constant(points.rows(), false)) {}
    Landmarks2D(Mat2X pts, Mask miss) : points(std::move(pts)), missing(std::move(miss)) {}

    static Landmarks2D all_missing(Eigen::Index num_points)
    {
        return {Mat2X::Zero(num_points, 2), Mask::Constant(num_points, true)};
    }

    Eigen::Index size() const { return points.rows(); }
    bool complete() const { return !missing.any(); }
    Eigen::Index num_present() const { return missing.size() - missing.count(); }
};

/// P x 3 structure in the canonical world frame.
struct Shape3D
{
    Mat3X points;

    Shape3D() = default;
    explicit Shape3D(Mat3X pts) : points(std::move(pts)) {}

    Eigen::Index size() const { return points.rows(); }
};

/// Weak-perspective camera: x = scale * rotation.topRows<2>() * X + translation.
struct WeakPerspectiveCamera
{
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    double scale = 1.0;
    Eigen::Vector2d translation = Eigen::Vector2d::Zero();

    /// The 2 x 3 block scale * R(0:2, :).
    Eigen::Matrix<double, 2, 3> projection_rows() const { return scale * rotation.topRows<2>(); }
};

/// x -> scale * rotation * x + translation
struct SimilarityTransform
{
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    double scale = 1.0;
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    Shape3D apply(const Shape3D& shape) const
    {
        Mat3X out = (scale * (shape.points * rotation.transpose())).rowwise() + translation.transpose();
        return Shape3D(std::move(out));
    }
};

/// Identifies one image: frame index n and view index v (both zero based).
struct FrameView
{
    int frame = 0;
    int view = 0;

    friend auto operator<=>(const FrameView&, const FrameView&) = default;
};

}  // namespace mbw

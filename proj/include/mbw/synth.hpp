#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "mbw/perception.hpp"
#include "mbw/skeleton.hpp"
#include "mbw/types.hpp"

/// Deterministic synthetic multi-view dataset of a deforming object.
namespace mbw::synth {

struct SynthConfig
{
    int num_points = 12;
    int num_frames = 300;
    int num_views = 2;
    int latent_rank = 5;  ///< D; 0 gives a rigid object
    double latent_smoothness = 0.99;
    double deformation_scale = 0.03;  ///< std of basis-shape coordinates (world units)
    double camera_motion_sigma = 0.004;  ///< geodesic random-walk step per frame (radians)
    double view_separation_deg = 0.0;    ///< 0 = automatic (>= 30 degrees)
    double image_scale = 200.0;          ///< camera scale (image units per world unit)
    double occlusion_rate = 0.1;

    int descriptor_dim = 48;
    double descriptor_noise = 1.0;           ///< eta_sigma of make_descriptor
    double occluded_appearance_sigma = 6.0;  ///< appearance error of occluded points (image units)
    double appearance_confusion_rate = 0.01;  ///< per-point chance a descriptor encodes a teleported point

    // Default detector-error model for corrupt_for_detector.
    double detector_sigma = 1.0;
    double detector_sigma_occluded = 4.0;
    double detector_outlier_rate = 0.05;

    std::uint64_t seed = 0;

    void validate() const;
};

struct Hidden
{
    Mat3X mean_shape;
    std::vector<Mat3X> basis;  ///< latent_rank shapes
    Eigen::MatrixXd latents;   ///< N x D
    Eigen::MatrixXd mix;       ///< descriptor_dim x 2P
};

struct SynthDataset
{
    SynthConfig config;
    std::vector<Shape3D> gt_shapes;                         ///< [frame]
    std::vector<std::vector<WeakPerspectiveCamera>> gt_cams;  ///< [frame][view]
    std::vector<std::vector<Landmarks2D>> gt_2d;            ///< [frame][view]
    perception::DescriptorTable descriptors;                ///< [frame][view]
    std::vector<std::vector<Mask>> occluded;                ///< [frame][view], per point
    std::vector<std::vector<Mask>> appearance_outlier;      ///< [frame][view]; confusions baked into descriptors
    SkeletonDef skeleton;
    Hidden hidden;  ///< generator internals, for oracles only

    int num_frames() const { return static_cast<int>(gt_shapes.size()); }
    int num_views() const { return gt_cams.empty() ? 0 : static_cast<int>(gt_cams.front().size()); }
    int num_points() const { return gt_shapes.empty() ? 0 : static_cast<int>(gt_shapes.front().size()); }
};

SynthDataset generate(const SynthConfig& cfg);

struct CorruptedDetections
{
    std::vector<std::vector<Landmarks2D>> points;  ///< [frame][view]
    std::vector<std::vector<Mask>> outlier;        ///< injected teleports, [frame][view]
};

/// gt_2d plus Gaussian noise (sigma_occluded on occluded points) plus teleport outliers.
/// A teleport moves a point by 10-40% of the view's landmark diameter in a random direction.
CorruptedDetections corrupt_for_detector(const SynthDataset& ds, double sigma_base, double sigma_occluded,
                                         double outlier_rate, std::uint64_t seed);

}  // namespace mbw::synth

#pragma once

#include <random>

#include <Eigen/Dense>

#include "mbw/geometry.hpp"
#include "mbw/rng.hpp"
#include "mbw/synth.hpp"
#include "mbw/types.hpp"

namespace mbw::test {

inline Shape3D random_shape(Rng& rng, int p, double sigma = 1.0)
{
    return Shape3D(Mat3X(gaussian_matrix(rng, p, 3, sigma)));
}

inline WeakPerspectiveCamera random_camera(Rng& rng)
{
    std::uniform_real_distribution<double> s(0.5, 3.0);
    std::uniform_real_distribution<double> t(-50.0, 50.0);
    WeakPerspectiveCamera cam;
    cam.rotation = geometry::random_rotation(rng);
    cam.scale = s(rng);
    cam.translation = {t(rng), t(rng)};
    return cam;
}

inline SimilarityTransform random_similarity(Rng& rng)
{
    std::uniform_real_distribution<double> s(0.3, 3.0);
    SimilarityTransform tr;
    tr.rotation = geometry::random_rotation(rng);
    tr.scale = s(rng);
    tr.translation = gaussian_matrix(rng, 3, 1, 5.0);
    return tr;
}

inline Landmarks2D random_landmarks(Rng& rng, int p, double sigma = 10.0)
{
    return Landmarks2D(Mat2X(gaussian_matrix(rng, p, 2, sigma)));
}

/// Small dataset for fast tests.
inline synth::SynthConfig small_config(std::uint64_t seed = 0, int frames = 60)
{
    synth::SynthConfig c;
    c.num_frames = frames;
    c.seed = seed;
    return c;
}

inline double max_abs(const Eigen::MatrixXd& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace mbw::test

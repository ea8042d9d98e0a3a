#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "mbw/label_set.hpp"
#include "mbw/types.hpp"

/// Learnable multi-view shape prior.
///
/// A shared per-view encoder maps each centred, scale-normalized view to a code; the codes of
/// one frame are mean-pooled and decoded into a centred canonical 3D shape. Cameras are not
/// part of the network: they are recovered per view by OnP.
namespace mbw::prior {

enum class Activation : std::int64_t
{
    Tanh = 0,
    Identity = 1,
};

struct DenseLayer
{
    Eigen::MatrixXd weight;  ///< out x in
    Eigen::VectorXd bias;    ///< out
};

struct ShapeCode
{
    Eigen::VectorXd values;
};

struct PriorModel
{
    int num_points = 0;
    int code_dim = 8;
    int hidden = 80;
    Activation activation = Activation::Tanh;
    double input_scale = 1.0;  ///< views are divided by this after centring; decoded shapes are multiplied by it

    DenseLayer enc_hidden;  ///< 2P -> hidden
    DenseLayer enc_code;    ///< hidden -> K
    DenseLayer dec_hidden;  ///< K -> hidden
    DenseLayer dec_shape;   ///< hidden -> 3P

    /// Uniform(-a, a) weights and biases with a = fan_in^-1/2.
    static PriorModel initialize(int num_points, int code_dim, int hidden, double input_scale, std::uint64_t seed,
                                 Activation activation = Activation::Tanh);
    static PriorModel zeros(int num_points, int code_dim, int hidden, double input_scale,
                            Activation activation = Activation::Tanh);

    std::array<DenseLayer*, 4> layers() { return {&enc_hidden, &enc_code, &dec_hidden, &dec_shape}; }
    std::array<const DenseLayer*, 4> layers() const { return {&enc_hidden, &enc_code, &dec_hidden, &dec_shape}; }

    Eigen::Index num_parameters() const;
    Eigen::VectorXd flatten() const;
    void unflatten(const Eigen::VectorXd& params);

    /// Throws ShapeMismatch if layer shapes disagree with the dimensions.
    void validate() const;
};

struct TrainConfig
{
    double learning_rate = 1e-3;
    std::optional<double> final_learning_rate;  ///< cosine decay target; unset keeps the rate constant
    int steps = 4000;
    std::uint64_t seed = 0;
    int batch = 0;  ///< frames per step; 0 = full batch
    int code_dim = 8;
    int hidden = 0;  ///< 0 = 10 * code_dim
    Activation activation = Activation::Tanh;
    bool rigid_init = true;  ///< start the decoder at the rigid factorization of the training views
};

/// One frame: the labeled views available for it. Views must be complete.
struct PriorSample
{
    std::vector<Landmarks2D> views;
};

ShapeCode encode(std::span<const Landmarks2D> views, const PriorModel& model);
Shape3D decode(const ShapeCode& code, const PriorModel& model);

struct Reconstruction
{
    Shape3D shape;
    std::vector<WeakPerspectiveCamera> cameras;
    std::vector<double> scores;  ///< Frobenius reprojection error per view
};

/// Decodes the pooled code of `views`, fits a camera per view by OnP and scores each view.
Reconstruction reconstruct(std::span<const Landmarks2D> views, const PriorModel& model);

struct TrainResult
{
    PriorModel model;
    std::vector<double> loss_trace;
};

/// Gradient descent (Adam) on the summed squared reprojection error with cameras refreshed by
/// OnP each step and held fixed for differentiation.
TrainResult train_prior(std::span<const PriorSample> samples, const TrainConfig& config,
                        const PriorModel* init = nullptr);

/// Groups the label set by frame and trains on it.
TrainResult train_prior(const LabelSet& labels, const TrainConfig& config, const PriorModel* init = nullptr);

/// Sum over samples and views of ||W - project(decode(encode), cam)||_F^2 with the given cameras.
/// `cameras[i][v]` belongs to `samples[i].views[v]`. When `gradient` is non-null it receives the
/// parameter gradient in flatten() order.
double objective(const PriorModel& model, std::span<const PriorSample> samples,
                 const std::vector<std::vector<WeakPerspectiveCamera>>& cameras, Eigen::VectorXd* gradient = nullptr);

/// Max relative error between analytic gradients and central differences (step 1e-5).
///
/// Relative error per parameter is |a - n| / max(|a|, |n|, floor) where the floor is 1e-6 times the
/// largest analytic gradient magnitude (or 1e-12 when every gradient is zero).
double gradient_check(const PriorModel& model, std::span<const PriorSample> samples,
                      const std::vector<std::vector<WeakPerspectiveCamera>>& cameras, double step = 1e-5);

/// Mean distance of centred points from their centroid over all views; the default input scale.
double normalization_scale(std::span<const PriorSample> samples);

/// Binary model file: "MBWPRIOR1" magic, int64 dims, then row-major float64 arrays (little endian).
void save_prior(const PriorModel& model, const std::filesystem::path& path);
PriorModel load_prior(const std::filesystem::path& path);

}  // namespace mbw::prior

#include "mbw/synth.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "mbw/errors.hpp"
#include "mbw/geometry.hpp"
#include "mbw/rng.hpp"

namespace mbw::synth {

namespace {

enum StreamTag : std::uint64_t
{
    kShapeStream = 1,
    kLatentStream,
    kCameraStream,
    kOcclusionStream,
    kMixStream,
    kAppearanceStream,
    kDescriptorStream,
    kCorruptStream,
};

constexpr double kDeg = std::numbers::pi / 180.0;

Mat3X humanoid_template()
{
    Mat3X s(12, 3);
    s << 0.00, 1.65, 0.02,  //
        0.00, 1.45, 0.00,   //
        0.19, 1.42, 0.00,   //
        -0.19, 1.42, 0.00,  //
        0.27, 1.15, 0.05,   //
        -0.27, 1.15, 0.05,  //
        0.30, 0.90, 0.12,   //
        -0.30, 0.90, 0.12,  //
        0.11, 0.92, 0.00,   //
        -0.11, 0.92, 0.00,  //
        0.12, 0.48, 0.04,   //
        -0.12, 0.48, 0.04;
    return s;
}

Eigen::Matrix3d rot_x(double a)
{
    return geometry::rotation_from_axis_angle(Eigen::Vector3d(a, 0.0, 0.0));
}

Eigen::Matrix3d rot_y(double a)
{
    return geometry::rotation_from_axis_angle(Eigen::Vector3d(0.0, a, 0.0));
}

}  // namespace

void SynthConfig::validate() const
{
    if (num_points < 4)
        throw Error("synth: num_points must be >= 4");
    if (num_frames < 1 || num_views < 1)
        throw Error("synth: num_frames and num_views must be >= 1");
    if (latent_rank < 0 || latent_rank > 2 * num_points)
        throw Error("synth: latent_rank must lie in [0, 2P]");
    if (!(latent_smoothness >= 0.0 && latent_smoothness < 1.0))
        throw Error("synth: latent_smoothness must lie in [0, 1)");
    if (camera_motion_sigma < 0.0 || deformation_scale < 0.0 || descriptor_noise < 0.0 ||
        occluded_appearance_sigma < 0.0 || detector_sigma < 0.0 || detector_sigma_occluded < 0.0)
        throw Error("synth: noise scales must be non-negative");
    if (!(image_scale > 0.0))
        throw Error("synth: image_scale must be positive");
    for (double r : {occlusion_rate, detector_outlier_rate, appearance_confusion_rate})
        if (!(r >= 0.0 && r <= 1.0))
            throw Error("synth: rates must lie in [0, 1]");
    if (descriptor_dim < 1)
        throw Error("synth: descriptor_dim must be >= 1");
}

SynthDataset generate(const SynthConfig& cfg)
{
    cfg.validate();
    const int p = cfg.num_points;
    const int n = cfg.num_frames;
    const int nv = cfg.num_views;
    const int d = cfg.latent_rank;

    SynthDataset ds;
    ds.config = cfg;
    ds.skeleton = p == 12 ? SkeletonDef::humanoid12() : SkeletonDef::chain(p);

    // Shape space.
    Rng shape_rng(derive_seed(cfg.seed, {kShapeStream}));
    if (p == 12)
        ds.hidden.mean_shape = humanoid_template() + 0.01 * gaussian_matrix(shape_rng, 12, 3);
    else
        ds.hidden.mean_shape = 0.4 * gaussian_matrix(shape_rng, p, 3);
    ds.hidden.mean_shape.rowwise() -= ds.hidden.mean_shape.colwise().mean();
    const auto [ha, hb] = ds.skeleton.bones[static_cast<std::size_t>(ds.skeleton.head_bone)];
    for (int k = 0; k < d; ++k)
    {
        Mat3X b = cfg.deformation_scale * gaussian_matrix(shape_rng, p, 3);
        b.row(ha) = b.row(hb);  // the head bone moves rigidly so PCKh normalization stays stable
        ds.hidden.basis.push_back(b);
    }

    // Latent trajectory: unit-variance AR(1), i.e. exponentially smoothed white noise.
    Rng latent_rng(derive_seed(cfg.seed, {kLatentStream}));
    std::normal_distribution<double> unit(0.0, 1.0);
    ds.hidden.latents.resize(n, d);
    const double a = cfg.latent_smoothness;
    const double innov = std::sqrt(1.0 - a * a);
    for (int k = 0; k < d; ++k)
        ds.hidden.latents(0, k) = unit(latent_rng);
    for (int t = 1; t < n; ++t)
        for (int k = 0; k < d; ++k)
            ds.hidden.latents(t, k) = a * ds.hidden.latents(t - 1, k) + innov * unit(latent_rng);

    ds.gt_shapes.reserve(static_cast<std::size_t>(n));
    for (int t = 0; t < n; ++t)
    {
        Mat3X s = ds.hidden.mean_shape;
        for (int k = 0; k < d; ++k)
            s += ds.hidden.latents(t, k) * ds.hidden.basis[static_cast<std::size_t>(k)];
        ds.gt_shapes.emplace_back(std::move(s));
    }

    // Cameras: distinct initial azimuths, slow geodesic random walk.
    Rng cam_rng(derive_seed(cfg.seed, {kCameraStream}));
    std::uniform_real_distribution<double> jitter(-1.0, 1.0);
    const double sep_deg = cfg.view_separation_deg > 0.0 ? cfg.view_separation_deg
                                                         : (nv > 1 ? std::max(35.0, 90.0 / (nv - 1)) : 0.0);
    const double az_jitter = cfg.view_separation_deg > 0.0 ? 0.0 : 2.5;
    std::vector<WeakPerspectiveCamera> cams(static_cast<std::size_t>(nv));
    for (int v = 0; v < nv; ++v)
    {
        auto& c = cams[static_cast<std::size_t>(v)];
        const double az = (v * sep_deg + az_jitter * jitter(cam_rng)) * kDeg;
        const double el = (10.0 + 5.0 * jitter(cam_rng)) * kDeg;
        c.rotation = rot_x(el) * rot_y(az) * rot_x(std::numbers::pi);  // image y points down
        c.scale = cfg.image_scale * (1.0 + 0.1 * jitter(cam_rng));
        c.translation = Eigen::Vector2d(320.0 + 20.0 * jitter(cam_rng), 240.0 + 20.0 * jitter(cam_rng));
    }
    ds.gt_cams.assign(static_cast<std::size_t>(n), {});
    for (int t = 0; t < n; ++t)
    {
        if (t > 0)
            for (auto& c : cams)
            {
                const Eigen::Vector3d w(unit(cam_rng), unit(cam_rng), unit(cam_rng));
                c.rotation = geometry::rotation_from_axis_angle(cfg.camera_motion_sigma * w) * c.rotation;
                if (cfg.camera_motion_sigma > 0.0)
                    c.translation += 0.2 * Eigen::Vector2d(unit(cam_rng), unit(cam_rng));
            }
        ds.gt_cams[static_cast<std::size_t>(t)] = cams;
    }

    ds.gt_2d.assign(static_cast<std::size_t>(n), {});
    for (int t = 0; t < n; ++t)
        for (int v = 0; v < nv; ++v)
            ds.gt_2d[static_cast<std::size_t>(t)].push_back(
                geometry::project(ds.gt_shapes[static_cast<std::size_t>(t)],
                                  ds.gt_cams[static_cast<std::size_t>(t)][static_cast<std::size_t>(v)]));

    // Occlusion and appearance descriptors.
    Rng mix_rng(derive_seed(cfg.seed, {kMixStream}));
    ds.hidden.mix = gaussian_matrix(mix_rng, cfg.descriptor_dim, 2 * p, 1.0 / std::sqrt(2.0 * p));

    ds.occluded.assign(static_cast<std::size_t>(n), {});
    ds.descriptors.assign(static_cast<std::size_t>(n), {});
    ds.appearance_outlier.assign(static_cast<std::size_t>(n), {});
    for (int t = 0; t < n; ++t)
        for (int v = 0; v < nv; ++v)
        {
            const auto tt = static_cast<std::uint64_t>(t);
            const auto vv = static_cast<std::uint64_t>(v);
            Rng occ_rng(derive_seed(cfg.seed, {kOcclusionStream, tt, vv}));
            std::bernoulli_distribution occ(cfg.occlusion_rate);
            Mask m(p);
            for (int i = 0; i < p; ++i)
                m(i) = occ(occ_rng);
            ds.occluded[static_cast<std::size_t>(t)].push_back(m);

            // Appearance error: blur on occluded points plus rare confusions (teleports shaped like
            // the detector-error model), so a detector reading these descriptors inherits both.
            Landmarks2D appearance = ds.gt_2d[static_cast<std::size_t>(t)][static_cast<std::size_t>(v)];
            Rng app_rng(derive_seed(cfg.seed, {kAppearanceStream, tt, vv}));
            std::normal_distribution<double> app(0.0, cfg.occluded_appearance_sigma);
            std::bernoulli_distribution confused(cfg.appearance_confusion_rate);
            std::uniform_real_distribution<double> frac(0.1, 0.4);
            std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
            const double diam = geometry::diameter(appearance);
            Mask outl = Mask::Constant(p, false);
            for (int i = 0; i < p; ++i)
            {
                if (m(i))
                    appearance.points.row(i) += Eigen::RowVector2d(app(app_rng), app(app_rng));
                if (confused(app_rng))
                {
                    const double r = frac(app_rng) * diam;
                    const double th = angle(app_rng);
                    appearance.points.row(i) += Eigen::RowVector2d(r * std::cos(th), r * std::sin(th));
                    outl(i) = true;
                }
            }
            ds.appearance_outlier[static_cast<std::size_t>(t)].push_back(outl);
            ds.descriptors[static_cast<std::size_t>(t)].push_back(perception::make_descriptor(
                appearance, ds.hidden.mix, cfg.descriptor_noise, derive_seed(cfg.seed, {kDescriptorStream, tt, vv})));
        }
    return ds;
}

CorruptedDetections corrupt_for_detector(const SynthDataset& ds, double sigma_base, double sigma_occluded,
                                         double outlier_rate, std::uint64_t seed)
{
    if (sigma_base < 0.0 || sigma_occluded < sigma_base)
        throw Error("corrupt_for_detector: need 0 <= sigma_base <= sigma_occluded");
    if (!(outlier_rate >= 0.0 && outlier_rate <= 1.0))
        throw Error("corrupt_for_detector: outlier_rate must lie in [0, 1]");

    CorruptedDetections out;
    const int n = ds.num_frames();
    const int nv = ds.num_views();
    const int p = ds.num_points();
    out.points.assign(static_cast<std::size_t>(n), {});
    out.outlier.assign(static_cast<std::size_t>(n), {});
    for (int t = 0; t < n; ++t)
        for (int v = 0; v < nv; ++v)
        {
            const auto& gt = ds.gt_2d[static_cast<std::size_t>(t)][static_cast<std::size_t>(v)];
            const auto& occ = ds.occluded[static_cast<std::size_t>(t)][static_cast<std::size_t>(v)];
            Rng rng(derive_seed(seed, {kCorruptStream, static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(v)}));
            std::normal_distribution<double> unit(0.0, 1.0);
            std::bernoulli_distribution is_outlier(outlier_rate);
            std::uniform_real_distribution<double> frac(0.1, 0.4);
            std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
            const double diam = geometry::diameter(gt);

            Landmarks2D lm = gt;
            Mask outl = Mask::Constant(p, false);
            for (int i = 0; i < p; ++i)
            {
                const double s = occ(i) ? sigma_occluded : sigma_base;
                lm.points(i, 0) += s * unit(rng);
                lm.points(i, 1) += s * unit(rng);
                if (is_outlier(rng))
                {
                    const double r = frac(rng) * diam;
                    const double th = angle(rng);
                    lm.points(i, 0) += r * std::cos(th);
                    lm.points(i, 1) += r * std::sin(th);
                    outl(i) = true;
                }
            }
            out.points[static_cast<std::size_t>(t)].push_back(std::move(lm));
            out.outlier[static_cast<std::size_t>(t)].push_back(std::move(outl));
        }
    return out;
}

}  // namespace mbw::synth

#include "mbw/perception.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include <Eigen/Dense>

#include "mbw/errors.hpp"
#include "mbw/rng.hpp"

namespace mbw::perception {

namespace {

enum StreamTag : std::uint64_t
{
    kChainStream = 11,
    kTargetStream,
    kDescriptorNoise,
};

Eigen::VectorXd flatten(const Landmarks2D& lm)
{
    Eigen::VectorXd v(2 * lm.size());
    for (Eigen::Index i = 0; i < lm.size(); ++i)
    {
        v(2 * i) = lm.points(i, 0);
        v(2 * i + 1) = lm.points(i, 1);
    }
    return v;
}

Eigen::RowVector2d random_direction(Rng& rng)
{
    std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
    const double th = angle(rng);
    return {std::cos(th), std::sin(th)};
}

}  // namespace

void TrackerConfig::validate() const
{
    if (noise_sigma < 0.0 || drift_per_step < 0.0)
        throw Error("tracker: noise_sigma and drift_per_step must be non-negative");
    for (double r : {outlier_rate, consistent_error_rate})
        if (!(r >= 0.0 && r <= 1.0))
            throw Error("tracker: rates must lie in [0, 1]");
    if (outlier_offset_min < 20.0 * noise_sigma || outlier_offset_max < outlier_offset_min)
        throw Error("tracker: need 20 * noise_sigma <= outlier_offset_min <= outlier_offset_max");
}

std::vector<TrackCandidate> track_labels(const std::vector<Landmarks2D>& sequence,
                                         const std::map<int, Landmarks2D>& seeds, const TrackerConfig& cfg)
{
    cfg.validate();
    if (seeds.empty())
        throw NoSeeds("track_labels needs at least one labeled frame");
    const int n = static_cast<int>(sequence.size());
    const Eigen::Index p = sequence.empty() ? 0 : sequence.front().size();
    for (const auto& [f, lm] : seeds)
    {
        if (f < 0 || f >= n)
            throw Error("track_labels: seed frame " + std::to_string(f) + " outside the sequence");
        if (lm.size() != p)
            throw ShapeMismatch("track_labels: seed has a different number of points");
    }

    // Nearest seed per frame; ties go to the lower seed frame.
    std::vector<int> owner(static_cast<std::size_t>(n));
    for (int t = 0; t < n; ++t)
    {
        auto hi = seeds.lower_bound(t);
        if (hi == seeds.end())
            owner[static_cast<std::size_t>(t)] = std::prev(hi)->first;
        else if (hi == seeds.begin() || hi->first == t)
            owner[static_cast<std::size_t>(t)] = hi->first;
        else
        {
            const int lo = std::prev(hi)->first;
            owner[static_cast<std::size_t>(t)] = (t - lo <= hi->first - t) ? lo : hi->first;
        }
    }

    std::normal_distribution<double> unit(0.0, 1.0);
    std::bernoulli_distribution is_outlier(cfg.outlier_rate);
    std::bernoulli_distribution is_consistent(cfg.consistent_error_rate);
    std::uniform_real_distribution<double> offset(cfg.outlier_offset_min, cfg.outlier_offset_max);

    std::vector<TrackCandidate> out(static_cast<std::size_t>(n));
    for (const auto& [s, seed_pts] : seeds)
    {
        for (int dir : {-1, +1})
        {
            Rng chain_rng(derive_seed(cfg.seed, {kChainStream, static_cast<std::uint64_t>(s),
                                                 static_cast<std::uint64_t>(dir + 1)}));
            Mat2X drift(p, 2);
            for (Eigen::Index i = 0; i < p; ++i)
                drift.row(i) = cfg.drift_per_step * random_direction(chain_rng);

            Mat2X pos = seed_pts.points;
            for (int t = s + dir, steps = 1; t >= 0 && t < n && owner[static_cast<std::size_t>(t)] == s;
                 t += dir, ++steps)
            {
                const auto& cur = sequence[static_cast<std::size_t>(t)].points;
                const auto& prev = sequence[static_cast<std::size_t>(t - dir)].points;
                for (Eigen::Index i = 0; i < p; ++i)
                    pos.row(i) += cur.row(i) - prev.row(i) +
                                  cfg.noise_sigma * Eigen::RowVector2d(unit(chain_rng), unit(chain_rng)) + drift.row(i);

                TrackCandidate c;
                c.seed_frame = s;
                c.path_length = steps;
                c.forward = Landmarks2D(pos, seed_pts.missing);
                c.outlier = Mask::Constant(p, false);

                // Return trip: forward error plus fresh noise and drift over the same path.
                Rng target_rng(derive_seed(cfg.seed, {kTargetStream, static_cast<std::uint64_t>(t)}));
                const double back_sigma = cfg.noise_sigma * std::sqrt(static_cast<double>(steps));
                Mat2X back = seed_pts.points + (pos - cur);
                for (Eigen::Index i = 0; i < p; ++i)
                    back.row(i) += back_sigma * Eigen::RowVector2d(unit(target_rng), unit(target_rng)) +
                                   static_cast<double>(steps) * drift.row(i);

                for (Eigen::Index i = 0; i < p; ++i)
                {
                    if (seed_pts.missing(i) || !is_outlier(target_rng))
                        continue;
                    const Eigen::RowVector2d jump = offset(target_rng) * random_direction(target_rng);
                    c.forward.points.row(i) += jump;
                    c.outlier(i) = true;
                    if (is_consistent(target_rng))
                    {
                        // The backward flow makes the mirrored mistake and lands on the seed.
                        const double rt_sigma = cfg.noise_sigma * std::sqrt(2.0 * steps);
                        back.row(i) = seed_pts.points.row(i) +
                                      rt_sigma * Eigen::RowVector2d(unit(target_rng), unit(target_rng));
                    }
                    else
                    {
                        back.row(i) += jump;
                    }
                }
                c.backward_return = Landmarks2D(std::move(back), seed_pts.missing);
                out[static_cast<std::size_t>(t)] = std::move(c);
            }
        }
        TrackCandidate self;
        self.seed_frame = s;
        self.path_length = 0;
        self.forward = seed_pts;
        self.backward_return = seed_pts;
        self.outlier = Mask::Constant(p, false);
        out[static_cast<std::size_t>(s)] = std::move(self);
    }
    return out;
}

Mask fb_consistency_check(const Landmarks2D& round_trip, const Landmarks2D& seed, double epsilon)
{
    if (round_trip.size() != seed.size())
        throw ShapeMismatch("fb_consistency_check: point counts differ");
    Mask pass(seed.size());
    for (Eigen::Index i = 0; i < seed.size(); ++i)
        pass(i) = !round_trip.missing(i) && !seed.missing(i) &&
                  (round_trip.points.row(i) - seed.points.row(i)).norm() <= epsilon;
    return pass;
}

double default_fb_epsilon(double noise_sigma, int path_length)
{
    return 3.0 * noise_sigma * std::sqrt(2.0 * static_cast<double>(path_length));
}

FrameDescriptor make_descriptor(const Landmarks2D& landmarks, const Eigen::MatrixXd& mix, double eta_sigma,
                                std::uint64_t seed)
{
    if (mix.cols() != 2 * landmarks.size())
        throw ShapeMismatch("make_descriptor: mix has " + std::to_string(mix.cols()) + " columns, expected " +
                            std::to_string(2 * landmarks.size()));
    FrameDescriptor d{mix * flatten(landmarks)};
    if (eta_sigma > 0.0)
    {
        Rng rng(derive_seed(seed, {kDescriptorNoise}));
        std::normal_distribution<double> noise(0.0, eta_sigma);
        for (Eigen::Index i = 0; i < d.values.size(); ++i)
            d.values(i) += noise(rng);
    }
    return d;
}

DetectorModel train_detector(const LabelSet& labels, const DescriptorTable& descriptors, double ridge_lambda)
{
    if (!(ridge_lambda >= 0.0))
        throw Error("train_detector: ridge_lambda must be non-negative");

    std::vector<std::pair<const FrameDescriptor*, const Landmarks2D*>> rows;
    for (const auto& [key, entry] : labels)
    {
        if (!entry.points.complete())
            continue;
        if (key.frame < 0 || static_cast<std::size_t>(key.frame) >= descriptors.size() || key.view < 0 ||
            static_cast<std::size_t>(key.view) >= descriptors[static_cast<std::size_t>(key.frame)].size())
            throw Error("train_detector: no descriptor for a labeled frame-view");
        rows.emplace_back(&descriptors[static_cast<std::size_t>(key.frame)][static_cast<std::size_t>(key.view)],
                          &entry.points);
    }
    if (rows.empty())
        throw InsufficientLabels("train_detector: no complete labels");

    const auto m = static_cast<Eigen::Index>(rows.size());
    const Eigen::Index df = rows.front().first->values.size();
    const Eigen::Index out_dim = 2 * rows.front().second->size();
    Eigen::MatrixXd x(m, df);
    Eigen::MatrixXd y(m, out_dim);
    for (Eigen::Index i = 0; i < m; ++i)
    {
        const auto& [desc, pts] = rows[static_cast<std::size_t>(i)];
        if (desc->values.size() != df || 2 * pts->size() != out_dim)
            throw ShapeMismatch("train_detector: inconsistent descriptor or label sizes");
        x.row(i) = desc->values.transpose();
        y.row(i) = flatten(*pts).transpose();
    }
    const Eigen::RowVectorXd x_mean = x.colwise().mean();
    const Eigen::RowVectorXd y_mean = y.colwise().mean();
    x.rowwise() -= x_mean;
    y.rowwise() -= y_mean;

    if (ridge_lambda == 0.0)
    {
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
        if (qr.rank() < df)
            throw SingularSystem("train_detector: design matrix has rank " + std::to_string(qr.rank()) + " < " +
                                 std::to_string(df) + " and lambda = 0");
    }
    Eigen::MatrixXd gram = x.transpose() * x;
    gram.diagonal().array() += ridge_lambda;
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
    if (ldlt.info() != Eigen::Success)
        throw SingularSystem("train_detector: normal equations could not be factorized");
    const Eigen::MatrixXd w = ldlt.solve(x.transpose() * y);

    DetectorModel model;
    model.ridge_lambda = ridge_lambda;
    model.weights.resize(df + 1, out_dim);
    model.weights.topRows(df) = w;
    model.weights.row(df) = y_mean - x_mean * w;
    return model;
}

Landmarks2D detect(const DetectorModel& model, const FrameDescriptor& descriptor)
{
    if (descriptor.values.size() != model.descriptor_dim())
        throw ShapeMismatch("detect: descriptor length " + std::to_string(descriptor.values.size()) +
                            " != model input " + std::to_string(model.descriptor_dim()));
    const Eigen::RowVectorXd flat =
        descriptor.values.transpose() * model.weights.topRows(model.descriptor_dim()) + model.weights.bottomRows(1);
    const int p = model.num_points();
    Mat2X pts(p, 2);
    for (int i = 0; i < p; ++i)
        pts.row(i) << flat(2 * i), flat(2 * i + 1);
    return Landmarks2D(std::move(pts));
}

}  // namespace mbw::perception

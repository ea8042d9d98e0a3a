#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <sstream>
#include <vector>

#include "helpers.hpp"
#include "mbw/errors.hpp"
#include "mbw/perception.hpp"
#include "mbw/pipeline.hpp"

using namespace mbw;
using namespace mbw::test;
using namespace mbw::perception;

namespace {

std::vector<Landmarks2D> random_walk(Rng& rng, int frames, int p)
{
    std::vector<Landmarks2D> seq;
    Mat2X pos = gaussian_matrix(rng, p, 2, 30.0);
    for (int t = 0; t < frames; ++t)
    {
        pos += gaussian_matrix(rng, p, 2, 1.0);
        seq.emplace_back(pos);
    }
    return seq;
}

TrackerConfig quiet()
{
    TrackerConfig c;
    c.noise_sigma = 0.0;
    c.outlier_rate = 0.0;
    c.drift_per_step = 0.0;
    return c;
}

double ridge_objective(const DetectorModel& m, const LabelSet& labels, const DescriptorTable& desc)
{
    double loss = 0.0;
    for (const auto& [key, e] : labels)
        loss += (detect(m, desc[key.frame][key.view]).points - e.points.points).squaredNorm();
    return loss + m.ridge_lambda * m.weights.topRows(m.descriptor_dim()).squaredNorm();
}

LabelSet gt_labels(const synth::SynthDataset& ds, const std::vector<int>& frames)
{
    LabelSet s;
    for (int n : frames)
        for (int v = 0; v < ds.num_views(); ++v)
            s.insert({n, v}, {ds.gt_2d[n][v], LabelSource::Manual, false, {}});
    return s;
}

}  // namespace

TEST(TrackLabels, NoiselessIsIdentity)
{
    Rng rng(1);
    const auto seq = random_walk(rng, 50, 6);
    const std::map<int, Landmarks2D> seeds{{10, seq[10]}, {35, seq[35]}};
    const auto out = track_labels(seq, seeds, quiet());
    for (int t = 0; t < 50; ++t)
    {
        EXPECT_LE(max_abs(out[t].forward.points - seq[t].points), 1e-9) << t;
        const int s = out[t].seed_frame;
        EXPECT_LE(max_abs(out[t].backward_return.points - seq[s].points), 1e-9) << t;
    }
}

TEST(TrackLabels, NearestSeedWinsTiesGoLow)
{
    Rng rng(2);
    const auto seq = random_walk(rng, 21, 4);
    const std::map<int, Landmarks2D> seeds{{0, seq[0]}, {20, seq[20]}};
    const auto out = track_labels(seq, seeds, quiet());
    EXPECT_EQ(out[9].seed_frame, 0);
    EXPECT_EQ(out[10].seed_frame, 0);
    EXPECT_EQ(out[11].seed_frame, 20);
    EXPECT_EQ(out[11].path_length, 9);
    EXPECT_EQ(out[20].path_length, 0);
}

TEST(TrackLabels, NoSeeds)
{
    Rng rng(3);
    EXPECT_THROW(track_labels(random_walk(rng, 5, 4), {}, quiet()), NoSeeds);
}

TEST(TrackLabels, AllOutliersFailConsistency)
{
    Rng rng(4);
    const auto seq = random_walk(rng, 40, 6);
    TrackerConfig c;
    c.noise_sigma = 0.05;  // keeps the accumulated noise far below the 10-unit teleport floor
    c.outlier_rate = 1.0;
    c.consistent_error_rate = 0.0;
    const std::map<int, Landmarks2D> seeds{{0, seq[0]}};
    const auto out = track_labels(seq, seeds, c);
    for (int t = 1; t < 40; ++t)
    {
        EXPECT_TRUE(out[t].outlier.all());
        const double eps = default_fb_epsilon(c.noise_sigma, out[t].path_length);
        EXPECT_FALSE(fb_consistency_check(out[t].backward_return, seq[0], eps).any()) << t;
    }
}

TEST(TrackLabels, OutlierFractionMatchesRate)
{
    Rng rng(5);
    const auto seq = random_walk(rng, 1001, 12);
    TrackerConfig c;
    c.seed = 9;
    const auto out = track_labels(seq, {{500, seq[500]}}, c);
    long outliers = 0, total = 0;
    for (int t = 0; t < 1001; ++t)
    {
        if (t == 500)
            continue;
        outliers += out[t].outlier.count();
        total += out[t].outlier.size();
    }
    ASSERT_GE(total, 10000);
    EXPECT_NEAR(static_cast<double>(outliers) / total, c.outlier_rate, 0.02);
}

TEST(TrackLabels, ConsistencyCheckRecall)
{
    Rng rng(6);
    const auto seq = random_walk(rng, 1001, 12);
    // The tolerance grows with the path, so recall is only near 1 - consistent_rate while it stays
    // well below the teleport distance: short paths, small per-step noise.
    TrackerConfig c;
    c.seed = 10;
    c.noise_sigma = 0.1;
    std::map<int, Landmarks2D> seeds;
    for (int f = 0; f <= 1000; f += 50)
        seeds.emplace(f, seq[f]);
    const auto out = track_labels(seq, seeds, c);
    long injected = 0, caught = 0;
    for (const auto& cand : out)
    {
        if (cand.path_length == 0)
            continue;
        const auto pass = fb_consistency_check(cand.backward_return, seq[cand.seed_frame],
                                               default_fb_epsilon(c.noise_sigma, cand.path_length));
        for (Eigen::Index i = 0; i < pass.size(); ++i)
            if (cand.outlier(i))
            {
                ++injected;
                caught += !pass(i);
            }
    }
    ASSERT_GT(injected, 100);
    const double expected = 1.0 - c.consistent_error_rate;
    const double margin = 3.0 * std::sqrt(expected * (1.0 - expected) / injected);
    EXPECT_GE(static_cast<double>(caught) / injected, expected - margin);
}

TEST(TrackLabels, RejectsBadConfig)
{
    Rng rng(7);
    auto c = quiet();
    c.outlier_rate = 1.5;
    EXPECT_THROW(track_labels(random_walk(rng, 5, 4), {{0, Landmarks2D(Mat2X::Zero(4, 2))}}, c), Error);
}

TEST(FbCheck, IdenticalPasses)
{
    Rng rng(8);
    const auto s = random_landmarks(rng, 5);
    EXPECT_TRUE(fb_consistency_check(s, s, 0.0).all());
}

TEST(FbCheck, BoundaryInclusive)
{
    Rng rng(9);
    const auto s = random_landmarks(rng, 5);
    auto r = s;
    r.points(2, 0) += 0.5;
    r.points(3, 1) += 0.5000001;
    const auto pass = fb_consistency_check(r, s, 0.5);
    EXPECT_TRUE(pass(2));
    EXPECT_FALSE(pass(3));
}

TEST(FbCheck, DefaultEpsilon)
{
    EXPECT_DOUBLE_EQ(default_fb_epsilon(0.5, 8), 3.0 * 0.5 * 4.0);
}

TEST(Descriptor, IdentityMixNoNoise)
{
    Rng rng(10);
    const auto lm = random_landmarks(rng, 4);
    Eigen::MatrixXd mix = Eigen::MatrixXd::Zero(10, 8);
    mix.topRows(8).setIdentity();
    const auto d = make_descriptor(lm, mix, 0.0, 1);
    for (int i = 0; i < 4; ++i)
    {
        EXPECT_EQ(d.values(2 * i), lm.points(i, 0));
        EXPECT_EQ(d.values(2 * i + 1), lm.points(i, 1));
    }
    EXPECT_EQ(d.values.tail(2), Eigen::Vector2d::Zero());
    EXPECT_EQ(make_descriptor(lm, mix, 0.0, 2).values, d.values);
}

TEST(Descriptor, NoiseStatistics)
{
    const Landmarks2D lm(Mat2X::Zero(4, 2));
    const Eigen::MatrixXd mix = Eigen::MatrixXd::Ones(2000, 8);
    const auto d = make_descriptor(lm, mix, 2.0, 3);
    const double mean = d.values.mean();
    const double sd = std::sqrt((d.values.array() - mean).square().sum() / (d.values.size() - 1));
    EXPECT_NEAR(mean, 0.0, 3 * 2.0 / std::sqrt(2000.0));
    EXPECT_NEAR(sd, 2.0, 0.1);
}

TEST(Detector, LinearRecovery)
{
    Rng rng(11);
    const int p = 4, df = 8;
    const Eigen::MatrixXd mix = gaussian_matrix(rng, df, 2 * p);
    DescriptorTable desc(30, std::vector<FrameDescriptor>(1));
    LabelSet labels;
    for (int n = 0; n < 30; ++n)
    {
        const auto lm = random_landmarks(rng, p);
        desc[n][0] = make_descriptor(lm, mix, 0.0, 0);
        labels.insert({n, 0}, {lm, LabelSource::Manual, false, {}});
    }
    const auto m = train_detector(labels, desc, 1e-10);
    for (const auto& [key, e] : labels)
        EXPECT_LE(max_abs(detect(m, desc[key.frame][0]).points - e.points.points), 1e-6);
}

TEST(Detector, ConstantDescriptorsCollapseToMean)
{
    Rng rng(12);
    DescriptorTable desc(10, std::vector<FrameDescriptor>(1, FrameDescriptor{Eigen::VectorXd::Constant(5, 2.0)}));
    LabelSet labels;
    Mat2X mean = Mat2X::Zero(3, 2);
    for (int n = 0; n < 10; ++n)
    {
        const auto lm = random_landmarks(rng, 3);
        mean += lm.points / 10.0;
        labels.insert({n, 0}, {lm, LabelSource::Manual, false, {}});
    }
    const auto m = train_detector(labels, desc, 1.0);
    EXPECT_LE(max_abs(detect(m, {Eigen::VectorXd::Constant(5, 2.0)}).points - mean), 1e-9);
    EXPECT_LE(max_abs(detect(m, {Eigen::VectorXd::Constant(5, -7.0)}).points - mean), 1e-9);
}

TEST(Detector, SingularWithoutRidge)
{
    Rng rng(13);
    DescriptorTable desc(3, std::vector<FrameDescriptor>(1));
    LabelSet labels;
    for (int n = 0; n < 3; ++n)
    {
        desc[n][0].values = gaussian_matrix(rng, 6, 1);
        labels.insert({n, 0}, {random_landmarks(rng, 3), LabelSource::Manual, false, {}});
    }
    EXPECT_THROW(train_detector(labels, desc, 0.0), SingularSystem);
    EXPECT_NO_THROW(train_detector(labels, desc, 0.1));
    EXPECT_THROW(train_detector(LabelSet{}, desc, 1.0), InsufficientLabels);
}

TEST(Detector, ZeroWeightsAndMatrixOracle)
{
    Rng rng(14);
    DetectorModel m;
    m.weights = Eigen::MatrixXd::Zero(6, 8);
    EXPECT_EQ(detect(m, {gaussian_matrix(rng, 5, 1)}).points, Mat2X::Zero(4, 2));

    m.weights = gaussian_matrix(rng, 6, 8);
    const Eigen::VectorXd d = gaussian_matrix(rng, 5, 1);
    const auto out = detect(m, {d});
    for (int j = 0; j < 8; ++j)
    {
        double acc = m.weights(5, j);
        for (int i = 0; i < 5; ++i)
            acc += d(i) * m.weights(i, j);
        EXPECT_NEAR(out.points(j / 2, j % 2), acc, 1e-12);
    }
}

TEST(Detector, InterpolatesTrainingSample)
{
    Rng rng(15);
    DescriptorTable desc(12, std::vector<FrameDescriptor>(1));
    LabelSet labels;
    for (int n = 0; n < 12; ++n)
    {
        desc[n][0].values = gaussian_matrix(rng, 11, 1);
        labels.insert({n, 0}, {random_landmarks(rng, 3), LabelSource::Manual, false, {}});
    }
    const auto m = train_detector(labels, desc, 0.0);
    EXPECT_LE(max_abs(detect(m, desc[4][0]).points - labels.find({4, 0})->points.points), 1e-6);
}

TEST(Detector, ErrorFallsWithMoreLabels)
{
    // Few-label regime: error drops steeply. Past ~15 labeled frames it plateaus near the floor set
    // by occlusion blur and appearance confusions, where selection jitter dominates.
    const auto ds = synth::generate(synth::SynthConfig{});
    const double lambda = pipeline::PipelineConfig{}.ridge_lambda;
    std::vector<double> errors;
    for (int labeled : {3, 6, 10, 15, 150})
    {
        // Train on subsets of the even frames, always score the odd ones.
        auto frames = pipeline::select_label_frames(ds.num_frames() / 2, labeled / 150.0, 1);
        for (int& f : frames)
            f *= 2;
        const auto m = train_detector(gt_labels(ds, frames), ds.descriptors, lambda);
        double err = 0.0;
        int n = 0;
        for (int f = 1; f < ds.num_frames(); f += 2)
            for (int v = 0; v < ds.num_views(); ++v)
            {
                err += (detect(m, ds.descriptors[f][v]).points - ds.gt_2d[f][v].points).rowwise().norm().mean();
                ++n;
            }
        errors.push_back(err / n);
    }
    for (std::size_t i = 1; i + 1 < errors.size(); ++i)
        EXPECT_LT(errors[i], errors[i - 1]) << "step " << i << ": " << errors[i - 1] << " -> " << errors[i];
    EXPECT_LT(errors.back(), errors[2]);
    EXPECT_LT(errors.back(), 0.5 * errors.front());
}

TEST(Plugin, ServeAndClientAgree)
{
    Rng rng(16);
    DetectorModel m;
    m.weights = gaussian_matrix(rng, 7, 10);
    std::stringstream requests, responses;
    std::vector<FrameDescriptor> descs;
    for (int i = 0; i < 5; ++i)
    {
        descs.push_back({gaussian_matrix(rng, 6, 1)});
        requests << format_detect_request({i, i % 2}, descs.back()) << '\n';
    }
    serve_detector(m, requests, responses);

    std::stringstream sink;
    StreamDetector client(responses, sink, 5);
    for (int i = 0; i < 5; ++i)
        EXPECT_LE(max_abs(client.detect({i, i % 2}, descs[i]).points - detect(m, descs[i]).points), 1e-12);
    EXPECT_THROW(client.detect({9, 0}, descs[0]), ProtocolError);
}

TEST(Plugin, RequestRoundTrip)
{
    const FrameDescriptor d{Eigen::Vector3d(0.1, -2.5, 1e-17)};
    const auto [key, back] = parse_detect_request(format_detect_request({7, 1}, d));
    EXPECT_EQ(key, (FrameView{7, 1}));
    EXPECT_EQ(back.values, d.values);
}

TEST(Plugin, MalformedLines)
{
    EXPECT_THROW(parse_detect_request("not json"), ProtocolError);
    EXPECT_THROW(parse_detect_request(R"({"op":"train","frame":0,"view":0,"descriptor":[]})"), ProtocolError);
    EXPECT_THROW(parse_detect_request(R"({"op":"detect","frame":"0","view":0,"descriptor":[]})"), ProtocolError);
    EXPECT_THROW(parse_detect_request(R"({"op":"detect","frame":0,"view":0,"descriptor":["a"]})"), ProtocolError);
    EXPECT_THROW(parse_detect_response(R"({"points":[[1,2]]})", 2), ProtocolError);
    EXPECT_THROW(parse_detect_response(R"({"points":[[1,2],[3]]})", 2), ProtocolError);
    EXPECT_THROW(parse_detect_response(R"([1,2])", 2), ProtocolError);

    DetectorModel m;
    m.weights = Eigen::MatrixXd::Zero(3, 4);
    std::stringstream in(R"({"op":"detect","frame":0,"view":0,"descriptor":[1]})"), out;
    EXPECT_THROW(serve_detector(m, in, out), ProtocolError);
}

// ---- properties over 100 seeded cases ----

TEST(PerceptionProperty, NoiselessTrackingIsIdentity)
{
    for (std::uint64_t seed = 0; seed < 100; ++seed)
    {
        Rng rng(seed);
        const auto seq = random_walk(rng, 30, 5);
        std::uniform_int_distribution<int> f(0, 29);
        std::map<int, Landmarks2D> seeds;
        for (int k = 0; k < 3; ++k)
        {
            const int s = f(rng);
            seeds[s] = seq[s];
        }
        auto c = quiet();
        c.seed = seed;
        const auto out = track_labels(seq, seeds, c);
        for (int t = 0; t < 30; ++t)
            EXPECT_LE(max_abs(out[t].forward.points - seq[t].points), 1e-9) << "seed " << seed;
    }
}

TEST(PerceptionProperty, FbCheckMonotoneInEpsilon)
{
    for (std::uint64_t seed = 0; seed < 100; ++seed)
    {
        Rng rng(seed);
        const auto s = random_landmarks(rng, 10);
        auto r = s;
        r.points += gaussian_matrix(rng, 10, 2, 2.0);
        std::uniform_real_distribution<double> e(0.0, 5.0);
        double e1 = e(rng), e2 = e(rng);
        if (e1 > e2)
            std::swap(e1, e2);
        const auto p1 = fb_consistency_check(r, s, e1);
        const auto p2 = fb_consistency_check(r, s, e2);
        EXPECT_TRUE((!p1 || p2).all()) << "seed " << seed;
    }
}

TEST(PerceptionProperty, RidgeBeatsZeroWeights)
{
    for (std::uint64_t seed = 0; seed < 100; ++seed)
    {
        Rng rng(seed);
        DescriptorTable desc(15, std::vector<FrameDescriptor>(1));
        LabelSet labels;
        for (int n = 0; n < 15; ++n)
        {
            desc[n][0].values = gaussian_matrix(rng, 6, 1);
            labels.insert({n, 0}, {random_landmarks(rng, 4), LabelSource::Manual, false, {}});
        }
        std::uniform_real_distribution<double> l(0.01, 10.0);
        const auto m = train_detector(labels, desc, l(rng));
        DetectorModel zero = m;
        zero.weights.setZero();
        EXPECT_LE(ridge_objective(m, labels, desc), ridge_objective(zero, labels, desc) + 1e-9) << "seed " << seed;
    }
}

TEST(PerceptionProperty, SeededOutputsAreReproducible)
{
    for (std::uint64_t seed = 0; seed < 100; ++seed)
    {
        Rng rng(seed);
        const auto seq = random_walk(rng, 20, 5);
        TrackerConfig c;
        c.seed = seed;
        c.drift_per_step = 0.1;
        const auto a = track_labels(seq, {{3, seq[3]}}, c);
        const auto b = track_labels(seq, {{3, seq[3]}}, c);
        for (int t = 0; t < 20; ++t)
        {
            EXPECT_EQ(a[t].forward.points, b[t].forward.points);
            EXPECT_EQ(a[t].backward_return.points, b[t].backward_return.points);
        }
        const Eigen::MatrixXd mix = gaussian_matrix(rng, 6, 10);
        EXPECT_EQ(make_descriptor(seq[0], mix, 1.0, seed).values, make_descriptor(seq[0], mix, 1.0, seed).values);
    }
}

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mbw/label_set.hpp"
#include "mbw/metrics.hpp"
#include "mbw/perception.hpp"
#include "mbw/shape_prior.hpp"
#include "mbw/synth.hpp"
#include "mbw/types.hpp"

/// The bootstrapping loop: manual seeds, flow propagation, and self-training iterations with
/// geometric outlier rejection and denoising.
namespace mbw::pipeline {

enum class Baseline
{
    None,           ///< learned multi-view shape prior
    Triangulation,  ///< triangulation with the groundtruth cameras
    TomasiKanade,   ///< rigid factorization over a sliding window
};

std::string_view to_string(Baseline b);
/// Accepts "none", "triangulation", "tk". Throws Error otherwise.
Baseline parse_baseline(std::string_view name);

struct BBox
{
    double x_min = 0.0;
    double y_min = 0.0;
    double x_max = 0.0;
    double y_max = 0.0;

    friend bool operator==(const BBox&, const BBox&) = default;
};

/// Axis-aligned bounds of the non-missing points grown by `pad` on every side.
/// Throws AllMissing when no point is present.
BBox compute_bbox(const Landmarks2D& preds, double pad);

/// One frame-view of the output annotation file.
struct FrameRecord
{
    Landmarks2D w_gt;           ///< manual labels; missing where unannotated
    Landmarks2D w_predictions;  ///< missing where nothing was predicted
    std::optional<Shape3D> s_pred;
    std::optional<BBox> bbox;
    bool confidence = false;  ///< final score <= tau
};

struct PipelineConfig
{
    std::optional<double> tau;   ///< absolute outlier threshold; default tau_fraction * median manual diameter
    double tau_fraction = 0.05;
    int iterations = 3;
    double label_fraction = 0.02;
    std::optional<double> fb_epsilon;  ///< default perception::default_fb_epsilon per path length
    double bbox_pad = 20.0;
    prior::TrainConfig prior;
    double ridge_lambda = 100.0;
    perception::TrackerConfig tracker;
    bool use_tracker = true;
    bool denoise_labels = true;  ///< false stores raw detector outputs (ablation)
    Baseline baseline = Baseline::None;
    int tk_window = 121;  ///< frames per TK window, centred on the scored frame; short windows see near-static cameras
    std::uint64_t seed = 7;

    void validate() const;
};

struct FrameReconstruction
{
    Shape3D shape;
    std::vector<WeakPerspectiveCamera> cameras;
    std::vector<double> scores;
};

/// candidates[frame] holds one complete Landmarks2D per view, or nothing.
using CandidateTable = std::vector<std::optional<std::vector<Landmarks2D>>>;
using ReconstructionTable = std::vector<std::optional<FrameReconstruction>>;

struct Diagnostic
{
    std::string stage;
    std::string error;
    std::size_t count = 0;
    std::string first_message;
};

/// The geometric constraint function: fitted on a label set, then reconstructs and scores
/// candidate frames. Frames whose reconstruction is degenerate are left empty and reported.
class Verifier
{
public:
    virtual ~Verifier() = default;
    virtual std::string name() const = 0;
    /// Returns the training loss trace (empty for closed-form verifiers).
    virtual std::vector<double> fit(const LabelSet& labels, int round) = 0;
    virtual ReconstructionTable reconstruct(const CandidateTable& candidates,
                                            std::vector<Diagnostic>& diagnostics,
                                            const std::string& stage) const = 0;
};

std::unique_ptr<Verifier> make_verifier(const PipelineConfig& cfg, const synth::SynthDataset& ds);

/// Shape-prior verifier on its own; exposes the trained model.
class PriorVerifier : public Verifier
{
public:
    explicit PriorVerifier(prior::TrainConfig config) : config_(std::move(config)) {}
    std::string name() const override { return "mv-prior"; }
    std::vector<double> fit(const LabelSet& labels, int round) override;
    ReconstructionTable reconstruct(const CandidateTable& candidates, std::vector<Diagnostic>& diagnostics,
                                    const std::string& stage) const override;
    const std::optional<prior::PriorModel>& model() const { return model_; }
    void set_model(prior::PriorModel m) { model_ = std::move(m); }

private:
    prior::TrainConfig config_;
    std::optional<prior::PriorModel> model_;
};

/// Selects ceil(fraction * N) evenly spaced frames (same frames in every view) and copies their
/// groundtruth as manual labels. Throws TooFewFrames when fewer than 2 frames would be chosen.
LabelSet init_label_set(const synth::SynthDataset& ds, double fraction, std::uint64_t seed);

/// The sorted manual frame indices that init_label_set would pick.
std::vector<int> select_label_frames(int num_frames, double fraction, std::uint64_t seed);

double default_tau(const LabelSet& manual, double fraction);

struct FlowCandidate
{
    Landmarks2D forward;
    Mask injected_outlier;
    int path_length = 0;
    bool fb_passed = false;  ///< every point passed the forward/backward check
    std::optional<double> score;
    bool admitted = false;
};

struct FlowStageResult
{
    LabelSet labels;
    std::vector<std::vector<FlowCandidate>> candidates;  ///< [frame][view]; empty rows when the tracker is off
    ReconstructionTable reconstructions;
    std::size_t admitted = 0;
};

/// Tracks manual labels through each view, drops frame-views failing the forward/backward check,
/// scores frames whose views all survived, and admits frame-views with score <= tau.
FlowStageResult flow_stage(const synth::SynthDataset& ds, const LabelSet& manual, const Verifier& verifier,
                           const PipelineConfig& cfg, double tau, std::vector<Diagnostic>& diagnostics);

/// Replaces a raw prediction by the reprojection of the reconstructed shape.
Landmarks2D denoise_inliers(const Landmarks2D& raw, const Shape3D& shape, const WeakPerspectiveCamera& cam);

using DetectorOverride = std::function<Landmarks2D(FrameView)>;

struct IterationResult
{
    int iteration = 0;
    LabelSet labels;
    perception::DetectorModel detector;
    std::vector<double> loss_trace;
    std::vector<std::vector<Landmarks2D>> predictions;  ///< raw detector output [frame][view]
    ReconstructionTable reconstructions;
    std::vector<std::vector<std::optional<double>>> scores;  ///< [frame][view]
    std::size_t inliers = 0;
    double mean_score = 0.0;

    bool inlier(FrameView key, double tau) const;
};

/// Fits the verifier and the detector on `previous`, detects every frame-view, scores, and
/// rebuilds the label set from manual labels plus denoised inliers.
IterationResult self_train_iteration(int t, const LabelSet& previous, const synth::SynthDataset& ds,
                                     const PipelineConfig& cfg, Verifier& verifier, double tau,
                                     std::vector<Diagnostic>& diagnostics,
                                     const DetectorOverride& detector_override = {});

struct RunResult
{
    std::vector<FrameRecord> records;  ///< frame-major: index frame * V + view
    nlohmann::json manifest;
    std::vector<metrics::ReportRow> report;
    double tau = 0.0;
    LabelSet initial;
    FlowStageResult flow;
    std::vector<IterationResult> iterations;
    std::vector<std::vector<double>> prior_loss_traces;  ///< fit round 0 (initial labels) first
    bool ok = true;
};

/// init -> fit verifier -> flow stage -> K self-training iterations -> records.
/// Stage failures do not throw: the result carries ok = false and a manifest with the error.
RunResult run_pipeline(const synth::SynthDataset& ds, const PipelineConfig& cfg);

/// run_pipeline with the verifier replaced by triangulation under groundtruth cameras.
RunResult run_baseline_triangulation(const synth::SynthDataset& ds, PipelineConfig cfg);

/// run_pipeline with the verifier replaced by rigid sliding-window Tomasi-Kanade.
RunResult run_baseline_tk(const synth::SynthDataset& ds, PipelineConfig cfg);

/// Mean distance of every label-set entry to groundtruth (all non-missing points).
double mean_label_error(const LabelSet& labels, const synth::SynthDataset& ds);

}  // namespace mbw::pipeline

#include "mbw/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>

#include "mbw/errors.hpp"
#include "mbw/geometry.hpp"
#include "mbw/rng.hpp"

namespace mbw::pipeline {

using nlohmann::json;

namespace {

enum StreamTag : std::uint64_t
{
    kSelectStream = 31,
    kTrackerStream,
    kPriorStream,
};

// Readable error names for the manifest; typeid names are mangled.
std::string error_name(const Error& e)
{
#define MBW_NAME(T) \
    if (dynamic_cast<const T*>(&e)) \
        return #T;
    MBW_NAME(DegenerateConfiguration)
    MBW_NAME(ShapeMismatch)
    MBW_NAME(IncompleteInput)
    MBW_NAME(InsufficientLabels)
    MBW_NAME(SingularSystem)
    MBW_NAME(NoSeeds)
    MBW_NAME(TooFewFrames)
    MBW_NAME(AllMissing)
    MBW_NAME(NonFiniteLoss)
    MBW_NAME(ProtocolError)
#undef MBW_NAME
    return "Error";
}

void record(std::vector<Diagnostic>& diags, const std::string& stage, const Error& e)
{
    const std::string kind = error_name(e);
    for (auto& d : diags)
        if (d.stage == stage && d.error == kind)
        {
            ++d.count;
            return;
        }
    diags.push_back({stage, kind, 1, e.what()});
}

class TriangulationVerifier : public Verifier
{
public:
    explicit TriangulationVerifier(const synth::SynthDataset& ds) : ds_(ds) {}
    std::string name() const override { return "triangulation"; }
    std::vector<double> fit(const LabelSet&, int) override { return {}; }

    ReconstructionTable reconstruct(const CandidateTable& candidates, std::vector<Diagnostic>& diags,
                                    const std::string& stage) const override
    {
        ReconstructionTable out(candidates.size());
        for (std::size_t n = 0; n < candidates.size(); ++n)
        {
            if (!candidates[n])
                continue;
            const auto& views = *candidates[n];
            try
            {
                std::vector<std::pair<Landmarks2D, WeakPerspectiveCamera>> obs;
                for (std::size_t v = 0; v < views.size(); ++v)
                    obs.emplace_back(views[v], ds_.gt_cams[n][v]);
                FrameReconstruction r;
                r.shape = geometry::triangulate(obs);
                for (std::size_t v = 0; v < views.size(); ++v)
                {
                    r.cameras.push_back(ds_.gt_cams[n][v]);
                    r.scores.push_back(geometry::reprojection_error(views[v], r.shape, r.cameras.back()));
                }
                out[n] = std::move(r);
            }
            catch (const Error& e)
            {
                record(diags, stage, e);
            }
        }
        return out;
    }

private:
    const synth::SynthDataset& ds_;
};

// Rigid factorization over the candidate frames within a window centred on each scored frame.
class TomasiKanadeVerifier : public Verifier
{
public:
    explicit TomasiKanadeVerifier(int window) : window_(window) {}
    std::string name() const override { return "tomasi-kanade"; }
    std::vector<double> fit(const LabelSet&, int) override { return {}; }

    ReconstructionTable reconstruct(const CandidateTable& candidates, std::vector<Diagnostic>& diags,
                                    const std::string& stage) const override
    {
        const int n_frames = static_cast<int>(candidates.size());
        ReconstructionTable out(candidates.size());
        for (int n = 0; n < n_frames; ++n)
        {
            if (!candidates[static_cast<std::size_t>(n)])
                continue;
            const int lo = std::max(0, n - window_ / 2);
            const int hi = std::min(n_frames, lo + window_);
            std::vector<Landmarks2D> obs;
            std::size_t own = 0;
            for (int m = lo; m < hi; ++m)
            {
                const auto& c = candidates[static_cast<std::size_t>(m)];
                if (!c)
                    continue;
                if (m == n)
                    own = obs.size();
                obs.insert(obs.end(), c->begin(), c->end());
            }
            try
            {
                const auto tk = geometry::tomasi_kanade(obs);
                const auto& views = *candidates[static_cast<std::size_t>(n)];
                FrameReconstruction r;
                r.shape = tk.shape;
                for (std::size_t v = 0; v < views.size(); ++v)
                {
                    r.cameras.push_back(tk.cameras[own + v]);
                    r.scores.push_back(geometry::reprojection_error(views[v], r.shape, r.cameras.back()));
                }
                out[static_cast<std::size_t>(n)] = std::move(r);
            }
            catch (const Error& e)
            {
                record(diags, stage, e);
            }
        }
        return out;
    }

private:
    int window_;
};

std::vector<Landmarks2D> view_sequence(const synth::SynthDataset& ds, int v)
{
    std::vector<Landmarks2D> seq;
    seq.reserve(ds.gt_2d.size());
    for (const auto& frame : ds.gt_2d)
        seq.push_back(frame[static_cast<std::size_t>(v)]);
    return seq;
}

double mean_point_error(const Landmarks2D& a, const Landmarks2D& b)
{
    double sum = 0.0;
    Eigen::Index cnt = 0;
    for (Eigen::Index i = 0; i < a.size(); ++i)
        if (!a.missing(i) && !b.missing(i))
        {
            sum += (a.points.row(i) - b.points.row(i)).norm();
            ++cnt;
        }
    return cnt ? sum / static_cast<double>(cnt) : 0.0;
}

json config_json(const PipelineConfig& cfg, double tau)
{
    json j;
    j["tau"] = tau;
    j["tau_fraction"] = cfg.tau_fraction;
    j["tau_explicit"] = cfg.tau.has_value();
    j["iterations"] = cfg.iterations;
    j["label_fraction"] = cfg.label_fraction;
    j["fb_epsilon"] = cfg.fb_epsilon ? json(*cfg.fb_epsilon) : json(nullptr);
    j["bbox_pad"] = cfg.bbox_pad;
    j["ridge_lambda"] = cfg.ridge_lambda;
    j["use_tracker"] = cfg.use_tracker;
    j["denoise_labels"] = cfg.denoise_labels;
    j["baseline"] = std::string(to_string(cfg.baseline));
    j["tk_window"] = cfg.tk_window;
    j["prior"] = {{"learning_rate", cfg.prior.learning_rate},
                  {"steps", cfg.prior.steps},
                  {"batch", cfg.prior.batch},
                  {"code_dim", cfg.prior.code_dim},
                  {"hidden", cfg.prior.hidden},
                  {"activation", cfg.prior.activation == prior::Activation::Tanh ? "tanh" : "identity"}};
    j["tracker"] = {{"noise_sigma", cfg.tracker.noise_sigma},
                    {"outlier_rate", cfg.tracker.outlier_rate},
                    {"consistent_error_rate", cfg.tracker.consistent_error_rate},
                    {"drift_per_step", cfg.tracker.drift_per_step},
                    {"outlier_offset_min", cfg.tracker.outlier_offset_min},
                    {"outlier_offset_max", cfg.tracker.outlier_offset_max}};
    return j;
}

}  // namespace

std::string_view to_string(Baseline b)
{
    switch (b)
    {
    case Baseline::None: return "none";
    case Baseline::Triangulation: return "triangulation";
    case Baseline::TomasiKanade: return "tk";
    }
    return "none";
}

Baseline parse_baseline(std::string_view name)
{
    if (name == "none")
        return Baseline::None;
    if (name == "triangulation")
        return Baseline::Triangulation;
    if (name == "tk")
        return Baseline::TomasiKanade;
    throw Error("unknown baseline '" + std::string(name) + "' (expected none, triangulation or tk)");
}

BBox compute_bbox(const Landmarks2D& preds, double pad)
{
    if (preds.num_present() == 0)
        throw AllMissing("compute_bbox: every point is missing");
    BBox b{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
           -std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (Eigen::Index i = 0; i < preds.size(); ++i)
    {
        if (preds.missing(i))
            continue;
        b.x_min = std::min(b.x_min, preds.points(i, 0));
        b.y_min = std::min(b.y_min, preds.points(i, 1));
        b.x_max = std::max(b.x_max, preds.points(i, 0));
        b.y_max = std::max(b.y_max, preds.points(i, 1));
    }
    return {b.x_min - pad, b.y_min - pad, b.x_max + pad, b.y_max + pad};
}

void PipelineConfig::validate() const
{
    if (tau && !(*tau > 0.0))
        throw Error("pipeline: tau must be positive");
    if (!(tau_fraction > 0.0))
        throw Error("pipeline: tau_fraction must be positive");
    if (iterations < 0)
        throw Error("pipeline: iterations must be non-negative");
    if (!(label_fraction > 0.0 && label_fraction <= 1.0))
        throw Error("pipeline: label_fraction must lie in (0, 1]");
    if (fb_epsilon && !(*fb_epsilon >= 0.0))
        throw Error("pipeline: fb_epsilon must be non-negative");
    if (!(bbox_pad >= 0.0))
        throw Error("pipeline: bbox_pad must be non-negative");
    if (!(ridge_lambda >= 0.0))
        throw Error("pipeline: ridge_lambda must be non-negative");
    if (tk_window < 1)
        throw Error("pipeline: tk_window must be at least 1");
    tracker.validate();
}

std::vector<double> PriorVerifier::fit(const LabelSet& labels, int round)
{
    auto cfg = config_;
    cfg.seed = derive_seed(config_.seed, {kPriorStream, static_cast<std::uint64_t>(round)});
    auto res = prior::train_prior(labels, cfg, model_ ? &*model_ : nullptr);
    model_ = std::move(res.model);
    return std::move(res.loss_trace);
}

ReconstructionTable PriorVerifier::reconstruct(const CandidateTable& candidates, std::vector<Diagnostic>& diags,
                                               const std::string& stage) const
{
    if (!model_)
        throw Error("prior verifier used before fit");
    ReconstructionTable out(candidates.size());
    for (std::size_t n = 0; n < candidates.size(); ++n)
    {
        if (!candidates[n])
            continue;
        try
        {
            auto r = prior::reconstruct(*candidates[n], *model_);
            out[n] = FrameReconstruction{std::move(r.shape), std::move(r.cameras), std::move(r.scores)};
        }
        catch (const Error& e)
        {
            record(diags, stage, e);
        }
    }
    return out;
}

std::unique_ptr<Verifier> make_verifier(const PipelineConfig& cfg, const synth::SynthDataset& ds)
{
    switch (cfg.baseline)
    {
    case Baseline::Triangulation: return std::make_unique<TriangulationVerifier>(ds);
    case Baseline::TomasiKanade: return std::make_unique<TomasiKanadeVerifier>(cfg.tk_window);
    case Baseline::None: break;
    }
    auto pc = cfg.prior;
    pc.seed = derive_seed(cfg.seed, {kPriorStream});
    return std::make_unique<PriorVerifier>(pc);
}

std::vector<int> select_label_frames(int num_frames, double fraction, std::uint64_t seed)
{
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw Error("label fraction must lie in (0, 1]");
    // Guard against 0.02 * 300 landing a hair above 6.
    const int count = std::min(num_frames, static_cast<int>(std::ceil(fraction * num_frames - 1e-9)));
    if (count < 2)
        throw TooFewFrames("need at least 2 labeled frames, got " + std::to_string(count));
    const double step = static_cast<double>(num_frames) / count;
    Rng rng(derive_seed(seed, {kSelectStream}));
    const double phase = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    std::vector<int> frames(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i)
        frames[static_cast<std::size_t>(i)] = static_cast<int>(std::floor((i + phase) * step));
    return frames;
}

LabelSet init_label_set(const synth::SynthDataset& ds, double fraction, std::uint64_t seed)
{
    LabelSet s;
    for (int n : select_label_frames(ds.num_frames(), fraction, seed))
        for (int v = 0; v < ds.num_views(); ++v)
            s.insert({n, v}, {ds.gt_2d[static_cast<std::size_t>(n)][static_cast<std::size_t>(v)],
                              LabelSource::Manual, false, std::nullopt});
    return s;
}

double default_tau(const LabelSet& manual, double fraction)
{
    std::vector<double> d;
    for (const auto& [key, e] : manual)
        if (e.source == LabelSource::Manual && e.points.num_present() >= 2)
            d.push_back(geometry::diameter(e.points));
    if (d.empty())
        throw InsufficientLabels("default_tau: no manual labels with two or more points");
    auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
    std::nth_element(d.begin(), mid, d.end());
    double med = *mid;
    if (d.size() % 2 == 0)
        med = 0.5 * (med + *std::max_element(d.begin(), mid));
    return fraction * med;
}

Landmarks2D denoise_inliers(const Landmarks2D&, const Shape3D& shape, const WeakPerspectiveCamera& cam)
{
    return geometry::project(shape, cam);
}

FlowStageResult flow_stage(const synth::SynthDataset& ds, const LabelSet& manual, const Verifier& verifier,
                           const PipelineConfig& cfg, double tau, std::vector<Diagnostic>& diags)
{
    FlowStageResult res;
    res.labels = manual;
    const int n_frames = ds.num_frames();
    const int n_views = ds.num_views();
    res.candidates.assign(static_cast<std::size_t>(n_frames), {});
    res.reconstructions.assign(static_cast<std::size_t>(n_frames), std::nullopt);
    if (!cfg.use_tracker)
        return res;

    for (auto& row : res.candidates)
        row.resize(static_cast<std::size_t>(n_views));
    for (int v = 0; v < n_views; ++v)
    {
        std::map<int, Landmarks2D> seeds;
        for (const auto& [key, e] : manual)
            if (key.view == v && e.source == LabelSource::Manual)
                seeds.emplace(key.frame, e.points);
        auto tcfg = cfg.tracker;
        tcfg.seed = derive_seed(cfg.seed, {kTrackerStream, static_cast<std::uint64_t>(v)});
        const auto tracks = perception::track_labels(view_sequence(ds, v), seeds, tcfg);
        for (int n = 0; n < n_frames; ++n)
        {
            const auto& t = tracks[static_cast<std::size_t>(n)];
            auto& c = res.candidates[static_cast<std::size_t>(n)][static_cast<std::size_t>(v)];
            c.forward = t.forward;
            c.injected_outlier = t.outlier;
            c.path_length = t.path_length;
            const double eps = cfg.fb_epsilon ? *cfg.fb_epsilon
                                              : perception::default_fb_epsilon(tcfg.noise_sigma, t.path_length);
            const auto& seed = seeds.at(t.seed_frame);
            c.fb_passed = seed.complete() && perception::fb_consistency_check(t.backward_return, seed, eps).all();
        }
    }

    CandidateTable table(static_cast<std::size_t>(n_frames));
    for (int n = 0; n < n_frames; ++n)
    {
        const auto& row = res.candidates[static_cast<std::size_t>(n)];
        if (!std::all_of(row.begin(), row.end(), [](const FlowCandidate& c) { return c.fb_passed; }))
            continue;
        std::vector<Landmarks2D> views;
        for (const auto& c : row)
            views.push_back(c.forward);
        table[static_cast<std::size_t>(n)] = std::move(views);
    }
    res.reconstructions = verifier.reconstruct(table, diags, "flow");
    for (int n = 0; n < n_frames; ++n)
    {
        const auto& r = res.reconstructions[static_cast<std::size_t>(n)];
        if (!r)
            continue;
        for (int v = 0; v < n_views; ++v)
        {
            auto& c = res.candidates[static_cast<std::size_t>(n)][static_cast<std::size_t>(v)];
            c.score = r->scores[static_cast<std::size_t>(v)];
            if (*c.score > tau)
                continue;
            c.admitted = true;
            if (res.labels.insert({n, v}, {c.forward, LabelSource::Flow, false, c.score}))
                ++res.admitted;
        }
    }
    return res;
}

bool IterationResult::inlier(FrameView key, double tau) const
{
    const auto& s = scores[static_cast<std::size_t>(key.frame)][static_cast<std::size_t>(key.view)];
    return s && *s <= tau;
}

IterationResult self_train_iteration(int t, const LabelSet& previous, const synth::SynthDataset& ds,
                                     const PipelineConfig& cfg, Verifier& verifier, double tau,
                                     std::vector<Diagnostic>& diags, const DetectorOverride& detector_override)
{
    const int n_frames = ds.num_frames();
    const int n_views = ds.num_views();
    for (int v = 0; v < n_views; ++v)
    {
        const bool any = std::any_of(previous.begin(), previous.end(),
                                     [&](const auto& kv) { return kv.first.view == v; });
        if (!any)
            throw InsufficientLabels("self-training: view " + std::to_string(v) + " has no labels");
    }

    IterationResult it;
    it.iteration = t;
    it.loss_trace = verifier.fit(previous, t);
    if (!detector_override)
        it.detector = perception::train_detector(previous, ds.descriptors, cfg.ridge_lambda);

    it.predictions.resize(static_cast<std::size_t>(n_frames));
    CandidateTable table(static_cast<std::size_t>(n_frames));
    for (int n = 0; n < n_frames; ++n)
    {
        auto& row = it.predictions[static_cast<std::size_t>(n)];
        for (int v = 0; v < n_views; ++v)
            row.push_back(detector_override
                              ? detector_override({n, v})
                              : perception::detect(it.detector,
                                                   ds.descriptors[static_cast<std::size_t>(n)][static_cast<std::size_t>(v)]));
        table[static_cast<std::size_t>(n)] = row;
    }
    it.reconstructions = verifier.reconstruct(table, diags, "iteration " + std::to_string(t));

    it.labels = previous.manual_only();
    it.scores.assign(static_cast<std::size_t>(n_frames),
                     std::vector<std::optional<double>>(static_cast<std::size_t>(n_views)));
    double score_sum = 0.0;
    std::size_t scored = 0;
    for (int n = 0; n < n_frames; ++n)
    {
        const auto& r = it.reconstructions[static_cast<std::size_t>(n)];
        if (!r)
            continue;
        for (int v = 0; v < n_views; ++v)
        {
            const double s = r->scores[static_cast<std::size_t>(v)];
            it.scores[static_cast<std::size_t>(n)][static_cast<std::size_t>(v)] = s;
            score_sum += s;
            ++scored;
            if (s > tau)
                continue;
            ++it.inliers;
            const auto& raw = it.predictions[static_cast<std::size_t>(n)][static_cast<std::size_t>(v)];
            if (cfg.denoise_labels)
                it.labels.insert({n, v}, {denoise_inliers(raw, r->shape, r->cameras[static_cast<std::size_t>(v)]),
                                          LabelSource::Detector, true, s});
            else
                it.labels.insert({n, v}, {raw, LabelSource::Detector, false, s});
        }
    }
    it.mean_score = scored ? score_sum / static_cast<double>(scored) : 0.0;
    return it;
}

double mean_label_error(const LabelSet& labels, const synth::SynthDataset& ds)
{
    double sum = 0.0;
    std::size_t cnt = 0;
    for (const auto& [key, e] : labels)
    {
        sum += mean_point_error(e.points, ds.gt_2d[static_cast<std::size_t>(key.frame)][static_cast<std::size_t>(key.view)]);
        ++cnt;
    }
    return cnt ? sum / static_cast<double>(cnt) : 0.0;
}

namespace {

// Final per frame-view predictions, the reconstruction they came from, and the final score.
struct FinalView
{
    std::vector<std::vector<Landmarks2D>> predictions;
    const ReconstructionTable* reconstructions = nullptr;
    std::vector<std::vector<std::optional<double>>> scores;
};

FinalView final_view_of_iteration(const IterationResult& it, const PipelineConfig& cfg, double tau)
{
    FinalView f;
    f.predictions = it.predictions;
    f.reconstructions = &it.reconstructions;
    f.scores = it.scores;
    for (std::size_t n = 0; n < f.predictions.size(); ++n)
    {
        const auto& r = it.reconstructions[n];
        if (!r)
            continue;
        for (std::size_t v = 0; v < f.predictions[n].size(); ++v)
            if (cfg.denoise_labels && r->scores[v] <= tau)
                f.predictions[n][v] = denoise_inliers(f.predictions[n][v], r->shape, r->cameras[v]);
    }
    return f;
}

FinalView final_view_of_flow(const FlowStageResult& flow, const LabelSet& labels, int n_frames, int n_views,
                             Eigen::Index p)
{
    FinalView f;
    f.reconstructions = &flow.reconstructions;
    f.predictions.assign(static_cast<std::size_t>(n_frames),
                         std::vector<Landmarks2D>(static_cast<std::size_t>(n_views), Landmarks2D::all_missing(p)));
    f.scores.assign(static_cast<std::size_t>(n_frames),
                    std::vector<std::optional<double>>(static_cast<std::size_t>(n_views)));
    for (int n = 0; n < n_frames; ++n)
        for (int v = 0; v < n_views; ++v)
        {
            const auto sn = static_cast<std::size_t>(n);
            const auto sv = static_cast<std::size_t>(v);
            if (const auto* e = labels.find({n, v}))
                f.predictions[sn][sv] = e->points;
            else if (!flow.candidates[sn].empty())
                f.predictions[sn][sv] = flow.candidates[sn][sv].forward;
            if (!flow.candidates[sn].empty())
                f.scores[sn][sv] = flow.candidates[sn][sv].score;
        }
    return f;
}

std::vector<FrameRecord> make_records(const synth::SynthDataset& ds, const LabelSet& initial, const FinalView& f,
                                      double tau, double pad)
{
    const int n_frames = ds.num_frames();
    const int n_views = ds.num_views();
    const Eigen::Index p = ds.num_points();
    std::vector<FrameRecord> recs;
    recs.reserve(static_cast<std::size_t>(n_frames * n_views));
    for (int n = 0; n < n_frames; ++n)
        for (int v = 0; v < n_views; ++v)
        {
            const auto sn = static_cast<std::size_t>(n);
            const auto sv = static_cast<std::size_t>(v);
            FrameRecord r;
            const auto* m = initial.find({n, v});
            r.w_gt = m ? m->points : Landmarks2D::all_missing(p);
            r.w_predictions = f.predictions[sn][sv];
            if (const auto& rec = (*f.reconstructions)[sn])
                r.s_pred = rec->shape;
            if (r.w_predictions.num_present() > 0)
                r.bbox = compute_bbox(r.w_predictions, pad);
            r.confidence = f.scores[sn][sv] && *f.scores[sn][sv] <= tau;
            recs.push_back(std::move(r));
        }
    return recs;
}

void add_quality_rows(std::vector<metrics::ReportRow>& rows, int t, const synth::SynthDataset& ds,
                      const LabelSet& labels, const FinalView& f, json& iter_json)
{
    const int n_views = ds.num_views();
    const double total = static_cast<double>(ds.num_frames()) * n_views;
    const double coverage = static_cast<double>(labels.size()) / total;
    const double label_err = mean_label_error(labels, ds);
    rows.push_back({"label_count", t, -1, static_cast<double>(labels.size())});
    rows.push_back({"label_coverage", t, -1, coverage});
    rows.push_back({"label_error_2d", t, -1, label_err});
    iter_json["label_count"] = labels.size();
    iter_json["label_error_2d"] = label_err;

    const auto grid = metrics::default_grid();
    std::vector<double> all_errs;
    for (int v = 0; v < n_views; ++v)
    {
        std::vector<double> errs;
        for (int n = 0; n < ds.num_frames(); ++n)
        {
            const auto& pred = f.predictions[static_cast<std::size_t>(n)][static_cast<std::size_t>(v)];
            if (pred.num_present() == 0)
                continue;
            const auto e = metrics::normalized_errors(
                pred, ds.gt_2d[static_cast<std::size_t>(n)][static_cast<std::size_t>(v)], ds.skeleton);
            errs.insert(errs.end(), e.begin(), e.end());
        }
        if (errs.empty())
            continue;
        rows.push_back({"pck_auc", t, v, metrics::pck_auc_from_errors(errs, grid)});
        all_errs.insert(all_errs.end(), errs.begin(), errs.end());
    }
    if (!all_errs.empty())
    {
        const double auc = metrics::pck_auc_from_errors(all_errs, grid);
        rows.push_back({"pck_auc", t, -1, auc});
        iter_json["pck_auc"] = auc;
    }

    std::vector<Shape3D> preds;
    std::vector<Shape3D> gts;
    for (int n = 0; n < ds.num_frames(); ++n)
        if (const auto& r = (*f.reconstructions)[static_cast<std::size_t>(n)])
        {
            preds.push_back(r->shape);
            gts.push_back(ds.gt_shapes[static_cast<std::size_t>(n)]);
        }
    if (!preds.empty())
    {
        const double pa = metrics::pa_mpjpe_gauge_fixed(preds, gts);
        rows.push_back({"pa_mpjpe", t, -1, pa});
        iter_json["pa_mpjpe"] = pa;
    }
}

json diagnostics_json(const std::vector<Diagnostic>& diags)
{
    json out = json::array();
    for (const auto& d : diags)
        out.push_back({{"stage", d.stage}, {"error", d.error}, {"count", d.count}, {"first_message", d.first_message}});
    return out;
}

}  // namespace

RunResult run_pipeline(const synth::SynthDataset& ds, const PipelineConfig& cfg)
{
    const auto start = std::chrono::steady_clock::now();
    RunResult res;
    std::vector<Diagnostic> diags;
    json& man = res.manifest;
    man["status"] = "running";
    man["dataset"] = {{"frames", ds.num_frames()},
                      {"views", ds.num_views()},
                      {"points", ds.num_points()},
                      {"seed", ds.config.seed}};
    man["seeds"] = {{"pipeline", cfg.seed},
                    {"prior", derive_seed(cfg.seed, {kPriorStream})},
                    {"tracker", derive_seed(cfg.seed, {kTrackerStream})}};
    man["metric_conventions"] = {
        {"pck_auc", "PCKh over 50 thresholds on [0,1] head-bone lengths, trapezoid area / grid span"},
        {"pa_mpjpe", "mean over frames after similarity alignment; one global depth reflection chosen per run"},
        {"label_error_2d", "mean per-point distance of label-set entries to groundtruth (image units)"}};
    man["iterations"] = json::array();

    std::string stage = "config";
    try
    {
        cfg.validate();
        stage = "init";
        res.initial = init_label_set(ds, cfg.label_fraction, cfg.seed);
        res.tau = cfg.tau ? *cfg.tau : default_tau(res.initial, cfg.tau_fraction);
        man["config"] = config_json(cfg, res.tau);
        man["manual_labels"] = res.initial.size();

        stage = "prior";
        auto verifier = make_verifier(cfg, ds);
        man["verifier"] = verifier->name();
        res.prior_loss_traces.push_back(verifier->fit(res.initial, 0));

        stage = "flow";
        res.flow = flow_stage(ds, res.initial, *verifier, cfg, res.tau, diags);
        json flow_json;
        std::size_t fb_pass = 0;
        std::size_t tracked = 0;
        for (const auto& row : res.flow.candidates)
            for (const auto& c : row)
            {
                ++tracked;
                fb_pass += c.fb_passed ? 1 : 0;
            }
        flow_json["tracked"] = tracked;
        flow_json["fb_passed"] = fb_pass;
        flow_json["admitted"] = res.flow.admitted;
        flow_json["loss_trace"] = res.prior_loss_traces.front();
        const Eigen::Index p = ds.num_points();
        const auto flow_final = final_view_of_flow(res.flow, res.flow.labels, ds.num_frames(), ds.num_views(), p);
        add_quality_rows(res.report, 0, ds, res.flow.labels, flow_final, flow_json);
        man["flow"] = flow_json;

        const LabelSet* current = &res.flow.labels;
        for (int t = 1; t <= cfg.iterations; ++t)
        {
            stage = "iteration " + std::to_string(t);
            res.iterations.push_back(self_train_iteration(t, *current, ds, cfg, *verifier, res.tau, diags));
            const auto& it = res.iterations.back();
            res.prior_loss_traces.push_back(it.loss_trace);
            current = &it.labels;

            json ij;
            ij["iteration"] = t;
            ij["loss_trace"] = it.loss_trace;
            ij["inlier_count"] = it.inliers;
            ij["mean_score"] = it.mean_score;
            const auto fv = final_view_of_iteration(it, cfg, res.tau);
            add_quality_rows(res.report, t, ds, it.labels, fv, ij);
            res.report.push_back({"inlier_count", t, -1, static_cast<double>(it.inliers)});
            res.report.push_back({"mean_score", t, -1, it.mean_score});
            man["iterations"].push_back(ij);
        }

        json final_scores = json::array();
        for (int n = 0; n < ds.num_frames(); ++n)
        {
            json row = json::array();
            for (int v = 0; v < ds.num_views(); ++v)
            {
                std::optional<double> sc;
                if (!res.iterations.empty())
                    sc = res.iterations.back().scores[static_cast<std::size_t>(n)][static_cast<std::size_t>(v)];
                else if (!res.flow.candidates[static_cast<std::size_t>(n)].empty())
                    sc = res.flow.candidates[static_cast<std::size_t>(n)][static_cast<std::size_t>(v)].score;
                row.push_back(sc ? json(*sc) : json(nullptr));
            }
            final_scores.push_back(std::move(row));
        }
        man["final_scores"] = std::move(final_scores);

        stage = "records";
        if (res.iterations.empty())
            res.records = make_records(ds, res.initial,
                                       final_view_of_flow(res.flow, res.flow.labels, ds.num_frames(), ds.num_views(), p),
                                       res.tau, cfg.bbox_pad);
        else
            res.records = make_records(ds, res.initial, final_view_of_iteration(res.iterations.back(), cfg, res.tau),
                                       res.tau, cfg.bbox_pad);
        man["status"] = "ok";
    }
    catch (const Error& e)
    {
        res.ok = false;
        man["status"] = "failed";
        man["error"] = {{"stage", stage}, {"type", error_name(e)}, {"message", e.what()}};
    }
    man["diagnostics"] = diagnostics_json(diags);
    man["wall_time_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return res;
}

RunResult run_baseline_triangulation(const synth::SynthDataset& ds, PipelineConfig cfg)
{
    cfg.baseline = Baseline::Triangulation;
    return run_pipeline(ds, cfg);
}

RunResult run_baseline_tk(const synth::SynthDataset& ds, PipelineConfig cfg)
{
    cfg.baseline = Baseline::TomasiKanade;
    return run_pipeline(ds, cfg);
}

}  // namespace mbw::pipeline

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "mbw/errors.hpp"
#include "mbw/format.hpp"
#include "mbw/io.hpp"
#include "mbw/metrics.hpp"
#include "mbw/pipeline.hpp"
#include "mbw/synth.hpp"

namespace fs = std::filesystem;
using namespace mbw;

namespace {

constexpr int kUsage = 1;
constexpr int kRuntime = 2;

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, std::uint64_t fallback)
{
    if (flag)
        return *flag;
    if (const char* env = std::getenv("MBW_SEED"))
    {
        try
        {
            std::size_t used = 0;
            const auto v = std::stoull(env, &used);
            if (used == std::string(env).size())
                return v;
        }
        catch (const std::exception&)
        {
        }
        throw Error(std::string("MBW_SEED='") + env + "' is not an unsigned integer");
    }
    return fallback;
}

struct DataOptions
{
    std::string path;
    int frames = 300;
    int views = 2;
    int points = 12;
    std::uint64_t seed = 0;

    void add(CLI::App& app, bool with_views)
    {
        app.add_option("--data", path, "Dataset file written by `synth` (default: generate one)");
        app.add_option("--frames", frames, "Frames of a generated dataset")->check(CLI::PositiveNumber);
        if (with_views)
            app.add_option("--views", views, "Views of a generated dataset")->check(CLI::PositiveNumber);
        app.add_option("--points", points, "Landmarks of a generated dataset")->check(CLI::Range(4, 1000));
        app.add_option("--data-seed", seed, "Seed of a generated dataset");
    }

    synth::SynthDataset load() const
    {
        if (!path.empty())
            return io::load_dataset(path);
        synth::SynthConfig c;
        c.num_frames = frames;
        c.num_views = views;
        c.num_points = points;
        c.seed = seed;
        return synth::generate(c);
    }
};

void eval_rows(const synth::SynthDataset& ds, const std::vector<pipeline::FrameRecord>& recs,
               std::vector<metrics::ReportRow>& rows)
{
    const int nv = ds.num_views();
    if (recs.size() != static_cast<std::size_t>(ds.num_frames() * nv))
        throw ShapeMismatch("annotation file has " + std::to_string(recs.size()) + " records, dataset needs " +
                            std::to_string(ds.num_frames() * nv));
    const auto grid = metrics::default_grid();
    std::vector<double> all;
    std::size_t confident = 0;
    for (int v = 0; v < nv; ++v)
    {
        std::vector<double> errs;
        for (int n = 0; n < ds.num_frames(); ++n)
        {
            const auto& r = recs[static_cast<std::size_t>(n * nv + v)];
            confident += r.confidence ? 1 : 0;
            if (r.w_predictions.size() != ds.num_points())
                throw ShapeMismatch("record point count differs from the dataset");
            const auto e = metrics::normalized_errors(
                r.w_predictions, ds.gt_2d[static_cast<std::size_t>(n)][static_cast<std::size_t>(v)], ds.skeleton);
            errs.insert(errs.end(), e.begin(), e.end());
        }
        if (errs.empty())
            continue;
        rows.push_back({"pck_auc", 0, v, metrics::pck_auc_from_errors(errs, grid)});
        all.insert(all.end(), errs.begin(), errs.end());
    }
    if (!all.empty())
        rows.push_back({"pck_auc", 0, -1, metrics::pck_auc_from_errors(all, grid)});

    std::vector<Shape3D> preds;
    std::vector<Shape3D> gts;
    for (int n = 0; n < ds.num_frames(); ++n)
        if (const auto& s = recs[static_cast<std::size_t>(n * nv)].s_pred)
        {
            preds.push_back(*s);
            gts.push_back(ds.gt_shapes[static_cast<std::size_t>(n)]);
        }
    if (!preds.empty())
        rows.push_back({"pa_mpjpe", 0, -1, metrics::pa_mpjpe_gauge_fixed(preds, gts)});
    rows.push_back({"confident_fraction", 0, -1, static_cast<double>(confident) / static_cast<double>(recs.size())});
}

void emit(std::ostream& out, const std::string& curve, const std::string& series, double x, double y)
{
    out << curve << ',' << series << ',' << format_double(x) << ',' << format_double(y) << '\n';
}

std::string report_csv(const synth::SynthDataset& ds, const std::vector<pipeline::FrameRecord>& recs,
                       const nlohmann::json* manifest)
{
    std::ostringstream out;
    out << "curve,series,x,y\n";
    const int nv = ds.num_views();
    if (recs.size() != static_cast<std::size_t>(ds.num_frames() * nv))
        throw ShapeMismatch("annotation file does not match the dataset");
    for (int v = 0; v < nv; ++v)
    {
        std::vector<double> errs;
        for (int n = 0; n < ds.num_frames(); ++n)
        {
            const auto e = metrics::normalized_errors(recs[static_cast<std::size_t>(n * nv + v)].w_predictions,
                                                      ds.gt_2d[static_cast<std::size_t>(n)][static_cast<std::size_t>(v)],
                                                      ds.skeleton);
            errs.insert(errs.end(), e.begin(), e.end());
        }
        if (errs.empty())
            continue;
        for (double t : metrics::default_grid())
            emit(out, "pck", "view" + std::to_string(v), t, metrics::pck_from_errors(errs, t));
    }
    if (!manifest)
        return out.str();

    // Outlier detection quality of the final scores against the injected appearance confusions.
    if (manifest->contains("final_scores"))
    {
        std::vector<double> scores;
        std::vector<bool> truth;
        const auto& fs_json = (*manifest)["final_scores"];
        for (std::size_t n = 0; n < fs_json.size() && n < ds.appearance_outlier.size(); ++n)
            for (std::size_t v = 0; v < fs_json[n].size(); ++v)
                if (fs_json[n][v].is_number())
                {
                    scores.push_back(fs_json[n][v].get<double>());
                    truth.push_back(ds.appearance_outlier[n][v].any());
                }
        if (std::find(truth.begin(), truth.end(), true) != truth.end())
            for (const auto& p : metrics::pr_curve(scores, truth))
                emit(out, "pr", "final", p.recall, p.precision);
    }
    auto loss = [&](const nlohmann::json& trace, const std::string& series) {
        for (std::size_t i = 0; i < trace.size(); ++i)
            emit(out, "loss", series, static_cast<double>(i), trace[i].get<double>());
    };
    if (manifest->contains("flow") && (*manifest)["flow"].contains("loss_trace"))
        loss((*manifest)["flow"]["loss_trace"], "round0");
    if (manifest->contains("iterations"))
        for (const auto& it : (*manifest)["iterations"])
            loss(it["loss_trace"], "round" + std::to_string(it["iteration"].get<int>()));
    return out.str();
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Multi-view bootstrapping: label propagation, self-training and geometric verification"};
    app.require_subcommand(1);

    // synth
    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic multi-view dataset");
    synth::SynthConfig scfg;
    std::optional<std::uint64_t> synth_seed;
    std::string synth_out;
    synth_cmd->add_option("--out", synth_out, "Dataset file to write")->required();
    synth_cmd->add_option("--frames", scfg.num_frames, "Frames")->check(CLI::PositiveNumber);
    synth_cmd->add_option("--views", scfg.num_views, "Views")->check(CLI::PositiveNumber);
    synth_cmd->add_option("--points", scfg.num_points, "Landmarks")->check(CLI::Range(4, 1000));
    synth_cmd->add_option("--latent-rank", scfg.latent_rank, "Shape-space rank (0 = rigid)")->check(CLI::NonNegativeNumber);
    synth_cmd->add_option("--occlusion-rate", scfg.occlusion_rate, "Per-point occlusion probability")
        ->check(CLI::Range(0.0, 1.0));
    synth_cmd->add_option("--seed", synth_seed, "Seed (falls back to MBW_SEED, then 0)");

    // run
    auto* run_cmd = app.add_subcommand("run", "Run the full pipeline and write annotations, manifest and report");
    DataOptions run_data;
    run_data.add(*run_cmd, true);
    pipeline::PipelineConfig pcfg;
    std::optional<double> tau;
    std::optional<std::uint64_t> run_seed;
    std::string baseline = "none";
    std::string run_out = "mbw_out";
    run_cmd->add_option("--label-fraction", pcfg.label_fraction, "Fraction of frames labeled by hand")
        ->check(CLI::Range(0.0, 1.0));
    run_cmd->add_option("--iterations", pcfg.iterations, "Self-training iterations (0 = flow stage only)")
        ->check(CLI::NonNegativeNumber);
    run_cmd->add_option("--tau", tau, "Outlier threshold in image units (default: 5% of the median manual diameter)")
        ->check(CLI::PositiveNumber);
    run_cmd->add_option("--seed", run_seed, "Pipeline seed (falls back to MBW_SEED, then 7)");
    run_cmd->add_option("--baseline", baseline, "Verifier: none (learned prior), triangulation or tk")
        ->check(CLI::IsMember({"none", "triangulation", "tk"}));
    run_cmd->add_option("--prior-steps", pcfg.prior.steps, "Training steps per prior fit")->check(CLI::PositiveNumber);
    run_cmd->add_option("--out-dir", run_out, "Output directory");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "Metrics report of an annotation file against groundtruth");
    DataOptions eval_data;
    eval_data.add(*eval_cmd, true);
    std::string eval_ann;
    std::string eval_out;
    eval_cmd->add_option("--annotations", eval_ann, "Annotation file")->required();
    eval_cmd->add_option("--out", eval_out, "Report CSV (default: stdout)");

    // report
    auto* report_cmd = app.add_subcommand("report", "Curve data: PCK vs threshold, PR curve, loss traces");
    DataOptions rep_data;
    rep_data.add(*report_cmd, true);
    std::string rep_ann;
    std::string rep_manifest;
    std::string rep_out;
    report_cmd->add_option("--annotations", rep_ann, "Annotation file")->required();
    report_cmd->add_option("--manifest", rep_manifest, "Run manifest (adds PR and loss curves)");
    report_cmd->add_option("--out", rep_out, "CSV file (default: stdout)");

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::CallForHelp& e)
    {
        return app.exit(e);
    }
    catch (const CLI::CallForAllHelp& e)
    {
        return app.exit(e);
    }
    catch (const CLI::ParseError& e)
    {
        app.exit(e);
        std::cerr << app.help();
        return kUsage;
    }

    try
    {
        if (*synth_cmd)
        {
            scfg.seed = resolve_seed(synth_seed, 0);
            io::save_dataset(synth::generate(scfg), synth_out);
            return 0;
        }
        if (*run_cmd)
        {
            pcfg.tau = tau;
            pcfg.seed = resolve_seed(run_seed, 7);
            pcfg.baseline = pipeline::parse_baseline(baseline);
            const auto ds = run_data.load();
            const auto res = pipeline::run_pipeline(ds, pcfg);
            fs::create_directories(run_out);
            io::save_manifest(res.manifest, fs::path(run_out) / "manifest.json");
            if (!res.ok)
            {
                std::cerr << "run failed: " << res.manifest["error"].dump() << '\n';
                return kRuntime;
            }
            io::save_annotations(res.records, fs::path(run_out) / "annotations.jsonl");
            io::save_report(res.report, fs::path(run_out) / "report.csv");
            return 0;
        }
        if (*eval_cmd)
        {
            const auto ds = eval_data.load();
            std::vector<metrics::ReportRow> rows;
            eval_rows(ds, io::load_annotations(eval_ann), rows);
            if (eval_out.empty())
                metrics::write_report(std::cout, rows);
            else
                io::save_report(rows, eval_out);
            return 0;
        }
        if (*report_cmd)
        {
            const auto ds = rep_data.load();
            std::optional<nlohmann::json> manifest;
            if (!rep_manifest.empty())
                manifest = nlohmann::json::parse(io::read_file(rep_manifest));
            const auto csv = report_csv(ds, io::load_annotations(rep_ann), manifest ? &*manifest : nullptr);
            if (rep_out.empty())
                std::cout << csv;
            else
                io::write_file_atomic(rep_out, csv);
            return 0;
        }
    }
    catch (const std::exception& e)
    {
        std::cerr << "error: " << e.what() << '\n';
        return kRuntime;
    }
    return kUsage;
}

#include "mbw/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mbw/errors.hpp"
#include "mbw/format.hpp"
#include "mbw/geometry.hpp"

namespace mbw::metrics {

std::vector<double> normalized_errors(const Landmarks2D& pred, const Landmarks2D& gt, const SkeletonDef& skeleton)
{
    if (pred.size() != gt.size())
        throw ShapeMismatch("pckh: prediction and groundtruth differ in point count");
    skeleton.validate();
    const auto [a, b] = skeleton.bones[static_cast<std::size_t>(skeleton.head_bone)];
    if (a >= gt.size() || b >= gt.size() || gt.missing(a) || gt.missing(b))
        throw MissingHeadBone("groundtruth head-bone endpoint is missing");
    const double head = (gt.points.row(a) - gt.points.row(b)).norm();
    if (!(head > 0.0))
        throw MissingHeadBone("groundtruth head bone has zero length");

    std::vector<double> errs;
    errs.reserve(static_cast<std::size_t>(gt.size()));
    for (Eigen::Index i = 0; i < gt.size(); ++i)
        if (!gt.missing(i) && !pred.missing(i))
            errs.push_back((pred.points.row(i) - gt.points.row(i)).norm() / head);
    return errs;
}

double pck_from_errors(std::span<const double> errors, double threshold)
{
    if (errors.empty())
        throw AllMissing("pck: no joint is present in both prediction and groundtruth");
    const auto hits = std::count_if(errors.begin(), errors.end(), [&](double e) { return e <= threshold; });
    return static_cast<double>(hits) / static_cast<double>(errors.size());
}

double pckh(const Landmarks2D& pred, const Landmarks2D& gt, const SkeletonDef& skeleton, double threshold)
{
    const auto errs = normalized_errors(pred, gt, skeleton);
    return pck_from_errors(errs, threshold);
}

std::vector<double> default_grid()
{
    std::vector<double> g(50);
    for (int i = 0; i < 50; ++i)
        g[static_cast<std::size_t>(i)] = static_cast<double>(i) / 49.0;
    return g;
}

double pck_auc_from_errors(std::span<const double> errors, std::span<const double> grid)
{
    if (grid.size() < 2)
        throw BadGrid("PCK AUC grid needs at least 2 thresholds");
    for (std::size_t i = 1; i < grid.size(); ++i)
        if (!(grid[i] > grid[i - 1]))
            throw BadGrid("PCK AUC grid must be strictly ascending");

    std::vector<double> sorted(errors.begin(), errors.end());
    std::sort(sorted.begin(), sorted.end());
    if (sorted.empty())
        throw AllMissing("pck: no joint is present in both prediction and groundtruth");
    auto pck = [&](double t) {
        const auto hits = std::upper_bound(sorted.begin(), sorted.end(), t) - sorted.begin();
        return static_cast<double>(hits) / static_cast<double>(sorted.size());
    };
    double area = 0.0;
    double prev = pck(grid[0]);
    for (std::size_t i = 1; i < grid.size(); ++i)
    {
        const double cur = pck(grid[i]);
        area += 0.5 * (prev + cur) * (grid[i] - grid[i - 1]);
        prev = cur;
    }
    return area / (grid.back() - grid.front());
}

double pck_auc(const Landmarks2D& pred, const Landmarks2D& gt, const SkeletonDef& skeleton,
               std::span<const double> grid)
{
    const auto errs = normalized_errors(pred, gt, skeleton);
    return pck_auc_from_errors(errs, grid);
}

double pa_mpjpe(const Shape3D& pred, const Shape3D& gt)
{
    const auto aligned = geometry::procrustes_align(pred, gt).aligned;
    return (aligned.points - gt.points).rowwise().norm().mean();
}

double pa_mpjpe_gauge_fixed(std::span<const Shape3D> preds, std::span<const Shape3D> gts)
{
    if (preds.size() != gts.size() || preds.empty())
        throw ShapeMismatch("pa_mpjpe_gauge_fixed: need equally many (and at least one) predictions and gts");
    double direct = 0.0;
    double mirrored = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i)
    {
        direct += pa_mpjpe(preds[i], gts[i]);
        Shape3D m = preds[i];
        m.points.col(2) *= -1.0;
        mirrored += pa_mpjpe(m, gts[i]);
    }
    return std::min(direct, mirrored) / static_cast<double>(preds.size());
}

namespace {

struct RankedGroup
{
    double score;
    std::size_t positives;
    std::size_t count;
};

std::vector<RankedGroup> rank_groups(std::span<const double> scores, const std::vector<bool>& is_outlier)
{
    if (scores.size() != is_outlier.size())
        throw ShapeMismatch("pr_auc: scores and labels differ in length");
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (double s : scores)
        if (!std::isfinite(s))
            throw Error("pr_auc: scores must be finite");
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    std::vector<RankedGroup> groups;
    for (std::size_t i : idx)
    {
        if (groups.empty() || scores[i] != groups.back().score)
            groups.push_back({scores[i], 0, 0});
        groups.back().count += 1;
        groups.back().positives += is_outlier[i] ? 1 : 0;
    }
    return groups;
}

}  // namespace

double pr_auc(std::span<const double> scores, const std::vector<bool>& is_outlier)
{
    const auto groups = rank_groups(scores, is_outlier);
    const auto total_pos = static_cast<std::size_t>(std::count(is_outlier.begin(), is_outlier.end(), true));
    if (total_pos == 0)
        throw NoPositives("pr_auc needs at least one outlier");
    double ap = 0.0;
    std::size_t tp = 0;
    std::size_t seen = 0;
    for (const auto& g : groups)
    {
        tp += g.positives;
        seen += g.count;
        ap += static_cast<double>(g.positives) / static_cast<double>(total_pos) *
              (static_cast<double>(tp) / static_cast<double>(seen));
    }
    return ap;
}

std::vector<PrPoint> pr_curve(std::span<const double> scores, const std::vector<bool>& is_outlier)
{
    const auto groups = rank_groups(scores, is_outlier);
    const auto total_pos = static_cast<std::size_t>(std::count(is_outlier.begin(), is_outlier.end(), true));
    if (total_pos == 0)
        throw NoPositives("pr_curve needs at least one outlier");
    std::vector<PrPoint> curve;
    std::size_t tp = 0;
    std::size_t seen = 0;
    for (const auto& g : groups)
    {
        tp += g.positives;
        seen += g.count;
        curve.push_back({g.score, static_cast<double>(tp) / static_cast<double>(seen),
                         static_cast<double>(tp) / static_cast<double>(total_pos)});
    }
    return curve;
}

void write_report(std::ostream& out, std::span<const ReportRow> rows)
{
    out << "metric,iteration,view,value\n";
    for (const auto& r : rows)
        out << r.metric << ',' << r.iteration << ',' << r.view << ',' << format_double(r.value) << '\n';
}

}  // namespace mbw::metrics

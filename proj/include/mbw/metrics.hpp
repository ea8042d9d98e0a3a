#pragma once

#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "mbw/skeleton.hpp"
#include "mbw/types.hpp"

/// Evaluation metrics: PCKh, PCK AUC, PA-MPJPE and average precision for outlier detection.
namespace mbw::metrics {

/// Per-joint errors of `pred` against `gt`, divided by the gt head-bone length. Joints missing in
/// either input are skipped. Throws MissingHeadBone if a head-bone endpoint is missing in gt or the
/// bone has zero length.
std::vector<double> normalized_errors(const Landmarks2D& pred, const Landmarks2D& gt, const SkeletonDef& skeleton);

/// Fraction of joints within `threshold` head-bone lengths (inclusive).
double pckh(const Landmarks2D& pred, const Landmarks2D& gt, const SkeletonDef& skeleton, double threshold);

/// The default threshold grid: 50 evenly spaced points on [0, 1].
std::vector<double> default_grid();

/// Trapezoidal area under PCKh(threshold) over `grid`, divided by the grid span.
double pck_auc(const Landmarks2D& pred, const Landmarks2D& gt, const SkeletonDef& skeleton,
               std::span<const double> grid);

/// Fraction of `errors` <= threshold; errors pooled over any number of frames.
double pck_from_errors(std::span<const double> errors, double threshold);
double pck_auc_from_errors(std::span<const double> errors, std::span<const double> grid);

/// Mean per-joint distance after similarity alignment of pred onto gt.
double pa_mpjpe(const Shape3D& pred, const Shape3D& gt);

/// Mean PA-MPJPE over frames with one global depth reflection (z -> -z) applied to every
/// prediction when that lowers the mean. Weak-perspective reconstructions are only defined up to
/// this reflection, so a single gauge choice per model is resolved before comparing to gt.
double pa_mpjpe_gauge_fixed(std::span<const Shape3D> preds, std::span<const Shape3D> gts);

/// Average precision of detecting outliers by descending score. Equal scores form one group
/// evaluated at the group's end. Throws NoPositives without outliers.
double pr_auc(std::span<const double> scores, const std::vector<bool>& is_outlier);

struct PrPoint
{
    double threshold;
    double precision;
    double recall;
};
/// One point per distinct score, by descending score.
std::vector<PrPoint> pr_curve(std::span<const double> scores, const std::vector<bool>& is_outlier);

/// One row of the metrics report: metric,iteration,view,value.
struct ReportRow
{
    std::string metric;
    int iteration = 0;
    int view = -1;  ///< -1 = all views
    double value = 0.0;
};

void write_report(std::ostream& out, std::span<const ReportRow> rows);

}  // namespace mbw::metrics

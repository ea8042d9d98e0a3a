#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mbw/label_set.hpp"
#include "mbw/types.hpp"

/// Stand-ins for the optical-flow tracker and the landmark detector.
namespace mbw::perception {

/// Synthetic proxy for the image content of one frame-view.
struct FrameDescriptor
{
    Eigen::VectorXd values;
};

/// Per-frame, per-view descriptors: descriptors[frame][view].
using DescriptorTable = std::vector<std::vector<FrameDescriptor>>;

struct TrackerConfig
{
    double noise_sigma = 0.5;            ///< per-step Gaussian noise (image units)
    double outlier_rate = 0.05;          ///< per tracked point
    double consistent_error_rate = 0.3;  ///< outliers whose backward track still returns to the seed
    double drift_per_step = 0.0;         ///< systematic per-step bias (image units)
    double outlier_offset_min = 10.0;    ///< teleport distance range; min must be >= 20 * noise_sigma
    double outlier_offset_max = 60.0;
    std::uint64_t seed = 0;

    void validate() const;
};

struct TrackCandidate
{
    int seed_frame = 0;
    int path_length = 0;  ///< steps between the seed and this frame
    Landmarks2D forward;
    Landmarks2D backward_return;  ///< forward track traced back to the seed frame
    Mask outlier;                 ///< injected teleports (generator truth, for evaluation only)
};

/// Propagates seed labels to every frame of one view's sequence.
///
/// `sequence[n]` is the groundtruth position of frame n; the tracker follows its true motion plus
/// noise, drift and injected teleports. Each frame takes the nearest seed (ties go to the lower
/// seed frame). Throws NoSeeds when `seeds` is empty.
std::vector<TrackCandidate> track_labels(const std::vector<Landmarks2D>& sequence,
                                         const std::map<int, Landmarks2D>& seeds, const TrackerConfig& cfg);

/// Points whose round trip ends within `epsilon` of the seed (inclusive).
Mask fb_consistency_check(const Landmarks2D& round_trip, const Landmarks2D& seed, double epsilon);

/// 3 * sigma * sqrt(2 * path_length): the round trip covers the path twice.
double default_fb_epsilon(double noise_sigma, int path_length);

/// values = mix * vec(landmarks) + N(0, eta_sigma^2), vec interleaving x and y per point.
FrameDescriptor make_descriptor(const Landmarks2D& landmarks, const Eigen::MatrixXd& mix, double eta_sigma,
                                std::uint64_t seed);

/// Affine ridge-regression detector: landmarks = [descriptor; 1]^T * weights.
struct DetectorModel
{
    Eigen::MatrixXd weights;  ///< (D_f + 1) x 2P, last row is the bias
    double ridge_lambda = 0.0;

    int num_points() const { return static_cast<int>(weights.cols() / 2); }
    int descriptor_dim() const { return static_cast<int>(weights.rows()) - 1; }
};

/// Ridge regression from descriptors to the flattened labels of every complete entry.
/// The bias is not penalized. Throws SingularSystem when lambda = 0 and the design is rank
/// deficient, InsufficientLabels when there is nothing to fit.
DetectorModel train_detector(const LabelSet& labels, const DescriptorTable& descriptors, double ridge_lambda);

Landmarks2D detect(const DetectorModel& model, const FrameDescriptor& descriptor);

// Line-delimited JSON plugin protocol for external detectors.
//   request:  {"op":"detect","frame":n,"view":v,"descriptor":[...]}
//   response: {"points":[[x,y],...]}

std::string format_detect_request(FrameView key, const FrameDescriptor& descriptor);
/// Throws ProtocolError on malformed requests.
std::pair<FrameView, FrameDescriptor> parse_detect_request(const std::string& line);
std::string format_detect_response(const Landmarks2D& points);
/// Throws ProtocolError on malformed responses or a point count other than `num_points`.
Landmarks2D parse_detect_response(const std::string& line, int num_points);

/// Answers detect requests line by line until end of input. Throws ProtocolError on the first
/// non-conforming line.
void serve_detector(const DetectorModel& model, std::istream& in, std::ostream& out);

/// Client side of the plugin protocol over a pair of streams.
class StreamDetector
{
public:
    StreamDetector(std::istream& from_plugin, std::ostream& to_plugin, int num_points)
        : in_(from_plugin), out_(to_plugin), num_points_(num_points)
    {
    }

    Landmarks2D detect(FrameView key, const FrameDescriptor& descriptor);

private:
    std::istream& in_;
    std::ostream& out_;
    int num_points_;
};

}  // namespace mbw::perception

#include "mbw/io.hpp"

#include <fstream>
#include <sstream>

#include "mbw/errors.hpp"

namespace mbw::io {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

ordered_json points_json(const Landmarks2D& lm)
{
    ordered_json a = ordered_json::array();
    for (Eigen::Index i = 0; i < lm.size(); ++i)
        if (lm.missing(i))
            a.push_back({nullptr, nullptr});
        else
            a.push_back({lm.points(i, 0), lm.points(i, 1)});
    return a;
}

Landmarks2D parse_points(const ordered_json& a, std::size_t line, const char* key)
{
    if (!a.is_array())
        throw SchemaError(line, key, "expected an array of [x, y] pairs");
    Landmarks2D lm = Landmarks2D::all_missing(static_cast<Eigen::Index>(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i)
    {
        const auto& p = a[i];
        if (!p.is_array() || p.size() != 2)
            throw SchemaError(line, key, "point " + std::to_string(i) + " is not a pair");
        if (p[0].is_null() && p[1].is_null())
            continue;
        if (!p[0].is_number() || !p[1].is_number())
            throw SchemaError(line, key, "point " + std::to_string(i) + " must be two numbers or two nulls");
        const auto r = static_cast<Eigen::Index>(i);
        lm.points(r, 0) = p[0].get<double>();
        lm.points(r, 1) = p[1].get<double>();
        lm.missing(r) = false;
    }
    return lm;
}

template <class Json>
Json matrix_json(const Eigen::MatrixXd& m)
{
    Json a = Json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r)
    {
        Json row = Json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            row.push_back(m(r, c));
        a.push_back(std::move(row));
    }
    return a;
}

Eigen::MatrixXd parse_matrix(const json& a, Eigen::Index cols, std::size_t line, const std::string& key)
{
    if (!a.is_array())
        throw SchemaError(line, key, "expected a matrix");
    Eigen::MatrixXd m(static_cast<Eigen::Index>(a.size()), cols);
    for (std::size_t r = 0; r < a.size(); ++r)
    {
        const auto& row = a[r];
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
            throw SchemaError(line, key, "row " + std::to_string(r) + " must have " + std::to_string(cols) + " entries");
        for (Eigen::Index c = 0; c < cols; ++c)
        {
            if (!row[static_cast<std::size_t>(c)].is_number())
                throw SchemaError(line, key, "non-numeric entry");
            m(static_cast<Eigen::Index>(r), c) = row[static_cast<std::size_t>(c)].get<double>();
        }
    }
    return m;
}

const json& need(const json& j, const char* key)
{
    auto it = j.find(key);
    if (it == j.end())
        throw SchemaError(0, key, "missing key");
    return *it;
}

json mask_json(const Mask& m)
{
    json a = json::array();
    for (Eigen::Index i = 0; i < m.size(); ++i)
        a.push_back(static_cast<bool>(m(i)));
    return a;
}

Mask parse_mask(const json& a, const char* key)
{
    if (!a.is_array())
        throw SchemaError(0, key, "expected a boolean array");
    Mask m(static_cast<Eigen::Index>(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i)
    {
        if (!a[i].is_boolean())
            throw SchemaError(0, key, "expected booleans");
        m(static_cast<Eigen::Index>(i)) = a[i].get<bool>();
    }
    return m;
}

}  // namespace

void write_file_atomic(const fs::path& path, const std::string& contents)
{
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw IoError("cannot open '" + tmp.string() + "' for writing");
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        out.flush();
        if (!out)
            throw IoError("failed writing '" + tmp.string() + "'");
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec)
    {
        fs::remove(tmp, ec);
        throw IoError("cannot move '" + tmp.string() + "' to '" + path.string() + "'");
    }
}

std::string read_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string format_record(const pipeline::FrameRecord& r)
{
    ordered_json j;
    j["W_GT"] = points_json(r.w_gt);
    j["W_Predictions"] = points_json(r.w_predictions);
    j["S_Pred"] = r.s_pred ? matrix_json<ordered_json>(r.s_pred->points) : ordered_json(nullptr);
    j["BBox"] = r.bbox ? ordered_json{r.bbox->x_min, r.bbox->y_min, r.bbox->x_max, r.bbox->y_max}
                       : ordered_json(nullptr);
    j["confidence"] = r.confidence;
    return j.dump();
}

pipeline::FrameRecord parse_record(const std::string& line, std::size_t line_no)
{
    ordered_json j;
    try
    {
        j = ordered_json::parse(line);
    }
    catch (const ordered_json::parse_error& e)
    {
        throw SchemaError(line_no, "", std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object())
        throw SchemaError(line_no, "", "record must be a JSON object");
    static const char* const kKeys[] = {"W_GT", "W_Predictions", "S_Pred", "BBox", "confidence"};
    for (const char* k : kKeys)
        if (!j.contains(k))
            throw SchemaError(line_no, k, "missing key");
    for (const auto& [k, v] : j.items())
        if (std::find(std::begin(kKeys), std::end(kKeys), k) == std::end(kKeys))
            throw SchemaError(line_no, k, "unexpected key");

    pipeline::FrameRecord r;
    r.w_gt = parse_points(j["W_GT"], line_no, "W_GT");
    r.w_predictions = parse_points(j["W_Predictions"], line_no, "W_Predictions");
    if (r.w_gt.size() != r.w_predictions.size())
        throw SchemaError(line_no, "W_Predictions", "point count differs from W_GT");

    const auto& s = j["S_Pred"];
    if (!s.is_null())
    {
        if (!s.is_array() || s.size() != static_cast<std::size_t>(r.w_gt.size()))
            throw SchemaError(line_no, "S_Pred", "expected null or one [x, y, z] per point");
        Mat3X pts(r.w_gt.size(), 3);
        for (std::size_t i = 0; i < s.size(); ++i)
        {
            const auto& p = s[i];
            if (!p.is_array() || p.size() != 3 || !p[0].is_number() || !p[1].is_number() || !p[2].is_number())
                throw SchemaError(line_no, "S_Pred", "point " + std::to_string(i) + " must be [x, y, z]");
            for (int c = 0; c < 3; ++c)
                pts(static_cast<Eigen::Index>(i), c) = p[static_cast<std::size_t>(c)].get<double>();
        }
        r.s_pred = Shape3D(std::move(pts));
    }

    const auto& b = j["BBox"];
    if (!b.is_null())
    {
        if (!b.is_array() || b.size() != 4 || !std::all_of(b.begin(), b.end(), [](const auto& x) { return x.is_number(); }))
            throw SchemaError(line_no, "BBox", "expected null or [x_min, y_min, x_max, y_max]");
        r.bbox = pipeline::BBox{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
        if (r.bbox->x_min > r.bbox->x_max || r.bbox->y_min > r.bbox->y_max)
            throw SchemaError(line_no, "BBox", "min exceeds max");
    }

    if (!j["confidence"].is_boolean())
        throw SchemaError(line_no, "confidence", "expected true or false");
    r.confidence = j["confidence"].get<bool>();
    return r;
}

void save_annotations(std::span<const pipeline::FrameRecord> records, const fs::path& path)
{
    std::string out;
    for (const auto& r : records)
    {
        out += format_record(r);
        out += '\n';
    }
    write_file_atomic(path, out);
}

std::vector<pipeline::FrameRecord> load_annotations(const fs::path& path)
{
    std::istringstream in(read_file(path));
    std::vector<pipeline::FrameRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line))
    {
        ++line_no;
        if (line.empty())
            continue;
        records.push_back(parse_record(line, line_no));
    }
    return records;
}

json dataset_to_json(const synth::SynthDataset& ds)
{
    const auto& c = ds.config;
    json j;
    j["format"] = "mbw-dataset-1";
    j["config"] = {{"num_points", c.num_points},
                   {"num_frames", c.num_frames},
                   {"num_views", c.num_views},
                   {"latent_rank", c.latent_rank},
                   {"latent_smoothness", c.latent_smoothness},
                   {"deformation_scale", c.deformation_scale},
                   {"camera_motion_sigma", c.camera_motion_sigma},
                   {"view_separation_deg", c.view_separation_deg},
                   {"image_scale", c.image_scale},
                   {"occlusion_rate", c.occlusion_rate},
                   {"descriptor_dim", c.descriptor_dim},
                   {"descriptor_noise", c.descriptor_noise},
                   {"occluded_appearance_sigma", c.occluded_appearance_sigma},
                   {"appearance_confusion_rate", c.appearance_confusion_rate},
                   {"detector_sigma", c.detector_sigma},
                   {"detector_sigma_occluded", c.detector_sigma_occluded},
                   {"detector_outlier_rate", c.detector_outlier_rate},
                   {"seed", c.seed}};
    j["skeleton"] = {{"joint_names", ds.skeleton.joint_names},
                     {"bones", ds.skeleton.bones},
                     {"head_bone", ds.skeleton.head_bone}};

    json frames = json::array();
    for (int n = 0; n < ds.num_frames(); ++n)
    {
        const auto sn = static_cast<std::size_t>(n);
        json f;
        f["shape"] = matrix_json<json>(ds.gt_shapes[sn].points);
        json views = json::array();
        for (int v = 0; v < ds.num_views(); ++v)
        {
            const auto sv = static_cast<std::size_t>(v);
            const auto& cam = ds.gt_cams[sn][sv];
            json jv;
            jv["rotation"] = matrix_json<json>(cam.rotation);
            jv["scale"] = cam.scale;
            jv["translation"] = {cam.translation(0), cam.translation(1)};
            jv["points"] = matrix_json<json>(ds.gt_2d[sn][sv].points);
            const auto& d = ds.descriptors[sn][sv].values;
            jv["descriptor"] = std::vector<double>(d.data(), d.data() + d.size());
            jv["occluded"] = mask_json(ds.occluded[sn][sv]);
            jv["appearance_outlier"] = mask_json(ds.appearance_outlier[sn][sv]);
            views.push_back(std::move(jv));
        }
        f["views"] = std::move(views);
        frames.push_back(std::move(f));
    }
    j["frames"] = std::move(frames);

    json hidden;
    hidden["mean_shape"] = matrix_json<json>(ds.hidden.mean_shape);
    hidden["basis"] = json::array();
    for (const auto& b : ds.hidden.basis)
        hidden["basis"].push_back(matrix_json<json>(b));
    hidden["latents"] = matrix_json<json>(ds.hidden.latents);
    hidden["mix"] = matrix_json<json>(ds.hidden.mix);
    j["hidden"] = std::move(hidden);
    return j;
}

synth::SynthDataset dataset_from_json(const json& j)
{
    try
    {
        if (!j.is_object() || j.value("format", "") != "mbw-dataset-1")
            throw SchemaError(0, "format", "not an mbw dataset file");
        synth::SynthDataset ds;
        const auto& c = need(j, "config");
        auto& cfg = ds.config;
        cfg.num_points = need(c, "num_points").get<int>();
        cfg.num_frames = need(c, "num_frames").get<int>();
        cfg.num_views = need(c, "num_views").get<int>();
        cfg.latent_rank = need(c, "latent_rank").get<int>();
        cfg.latent_smoothness = need(c, "latent_smoothness").get<double>();
        cfg.deformation_scale = need(c, "deformation_scale").get<double>();
        cfg.camera_motion_sigma = need(c, "camera_motion_sigma").get<double>();
        cfg.view_separation_deg = need(c, "view_separation_deg").get<double>();
        cfg.image_scale = need(c, "image_scale").get<double>();
        cfg.occlusion_rate = need(c, "occlusion_rate").get<double>();
        cfg.descriptor_dim = need(c, "descriptor_dim").get<int>();
        cfg.descriptor_noise = need(c, "descriptor_noise").get<double>();
        cfg.occluded_appearance_sigma = need(c, "occluded_appearance_sigma").get<double>();
        cfg.appearance_confusion_rate = need(c, "appearance_confusion_rate").get<double>();
        cfg.detector_sigma = need(c, "detector_sigma").get<double>();
        cfg.detector_sigma_occluded = need(c, "detector_sigma_occluded").get<double>();
        cfg.detector_outlier_rate = need(c, "detector_outlier_rate").get<double>();
        cfg.seed = need(c, "seed").get<std::uint64_t>();

        const auto& sk = need(j, "skeleton");
        ds.skeleton.joint_names = need(sk, "joint_names").get<std::vector<std::string>>();
        ds.skeleton.bones = need(sk, "bones").get<std::vector<std::pair<int, int>>>();
        ds.skeleton.head_bone = need(sk, "head_bone").get<int>();
        ds.skeleton.validate();

        const auto p = static_cast<Eigen::Index>(cfg.num_points);
        const auto& frames = need(j, "frames");
        if (!frames.is_array() || static_cast<int>(frames.size()) != cfg.num_frames)
            throw SchemaError(0, "frames", "frame count does not match the config");
        for (const auto& f : frames)
        {
            ds.gt_shapes.emplace_back(parse_matrix(need(f, "shape"), 3, 0, "shape"));
            const auto& views = need(f, "views");
            if (!views.is_array() || static_cast<int>(views.size()) != cfg.num_views)
                throw SchemaError(0, "views", "view count does not match the config");
            auto& cams = ds.gt_cams.emplace_back();
            auto& pts = ds.gt_2d.emplace_back();
            auto& desc = ds.descriptors.emplace_back();
            auto& occ = ds.occluded.emplace_back();
            auto& conf = ds.appearance_outlier.emplace_back();
            for (const auto& jv : views)
            {
                WeakPerspectiveCamera cam;
                cam.rotation = parse_matrix(need(jv, "rotation"), 3, 0, "rotation");
                cam.scale = need(jv, "scale").get<double>();
                const auto t = need(jv, "translation").get<std::vector<double>>();
                if (t.size() != 2)
                    throw SchemaError(0, "translation", "expected two numbers");
                cam.translation = Eigen::Vector2d(t[0], t[1]);
                cams.push_back(cam);
                Mat2X xy = parse_matrix(need(jv, "points"), 2, 0, "points");
                if (xy.rows() != p)
                    throw SchemaError(0, "points", "point count does not match the config");
                pts.emplace_back(std::move(xy));
                const auto d = need(jv, "descriptor").get<std::vector<double>>();
                desc.push_back({Eigen::Map<const Eigen::VectorXd>(d.data(), static_cast<Eigen::Index>(d.size()))});
                occ.push_back(parse_mask(need(jv, "occluded"), "occluded"));
                conf.push_back(parse_mask(need(jv, "appearance_outlier"), "appearance_outlier"));
            }
        }

        const auto& h = need(j, "hidden");
        ds.hidden.mean_shape = parse_matrix(need(h, "mean_shape"), 3, 0, "mean_shape");
        for (const auto& b : need(h, "basis"))
            ds.hidden.basis.emplace_back(parse_matrix(b, 3, 0, "basis"));
        ds.hidden.latents = parse_matrix(need(h, "latents"), cfg.latent_rank, 0, "latents");
        ds.hidden.mix = parse_matrix(need(h, "mix"), 2 * p, 0, "mix");
        return ds;
    }
    catch (const json::exception& e)
    {
        throw SchemaError(0, "", std::string("dataset has the wrong structure: ") + e.what());
    }
}

void save_dataset(const synth::SynthDataset& ds, const fs::path& path)
{
    write_file_atomic(path, dataset_to_json(ds).dump() + "\n");
}

synth::SynthDataset load_dataset(const fs::path& path)
{
    json j;
    try
    {
        j = json::parse(read_file(path));
    }
    catch (const json::parse_error& e)
    {
        throw SchemaError(0, "", "'" + path.string() + "' is not valid JSON: " + e.what());
    }
    return dataset_from_json(j);
}

void save_manifest(const json& manifest, const fs::path& path)
{
    write_file_atomic(path, manifest.dump(2) + "\n");
}

void save_report(std::span<const metrics::ReportRow> rows, const fs::path& path)
{
    std::ostringstream out;
    metrics::write_report(out, rows);
    write_file_atomic(path, out.str());
}

}  // namespace mbw::io

#include "mbw/shape_prior.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <string>

#include "mbw/errors.hpp"
#include "mbw/geometry.hpp"
#include "mbw/rng.hpp"

namespace mbw::prior {

namespace {

constexpr char kMagic[] = "MBWPRIOR1";
constexpr std::size_t kMagicLen = sizeof(kMagic) - 1;

DenseLayer make_layer(int out, int in)
{
    return {Eigen::MatrixXd::Zero(out, in), Eigen::VectorXd::Zero(out)};
}

Eigen::MatrixXd activate(const Eigen::MatrixXd& a, Activation act)
{
    return act == Activation::Tanh ? Eigen::MatrixXd(a.array().tanh()) : a;
}

// Derivative expressed through the activated value.
Eigen::MatrixXd activate_grad(const Eigen::MatrixXd& h, Activation act)
{
    if (act == Activation::Tanh)
        return (1.0 - h.array().square()).matrix();
    return Eigen::MatrixXd::Ones(h.rows(), h.cols());
}

Eigen::VectorXd normalized_view(const Landmarks2D& view, const PriorModel& model)
{
    if (view.size() != model.num_points)
        throw ShapeMismatch("view has " + std::to_string(view.size()) + " points, model expects " +
                            std::to_string(model.num_points));
    if (!view.complete())
        throw IncompleteInput("prior inputs must have every point present");
    const Eigen::RowVector2d c = view.points.colwise().mean();
    Eigen::VectorXd x(2 * model.num_points);
    for (int p = 0; p < model.num_points; ++p)
    {
        x(2 * p) = (view.points(p, 0) - c(0)) / model.input_scale;
        x(2 * p + 1) = (view.points(p, 1) - c(1)) / model.input_scale;
    }
    return x;
}

// Centred P x 3 shape from a 3P network output, scaled back to image units.
Shape3D shape_from_output(const Eigen::Ref<const Eigen::VectorXd>& y, const PriorModel& model)
{
    Mat3X pts(model.num_points, 3);
    for (int p = 0; p < model.num_points; ++p)
        pts.row(p) = y.segment<3>(3 * p).transpose();
    pts.rowwise() -= pts.colwise().mean();
    pts *= model.input_scale;
    return Shape3D(std::move(pts));
}

/// Activations of one batched forward pass, kept for the backward pass.
struct ForwardPass
{
    Eigen::MatrixXd x;   // 2P x M
    Eigen::MatrixXd h1;  // hidden x M
    Eigen::MatrixXd z;   // K x F, pooled codes
    Eigen::MatrixXd h3;  // hidden x F
    std::vector<Shape3D> shapes;
    std::vector<int> first_col;
};

ForwardPass forward(const PriorModel& model, std::span<const PriorSample> samples)
{
    ForwardPass fp;
    int m = 0;
    fp.first_col.reserve(samples.size() + 1);
    for (const auto& s : samples)
    {
        if (s.views.empty())
            throw InsufficientLabels("prior sample without views");
        fp.first_col.push_back(m);
        m += static_cast<int>(s.views.size());
    }
    fp.first_col.push_back(m);

    fp.x.resize(2 * model.num_points, m);
    int col = 0;
    for (const auto& s : samples)
        for (const auto& v : s.views)
            fp.x.col(col++) = normalized_view(v, model);

    fp.h1 = activate((model.enc_hidden.weight * fp.x).colwise() + model.enc_hidden.bias, model.activation);
    const Eigen::MatrixXd codes = (model.enc_code.weight * fp.h1).colwise() + model.enc_code.bias;

    const auto f = static_cast<Eigen::Index>(samples.size());
    fp.z.resize(model.code_dim, f);
    for (Eigen::Index i = 0; i < f; ++i)
    {
        const int b = fp.first_col[static_cast<std::size_t>(i)];
        const int e = fp.first_col[static_cast<std::size_t>(i) + 1];
        fp.z.col(i) = codes.middleCols(b, e - b).rowwise().mean();
    }

    fp.h3 = activate((model.dec_hidden.weight * fp.z).colwise() + model.dec_hidden.bias, model.activation);
    const Eigen::MatrixXd y = (model.dec_shape.weight * fp.h3).colwise() + model.dec_shape.bias;
    fp.shapes.reserve(samples.size());
    for (Eigen::Index i = 0; i < f; ++i)
        fp.shapes.push_back(shape_from_output(y.col(i), model));
    return fp;
}

// Backward pass from dL/dS (one P x 3 block per sample) into a gradient-shaped model.
PriorModel backward(const PriorModel& model, const ForwardPass& fp, const std::vector<Mat3X>& shape_grads)
{
    PriorModel g = PriorModel::zeros(model.num_points, model.code_dim, model.hidden, model.input_scale,
                                     model.activation);
    const auto f = static_cast<Eigen::Index>(shape_grads.size());

    Eigen::MatrixXd gy(3 * model.num_points, f);
    for (Eigen::Index i = 0; i < f; ++i)
    {
        Mat3X gs = shape_grads[static_cast<std::size_t>(i)];
        gs.rowwise() -= gs.colwise().mean();  // centring is a symmetric projection
        gs *= model.input_scale;
        for (int p = 0; p < model.num_points; ++p)
            gy.col(i).segment<3>(3 * p) = gs.row(p).transpose();
    }

    g.dec_shape.weight = gy * fp.h3.transpose();
    g.dec_shape.bias = gy.rowwise().sum();
    const Eigen::MatrixXd ga3 = (model.dec_shape.weight.transpose() * gy).cwiseProduct(activate_grad(fp.h3, model.activation));
    g.dec_hidden.weight = ga3 * fp.z.transpose();
    g.dec_hidden.bias = ga3.rowwise().sum();
    const Eigen::MatrixXd gz = model.dec_hidden.weight.transpose() * ga3;

    Eigen::MatrixXd gc(model.code_dim, fp.x.cols());
    for (Eigen::Index i = 0; i < f; ++i)
    {
        const int b = fp.first_col[static_cast<std::size_t>(i)];
        const int e = fp.first_col[static_cast<std::size_t>(i) + 1];
        for (int c = b; c < e; ++c)
            gc.col(c) = gz.col(i) / static_cast<double>(e - b);
    }
    g.enc_code.weight = gc * fp.h1.transpose();
    g.enc_code.bias = gc.rowwise().sum();
    const Eigen::MatrixXd ga1 = (model.enc_code.weight.transpose() * gc).cwiseProduct(activate_grad(fp.h1, model.activation));
    g.enc_hidden.weight = ga1 * fp.x.transpose();
    g.enc_hidden.bias = ga1.rowwise().sum();
    return g;
}

// Loss and dL/dS for fixed cameras.
double reprojection_loss(std::span<const PriorSample> samples, const std::vector<Shape3D>& shapes,
                         const std::vector<std::vector<WeakPerspectiveCamera>>& cameras, std::vector<Mat3X>* grads)
{
    double loss = 0.0;
    if (grads)
        grads->assign(samples.size(), Mat3X());
    for (std::size_t i = 0; i < samples.size(); ++i)
    {
        const Shape3D& shape = shapes[i];
        Mat3X g = Mat3X::Zero(shape.size(), 3);
        for (std::size_t v = 0; v < samples[i].views.size(); ++v)
        {
            const auto& cam = cameras[i][v];
            const Eigen::Matrix<double, 2, 3> a = cam.projection_rows();
            const Mat2X pred = (shape.points * a.transpose()).rowwise() + cam.translation.transpose();
            const Mat2X res = samples[i].views[v].points - pred;
            loss += res.squaredNorm();
            g -= 2.0 * res * a;
        }
        if (grads)
            (*grads)[i] = std::move(g);
    }
    return loss;
}

std::vector<std::vector<WeakPerspectiveCamera>> fit_cameras(std::span<const PriorSample> samples,
                                                            const std::vector<Shape3D>& shapes)
{
    std::vector<std::vector<WeakPerspectiveCamera>> cams(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i)
    {
        cams[i].reserve(samples[i].views.size());
        for (const auto& v : samples[i].views)
            cams[i].push_back(geometry::solve_onp(v, shapes[i]).camera);
    }
    return cams;
}

/// Adam state over the flattened parameter vector.
class Adam
{
public:
    Adam(Eigen::Index n, double lr) : lr_(lr), m_(Eigen::VectorXd::Zero(n)), v_(Eigen::VectorXd::Zero(n)) {}

    void set_learning_rate(double lr) { lr_ = lr; }

    void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad)
    {
        ++t_;
        m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
        v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseAbs2();
        const double c1 = 1.0 - std::pow(beta1_, t_);
        const double c2 = 1.0 - std::pow(beta2_, t_);
        params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
    }

private:
    double lr_;
    double beta1_ = 0.9;
    double beta2_ = 0.999;
    double eps_ = 1e-8;
    int t_ = 0;
    Eigen::VectorXd m_;
    Eigen::VectorXd v_;
};

void put_u64(std::ostream& out, std::uint64_t v)
{
    char b[8];
    for (int i = 0; i < 8; ++i)
        b[i] = static_cast<char>((v >> (8 * i)) & 0xffU);
    out.write(b, 8);
}

std::uint64_t get_u64(std::istream& in)
{
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in)
        throw IoError("truncated prior model file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

void put_f64(std::ostream& out, double d) { put_u64(out, std::bit_cast<std::uint64_t>(d)); }
double get_f64(std::istream& in) { return std::bit_cast<double>(get_u64(in)); }

}  // namespace

PriorModel PriorModel::zeros(int num_points, int code_dim, int hidden, double input_scale, Activation activation)
{
    if (num_points < 1 || code_dim < 1 || hidden < 1)
        throw ShapeMismatch("prior dimensions must be positive");
    if (!(input_scale > 0.0))
        throw Error("prior input scale must be positive");
    PriorModel m;
    m.num_points = num_points;
    m.code_dim = code_dim;
    m.hidden = hidden;
    m.activation = activation;
    m.input_scale = input_scale;
    m.enc_hidden = make_layer(hidden, 2 * num_points);
    m.enc_code = make_layer(code_dim, hidden);
    m.dec_hidden = make_layer(hidden, code_dim);
    m.dec_shape = make_layer(3 * num_points, hidden);
    return m;
}

PriorModel PriorModel::initialize(int num_points, int code_dim, int hidden, double input_scale, std::uint64_t seed,
                                  Activation activation)
{
    PriorModel m = zeros(num_points, code_dim, hidden, input_scale, activation);
    Rng rng(seed);
    for (DenseLayer* layer : m.layers())
    {
        const double a = 1.0 / std::sqrt(static_cast<double>(layer->weight.cols()));
        layer->weight = uniform_matrix(rng, layer->weight.rows(), layer->weight.cols(), -a, a);
        layer->bias = uniform_matrix(rng, layer->bias.size(), 1, -a, a);
    }
    return m;
}

Eigen::Index PriorModel::num_parameters() const
{
    Eigen::Index n = 0;
    for (const DenseLayer* l : layers())
        n += l->weight.size() + l->bias.size();
    return n;
}

Eigen::VectorXd PriorModel::flatten() const
{
    Eigen::VectorXd out(num_parameters());
    Eigen::Index k = 0;
    for (const DenseLayer* l : layers())
    {
        for (Eigen::Index r = 0; r < l->weight.rows(); ++r)
            for (Eigen::Index c = 0; c < l->weight.cols(); ++c)
                out(k++) = l->weight(r, c);
        out.segment(k, l->bias.size()) = l->bias;
        k += l->bias.size();
    }
    return out;
}

void PriorModel::unflatten(const Eigen::VectorXd& params)
{
    if (params.size() != num_parameters())
        throw ShapeMismatch("parameter vector length does not match the model");
    Eigen::Index k = 0;
    for (DenseLayer* l : layers())
    {
        for (Eigen::Index r = 0; r < l->weight.rows(); ++r)
            for (Eigen::Index c = 0; c < l->weight.cols(); ++c)
                l->weight(r, c) = params(k++);
        l->bias = params.segment(k, l->bias.size());
        k += l->bias.size();
    }
}

void PriorModel::validate() const
{
    auto check = [](const DenseLayer& l, Eigen::Index out, Eigen::Index in, const char* name) {
        if (l.weight.rows() != out || l.weight.cols() != in || l.bias.size() != out)
            throw ShapeMismatch(std::string("prior layer ") + name + " has inconsistent shape");
        if (!l.weight.allFinite() || !l.bias.allFinite())
            throw Error(std::string("prior layer ") + name + " has non-finite parameters");
    };
    check(enc_hidden, hidden, 2 * num_points, "enc_hidden");
    check(enc_code, code_dim, hidden, "enc_code");
    check(dec_hidden, hidden, code_dim, "dec_hidden");
    check(dec_shape, 3 * num_points, hidden, "dec_shape");
}

ShapeCode encode(std::span<const Landmarks2D> views, const PriorModel& model)
{
    if (views.empty())
        throw InsufficientLabels("encode needs at least one view");
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(model.code_dim);
    for (const auto& v : views)
    {
        const Eigen::VectorXd h = activate(model.enc_hidden.weight * normalized_view(v, model) + model.enc_hidden.bias,
                                           model.activation);
        sum += model.enc_code.weight * h + model.enc_code.bias;
    }
    return {sum / static_cast<double>(views.size())};
}

Shape3D decode(const ShapeCode& code, const PriorModel& model)
{
    if (code.values.size() != model.code_dim)
        throw ShapeMismatch("code length " + std::to_string(code.values.size()) + " != model code dimension " +
                            std::to_string(model.code_dim));
    const Eigen::VectorXd h =
        activate(model.dec_hidden.weight * code.values + model.dec_hidden.bias, model.activation);
    const Eigen::VectorXd y = model.dec_shape.weight * h + model.dec_shape.bias;
    return shape_from_output(y, model);
}

Reconstruction reconstruct(std::span<const Landmarks2D> views, const PriorModel& model)
{
    Reconstruction r;
    r.shape = decode(encode(views, model), model);
    r.cameras.reserve(views.size());
    r.scores.reserve(views.size());
    for (const auto& v : views)
    {
        const auto onp = geometry::solve_onp(v, r.shape);
        r.cameras.push_back(onp.camera);
        r.scores.push_back(geometry::reprojection_error(v, r.shape, onp.camera));
    }
    return r;
}

double objective(const PriorModel& model, std::span<const PriorSample> samples,
                 const std::vector<std::vector<WeakPerspectiveCamera>>& cameras, Eigen::VectorXd* gradient)
{
    if (cameras.size() != samples.size())
        throw ShapeMismatch("one camera list per sample is required");
    for (std::size_t i = 0; i < samples.size(); ++i)
        if (cameras[i].size() != samples[i].views.size())
            throw ShapeMismatch("one camera per view is required");

    const ForwardPass fp = forward(model, samples);
    std::vector<Mat3X> shape_grads;
    const double loss = reprojection_loss(samples, fp.shapes, cameras, gradient ? &shape_grads : nullptr);
    if (gradient)
        *gradient = backward(model, fp, shape_grads).flatten();
    return loss;
}

double gradient_check(const PriorModel& model, std::span<const PriorSample> samples,
                      const std::vector<std::vector<WeakPerspectiveCamera>>& cameras, double step)
{
    Eigen::VectorXd analytic;
    objective(model, samples, cameras, &analytic);

    const double gmax = analytic.cwiseAbs().maxCoeff();
    const double floor = gmax > 0.0 ? 1e-6 * gmax : 1e-12;

    PriorModel probe = model;
    Eigen::VectorXd theta = model.flatten();
    double worst = 0.0;
    for (Eigen::Index i = 0; i < theta.size(); ++i)
    {
        const double keep = theta(i);
        theta(i) = keep + step;
        probe.unflatten(theta);
        const double up = objective(probe, samples, cameras);
        theta(i) = keep - step;
        probe.unflatten(theta);
        const double down = objective(probe, samples, cameras);
        theta(i) = keep;

        const double numeric = (up - down) / (2.0 * step);
        const double denom = std::max({std::abs(analytic(i)), std::abs(numeric), floor});
        worst = std::max(worst, std::abs(analytic(i) - numeric) / denom);
    }
    return worst;
}

double normalization_scale(std::span<const PriorSample> samples)
{
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& s : samples)
        for (const auto& v : s.views)
        {
            const Eigen::RowVector2d c = v.points.colwise().mean();
            total += (v.points.rowwise() - c).rowwise().norm().sum();
            count += static_cast<std::size_t>(v.size());
        }
    if (count == 0 || !(total > 0.0))
        throw InsufficientLabels("cannot derive an input scale from empty or degenerate samples");
    return total / static_cast<double>(count);
}

namespace {

// Start the decoder at the rigid factorization of every training view. A random start lets
// different frames settle on opposite depth reflections, which the decoder cannot reconcile.
void seed_mean_shape(PriorModel& model, std::span<const PriorSample> samples)
{
    std::vector<Landmarks2D> views;
    for (const auto& s : samples)
        views.insert(views.end(), s.views.begin(), s.views.end());
    Shape3D mean;
    try
    {
        mean = geometry::tomasi_kanade(views).shape;
    }
    catch (const Error&)
    {
        return;  // keep the random start
    }
    for (int p = 0; p < model.num_points; ++p)
        model.dec_shape.bias.segment<3>(3 * p) = mean.points.row(p).transpose() / model.input_scale;
}

}  // namespace

TrainResult train_prior(std::span<const PriorSample> samples, const TrainConfig& config, const PriorModel* init)
{
    if (!(config.learning_rate > 0.0) || config.steps < 1)
        throw Error("train_prior: learning_rate must be > 0 and steps >= 1");

    std::size_t labeled_views = 0;
    bool multi_view = false;
    for (const auto& s : samples)
    {
        labeled_views += s.views.size();
        multi_view = multi_view || s.views.size() >= 2;
    }
    if (labeled_views < 2 || !multi_view)
        throw InsufficientLabels("need at least 2 labeled frame-views and one frame with 2 or more views");

    const int num_points = static_cast<int>(samples.front().views.front().size());
    TrainResult result;
    if (init)
    {
        init->validate();
        if (init->num_points != num_points)
            throw ShapeMismatch("initial prior has a different number of points");
        result.model = *init;
    }
    else
    {
        const int hidden = config.hidden > 0 ? config.hidden : 10 * config.code_dim;
        result.model = PriorModel::initialize(num_points, config.code_dim, hidden, normalization_scale(samples),
                                              derive_seed(config.seed, {0x1417}), config.activation);
        if (config.rigid_init)
            seed_mean_shape(result.model, samples);
    }
    PriorModel& model = result.model;

    const auto f = samples.size();
    const std::size_t batch = (config.batch > 0 && static_cast<std::size_t>(config.batch) < f)
                                  ? static_cast<std::size_t>(config.batch)
                                  : f;
    std::vector<std::size_t> order(f);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(config.seed, {0x5bu}));
    std::size_t cursor = f;

    Adam adam(model.num_parameters(), config.learning_rate);
    Eigen::VectorXd theta = model.flatten();
    std::vector<PriorSample> batch_samples;
    result.loss_trace.reserve(static_cast<std::size_t>(config.steps));

    for (int step = 0; step < config.steps; ++step)
    {
        std::span<const PriorSample> current = samples;
        if (batch < f)
        {
            if (cursor + batch > f)
            {
                std::shuffle(order.begin(), order.end(), shuffle_rng);
                cursor = 0;
            }
            batch_samples.clear();
            for (std::size_t i = 0; i < batch; ++i)
                batch_samples.push_back(samples[order[cursor + i]]);
            cursor += batch;
            current = batch_samples;
        }

        const ForwardPass fp = forward(model, current);
        const auto cams = fit_cameras(current, fp.shapes);  // held fixed for differentiation
        std::vector<Mat3X> shape_grads;
        const double loss = reprojection_loss(current, fp.shapes, cams, &shape_grads);
        if (!std::isfinite(loss))
            throw NonFiniteLoss(step, "reprojection objective is " + std::to_string(loss));
        result.loss_trace.push_back(loss);

        const Eigen::VectorXd grad = backward(model, fp, shape_grads).flatten();
        if (!grad.allFinite())
            throw NonFiniteLoss(step, "gradient has non-finite entries");
        if (config.final_learning_rate)
        {
            // Cosine decay from learning_rate to final_learning_rate.
            const double u = config.steps > 1 ? static_cast<double>(step) / (config.steps - 1) : 1.0;
            adam.set_learning_rate(*config.final_learning_rate +
                                   0.5 * (config.learning_rate - *config.final_learning_rate) *
                                       (1.0 + std::cos(std::numbers::pi * u)));
        }
        adam.step(theta, grad);
        model.unflatten(theta);
    }
    return result;
}

TrainResult train_prior(const LabelSet& labels, const TrainConfig& config, const PriorModel* init)
{
    std::vector<PriorSample> samples;
    int current_frame = -1;
    for (const auto& [key, entry] : labels)
    {
        if (!entry.points.complete())
            continue;
        if (key.frame != current_frame)
        {
            samples.emplace_back();
            current_frame = key.frame;
        }
        samples.back().views.push_back(entry.points);
    }
    if (samples.empty())
        throw InsufficientLabels("label set has no complete labels");
    return train_prior(samples, config, init);
}

void save_prior(const PriorModel& model, const std::filesystem::path& path)
{
    model.validate();
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw IoError("cannot open '" + tmp.string() + "' for writing");
        out.write(kMagic, static_cast<std::streamsize>(kMagicLen));
        put_u64(out, static_cast<std::uint64_t>(model.num_points));
        put_u64(out, static_cast<std::uint64_t>(model.code_dim));
        put_u64(out, static_cast<std::uint64_t>(model.hidden));
        put_u64(out, static_cast<std::uint64_t>(model.activation));
        put_f64(out, model.input_scale);
        const Eigen::VectorXd theta = model.flatten();
        for (Eigen::Index i = 0; i < theta.size(); ++i)
            put_f64(out, theta(i));
        if (!out)
            throw IoError("write failed for '" + tmp.string() + "'");
    }
    std::filesystem::rename(tmp, path);
}

PriorModel load_prior(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open '" + path.string() + "'");
    char magic[kMagicLen];
    in.read(magic, static_cast<std::streamsize>(kMagicLen));
    if (!in || std::memcmp(magic, kMagic, kMagicLen) != 0)
        throw IoError("'" + path.string() + "' is not a prior model file (bad magic)");
    const auto p = get_u64(in);
    const auto k = get_u64(in);
    const auto h = get_u64(in);
    const auto act = get_u64(in);
    if (p == 0 || k == 0 || h == 0 || p > (1u << 20) || k > (1u << 20) || h > (1u << 20) || act > 1)
        throw IoError("'" + path.string() + "' has invalid dimensions");
    const double scale = get_f64(in);
    PriorModel m = PriorModel::zeros(static_cast<int>(p), static_cast<int>(k), static_cast<int>(h), scale,
                                     static_cast<Activation>(act));
    Eigen::VectorXd theta(m.num_parameters());
    for (Eigen::Index i = 0; i < theta.size(); ++i)
        theta(i) = get_f64(in);
    m.unflatten(theta);
    if (in.peek() != std::char_traits<char>::eof())
        throw IoError("'" + path.string() + "' has trailing bytes");
    m.validate();
    return m;
}

}  // namespace mbw::prior

#include "mbw/geometry.hpp"

#include <cmath>
#include <string>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "mbw/errors.hpp"

namespace mbw::geometry {

namespace {

constexpr double kRankTol = 1e-10;

std::vector<Eigen::Index> present_rows(const Landmarks2D& lm)
{
    std::vector<Eigen::Index> rows;
    rows.reserve(static_cast<std::size_t>(lm.size()));
    for (Eigen::Index i = 0; i < lm.size(); ++i)
        if (!lm.missing(i))
            rows.push_back(i);
    return rows;
}

}  // namespace

Landmarks2D project(const Shape3D& shape, const WeakPerspectiveCamera& cam)
{
    const Eigen::Matrix<double, 2, 3> a = cam.projection_rows();
    Mat2X pts = (shape.points * a.transpose()).rowwise() + cam.translation.transpose();
    return Landmarks2D(std::move(pts));
}

OnpResult solve_onp(const Landmarks2D& obs, const Shape3D& shape)
{
    if (obs.size() != shape.size())
        throw ShapeMismatch("solve_onp: " + std::to_string(obs.size()) + " observations vs " +
                            std::to_string(shape.size()) + " shape points");
    const auto rows = present_rows(obs);
    const auto m = static_cast<Eigen::Index>(rows.size());
    if (m < 3)
        throw DegenerateConfiguration("solve_onp needs at least 3 usable points, got " + std::to_string(m));

    Eigen::MatrixX3d s(m, 3);
    Eigen::MatrixX2d w(m, 2);
    for (Eigen::Index i = 0; i < m; ++i)
    {
        s.row(i) = shape.points.row(rows[static_cast<std::size_t>(i)]);
        w.row(i) = obs.points.row(rows[static_cast<std::size_t>(i)]);
    }
    const Eigen::RowVector3d s_mean = s.colwise().mean();
    const Eigen::RowVector2d w_mean = w.colwise().mean();
    s.rowwise() -= s_mean;
    w.rowwise() -= w_mean;

    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> cov(s.transpose() * s);
    const Eigen::Vector3d ev = cov.eigenvalues();  // ascending
    if (!(ev(2) > 0.0) || ev(1) <= kRankTol * ev(2))
        throw DegenerateConfiguration("solve_onp: shape covariance has rank < 2");

    // Least-squares affine map w ~ s * A^T (minimum norm when the shape is planar).
    const Eigen::Matrix<double, 3, 2> at = s.completeOrthogonalDecomposition().solve(w);
    const Eigen::Matrix<double, 2, 3> a = at.transpose();

    Eigen::JacobiSVD<Eigen::Matrix<double, 2, 3>> svd(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::Vector2d sv = svd.singularValues();
    const double scale = 0.5 * (sv(0) + sv(1));
    if (!(scale > 0.0))
        throw DegenerateConfiguration("solve_onp: observations collapse to a point");

    const Eigen::Matrix<double, 2, 3> r2 = svd.matrixU() * svd.matrixV().leftCols<2>().transpose();
    WeakPerspectiveCamera cam;
    cam.rotation.topRows<2>() = r2;
    cam.rotation.row(2) = r2.row(0).cross(r2.row(1));
    cam.scale = scale;
    cam.translation = (w_mean - scale * s_mean * r2.transpose()).transpose();

    return {cam, reprojection_error(obs, shape, cam)};
}

ProcrustesResult procrustes_align(const Shape3D& pred, const Shape3D& ref)
{
    if (pred.size() != ref.size())
        throw ShapeMismatch("procrustes_align: point counts differ");
    const Eigen::Index n = pred.size();
    if (n < 3)
        throw DegenerateConfiguration("procrustes_align needs at least 3 points");

    const Eigen::RowVector3d mx = pred.points.colwise().mean();
    const Eigen::RowVector3d my = ref.points.colwise().mean();
    const Eigen::MatrixX3d xc = pred.points.rowwise() - mx;
    const Eigen::MatrixX3d yc = ref.points.rowwise() - my;
    const double var_x = xc.squaredNorm() / static_cast<double>(n);
    if (!(var_x > 0.0))
        throw DegenerateConfiguration("procrustes_align: prediction points coincide");

    const Eigen::Matrix3d sigma = yc.transpose() * xc / static_cast<double>(n);
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(sigma, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::Vector3d d = svd.singularValues();
    if (!(d(0) > 0.0) || d(1) <= kRankTol * d(0))
        throw DegenerateConfiguration("procrustes_align: cross-covariance rank < 2, rotation ambiguous");

    Eigen::Vector3d flip(1.0, 1.0, 1.0);
    if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0)
        flip(2) = -1.0;

    SimilarityTransform t;
    t.rotation = svd.matrixU() * flip.asDiagonal() * svd.matrixV().transpose();
    t.scale = d.dot(flip) / var_x;
    t.translation = (my - t.scale * mx * t.rotation.transpose()).transpose();
    return {t.apply(pred), t};
}

Shape3D triangulate(std::span<const std::pair<Landmarks2D, WeakPerspectiveCamera>> views)
{
    if (views.size() < 2)
        throw DegenerateConfiguration("triangulate needs at least 2 views, got " + std::to_string(views.size()));
    const Eigen::Index p = views.front().first.size();
    for (const auto& [lm, cam] : views)
        if (lm.size() != p)
            throw ShapeMismatch("triangulate: views disagree on the number of points");

    Mat3X out(p, 3);
    for (Eigen::Index i = 0; i < p; ++i)
    {
        Eigen::Index k = 0;
        for (const auto& [lm, cam] : views)
            k += lm.missing(i) ? 0 : 1;
        if (k < 2)
            throw DegenerateConfiguration("triangulate: point " + std::to_string(i) + " seen in fewer than 2 views");

        Eigen::MatrixX3d a(2 * k, 3);
        Eigen::VectorXd b(2 * k);
        Eigen::Index r = 0;
        for (const auto& [lm, cam] : views)
        {
            if (lm.missing(i))
                continue;
            a.middleRows<2>(r) = cam.projection_rows();
            b.segment<2>(r) = lm.points.row(i).transpose() - cam.translation;
            r += 2;
        }
        Eigen::JacobiSVD<Eigen::MatrixX3d> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
        const Eigen::Vector3d sv = svd.singularValues();
        if (!(sv(0) > 0.0) || sv(2) <= kRankTol * sv(0))
            throw DegenerateConfiguration("triangulate: point " + std::to_string(i) + " has a rank-deficient system");
        out.row(i) = svd.solve(b).transpose();
    }
    return Shape3D(std::move(out));
}

void canonicalize_svd_signs(Eigen::MatrixXd& u, Eigen::MatrixXd& v)
{
    for (Eigen::Index j = 0; j < u.cols(); ++j)
    {
        Eigen::Index idx = 0;
        u.col(j).cwiseAbs().maxCoeff(&idx);
        if (u(idx, j) < 0.0)
        {
            u.col(j) *= -1.0;
            if (j < v.cols())
                v.col(j) *= -1.0;
        }
    }
}

TomasiKanadeResult tomasi_kanade(std::span<const Landmarks2D> observations)
{
    const auto f = static_cast<Eigen::Index>(observations.size());
    if (f < 3)
        throw DegenerateConfiguration("tomasi_kanade needs at least 3 frame-views, got " + std::to_string(f));
    const Eigen::Index p = observations.front().size();
    if (p < 4)
        throw DegenerateConfiguration("tomasi_kanade needs at least 4 points");
    for (const auto& o : observations)
    {
        if (o.size() != p)
            throw ShapeMismatch("tomasi_kanade: observations disagree on the number of points");
        if (!o.complete())
            throw IncompleteInput("tomasi_kanade requires complete observations");
    }

    Eigen::MatrixXd w(2 * f, p);
    std::vector<Eigen::Vector2d> centroids(static_cast<std::size_t>(f));
    for (Eigen::Index i = 0; i < f; ++i)
    {
        const auto& o = observations[static_cast<std::size_t>(i)];
        const Eigen::Vector2d c = o.points.colwise().mean().transpose();
        centroids[static_cast<std::size_t>(i)] = c;
        w.row(2 * i) = (o.points.col(0).array() - c(0)).transpose();
        w.row(2 * i + 1) = (o.points.col(1).array() - c(1)).transpose();
    }

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(w, Eigen::ComputeThinU | Eigen::ComputeThinV);
    Eigen::MatrixXd u = svd.matrixU().leftCols(3);
    Eigen::MatrixXd v = svd.matrixV().leftCols(3);
    canonicalize_svd_signs(u, v);
    const Eigen::Vector3d root_sv = svd.singularValues().head<3>().cwiseSqrt();
    if (!(root_sv(2) > 0.0))
        throw DegenerateConfiguration("tomasi_kanade: measurement matrix has rank < 3");
    const Eigen::MatrixXd m_hat = u * root_sv.asDiagonal();
    const Eigen::MatrixXd s_hat = root_sv.asDiagonal() * v.transpose();

    // Orthonormality constraints on the Gram matrix L = Q Q^T, unknowns [l00 l01 l02 l11 l12 l22].
    auto gram_row = [](const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
        Eigen::Matrix<double, 1, 6> r;
        r << a(0) * b(0), a(0) * b(1) + a(1) * b(0), a(0) * b(2) + a(2) * b(0), a(1) * b(1),
            a(1) * b(2) + a(2) * b(1), a(2) * b(2);
        return r;
    };
    Eigen::MatrixXd c(2 * f, 6);
    Eigen::Matrix<double, 1, 6> norm_row = Eigen::Matrix<double, 1, 6>::Zero();
    for (Eigen::Index i = 0; i < f; ++i)
    {
        const Eigen::Vector3d a = m_hat.row(2 * i).transpose();
        const Eigen::Vector3d b = m_hat.row(2 * i + 1).transpose();
        c.row(2 * i) = gram_row(a, a) - gram_row(b, b);
        c.row(2 * i + 1) = gram_row(a, b);
        norm_row += gram_row(a, a) + gram_row(b, b);
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> csvd(c, Eigen::ComputeFullV);
    Eigen::Matrix<double, 6, 1> l = csvd.matrixV().col(5);
    const double norm = norm_row.dot(l);
    if (norm == 0.0)
        throw DegenerateConfiguration("tomasi_kanade: metric constraints do not fix a scale");
    l *= 2.0 * static_cast<double>(f) / norm;  // mean squared row norm of the upgraded motion = 1

    Eigen::Matrix3d gram;
    gram << l(0), l(1), l(2), l(1), l(3), l(4), l(2), l(4), l(5);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(gram);
    const Eigen::Vector3d ev = es.eigenvalues();
    if (!(ev(0) > kRankTol * ev(2)))
        throw DegenerateConfiguration("tomasi_kanade: metric-upgrade Gram matrix is not positive definite");
    const Eigen::Matrix3d q = es.eigenvectors() * ev.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
    const Eigen::Matrix3d q_inv = es.eigenvectors() * ev.cwiseSqrt().cwiseInverse().asDiagonal() *
                                  es.eigenvectors().transpose();

    const Eigen::MatrixXd motion = m_hat * q;
    TomasiKanadeResult result;
    result.shape = Shape3D((q_inv * s_hat).transpose());
    result.singular_values = svd.singularValues();
    result.cameras.reserve(static_cast<std::size_t>(f));
    for (Eigen::Index i = 0; i < f; ++i)
    {
        const Eigen::Vector3d a = motion.row(2 * i).transpose();
        const Eigen::Vector3d b = motion.row(2 * i + 1).transpose();
        Eigen::Matrix3d r;
        r.row(0) = a.normalized().transpose();
        r.row(1) = b.normalized().transpose();
        r.row(2) = a.cross(b).normalized().transpose();
        WeakPerspectiveCamera cam;
        cam.rotation = nearest_rotation(r);
        cam.scale = 0.5 * (a.norm() + b.norm());
        cam.translation = centroids[static_cast<std::size_t>(i)];
        result.cameras.push_back(cam);
    }
    return result;
}

Eigen::Matrix3d nearest_rotation(const Eigen::Matrix3d& m)
{
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Vector3d flip(1.0, 1.0, 1.0);
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0)
        flip(2) = -1.0;
    return svd.matrixU() * flip.asDiagonal() * svd.matrixV().transpose();
}

double reprojection_error(const Landmarks2D& obs, const Shape3D& shape, const WeakPerspectiveCamera& cam)
{
    const Landmarks2D proj = project(shape, cam);
    double sq = 0.0;
    for (Eigen::Index i = 0; i < obs.size(); ++i)
        if (!obs.missing(i))
            sq += (obs.points.row(i) - proj.points.row(i)).squaredNorm();
    return std::sqrt(sq);
}

double diameter(const Landmarks2D& lm)
{
    double best = 0.0;
    for (Eigen::Index i = 0; i < lm.size(); ++i)
    {
        if (lm.missing(i))
            continue;
        for (Eigen::Index j = i + 1; j < lm.size(); ++j)
            if (!lm.missing(j))
                best = std::max(best, (lm.points.row(i) - lm.points.row(j)).norm());
    }
    return best;
}

double diameter(const Shape3D& shape)
{
    double best = 0.0;
    for (Eigen::Index i = 0; i < shape.size(); ++i)
        for (Eigen::Index j = i + 1; j < shape.size(); ++j)
            best = std::max(best, (shape.points.row(i) - shape.points.row(j)).norm());
    return best;
}

Eigen::Matrix3d rotation_from_axis_angle(const Eigen::Vector3d& axis_angle)
{
    const double angle = axis_angle.norm();
    if (angle == 0.0)
        return Eigen::Matrix3d::Identity();
    return Eigen::AngleAxisd(angle, axis_angle / angle).toRotationMatrix();
}

Eigen::Matrix3d random_rotation(Rng& rng)
{
    // Uniform on SO(3) via a normalized Gaussian quaternion.
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
    q.normalize();
    return q.toRotationMatrix();
}

}  // namespace mbw::geometry

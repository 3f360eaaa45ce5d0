#include "stratum/construct.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "stratum/error.hpp"
#include "stratum/io.hpp"
#include "stratum/random.hpp"
#include "stratum/spectral.hpp"

namespace stratum {

namespace {

constexpr double kZeroEigTol = 1e-10;
constexpr double kResidualTol = 1e-12;

}  // namespace

ConstructedAttractor::ConstructedAttractor(DynamicalSystem sys, int p, int z, int m, Matrix basis,
                                           double c_max)
    : sys_(std::move(sys)), p_(p), z_(z), m_(m), basis_(std::move(basis)), c_max_(c_max) {
    if (p_ < 1 || z_ < 1 || m_ < 1 || m_ > p_)
        throw InputError("need 1 <= m <= p and z >= 1");
    if (sys_.n() != p_ + z_) throw InputError("system dimension must be p + z");
    if (sys_.form() != Form::post_activation || sys_.activation() != Activation::relu)
        throw InputError("constructed attractors use the post-activation relu form");
    if (basis_.rows() != p_ || basis_.cols() != m_) throw InputError("basis must be p x m");
    if (!(c_max_ > 0.0)) throw InputError("c_max must be positive");
    param_.resize(n(), m_);
    param_.topRows(p_) = basis_;
    param_.bottomRows(z_) = W_ZP() * basis_;
}

Vector ConstructedAttractor::point_at(const Vector& c) const {
    if (c.size() != m_) throw InputError("coefficient vector must have length m");
    Vector x = Vector::Zero(n());
    x.head(p_) = basis_ * c;
    // Same expression the field evaluates, so the Z residual cancels exactly.
    Vector active = x.unaryExpr([](double v) { return activate(Activation::relu, v); });
    x.tail(z_) = (sys_.W() * active + sys_.b()).tail(z_);
    return x;
}

bool ConstructedAttractor::in_validity(const Vector& c) const {
    const Vector x = point_at(c);
    return (x.head(p_).array() >= 0.0).all() && (x.tail(z_).array() < 0.0).all();
}

Box ConstructedAttractor::coefficient_box() const { return Box::uniform(m_, 0.0, c_max_); }

Box ConstructedAttractor::state_box(double margin) const {
    const Vector origin = point_at(Vector::Zero(m_));
    Vector lo = origin, hi = origin;
    for (Eigen::Index k = 0; k < n(); ++k) {
        for (Eigen::Index i = 0; i < m_; ++i) {
            const double step = param_(k, i) * c_max_;
            if (step < 0) lo[k] += step;
            else hi[k] += step;
        }
    }
    const Vector pad = margin * (hi - lo) + Vector::Constant(n(), margin);
    return {lo - pad, hi + pad};
}

Matrix ConstructedAttractor::piece_jacobian() const {
    Matrix J = Matrix::Zero(n(), n());
    J.leftCols(p_) = sys_.W().leftCols(p_);
    J.diagonal().array() -= 1.0;
    return J;
}

ConstructedAttractor::Projection ConstructedAttractor::project(const Vector& x) const {
    if (x.size() != n()) throw InputError("state has wrong length");
    const Vector offset = x - point_at(Vector::Zero(m_));
    Projection out;
    out.coefficients = param_.colPivHouseholderQr().solve(offset);
    out.distance = (param_ * out.coefficients - offset).norm();
    return out;
}

ConstructedAttractor assemble_relu_attractor(const Matrix& W_P, const Matrix& basis,
                                             const Matrix& W_ZP, const Vector& b_Z,
                                             const Matrix& W_PZ, const Matrix& W_Z,
                                             double c_max) {
    const auto p = W_P.rows();
    const auto z = b_Z.size();
    const auto m = basis.cols();
    if (W_P.cols() != p || basis.rows() != p || W_ZP.rows() != z || W_ZP.cols() != p ||
        W_PZ.rows() != p || W_PZ.cols() != z || W_Z.rows() != z || W_Z.cols() != z)
        throw InputError("block shapes are inconsistent");
    if (m < 1 || m > p || z < 1) throw InputError("need 1 <= m <= p and z >= 1");
    if ((W_P - W_P.transpose()).cwiseAbs().maxCoeff() > 1e-12)
        throw ConstructionError("W_P must be symmetric");
    if ((basis.transpose() * basis - Matrix::Identity(m, m)).cwiseAbs().maxCoeff() > 1e-10)
        throw ConstructionError("basis must be orthonormal");
    if ((W_P * basis - basis).cwiseAbs().maxCoeff() > 1e-12)
        throw ConstructionError("basis vectors must be eigenvalue-1 eigenvectors of W_P");
    Eigen::SelfAdjointEigenSolver<Matrix> es(W_P, Eigen::EigenvaluesOnly);
    const Vector& ev = es.eigenvalues();  // ascending
    if (std::abs(ev[p - 1] - 1.0) > 1e-10)
        throw ConstructionError("largest eigenvalue of W_P must be 1");
    if (p > m && ev[p - m - 1] >= 1.0 - 1e-8)
        throw ConstructionError("eigenvalue 1 of W_P must have multiplicity exactly m");

    const auto n = p + z;
    Matrix W(n, n);
    W << W_P, W_PZ, W_ZP, W_Z;
    Vector b = Vector::Zero(n);
    b.tail(z) = b_Z;
    ConstructedAttractor ca(DynamicalSystem(W, Matrix::Zero(n, n), b, Activation::relu,
                                            Form::post_activation),
                            static_cast<int>(p), static_cast<int>(z), static_cast<int>(m), basis,
                            c_max);
    // The validity region is a polytope; checking the corners of the
    // coefficient box covers it because the sign constraints are affine in c.
    const auto corners = std::size_t{1} << std::min<Eigen::Index>(m, 20);
    for (std::size_t mask = 0; mask < corners; ++mask) {
        Vector c(m);
        for (Eigen::Index i = 0; i < m; ++i) c[i] = (mask >> i) & 1 ? c_max : 0.0;
        if (!ca.in_validity(c))
            throw ConstructionError("sign conditions fail at a corner of the coefficient box");
    }
    return ca;
}

ConstructedAttractor construct_relu_attractor(int p, int z, int m, std::uint64_t seed,
                                              const ConstructOptions& opts) {
    if (m < 1 || m > p) throw InputError("need 1 <= m <= p");
    if (z < 1) throw InputError("need z >= 1");
    if (!(opts.c_max > 0.0)) throw InputError("c_max must be positive");
    Rng rng = make_rng(seed, "construction");
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    // Eigenvalue-1 eigenspace spanned by nonnegative vectors with disjoint
    // supports: every c >= 0 then gives x_P >= 0.
    std::vector<int> perm(p);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix V = Matrix::Zero(p, m);
    for (int k = 0; k < p; ++k) V(perm[k], k % m) = 0.5 + unit(rng);
    V.colwise().normalize();

    Matrix W_P = V * V.transpose();
    if (p > m) {
        Matrix G = gaussian_matrix(p, p - m, rng);
        G -= V * (V.transpose() * G);
        Eigen::HouseholderQR<Matrix> qr(G);
        Matrix U = qr.householderQ() * Matrix::Identity(p, p - m);
        U -= V * (V.transpose() * U);  // re-orthogonalize against V
        U = Eigen::HouseholderQR<Matrix>(U).householderQ() * Matrix::Identity(p, p - m);
        Vector mu(p - m);
        for (int i = 0; i < p - m; ++i) mu[i] = opts.mu_lo + (opts.mu_hi - opts.mu_lo) * unit(rng);
        W_P += U * mu.asDiagonal() * U.transpose();
    }
    W_P = 0.5 * (W_P + W_P.transpose());

    Matrix W_ZP = gaussian_matrix(z, p, rng);
    const Matrix reach = W_ZP * V;  // z x m
    Vector b_Z(z);
    for (int k = 0; k < z; ++k) {
        double worst = 0.0;
        for (int i = 0; i < m; ++i) worst += std::max(0.0, reach(k, i)) * opts.c_max;
        b_Z[k] = -(worst + 0.5 + unit(rng));
    }
    Matrix W_PZ = opts.coupling_scale * gaussian_matrix(p, z, rng);
    Matrix W_Z = opts.coupling_scale * gaussian_matrix(z, z, rng);
    return assemble_relu_attractor(W_P, V, W_ZP, b_Z, W_PZ, W_Z, opts.c_max);
}

namespace {

std::vector<Vector> sample_coefficients(const ConstructedAttractor& ca, int count,
                                        std::uint64_t seed) {
    Rng rng = make_rng(seed, "sampling");
    std::uniform_real_distribution<double> u(0.0, ca.c_max());
    std::vector<Vector> out;
    out.reserve(count);
    for (int s = 0; s < count; ++s) {
        Vector c(ca.m());
        for (int i = 0; i < ca.m(); ++i) c[i] = u(rng);
        out.push_back(std::move(c));
    }
    return out;
}

}  // namespace

ConstructionVerification verify_construction(const ConstructedAttractor& ca, int n_samples,
                                             std::uint64_t seed) {
    if (n_samples < 1) throw InputError("need at least one sample");
    ConstructionVerification v;
    v.n_samples = n_samples;
    v.expected_rank = ca.n() - ca.m();
    const auto& sys = ca.system();
    const auto coeffs = sample_coefficients(ca, n_samples, seed);
    for (int s = 0; s < n_samples; ++s) {
        const Vector& c = coeffs[s];
        auto fail = [&](std::string check, double value) {
            v.failures.push_back({s, c, std::move(check), value});
        };
        if (!ca.in_validity(c)) {
            fail("validity", 0.0);
            continue;
        }
        const Vector x = ca.point_at(c);
        const double residual = residual_field(sys, x).norm();
        v.max_residual = std::max(v.max_residual, residual);
        if (!(residual <= kResidualTol)) fail("residual", residual);

        auto jac = jacobian_analytic(sys, x);
        if (jac.kink_hit) {
            // A P coordinate sits exactly at 0; use the derivative from inside
            // the region, where the attractor's linear piece lives.
            jac.J = ca.piece_jacobian();
            ++v.kink_samples;
        }
        const auto spec = svd_spectrum(jac.J);
        v.ranks.push_back(spec.numerical_rank);
        if (spec.numerical_rank != v.expected_rank) fail("rank", spec.numerical_rank);

        int near_zero = 0;
        double zero_mag = 0.0, nonzero_re = -std::numeric_limits<double>::infinity();
        // Eigenvalues are sorted by descending real part; the m largest should
        // be the zeros.
        for (std::size_t i = 0; i < spec.eigenvalues.size(); ++i) {
            const auto lambda = spec.eigenvalues[i];
            if (std::abs(lambda) <= kZeroEigTol) {
                ++near_zero;
                zero_mag = std::max(zero_mag, std::abs(lambda));
            } else {
                nonzero_re = std::max(nonzero_re, lambda.real());
            }
        }
        v.max_zero_eigenvalue = std::max(v.max_zero_eigenvalue, zero_mag);
        v.max_nonzero_real_part = std::max(v.max_nonzero_real_part, nonzero_re);
        if (near_zero != ca.m()) fail("zero_eigenvalue_count", near_zero);
        if (!(nonzero_re < 0.0)) fail("nonzero_eigenvalue_sign", nonzero_re);
    }
    return v;
}

std::vector<Vector> sample_attractor_points(const ConstructedAttractor& ca, int count,
                                            std::uint64_t seed) {
    if (count < 1) throw InputError("count must be at least 1");
    if (!(ca.c_max() > 0.0) || !ca.in_validity(Vector::Zero(ca.m())))
        throw ConstructionError("validity region is empty");
    std::vector<Vector> points;
    points.reserve(count);
    for (const auto& c : sample_coefficients(ca, count, seed)) {
        if (!ca.in_validity(c)) throw ConstructionError("sampled coefficients left the validity region");
        points.push_back(ca.point_at(c));
    }
    return points;
}

nlohmann::json to_json(const ConstructedAttractor& ca) {
    nlohmann::json j = to_json(ca.system());
    j["ground_truth"] = {
        {"p", ca.p()},
        {"z", ca.z()},
        {"m", ca.m()},
        {"basis", io::matrix_to_json(ca.basis().transpose())},  // one row per basis vector
        {"W_ZP", io::matrix_to_json(ca.W_ZP())},
        {"b_Z", io::vector_to_json(ca.b_Z())},
        {"c_max", ca.c_max()},
    };
    return j;
}

ConstructedAttractor constructed_from_json(const nlohmann::json& j) {
    DynamicalSystem sys = system_from_json(j);
    if (!j.contains("ground_truth")) throw InputError("system file has no ground_truth block");
    try {
        const auto& gt = j.at("ground_truth");
        Matrix basis = io::matrix_from_json(gt.at("basis"), "basis").transpose();
        return ConstructedAttractor(std::move(sys), gt.at("p").get<int>(), gt.at("z").get<int>(),
                                    gt.at("m").get<int>(), std::move(basis),
                                    gt.at("c_max").get<double>());
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("invalid ground_truth block: ") + e.what());
    }
}

nlohmann::json to_json(const ConstructionVerification& v) {
    nlohmann::json failures = nlohmann::json::array();
    for (const auto& f : v.failures)
        failures.push_back({{"sample", f.sample},
                            {"coefficients", io::vector_to_json(f.coefficients)},
                            {"check", f.check},
                            {"value", f.value}});
    return {{"n_samples", v.n_samples},
            {"expected_rank", v.expected_rank},
            {"ranks", v.ranks},
            {"max_residual", v.max_residual},
            {"max_zero_eigenvalue", v.max_zero_eigenvalue},
            {"max_nonzero_real_part", v.max_nonzero_real_part},
            {"kink_samples", v.kink_samples},
            {"passed", v.passed()},
            {"failures", failures}};
}

}  // namespace stratum

#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "stratum/dynsys.hpp"
#include "stratum/equilibria.hpp"

namespace stratum {

/// A relu network dx/dt = -x + W relu(x) + b whose state splits into an
/// active block P (first p coordinates) and a silent block Z (last z), with
///
///   W = [ W_P  W_PZ ]      b = [ 0   ]
///       [ W_ZP W_Z  ]          [ b_Z ]
///
/// W_P symmetric with top eigenvalue exactly 1 of multiplicity m. The set
///   { (V c, W_ZP V c + b_Z) : c >= 0, V c >= 0, W_ZP V c + b_Z < 0 }
/// is a continuum of equilibria of dimension m; V holds the orthonormal
/// eigenvalue-1 eigenvectors of W_P as columns.
class ConstructedAttractor {
public:
    ConstructedAttractor(DynamicalSystem sys, int p, int z, int m, Matrix basis, double c_max);

    const DynamicalSystem& system() const noexcept { return sys_; }
    int p() const noexcept { return p_; }
    int z() const noexcept { return z_; }
    int m() const noexcept { return m_; }
    int n() const noexcept { return p_ + z_; }
    const Matrix& basis() const noexcept { return basis_; }  // p x m
    Matrix W_P() const { return sys_.W().topLeftCorner(p_, p_); }
    Matrix W_ZP() const { return sys_.W().bottomLeftCorner(z_, p_); }
    Vector b_Z() const { return sys_.b().tail(z_); }
    double c_max() const noexcept { return c_max_; }

    /// State at coefficient vector c.
    Vector point_at(const Vector& c) const;
    /// Sign conditions: x_P >= 0 and x_Z < 0 at point_at(c).
    bool in_validity(const Vector& c) const;
    /// [0, c_max]^m, the bounded coefficient region used for sampling.
    Box coefficient_box() const;
    /// Bounding box of point_at over the coefficient box, widened by
    /// `margin` times its extent plus `margin` in absolute terms.
    Box state_box(double margin = 0.05) const;
    /// Jacobian of the linear piece containing the attractor (P active,
    /// Z silent): W diag(1_P, 0_Z) - I. Independent of the point.
    Matrix piece_jacobian() const;

    struct Projection {
        Vector coefficients;
        double distance = 0.0;
    };
    /// Least-squares distance from x to the affine hull of the attractor,
    /// with the minimizing coefficients (check them against validity).
    Projection project(const Vector& x) const;

private:
    DynamicalSystem sys_;
    int p_;
    int z_;
    int m_;
    Matrix basis_;
    double c_max_;
    Matrix param_;  // n x m, maps c to the state offset from point_at(0)
};

struct ConstructOptions {
    double c_max = 10.0;
    double mu_lo = 0.2;  // non-top eigenvalues of W_P drawn from [mu_lo, mu_hi]
    double mu_hi = 0.8;
    double coupling_scale = 0.5;  // scale of W_PZ and W_Z
};

/// Builds an instance from explicit blocks, validating every invariant
/// (symmetry, eigenstructure, b_P = 0, sign region over the coefficient box).
ConstructedAttractor assemble_relu_attractor(const Matrix& W_P, const Matrix& basis,
                                             const Matrix& W_ZP, const Vector& b_Z,
                                             const Matrix& W_PZ, const Matrix& W_Z,
                                             double c_max = 10.0);

/// Random instance with 1 <= m <= p, z >= 1. Deterministic in seed.
ConstructedAttractor construct_relu_attractor(int p, int z, int m, std::uint64_t seed,
                                              const ConstructOptions& opts = {});

struct SampleCheckFailure {
    int sample = 0;
    Vector coefficients;
    std::string check;
    double value = 0.0;
};

struct ConstructionVerification {
    int n_samples = 0;
    int expected_rank = 0;
    double max_residual = 0.0;
    double max_zero_eigenvalue = 0.0;       // largest |lambda| among the m near-zero ones
    double max_nonzero_real_part = -std::numeric_limits<double>::infinity();  // over the remaining n - m eigenvalues
    int kink_samples = 0;  // samples where the piece Jacobian replaced the pointwise one
    std::vector<int> ranks;
    std::vector<SampleCheckFailure> failures;
    bool passed() const noexcept { return failures.empty(); }
};

/// At each sampled coefficient vector: residual <= 1e-12, Jacobian rank
/// n - m, exactly m eigenvalues within 1e-10 of 0, the rest with negative
/// real part.
ConstructionVerification verify_construction(const ConstructedAttractor& ca, int n_samples,
                                             std::uint64_t seed);

/// Coefficients uniform over the coefficient box, mapped to states.
std::vector<Vector> sample_attractor_points(const ConstructedAttractor& ca, int count,
                                            std::uint64_t seed);

/// dynsys JSON plus {"ground_truth": {p, z, m, basis, W_ZP, b_Z, c_max}}.
nlohmann::json to_json(const ConstructedAttractor& ca);
ConstructedAttractor constructed_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ConstructionVerification& v);

}  // namespace stratum

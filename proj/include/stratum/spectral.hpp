#pragma once

#include <complex>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

namespace stratum {

inline constexpr double kDefaultRankTol = 1e-8;

/// Singular spectrum of one matrix with the dispersion statistics used to
/// detect stratification.
struct SpectrumReport {
    std::vector<double> singular_values;  // descending, non-negative
    std::vector<std::complex<double>> eigenvalues;  // square inputs only
    double cv = 0.0;
    double max_gap_ratio = 1.0;  // +inf when a trailing singular value is 0
    int numerical_rank = 0;
    double tol_used = 0.0;  // absolute threshold rel_tol * s_max
};

struct SvdFactors {
    Eigen::MatrixXd U;  // m x k
    Eigen::VectorXd s;  // k = min(m, n), descending
    Eigen::MatrixXd V;  // n x k
};

/// Thin SVD, M = U diag(s) V^T. Throws InputError on non-finite entries.
SvdFactors svd_factors(const Eigen::MatrixXd& M);

/// Singular values plus CV, gap ratio, and numerical rank. When M is square
/// the eigenvalues are filled in as well.
SpectrumReport svd_spectrum(const Eigen::MatrixXd& M, double rel_tol = kDefaultRankTol,
                            bool with_eigenvalues = true);

/// Eigenvalues with algebraic multiplicity, ordered by descending real part
/// then descending imaginary part.
std::vector<std::complex<double>> eig_spectrum(const Eigen::MatrixXd& M);

/// Number of singular values strictly above rel_tol * s_max (0 when s_max is 0).
/// Rejects unsorted input and non-positive tolerances.
int numerical_rank(std::span<const double> singular_values, double rel_tol = kDefaultRankTol);

/// Population variance over squared mean. Throws UndefinedMetricError when
/// the mean is not positive.
double cv_metric(std::span<const double> values);

/// max s_i / s_{i+1}; 1 for fewer than two values, +inf if a later value is 0.
double max_gap_ratio(std::span<const double> singular_values);

/// {"singular_values", "cv", "rank", "tol", "max_gap_ratio"}; an infinite gap
/// ratio is written as null.
nlohmann::json to_json(const SpectrumReport& r);

}  // namespace stratum

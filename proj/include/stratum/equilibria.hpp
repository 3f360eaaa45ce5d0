#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "stratum/dynsys.hpp"
#include "stratum/spectral.hpp"

namespace stratum {

enum class Stability { stable, marginal, unstable };
std::string_view to_string(Stability s);

/// Axis-aligned sampling region, one closed interval per coordinate.
struct Box {
    Vector lower;
    Vector upper;

    static Box uniform(Eigen::Index n, double lo, double hi);
    Eigen::Index dim() const noexcept { return lower.size(); }
    /// Throws InputError unless every interval has positive width.
    void validate() const;
    /// Maps a point of the unit cube into the box.
    Vector map_unit(const Vector& u) const;
};

struct EquilibriumReport {
    Vector point;
    double residual = 0.0;   // |F(point)|_2
    SpectrumReport spectrum; // of the residual Jacobian at point
    int attractor_dim = 0;   // n - spectrum.numerical_rank
    Stability stability = Stability::unstable;
    int marginal_count = 0;  // eigenvalues inside the +-eta band
    bool kink_hit = false;
    /// Some relu argument lies within kKinkBand (1 + |arg|_inf) of 0, so the
    /// pointwise Jacobian depends on rounding; the reported rank is then
    /// that of one adjacent linear piece.
    bool near_kink = false;
    bool used_pseudo_inverse = false;
};

inline constexpr double kKinkBand = 1e-9;

struct SolverOptions {
    double tolerance = 1e-10;
    int max_iterations = 100;
    int max_halvings = 30;
    double rank_tol = kDefaultRankTol;
    double eta = 1e-6;
    double dedup_tol = 1e-6;
    int workers = 1;
};

struct NewtonResult {
    Vector point;
    double residual = 0.0;
    int iterations = 0;
    bool converged = false;
    bool used_pseudo_inverse = false;
};

/// Damped Newton on residual_field from one start. Rank-deficient Jacobians
/// fall back to the minimum-norm least-squares step.
NewtonResult newton_refine(const DynamicalSystem& sys, const Vector& start,
                           const SolverOptions& opts = {});

/// Quasi-random starts (shifted Halton) within the box, deterministic in seed.
std::vector<Vector> quasi_random_starts(const Box& box, int count, std::uint64_t seed);

/// Multi-start equilibrium search. Converged points are sorted
/// lexicographically and merged when closer than dedup_tol * (1 + |x|).
std::vector<EquilibriumReport> find_equilibria(const DynamicalSystem& sys, const Box& box,
                                               int n_starts, std::uint64_t seed,
                                               const SolverOptions& opts = {});

/// Same as find_equilibria but with caller-supplied starts.
std::vector<EquilibriumReport> refine_starts(const DynamicalSystem& sys,
                                             const std::vector<Vector>& starts,
                                             const SolverOptions& opts = {});

/// Builds the full report at a point (does not require convergence).
EquilibriumReport describe_equilibrium(const DynamicalSystem& sys, const Vector& x,
                                       const SolverOptions& opts = {});

/// Linearized classification from the eigenvalues of the residual Jacobian.
/// For discrete maps the multipliers are eigenvalue + 1.
Stability classify_stability(const std::vector<std::complex<double>>& residual_eigenvalues,
                             Form form, double eta, int* marginal_count = nullptr);

/// n minus the numerical rank of the residual Jacobian at x_star. Throws
/// PreconditionError (carrying the residual) when x_star is not an
/// equilibrium to within 1e-8.
int attractor_dimension(const DynamicalSystem& sys, const Vector& x_star,
                        double rel_tol = kDefaultRankTol);

/// Declared linear relations among the component functions f_1..f_n:
/// each row c of `relations` claims sum_i c_i f_i(x) == 0.
class FunctionalDependence {
public:
    FunctionalDependence(Matrix relations, int independent_count);
    FunctionalDependence(const Vector& coefficients, int independent_count);

    const Matrix& relations() const noexcept { return relations_; }
    int independent_count() const noexcept { return independent_count_; }
    Eigen::Index n() const noexcept { return relations_.cols(); }

private:
    Matrix relations_;
    int independent_count_;
};

struct DependenceVerdict {
    bool holds = true;
    // Filled in for the first violating sample.
    std::optional<Vector> sample;
    int relation = -1;
    double magnitude = 0.0;
    double threshold = 0.0;
};

/// Monte Carlo check of the declared relations at quasi-random points of the
/// box: holds iff |sum c_i f_i(x)| <= 1e-8 (1 + max_i |f_i(x)|) everywhere.
/// f is the residual field.
DependenceVerdict verify_dependence(const DynamicalSystem& sys, const FunctionalDependence& dep,
                                    const Box& box, int n_samples, std::uint64_t seed);

/// n - k from a verified dependence, cross-checked against the Jacobian rank
/// at the witness equilibrium. Throws InconsistentWitnessError when the rank
/// at the witness differs from k.
int dimension_estimate_thm3(const DynamicalSystem& sys, const FunctionalDependence& dep,
                            const Vector& x_witness, double rel_tol = kDefaultRankTol);

/// As above, but first runs verify_dependence over `box` and throws
/// PreconditionError if the declared relations do not hold.
int dimension_estimate_thm3(const DynamicalSystem& sys, const FunctionalDependence& dep,
                            const Vector& x_witness, const Box& box, int n_samples,
                            std::uint64_t seed, double rel_tol = kDefaultRankTol);

nlohmann::json to_json(const EquilibriumReport& r);
nlohmann::json to_json(const std::vector<EquilibriumReport>& reports);

}  // namespace stratum

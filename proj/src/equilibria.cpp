#include "stratum/equilibria.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "stratum/error.hpp"
#include "stratum/io.hpp"
#include "stratum/parallel.hpp"
#include "stratum/random.hpp"

namespace stratum {

std::string_view to_string(Stability s) {
    switch (s) {
        case Stability::stable: return "stable";
        case Stability::marginal: return "marginal";
        case Stability::unstable: return "unstable";
    }
    return "unstable";
}

Box Box::uniform(Eigen::Index n, double lo, double hi) {
    return {Vector::Constant(n, lo), Vector::Constant(n, hi)};
}

void Box::validate() const {
    if (lower.size() != upper.size() || lower.size() == 0)
        throw InputError("box bounds must be non-empty and of equal length");
    for (Eigen::Index i = 0; i < lower.size(); ++i)
        if (!(upper[i] > lower[i]) || !std::isfinite(lower[i]) || !std::isfinite(upper[i]))
            throw InputError("box interval " + std::to_string(i) + " is empty or degenerate");
}

Vector Box::map_unit(const Vector& u) const {
    return lower + (upper - lower).cwiseProduct(u);
}

namespace {

// Singular values below this fraction of the largest are dropped from the
// Newton step.
constexpr double kStepRankTol = 1e-10;

double norm_of(const Vector& v) { return v.allFinite() ? v.norm() : HUGE_VAL; }

bool lexicographic_less(const Vector& a, const Vector& b) {
    for (Eigen::Index i = 0; i < a.size(); ++i)
        if (a[i] != b[i]) return a[i] < b[i];
    return false;
}

}  // namespace

NewtonResult newton_refine(const DynamicalSystem& sys, const Vector& start,
                           const SolverOptions& opts) {
    NewtonResult out;
    Vector x = start;
    Vector F = residual_field(sys, x);
    double fnorm = norm_of(F);
    for (int it = 0; it < opts.max_iterations && fnorm > opts.tolerance; ++it) {
        out.iterations = it + 1;
        const Matrix J = residual_jacobian(sys, x).J;
        Eigen::JacobiSVD<Matrix> svd(J, Eigen::ComputeFullU | Eigen::ComputeFullV);
        const Vector& s = svd.singularValues();
        const double cut = kStepRankTol * (s.size() ? s[0] : 0.0);
        Vector ut_f = svd.matrixU().transpose() * F;
        Vector coeff = Vector::Zero(s.size());
        for (Eigen::Index i = 0; i < s.size(); ++i) {
            if (s[i] > cut && s[i] > 0.0)
                coeff[i] = ut_f[i] / s[i];
            else
                out.used_pseudo_inverse = true;
        }
        const Vector dx = -(svd.matrixV() * coeff);

        double alpha = 1.0;
        bool accepted = false;
        for (int h = 0; h <= opts.max_halvings; ++h, alpha *= 0.5) {
            Vector trial = x + alpha * dx;
            Vector Ft = residual_field(sys, trial);
            double tn = norm_of(Ft);
            if (tn < fnorm) {
                x = std::move(trial);
                F = std::move(Ft);
                fnorm = tn;
                accepted = true;
                break;
            }
        }
        if (!accepted) break;
    }
    out.point = x;
    out.residual = fnorm;
    out.converged = fnorm <= opts.tolerance;
    return out;
}

std::vector<Vector> quasi_random_starts(const Box& box, int count, std::uint64_t seed) {
    box.validate();
    if (count < 1) throw InputError("need at least one start");
    std::vector<Vector> starts;
    starts.reserve(count);
    const int dim = static_cast<int>(box.dim());
    if (dim <= 64) {
        HaltonSequence seq(dim, derive_seed(seed, "starts"));
        for (int i = 0; i < count; ++i) starts.push_back(box.map_unit(seq.point(i)));
    } else {
        Rng rng = make_rng(seed, "starts");
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (int i = 0; i < count; ++i) {
            Vector p(dim);
            for (int k = 0; k < dim; ++k) p[k] = u(rng);
            starts.push_back(box.map_unit(p));
        }
    }
    return starts;
}

Stability classify_stability(const std::vector<std::complex<double>>& eig, Form form, double eta,
                             int* marginal_count) {
    int marginal = 0;
    bool beyond = false;
    for (auto lambda : eig) {
        // Signed distance past the stability boundary.
        double d = is_continuous(form) ? lambda.real() : std::abs(lambda + 1.0) - 1.0;
        if (d > eta)
            beyond = true;
        else if (d >= -eta)
            ++marginal;
    }
    if (marginal_count) *marginal_count = marginal;
    if (beyond) return Stability::unstable;
    return marginal > 0 ? Stability::marginal : Stability::stable;
}

EquilibriumReport describe_equilibrium(const DynamicalSystem& sys, const Vector& x,
                                       const SolverOptions& opts) {
    EquilibriumReport r;
    r.point = x;
    r.residual = residual_field(sys, x).norm();
    auto jac = residual_jacobian(sys, x);
    r.kink_hit = jac.kink_hit;
    if (sys.activation() == Activation::relu) {
        const Vector arg = sys.activation_argument(x);
        const double band = kKinkBand * (1.0 + arg.cwiseAbs().maxCoeff());
        r.near_kink = (arg.cwiseAbs().array() <= band).any();
    }
    r.spectrum = svd_spectrum(jac.J, opts.rank_tol);
    r.attractor_dim = static_cast<int>(sys.n()) - r.spectrum.numerical_rank;
    r.stability = classify_stability(r.spectrum.eigenvalues, sys.form(), opts.eta, &r.marginal_count);
    return r;
}

std::vector<EquilibriumReport> refine_starts(const DynamicalSystem& sys,
                                             const std::vector<Vector>& starts,
                                             const SolverOptions& opts) {
    std::vector<NewtonResult> results(starts.size());
    parallel_for(starts.size(), opts.workers,
                 [&](std::size_t i) { results[i] = newton_refine(sys, starts[i], opts); });

    std::vector<const NewtonResult*> converged;
    for (const auto& r : results) {
        // Re-evaluate independently of the solver's bookkeeping.
        if (r.converged && residual_field(sys, r.point).norm() <= opts.tolerance)
            converged.push_back(&r);
    }
    std::sort(converged.begin(), converged.end(),
              [](const NewtonResult* a, const NewtonResult* b) {
                  return lexicographic_less(a->point, b->point);
              });

    std::vector<const NewtonResult*> unique;
    for (const auto* r : converged) {
        const double tol = opts.dedup_tol * (1.0 + r->point.norm());
        bool duplicate = std::any_of(unique.begin(), unique.end(), [&](const NewtonResult* u) {
            return (u->point - r->point).norm() < tol;
        });
        if (!duplicate) unique.push_back(r);
    }

    std::vector<EquilibriumReport> reports(unique.size());
    parallel_for(unique.size(), opts.workers, [&](std::size_t i) {
        reports[i] = describe_equilibrium(sys, unique[i]->point, opts);
        reports[i].used_pseudo_inverse = unique[i]->used_pseudo_inverse;
    });
    return reports;
}

std::vector<EquilibriumReport> find_equilibria(const DynamicalSystem& sys, const Box& box,
                                               int n_starts, std::uint64_t seed,
                                               const SolverOptions& opts) {
    if (box.dim() != sys.n()) throw InputError("box dimension does not match the system");
    return refine_starts(sys, quasi_random_starts(box, n_starts, seed), opts);
}

int attractor_dimension(const DynamicalSystem& sys, const Vector& x_star, double rel_tol) {
    const double residual = residual_field(sys, x_star).norm();
    if (!(residual <= 1e-8))
        throw PreconditionError("point is not an equilibrium (residual " +
                                    io::format_double(residual) + ")",
                                residual);
    const auto spec = svd_spectrum(residual_jacobian(sys, x_star).J, rel_tol, false);
    return static_cast<int>(sys.n()) - spec.numerical_rank;
}

FunctionalDependence::FunctionalDependence(Matrix relations, int independent_count)
    : relations_(std::move(relations)), independent_count_(independent_count) {
    const auto n = relations_.cols();
    if (relations_.rows() < 1 || n < 1) throw InputError("dependence needs at least one relation");
    if (!relations_.allFinite()) throw InputError("relation coefficients must be finite");
    for (Eigen::Index r = 0; r < relations_.rows(); ++r)
        if (relations_.row(r).cwiseAbs().maxCoeff() == 0.0)
            throw InputError("relation " + std::to_string(r) + " has all-zero coefficients");
    if (independent_count_ < 0 || independent_count_ >= n)
        throw InputError("independent count must satisfy 0 <= k < n");
    // The declared relations already force dim span{f_i} <= n - rank(relations).
    Eigen::JacobiSVD<Matrix> svd(relations_);
    const Vector& s = svd.singularValues();
    const int rel_rank = numerical_rank(std::span<const double>(s.data(), s.size()));
    if (independent_count_ > n - rel_rank)
        throw InputError("independent count exceeds n minus the rank of the declared relations");
}

FunctionalDependence::FunctionalDependence(const Vector& coefficients, int independent_count)
    : FunctionalDependence(Matrix(coefficients.transpose()), independent_count) {}

DependenceVerdict verify_dependence(const DynamicalSystem& sys, const FunctionalDependence& dep,
                                    const Box& box, int n_samples, std::uint64_t seed) {
    if (dep.n() != sys.n()) throw InputError("dependence length does not match the system");
    if (box.dim() != sys.n()) throw InputError("box dimension does not match the system");
    if (n_samples < 1) throw InputError("need at least one sample");
    DependenceVerdict v;
    for (const auto& x : quasi_random_starts(box, n_samples, derive_seed(seed, "dependence"))) {
        const Vector f = residual_field(sys, x);
        const double threshold = 1e-8 * (1.0 + f.cwiseAbs().maxCoeff());
        const Vector combos = dep.relations() * f;
        for (Eigen::Index r = 0; r < combos.size(); ++r) {
            if (std::abs(combos[r]) > threshold) {
                v.holds = false;
                v.sample = x;
                v.relation = static_cast<int>(r);
                v.magnitude = std::abs(combos[r]);
                v.threshold = threshold;
                return v;
            }
        }
    }
    return v;
}

int dimension_estimate_thm3(const DynamicalSystem& sys, const FunctionalDependence& dep,
                            const Vector& x_witness, double rel_tol) {
    if (dep.n() != sys.n()) throw InputError("dependence length does not match the system");
    const double residual = residual_field(sys, x_witness).norm();
    if (!(residual <= 1e-8))
        throw PreconditionError("witness is not an equilibrium (residual " +
                                    io::format_double(residual) + ")",
                                residual);
    const auto spec = svd_spectrum(residual_jacobian(sys, x_witness).J, rel_tol, false);
    if (spec.numerical_rank != dep.independent_count())
        throw InconsistentWitnessError("Jacobian rank at witness is " +
                                       std::to_string(spec.numerical_rank) + ", declared k is " +
                                       std::to_string(dep.independent_count()));
    const int estimate = static_cast<int>(sys.n()) - dep.independent_count();
    const int direct = attractor_dimension(sys, x_witness, rel_tol);
    if (estimate != direct)
        throw InconsistentWitnessError("dependence estimate " + std::to_string(estimate) +
                                       " disagrees with rank-based dimension " +
                                       std::to_string(direct));
    return estimate;
}

int dimension_estimate_thm3(const DynamicalSystem& sys, const FunctionalDependence& dep,
                            const Vector& x_witness, const Box& box, int n_samples,
                            std::uint64_t seed, double rel_tol) {
    const auto verdict = verify_dependence(sys, dep, box, n_samples, seed);
    if (!verdict.holds)
        throw PreconditionError("declared relation " + std::to_string(verdict.relation) +
                                    " is violated (magnitude " +
                                    io::format_double(verdict.magnitude) + ")",
                                verdict.magnitude);
    return dimension_estimate_thm3(sys, dep, x_witness, rel_tol);
}

nlohmann::json to_json(const EquilibriumReport& r) {
    nlohmann::json j;
    j["point"] = io::vector_to_json(r.point);
    j["residual"] = r.residual;
    j["spectrum"] = to_json(r.spectrum);
    j["attractor_dim"] = r.attractor_dim;
    j["stability"] = std::string(to_string(r.stability));
    j["marginal_count"] = r.marginal_count;
    j["kink_hit"] = r.kink_hit;
    j["near_kink"] = r.near_kink;
    j["used_pseudo_inverse"] = r.used_pseudo_inverse;
    return j;
}

nlohmann::json to_json(const std::vector<EquilibriumReport>& reports) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : reports) arr.push_back(to_json(r));
    return arr;
}

}  // namespace stratum

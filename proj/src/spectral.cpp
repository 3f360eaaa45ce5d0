#include "stratum/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "stratum/error.hpp"

namespace stratum {

namespace {

void require_finite(const Eigen::MatrixXd& M) {
    if (!M.allFinite()) throw InputError("matrix has non-finite entries");
}

}  // namespace

SvdFactors svd_factors(const Eigen::MatrixXd& M) {
    require_finite(M);
    // One-sided Jacobi is slower than divide-and-conquer but gives small
    // singular values to high relative accuracy, which rank decisions need.
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
    return {svd.matrixU(), svd.singularValues(), svd.matrixV()};
}

SpectrumReport svd_spectrum(const Eigen::MatrixXd& M, double rel_tol, bool with_eigenvalues) {
    require_finite(M);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(M);
    const Eigen::VectorXd& s = svd.singularValues();
    SpectrumReport r;
    r.singular_values.assign(s.data(), s.data() + s.size());
    r.numerical_rank = numerical_rank(r.singular_values, rel_tol);
    r.tol_used = r.singular_values.empty() ? 0.0 : rel_tol * r.singular_values.front();
    r.max_gap_ratio = max_gap_ratio(r.singular_values);
    // The all-zero spectrum has no dispersion; report 0 instead of failing.
    if (!r.singular_values.empty() && r.singular_values.front() > 0.0)
        r.cv = cv_metric(r.singular_values);
    if (with_eigenvalues && M.rows() == M.cols() && M.rows() > 0) r.eigenvalues = eig_spectrum(M);
    return r;
}

std::vector<std::complex<double>> eig_spectrum(const Eigen::MatrixXd& M) {
    if (M.rows() != M.cols()) throw InputError("eigenvalues need a square matrix");
    require_finite(M);
    std::vector<std::complex<double>> out;
    if (M.rows() == 0) return out;
    if (M.isApprox(M.transpose(), 0.0)) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M, Eigen::EigenvaluesOnly);
        for (Eigen::Index i = 0; i < M.rows(); ++i) out.emplace_back(es.eigenvalues()[i], 0.0);
    } else {
        Eigen::EigenSolver<Eigen::MatrixXd> es(M, false);
        if (es.info() != Eigen::Success) throw InputError("eigenvalue iteration did not converge");
        for (Eigen::Index i = 0; i < M.rows(); ++i) out.push_back(es.eigenvalues()[i]);
    }
    std::sort(out.begin(), out.end(), [](auto a, auto b) {
        if (a.real() != b.real()) return a.real() > b.real();
        return a.imag() > b.imag();
    });
    return out;
}

int numerical_rank(std::span<const double> s, double rel_tol) {
    if (!(rel_tol > 0.0)) throw InputError("rank tolerance must be positive");
    for (std::size_t i = 0; i + 1 < s.size(); ++i)
        if (s[i] < s[i + 1]) throw InputError("singular values must be sorted descending");
    if (s.empty() || s.front() <= 0.0) return 0;
    const double threshold = rel_tol * s.front();
    return static_cast<int>(std::count_if(s.begin(), s.end(), [&](double v) { return v > threshold; }));
}

double cv_metric(std::span<const double> values) {
    if (values.empty()) throw UndefinedMetricError("CV of an empty list");
    const double count = static_cast<double>(values.size());
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= count;
    if (!(mean > 0.0)) throw UndefinedMetricError("CV undefined for non-positive mean");
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= count;
    return var / (mean * mean);
}

double max_gap_ratio(std::span<const double> s) {
    double best = 1.0;
    for (std::size_t i = 0; i + 1 < s.size(); ++i) {
        if (s[i + 1] <= 0.0) return std::numeric_limits<double>::infinity();
        best = std::max(best, s[i] / s[i + 1]);
    }
    return best;
}

nlohmann::json to_json(const SpectrumReport& r) {
    nlohmann::json j;
    j["singular_values"] = r.singular_values;
    j["cv"] = r.cv;
    j["rank"] = r.numerical_rank;
    j["tol"] = r.tol_used;
    if (std::isfinite(r.max_gap_ratio))
        j["max_gap_ratio"] = r.max_gap_ratio;
    else
        j["max_gap_ratio"] = nullptr;
    if (!r.eigenvalues.empty()) {
        nlohmann::json eig = nlohmann::json::array();
        for (auto e : r.eigenvalues) eig.push_back({e.real(), e.imag()});
        j["eigenvalues"] = std::move(eig);
    }
    return j;
}

}  // namespace stratum

#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include <Eigen/Dense>

namespace stratum {

using Rng = std::mt19937_64;

/// Derives an independent seed for a named sub-stream ("construction",
/// "shuffle", "sampling", ...) so that each consumer of randomness stays
/// reproducible on its own.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream);

inline Rng make_rng(std::uint64_t seed, std::string_view stream) {
    return Rng(derive_seed(seed, stream));
}

/// Standard normal matrix of the given shape.
Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng);

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix with the
/// sign of R's diagonal folded into Q).
Eigen::MatrixXd random_orthogonal(Eigen::Index n, Rng& rng);

/// Randomly shifted Halton sequence in [0,1)^dim. Point i is a pure function
/// of (dim, seed, i).
class HaltonSequence {
public:
    HaltonSequence(int dim, std::uint64_t seed);

    Eigen::VectorXd point(std::uint64_t index) const;
    int dim() const noexcept { return static_cast<int>(shift_.size()); }

private:
    Eigen::VectorXd shift_;
};

}  // namespace stratum

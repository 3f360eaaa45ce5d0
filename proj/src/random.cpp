#include "stratum/random.hpp"

#include <cmath>
#include <stdexcept>

namespace stratum {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

constexpr int kPrimes[] = {2,   3,   5,   7,   11,  13,  17,  19,  23,  29,  31,  37,  41,
                           43,  47,  53,  59,  61,  67,  71,  73,  79,  83,  89,  97,  101,
                           103, 107, 109, 113, 127, 131, 137, 139, 149, 151, 157, 163, 167,
                           173, 179, 181, 191, 193, 197, 199, 211, 223, 227, 229, 233, 239,
                           241, 251, 257, 263, 269, 271, 277, 281, 283, 293, 307, 311};

double radical_inverse(std::uint64_t i, int base) {
    double inv = 1.0 / base;
    double f = inv;
    double r = 0.0;
    while (i > 0) {
        r += f * static_cast<double>(i % base);
        i /= base;
        f *= inv;
    }
    return r;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream) {
    // FNV-1a over the stream name, then mixed with the root seed.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : stream) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return splitmix64(splitmix64(seed) ^ h);
}

Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd m(rows, cols);
    // Column-major fill order is part of the reproducibility contract.
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
    return m;
}

Eigen::MatrixXd random_orthogonal(Eigen::Index n, Rng& rng) {
    Eigen::MatrixXd g = gaussian_matrix(n, n, rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, n);
    Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Eigen::Index j = 0; j < n; ++j)
        if (r(j, j) < 0) q.col(j) = -q.col(j);
    return q;
}

HaltonSequence::HaltonSequence(int dim, std::uint64_t seed) : shift_(dim) {
    if (dim < 1 || dim > static_cast<int>(std::size(kPrimes)))
        throw std::invalid_argument("HaltonSequence: unsupported dimension");
    Rng rng(derive_seed(seed, "halton"));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int k = 0; k < dim; ++k) shift_[k] = u(rng);
}

Eigen::VectorXd HaltonSequence::point(std::uint64_t index) const {
    Eigen::VectorXd p(shift_.size());
    for (Eigen::Index k = 0; k < shift_.size(); ++k) {
        double v = radical_inverse(index + 1, kPrimes[k]) + shift_[k];
        p[k] = v - std::floor(v);
    }
    return p;
}

}  // namespace stratum

#include <cmath>
#include <fstream>
#include <iterator>

#include "stratum/error.hpp"
#include "stratum/probe.hpp"
#include "stratum/random.hpp"

namespace stratum::probe {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset,
                        const std::filesystem::path& path) {
    if (bytes.size() < offset + 4)
        throw FormatError("'" + path.string() + "' is truncated inside its header");
    return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
           (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

std::string hex32(std::uint32_t v) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08X", v);
    return buf;
}

void check_magic(std::uint32_t found, std::uint32_t expected, const std::filesystem::path& path) {
    if (found != expected)
        throw FormatError("'" + path.string() + "': expected magic " + hex32(expected) +
                          ", found " + hex32(found));
}

}  // namespace

void Dataset::validate() const {
    if (inputs.rows() < 1) throw InputError("dataset is empty");
    if (static_cast<Eigen::Index>(labels.size()) != inputs.rows())
        throw InputError("dataset has mismatched input and label counts");
    for (int l : labels)
        if (l < 0 || l >= num_classes) throw InputError("label out of range");
}

Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path, long max_items) {
    const auto img = read_bytes(images_path);
    check_magic(read_be32(img, 0, images_path), kImageMagic, images_path);
    const std::size_t count = read_be32(img, 4, images_path);
    const std::size_t rows = read_be32(img, 8, images_path);
    const std::size_t cols = read_be32(img, 12, images_path);

    const auto lab = read_bytes(labels_path);
    check_magic(read_be32(lab, 0, labels_path), kLabelMagic, labels_path);
    const std::size_t label_count = read_be32(lab, 4, labels_path);
    if (label_count != count)
        throw FormatError("image file holds " + std::to_string(count) + " items, label file " +
                          std::to_string(label_count));

    const std::size_t keep =
        max_items > 0 ? std::min(count, static_cast<std::size_t>(max_items)) : count;
    const std::size_t pixels = rows * cols;
    constexpr std::size_t kImageHeader = 16, kLabelHeader = 8;
    if (img.size() < kImageHeader + keep * pixels)
        throw FormatError("'" + images_path.string() + "' is truncated: need " +
                          std::to_string(kImageHeader + keep * pixels) + " bytes, have " +
                          std::to_string(img.size()));
    if (lab.size() < kLabelHeader + keep)
        throw FormatError("'" + labels_path.string() + "' is truncated: need " +
                          std::to_string(kLabelHeader + keep) + " bytes, have " +
                          std::to_string(lab.size()));

    Dataset d;
    d.inputs.resize(static_cast<Eigen::Index>(keep), static_cast<Eigen::Index>(pixels));
    d.labels.resize(keep);
    int max_label = 0;
    for (std::size_t i = 0; i < keep; ++i) {
        const unsigned char* px = img.data() + kImageHeader + i * pixels;
        for (std::size_t k = 0; k < pixels; ++k)
            d.inputs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = px[k] / 255.0;
        d.labels[i] = lab[kLabelHeader + i];
        max_label = std::max(max_label, d.labels[i]);
    }
    d.num_classes = std::max(10, max_label + 1);
    return d;
}

Dataset synth_blobs(int num_classes, int dim, int per_class, double separation,
                    std::uint64_t seed) {
    if (num_classes < 2) throw InputError("need at least two classes");
    if (dim < 1 || per_class < 1) throw InputError("dim and per_class must be positive");
    if (!(separation >= 0.0)) throw InputError("separation must be non-negative");
    Rng rng = make_rng(seed, "blobs");

    // Centres: scaled unit vectors (distance sqrt(2) apart) when they fit,
    // otherwise random directions rescaled to the same mean pairwise distance.
    Matrix centres = Matrix::Zero(num_classes, dim);
    if (dim >= num_classes) {
        for (int c = 0; c < num_classes; ++c) centres(c, c) = separation / std::sqrt(2.0);
    } else {
        centres = gaussian_matrix(num_classes, dim, rng);
        double mean_dist = 0.0;
        int pairs = 0;
        for (int a = 0; a < num_classes; ++a)
            for (int b = a + 1; b < num_classes; ++b, ++pairs)
                mean_dist += (centres.row(a) - centres.row(b)).norm();
        mean_dist /= pairs;
        centres *= mean_dist > 0 ? separation / mean_dist : 0.0;
    }

    Dataset d;
    d.num_classes = num_classes;
    const int total = num_classes * per_class;
    d.inputs.resize(total, dim);
    d.labels.resize(total);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int i = 0; i < total; ++i) {
        const int c = i % num_classes;
        d.labels[i] = c;
        for (int k = 0; k < dim; ++k) d.inputs(i, k) = centres(c, k) + normal(rng);
    }
    const double lo = d.inputs.minCoeff(), hi = d.inputs.maxCoeff();
    const double span = hi > lo ? hi - lo : 1.0;
    d.inputs = (d.inputs.array() - lo) / span;
    return d;
}

JacobianTarget parse_jacobian_target(std::string_view s) {
    if (s == "logits") return JacobianTarget::logits;
    if (s == "softmax") return JacobianTarget::softmax;
    throw InputError("unknown Jacobian target '" + std::string(s) + "'");
}

std::string_view to_string(ProbeCategory c) {
    switch (c) {
        case ProbeCategory::train_class: return "train_class";
        case ProbeCategory::held_out_class: return "held_out_class";
        case ProbeCategory::natural_noise: return "natural_noise";
        case ProbeCategory::random_noise: return "random_noise";
    }
    return "train_class";
}

std::vector<ProbeSample> make_probe_samples(const Dataset& train_pool, const Dataset& held_out,
                                            const Dataset& natural_noise, int per_group,
                                            std::uint64_t seed) {
    std::vector<ProbeSample> out;
    int id = 0;
    auto take = [&](const Dataset& pool, ProbeCategory cat) {
        const auto n = std::min<Eigen::Index>(pool.size(), per_group);
        for (Eigen::Index i = 0; i < n; ++i) out.push_back({id++, cat, pool.inputs.row(i).transpose()});
    };
    take(train_pool, ProbeCategory::train_class);
    take(held_out, ProbeCategory::held_out_class);
    take(natural_noise, ProbeCategory::natural_noise);
    const auto d = train_pool.dim();
    Rng rng = make_rng(seed, "probe-noise");
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < per_group; ++i) {
        Vector x(d);
        for (Eigen::Index k = 0; k < d; ++k) x[k] = u(rng);
        out.push_back({id++, ProbeCategory::random_noise, std::move(x)});
    }
    return out;
}

}  // namespace stratum::probe

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "stratum/error.hpp"
#include "stratum/probe.hpp"
#include "stratum/random.hpp"
#include "stratum/spectral.hpp"

using namespace stratum;
using namespace stratum::probe;
namespace fs = std::filesystem;

namespace {

void put_be32(std::ofstream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

// Images with pixel k of item i equal to (7 i + k) mod 256, labels i mod 10.
void write_idx(const fs::path& images, const fs::path& labels, std::uint32_t count,
               std::uint32_t rows, std::uint32_t cols, std::uint32_t label_count) {
    std::ofstream img(images, std::ios::binary);
    put_be32(img, 0x803);
    put_be32(img, count);
    put_be32(img, rows);
    put_be32(img, cols);
    for (std::uint32_t i = 0; i < count; ++i)
        for (std::uint32_t k = 0; k < rows * cols; ++k) img.put(static_cast<char>((7 * i + k) % 256));
    std::ofstream lab(labels, std::ios::binary);
    put_be32(lab, 0x801);
    put_be32(lab, label_count);
    for (std::uint32_t i = 0; i < label_count; ++i) lab.put(static_cast<char>(i % 10));
}

fs::path scratch(const char* name) {
    auto p = fs::temp_directory_path() / ("stratum_test_probe_" + std::string(name));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

// Projection onto the difference of class means, split at the midpoint;
// the means come from the first half of the data, accuracy from the second.
double mean_difference_accuracy(const Dataset& d) {
    const auto half = d.size() / 2;
    Vector m0 = Vector::Zero(d.dim()), m1 = Vector::Zero(d.dim());
    int n0 = 0, n1 = 0;
    for (Eigen::Index i = 0; i < half; ++i) {
        if (d.labels[i] == 0) {
            m0 += d.inputs.row(i).transpose();
            ++n0;
        } else {
            m1 += d.inputs.row(i).transpose();
            ++n1;
        }
    }
    m0 /= n0;
    m1 /= n1;
    const Vector w = m1 - m0;
    const double t = w.dot(0.5 * (m0 + m1));
    int correct = 0;
    for (Eigen::Index i = half; i < d.size(); ++i)
        correct += (w.dot(d.inputs.row(i).transpose()) > t) == (d.labels[i] == 1);
    return double(correct) / double(d.size() - half);
}

Matrix fd_input_jacobian(const TinyNet& net, const Vector& x, JacobianTarget target, double h) {
    auto f = [&](const Vector& v) -> Vector {
        const Vector z = net.forward(v);
        if (target == JacobianTarget::logits) return z;
        const Vector e = (z.array() - z.maxCoeff()).exp();
        return e / e.sum();
    };
    Matrix J(net.output_dim(), x.size());
    for (Eigen::Index j = 0; j < x.size(); ++j) {
        Vector a = x, b = x;
        a[j] += h;
        b[j] -= h;
        J.col(j) = (f(a) - f(b)) / (2 * h);
    }
    return J;
}

}  // namespace

TEST_CASE("idx files load in file order with 1/255 scaling") {
    const auto dir = scratch("idx");
    write_idx(dir / "img", dir / "lab", 12, 3, 4, 12);
    const auto all = load_idx(dir / "img", dir / "lab");
    CHECK(all.size() == 12);
    CHECK(all.dim() == 12);
    CHECK(all.num_classes == 10);
    const auto d = load_idx(dir / "img", dir / "lab", 5);
    REQUIRE(d.size() == 5);
    for (int i = 0; i < 5; ++i) {
        CHECK(d.labels[i] == i % 10);
        for (int k = 0; k < 12; ++k) CHECK(d.inputs(i, k) == ((7 * i + k) % 256) / 255.0);
    }
}

TEST_CASE("idx format errors") {
    const auto dir = scratch("idx_bad");
    write_idx(dir / "img", dir / "lab", 4, 2, 2, 4);
    CHECK_THROWS_AS(load_idx(dir / "lab", dir / "lab"), FormatError);
    try {
        load_idx(dir / "lab", dir / "lab");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("0x00000803") != std::string::npos);
    }
    write_idx(dir / "img2", dir / "lab2", 4, 2, 2, 3);
    CHECK_THROWS_AS(load_idx(dir / "img2", dir / "lab2"), FormatError);

    const auto bytes = fs::file_size(dir / "img");
    fs::copy_file(dir / "img", dir / "short");
    fs::resize_file(dir / "short", bytes - 3);
    CHECK_THROWS_AS(load_idx(dir / "short", dir / "lab"), FormatError);
    CHECK_THROWS_AS(load_idx(dir / "missing", dir / "lab"), InputError);
}

TEST_CASE("blobs: sizes, range, separability and chance level") {
    const auto one = synth_blobs(3, 4, 1, 8.0, 1);
    CHECK(one.size() == 3);
    const auto d = synth_blobs(2, 16, 1000, 8.0, 2);
    CHECK(d.inputs.minCoeff() == 0.0);
    CHECK(d.inputs.maxCoeff() == 1.0);
    CHECK(mean_difference_accuracy(d) >= 0.99);
    const auto flat = synth_blobs(2, 8, 2000, 0.0, 3);
    CHECK(std::abs(mean_difference_accuracy(flat) - 0.5) <= 0.05);
    CHECK_THROWS_AS(synth_blobs(1, 4, 10, 8.0, 1), InputError);
}

TEST_CASE("Jacobian of a linear layer is its weight matrix") {
    Rng rng(1);
    const Matrix V = gaussian_matrix(3, 5, rng);
    TinyNet net({V}, {Vector::Ones(3)});
    const Vector x = gaussian_matrix(5, 1, rng).col(0);
    CHECK(classifier_jacobian(net, x) == V);
}

TEST_CASE("one hidden relu layer: Jacobian is V2 D V1") {
    Rng rng(2);
    const Matrix V1 = gaussian_matrix(6, 4, rng), V2 = gaussian_matrix(3, 6, rng);
    const Vector c1 = gaussian_matrix(6, 1, rng).col(0);
    TinyNet net({V1, V2}, {c1, Vector::Zero(3)});
    const Vector x = gaussian_matrix(4, 1, rng).col(0);
    const Vector pre = V1 * x + c1;
    Matrix D = Matrix::Zero(6, 6);
    for (int i = 0; i < 6; ++i) D(i, i) = pre[i] > 0 ? 1.0 : 0.0;
    CHECK((classifier_jacobian(net, x) - V2 * D * V1).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("input Jacobians agree with finite differences") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const auto act = trial % 2 ? Activation::tanh : Activation::relu;
        TinyNet net({5, 7, 6, 4}, 100 + trial, act);
        const Vector x = gaussian_matrix(5, 1, rng).col(0);
        for (auto target : {JacobianTarget::logits, JacobianTarget::softmax}) {
            const Matrix J = classifier_jacobian(net, x, target);
            const Matrix F = fd_input_jacobian(net, x, target, 1e-6);
            CHECK((J - F).cwiseAbs().maxCoeff() <= 1e-4 * (1.0 + J.cwiseAbs().maxCoeff()));
        }
    }
}

TEST_CASE("parameter gradients agree with finite differences") {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        const auto act = trial % 2 ? Activation::tanh : Activation::relu;
        TinyNet net({4, 6, 3}, 200 + trial, act);
        const Matrix X = gaussian_matrix(5, 4, rng);
        const std::vector<int> y{0, 2, 1, 1, 0};
        const auto g = loss_and_gradient(net, X, y);
        double worst = 0.0, scale = 0.0;
        for (std::size_t l = 0; l < net.weights().size(); ++l) {
            for (Eigen::Index i = 0; i < net.weights()[l].size(); ++i) {
                TinyNet a = net, b = net;
                const double h = 1e-6;
                a.weights()[l].data()[i] += h;
                b.weights()[l].data()[i] -= h;
                const double fd = (loss_and_gradient(a, X, y).loss - loss_and_gradient(b, X, y).loss) / (2 * h);
                worst = std::max(worst, std::abs(fd - g.dW[l].data()[i]));
                scale = std::max(scale, std::abs(g.dW[l].data()[i]));
            }
            for (Eigen::Index i = 0; i < net.biases()[l].size(); ++i) {
                TinyNet a = net, b = net;
                const double h = 1e-6;
                a.biases()[l][i] += h;
                b.biases()[l][i] -= h;
                const double fd = (loss_and_gradient(a, X, y).loss - loss_and_gradient(b, X, y).loss) / (2 * h);
                worst = std::max(worst, std::abs(fd - g.db[l][i]));
            }
        }
        CHECK(worst <= 1e-4 * (1.0 + scale));
    }
}

TEST_CASE("rotating inputs and first-layer weights leaves singular values unchanged") {
    Rng rng(5);
    TinyNet net({6, 10, 4}, 7);
    const Vector x = gaussian_matrix(6, 1, rng).col(0);
    const Matrix Q = random_orthogonal(6, rng);
    TinyNet rotated = net;
    rotated.weights()[0] = net.weights()[0] * Q.transpose();
    const auto a = svd_spectrum(classifier_jacobian(net, x), kDefaultRankTol, false);
    const auto b = svd_spectrum(classifier_jacobian(rotated, Q * x), kDefaultRankTol, false);
    for (std::size_t i = 0; i < a.singular_values.size(); ++i)
        CHECK(std::abs(a.singular_values[i] - b.singular_values[i]) <= 1e-9);
    CHECK(std::abs(a.cv - b.cv) <= 1e-9);
}

TEST_CASE("training on blobs: accuracy, determinism, and a consistent trace") {
    const auto data = synth_blobs(3, 32, 1000, 8.0, 1);
    const auto probes = make_probe_samples(data, data.filter([](int l) { return l == 0; }), {}, 20, 1);
    TrainConfig cfg;
    cfg.seed = 1;
    const auto a = train(TinyNet({32, 32, 3}, 1), data, cfg, probes);
    const auto b = train(TinyNet({32, 32, 3}, 1), data, cfg, probes);
    CHECK(accuracy(a.net, data) >= 0.95);
    for (std::size_t l = 0; l < a.net.weights().size(); ++l) {
        CHECK(a.net.weights()[l] == b.net.weights()[l]);
        CHECK(a.net.biases()[l] == b.net.biases()[l]);
    }
    CHECK(a.trace.consistent());
    CHECK(cv_trace_to_csv(a.trace) == cv_trace_to_csv(b.trace));
    CHECK(a.epoch_losses.size() == 6);
    // initial + every 10 batches of the first epoch (94 batches) + 5 epoch ends
    CHECK(a.trace.checkpoints == 1 + 9 + 5);
}

TEST_CASE("first-epoch trace separates train-class probes from random noise") {
    const auto all = synth_blobs(5, 32, 1000, 8.0, 1);
    auto train_set = all.filter([](int l) { return l < 3; });
    train_set.num_classes = 3;
    const auto probes = make_probe_samples(train_set, all.filter([](int l) { return l == 3; }),
                                           all.filter([](int l) { return l == 4; }), 50, 1);
    TrainConfig cfg;
    cfg.seed = 1;
    cfg.epochs = 1;
    const auto r = train(TinyNet({32, 128, 64, 3}, 1), train_set, cfg, probes);
    const auto cls = r.trace.mean_cv_by_checkpoint(ProbeCategory::train_class);
    const auto noise = r.trace.mean_cv_by_checkpoint(ProbeCategory::random_noise);
    CHECK(cls.back() > noise.back());
}

TEST_CASE("epoch losses mostly decrease") {
    int transitions = 0, decreases = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto data = synth_blobs(3, 16, 200, 8.0, seed);
        TrainConfig cfg;
        cfg.seed = seed;
        const auto r = train(TinyNet({16, 32, 3}, seed), data, cfg);
        for (std::size_t e = 1; e < r.epoch_losses.size(); ++e, ++transitions)
            decreases += r.epoch_losses[e] <= r.epoch_losses[e - 1];
    }
    CHECK(decreases >= 0.9 * transitions);
}

TEST_CASE("runaway learning rate aborts with a training error") {
    const auto data = synth_blobs(3, 8, 50, 8.0, 1);
    TrainConfig cfg;
    cfg.learning_rate = 1e12;
    CHECK_THROWS_AS(train(TinyNet({8, 16, 3}, 1), data, cfg), TrainingError);
    cfg.learning_rate = -1;
    CHECK_THROWS_AS(train(TinyNet({8, 16, 3}, 1), data, cfg), InputError);
}

TEST_CASE("stratification study statistics") {
    TinyNet net({4, 8, 3}, 3);
    Rng rng(6);
    const Vector x = gaussian_matrix(4, 1, rng).col(0);
    std::vector<ProbeGroup> groups{{"same", std::vector<Vector>(10, x)}, {"empty", {}}};
    const auto r = stratification_study(net, groups, 50);
    REQUIRE(r.groups.size() == 1);
    CHECK(r.groups[0].count == 10);
    for (double cv : r.groups[0].cvs) CHECK(cv == r.groups[0].cvs.front());
    CHECK(r.groups[0].std_cv <= 1e-12);
    CHECK(r.groups[0].median_cv == r.groups[0].cvs.front());
    CHECK(r.warnings.size() == 1);
    CHECK(study_summary_csv(r).rfind("group,samples,mean_cv,median_cv,std_cv\n", 0) == 0);
    CHECK(study_samples_csv(r).rfind("group,sample,cv,sv_1,sv_2,sv_3\n", 0) == 0);
}

TEST_CASE("model json round trip") {
    TinyNet net({3, 5, 2}, 4, Activation::tanh);
    const auto back = net_from_json(to_json(net));
    CHECK(back.layer_dims() == net.layer_dims());
    CHECK(back.hidden_activation() == Activation::tanh);
    const Vector x = Vector::LinSpaced(3, -1, 1);
    CHECK(back.forward(x) == net.forward(x));
    auto j = to_json(net);
    j["layer_dims"] = {3, 4, 2};
    CHECK_THROWS_AS(net_from_json(j), InputError);
}

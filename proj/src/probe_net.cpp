#include <cmath>

#include <nlohmann/json.hpp>

#include "stratum/error.hpp"
#include "stratum/io.hpp"
#include "stratum/probe.hpp"
#include "stratum/random.hpp"

namespace stratum::probe {

TinyNet::TinyNet(std::vector<int> layer_dims, std::uint64_t seed, Activation hidden)
    : dims_(std::move(layer_dims)), hidden_(hidden) {
    if (dims_.size() < 2) throw InputError("network needs at least input and output sizes");
    for (int d : dims_)
        if (d < 1) throw InputError("layer sizes must be positive");
    Rng rng = make_rng(seed, "init");
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
        const double scale = std::sqrt(2.0 / dims_[l]);
        weights_.push_back(scale * gaussian_matrix(dims_[l + 1], dims_[l], rng));
        biases_.push_back(Vector::Zero(dims_[l + 1]));
    }
}

TinyNet::TinyNet(std::vector<Matrix> weights, std::vector<Vector> biases, Activation hidden)
    : weights_(std::move(weights)), biases_(std::move(biases)), hidden_(hidden) {
    if (weights_.empty() || weights_.size() != biases_.size())
        throw InputError("need one bias per weight matrix");
    dims_.push_back(static_cast<int>(weights_.front().cols()));
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        if (weights_[l].cols() != dims_.back() || biases_[l].size() != weights_[l].rows())
            throw InputError("layer " + std::to_string(l) + " has inconsistent shapes");
        dims_.push_back(static_cast<int>(weights_[l].rows()));
    }
}

std::size_t TinyNet::parameter_count() const {
    std::size_t count = 0;
    for (std::size_t l = 0; l < weights_.size(); ++l)
        count += static_cast<std::size_t>(weights_[l].size() + biases_[l].size());
    return count;
}

Vector TinyNet::forward(const Vector& x) const {
    if (x.size() != input_dim()) throw InputError("input has wrong length");
    Vector h = x;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        h = weights_[l] * h + biases_[l];
        if (l + 1 < weights_.size()) h = h.unaryExpr([this](double v) { return activate(hidden_, v); });
    }
    return h;
}

Matrix TinyNet::forward_batch(const Matrix& X) const {
    if (X.cols() != input_dim()) throw InputError("inputs have wrong width");
    Matrix h = X;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        Matrix z = h * weights_[l].transpose();
        z.rowwise() += biases_[l].transpose();
        if (l + 1 < weights_.size())
            h = z.unaryExpr([this](double v) { return activate(hidden_, v); });
        else
            h = std::move(z);
    }
    return h;
}

namespace {

Vector softmax(const Vector& z) {
    Vector e = (z.array() - z.maxCoeff()).exp();
    return e / e.sum();
}

}  // namespace

Matrix classifier_jacobian(const TinyNet& net, const Vector& x, JacobianTarget target) {
    if (x.size() != net.input_dim()) throw InputError("input has wrong length");
    const auto& W = net.weights();
    const auto& b = net.biases();
    const std::size_t L = W.size();
    std::vector<Vector> pre(L);
    Vector h = x;
    for (std::size_t l = 0; l < L; ++l) {
        pre[l] = W[l] * h + b[l];
        if (l + 1 < L) h = pre[l].unaryExpr([&](double v) { return activate(net.hidden_activation(), v); });
    }
    // Reverse accumulation with one seed row per output, carried together.
    Matrix G = W[L - 1];
    for (std::size_t l = L - 1; l-- > 0;) {
        const Vector d = pre[l].unaryExpr(
            [&](double v) { return activate_derivative(net.hidden_activation(), v); });
        G = (G * d.asDiagonal()) * W[l];
    }
    if (target == JacobianTarget::softmax) {
        const Vector p = softmax(pre[L - 1]);
        Matrix S = -p * p.transpose();
        S.diagonal() += p;
        G = S * G;
    }
    return G;
}

LossGradient loss_and_gradient(const TinyNet& net, const Matrix& X, std::span<const int> labels) {
    const auto B = X.rows();
    if (B < 1 || static_cast<Eigen::Index>(labels.size()) != B)
        throw InputError("batch and label counts differ");
    const auto& W = net.weights();
    const auto& bias = net.biases();
    const std::size_t L = W.size();
    const Activation act = net.hidden_activation();

    std::vector<Matrix> inputs(L);  // input to layer l, B x dims[l]
    std::vector<Matrix> pre(L);
    inputs[0] = X;
    for (std::size_t l = 0; l < L; ++l) {
        pre[l] = inputs[l] * W[l].transpose();
        pre[l].rowwise() += bias[l].transpose();
        if (l + 1 < L) inputs[l + 1] = pre[l].unaryExpr([act](double v) { return activate(act, v); });
    }

    LossGradient g;
    Matrix delta = pre[L - 1];  // becomes dLoss/dlogits
    for (Eigen::Index i = 0; i < B; ++i) {
        const int y = labels[i];
        if (y < 0 || y >= delta.cols()) throw InputError("label out of range for network output");
        const double mx = delta.row(i).maxCoeff();
        Eigen::RowVectorXd e = (delta.row(i).array() - mx).exp();
        const double sum = e.sum();
        g.loss += -(pre[L - 1](i, y) - mx - std::log(sum));
        delta.row(i) = e / sum;
        delta(i, y) -= 1.0;
    }
    g.loss /= static_cast<double>(B);
    delta /= static_cast<double>(B);

    g.dW.resize(L);
    g.db.resize(L);
    for (std::size_t l = L; l-- > 0;) {
        g.dW[l] = delta.transpose() * inputs[l];
        g.db[l] = delta.colwise().sum().transpose();
        if (l > 0) {
            Matrix back = delta * W[l];
            const Matrix d = pre[l - 1].unaryExpr([act](double v) { return activate_derivative(act, v); });
            delta = back.cwiseProduct(d);
        }
    }
    return g;
}

double mean_loss(const TinyNet& net, const Dataset& data) {
    const Matrix logits = net.forward_batch(data.inputs);
    double total = 0.0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const double mx = logits.row(i).maxCoeff();
        const double lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
        total += lse - logits(i, data.labels[i]);
    }
    return total / static_cast<double>(logits.rows());
}

double accuracy(const TinyNet& net, const Dataset& data) {
    const Matrix logits = net.forward_batch(data.inputs);
    long correct = 0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        Eigen::Index best;
        logits.row(i).maxCoeff(&best);
        correct += best == data.labels[i];
    }
    return static_cast<double>(correct) / static_cast<double>(logits.rows());
}

nlohmann::json to_json(const TinyNet& net) {
    nlohmann::json weights = nlohmann::json::array(), biases = nlohmann::json::array();
    for (std::size_t l = 0; l < net.weights().size(); ++l) {
        weights.push_back(io::matrix_to_json(net.weights()[l]));
        biases.push_back(io::vector_to_json(net.biases()[l]));
    }
    return {{"layer_dims", net.layer_dims()},
            {"activation", std::string(to_string(net.hidden_activation()))},
            {"weights", std::move(weights)},
            {"biases", std::move(biases)}};
}

TinyNet net_from_json(const nlohmann::json& j) {
    try {
        std::vector<Matrix> W;
        std::vector<Vector> b;
        for (const auto& w : j.at("weights")) W.push_back(io::matrix_from_json(w, "weights"));
        for (const auto& v : j.at("biases")) b.push_back(io::vector_from_json(v, "biases"));
        TinyNet net(std::move(W), std::move(b), parse_activation(j.at("activation").get<std::string>()));
        if (net.layer_dims() != j.at("layer_dims").get<std::vector<int>>())
            throw InputError("layer_dims disagree with the weight shapes");
        return net;
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("invalid model file: ") + e.what());
    }
}

}  // namespace stratum::probe

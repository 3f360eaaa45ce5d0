#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "stratum/dynsys.hpp"

namespace stratum::probe {

struct Dataset {
    Matrix inputs;            // N x d, values in [0, 1]
    std::vector<int> labels;  // N entries in [0, num_classes)
    int num_classes = 0;

    Eigen::Index size() const noexcept { return inputs.rows(); }
    Eigen::Index dim() const noexcept { return inputs.cols(); }
    void validate() const;
    /// Rows whose label passes `keep`, in original order.
    template <class Pred>
    Dataset filter(Pred keep) const;
};

/// Reads an IDX image/label pair (big-endian, magics 0x00000803 and
/// 0x00000801). Pixels are scaled by 1/255; at most max_items are kept,
/// in file order (max_items <= 0 keeps all).
Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path, long max_items = 0);

/// Gaussian clusters (sigma 1) centred on a regular simplex with pairwise
/// centre distance `separation`, then shifted and scaled by one global
/// affine map into [0, 1]. Labels cycle 0..C-1.
Dataset synth_blobs(int num_classes, int dim, int per_class, double separation,
                    std::uint64_t seed);

enum class JacobianTarget { logits, softmax };
JacobianTarget parse_jacobian_target(std::string_view s);

/// Fully connected network with `hidden` activation between layers and raw
/// logits at the output.
class TinyNet {
public:
    /// He-normal weights, zero biases.
    TinyNet(std::vector<int> layer_dims, std::uint64_t seed,
            Activation hidden = Activation::relu);
    TinyNet(std::vector<Matrix> weights, std::vector<Vector> biases,
            Activation hidden = Activation::relu);

    const std::vector<int>& layer_dims() const noexcept { return dims_; }
    int input_dim() const noexcept { return dims_.front(); }
    int output_dim() const noexcept { return dims_.back(); }
    Activation hidden_activation() const noexcept { return hidden_; }
    std::size_t parameter_count() const;

    std::vector<Matrix>& weights() noexcept { return weights_; }  // out x in
    std::vector<Vector>& biases() noexcept { return biases_; }
    const std::vector<Matrix>& weights() const noexcept { return weights_; }
    const std::vector<Vector>& biases() const noexcept { return biases_; }

    Vector forward(const Vector& x) const;
    /// Logits for each row of X.
    Matrix forward_batch(const Matrix& X) const;

private:
    std::vector<int> dims_;
    std::vector<Matrix> weights_;
    std::vector<Vector> biases_;
    Activation hidden_;
};

/// Reverse-mode Jacobian of the logits (or of softmax(logits)) with respect
/// to the input, C x d.
Matrix classifier_jacobian(const TinyNet& net, const Vector& x,
                           JacobianTarget target = JacobianTarget::logits);

struct LossGradient {
    double loss = 0.0;
    std::vector<Matrix> dW;
    std::vector<Vector> db;
};

/// Mean softmax cross-entropy over the rows of X and its exact gradient
/// (no weight decay term).
LossGradient loss_and_gradient(const TinyNet& net, const Matrix& X, std::span<const int> labels);
double mean_loss(const TinyNet& net, const Dataset& data);
double accuracy(const TinyNet& net, const Dataset& data);

struct TrainConfig {
    double learning_rate = 0.01;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    int batch_size = 32;
    int epochs = 5;
    std::uint64_t seed = 0;

    void validate() const;
};

enum class ProbeCategory { train_class, held_out_class, natural_noise, random_noise };
std::string_view to_string(ProbeCategory c);

struct ProbeSample {
    int id = 0;
    ProbeCategory category = ProbeCategory::train_class;
    Vector x;
};

/// Checkpoints every `first_epoch_every` batches during the first epoch
/// (plus one before any update), then at the end of every epoch.
struct CheckpointSchedule {
    int first_epoch_every = 10;
    bool per_epoch = true;
};

struct CvRecord {
    int checkpoint = 0;
    long batch_index = 0;  // global number of batches applied so far
    int epoch = 0;         // 0-based epoch the checkpoint falls in
    int sample_id = 0;
    ProbeCategory category = ProbeCategory::train_class;
    double cv = 0.0;
    std::vector<double> singular_values;  // all of them, descending
};

struct CvTrace {
    std::vector<CvRecord> records;
    int checkpoints = 0;

    /// cv recomputed from the stored singular values matches within 1e-12.
    bool consistent() const;
    /// Mean CV per checkpoint over records of one category.
    std::vector<double> mean_cv_by_checkpoint(ProbeCategory c) const;
};

struct TrainResult {
    TinyNet net;
    CvTrace trace;
    std::vector<double> epoch_losses;  // full-data mean loss before training and after each epoch
};

/// Minibatch SGD with momentum and L2 weight decay on the mean cross-entropy.
/// The shuffle order is derived from cfg.seed. Throws TrainingError on a
/// non-finite loss.
TrainResult train(TinyNet net, const Dataset& data, const TrainConfig& cfg,
                  const std::vector<ProbeSample>& probes = {},
                  const CheckpointSchedule& schedule = {},
                  JacobianTarget target = JacobianTarget::logits, int workers = 1);

struct ProbeGroup {
    std::string name;
    std::vector<Vector> samples;
};

struct GroupStats {
    std::string name;
    int count = 0;
    double mean_cv = 0.0;
    double median_cv = 0.0;
    double std_cv = 0.0;
    std::vector<double> cvs;
    std::vector<std::vector<double>> singular_values;
};

struct StudyResult {
    std::vector<GroupStats> groups;
    std::vector<std::string> warnings;  // skipped empty groups
};

/// Per-group CV statistics of the Jacobian singular values over the first
/// samples_per_group samples of each group.
StudyResult stratification_study(const TinyNet& net, const std::vector<ProbeGroup>& groups,
                                 int samples_per_group = 50,
                                 JacobianTarget target = JacobianTarget::logits, int workers = 1);

/// `checkpoint,sample_id,category,cv,sv_1,sv_2,sv_3,sv_4`
std::string cv_trace_to_csv(const CvTrace& trace);
/// `group,samples,mean_cv,median_cv,std_cv`
std::string study_summary_csv(const StudyResult& r);
/// `group,sample,cv,sv_1,...`
std::string study_samples_csv(const StudyResult& r);

nlohmann::json to_json(const TinyNet& net);
TinyNet net_from_json(const nlohmann::json& j);

/// Probe samples for a trained-class / held-out / noise study: the first
/// `per_group` rows of each labelled pool, then `per_group` uniform [0,1]^d
/// random inputs drawn from (seed, "probe-noise").
std::vector<ProbeSample> make_probe_samples(const Dataset& train_pool, const Dataset& held_out,
                                            const Dataset& natural_noise, int per_group,
                                            std::uint64_t seed);

template <class Pred>
Dataset Dataset::filter(Pred keep) const {
    std::vector<Eigen::Index> rows;
    for (Eigen::Index i = 0; i < size(); ++i)
        if (keep(labels[i])) rows.push_back(i);
    Dataset out;
    out.num_classes = num_classes;
    out.inputs.resize(static_cast<Eigen::Index>(rows.size()), dim());
    out.labels.reserve(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        out.inputs.row(static_cast<Eigen::Index>(r)) = inputs.row(rows[r]);
        out.labels.push_back(labels[rows[r]]);
    }
    return out;
}

}  // namespace stratum::probe

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "stratum/error.hpp"
#include "stratum/io.hpp"
#include "stratum/parallel.hpp"
#include "stratum/probe.hpp"
#include "stratum/random.hpp"
#include "stratum/spectral.hpp"

namespace stratum::probe {

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw InputError("learning rate must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw InputError("momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw InputError("weight decay must be non-negative");
    if (batch_size < 1 || epochs < 1) throw InputError("batch size and epochs must be positive");
}

namespace {

std::vector<double> jacobian_singular_values(const TinyNet& net, const Vector& x,
                                             JacobianTarget target) {
    return svd_spectrum(classifier_jacobian(net, x, target), kDefaultRankTol, false).singular_values;
}

double cv_or_zero(const std::vector<double>& s) {
    return !s.empty() && s.front() > 0.0 ? cv_metric(s) : 0.0;
}

}  // namespace

bool CvTrace::consistent() const {
    return std::all_of(records.begin(), records.end(), [](const CvRecord& r) {
        return std::abs(cv_or_zero(r.singular_values) - r.cv) <= 1e-12;
    });
}

std::vector<double> CvTrace::mean_cv_by_checkpoint(ProbeCategory c) const {
    std::vector<double> sum(checkpoints, 0.0);
    std::vector<int> count(checkpoints, 0);
    for (const auto& r : records) {
        if (r.category != c) continue;
        sum[r.checkpoint] += r.cv;
        ++count[r.checkpoint];
    }
    std::vector<double> out;
    for (int k = 0; k < checkpoints; ++k)
        if (count[k]) out.push_back(sum[k] / count[k]);
    return out;
}

TrainResult train(TinyNet net, const Dataset& data, const TrainConfig& cfg,
                  const std::vector<ProbeSample>& probes, const CheckpointSchedule& schedule,
                  JacobianTarget target, int workers) {
    cfg.validate();
    data.validate();
    if (data.dim() != net.input_dim()) throw InputError("dataset width does not match the network");
    for (int l : data.labels)
        if (l >= net.output_dim()) throw InputError("label exceeds the network's class count");

    TrainResult result{std::move(net), {}, {}};
    TinyNet& model = result.net;
    auto& W = model.weights();
    auto& b = model.biases();
    std::vector<Matrix> vW;
    std::vector<Vector> vb;
    for (std::size_t l = 0; l < W.size(); ++l) {
        vW.push_back(Matrix::Zero(W[l].rows(), W[l].cols()));
        vb.push_back(Vector::Zero(b[l].size()));
    }

    long batches_done = 0;
    auto checkpoint = [&](int epoch) {
        const int k = result.trace.checkpoints++;
        std::vector<CvRecord> recs(probes.size());
        parallel_for(probes.size(), workers, [&](std::size_t i) {
            auto& r = recs[i];
            r.checkpoint = k;
            r.batch_index = batches_done;
            r.epoch = epoch;
            r.sample_id = probes[i].id;
            r.category = probes[i].category;
            r.singular_values = jacobian_singular_values(model, probes[i].x, target);
            r.cv = cv_or_zero(r.singular_values);
        });
        for (auto& r : recs) result.trace.records.push_back(std::move(r));
    };

    auto check_loss = [&](double loss, const std::string& where) {
        if (!std::isfinite(loss))
            throw TrainingError("non-finite loss " + where + " (learning rate " +
                                io::format_double(cfg.learning_rate) + " too high?)");
    };

    result.epoch_losses.push_back(mean_loss(model, data));
    check_loss(result.epoch_losses.back(), "before training");
    if (!probes.empty()) checkpoint(0);

    Rng shuffle_rng = make_rng(cfg.seed, "shuffle");
    std::vector<Eigen::Index> order(data.size());
    const auto N = data.size();
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), Eigen::Index{0});
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        for (Eigen::Index start = 0; start < N; start += cfg.batch_size) {
            const auto B = std::min<Eigen::Index>(cfg.batch_size, N - start);
            Matrix X(B, data.dim());
            std::vector<int> y(B);
            for (Eigen::Index i = 0; i < B; ++i) {
                X.row(i) = data.inputs.row(order[start + i]);
                y[i] = data.labels[order[start + i]];
            }
            const LossGradient g = loss_and_gradient(model, X, y);
            check_loss(g.loss, "at batch " + std::to_string(batches_done));
            for (std::size_t l = 0; l < W.size(); ++l) {
                vW[l] = cfg.momentum * vW[l] + g.dW[l] + cfg.weight_decay * W[l];
                vb[l] = cfg.momentum * vb[l] + g.db[l] + cfg.weight_decay * b[l];
                W[l] -= cfg.learning_rate * vW[l];
                b[l] -= cfg.learning_rate * vb[l];
            }
            ++batches_done;
            if (!probes.empty() && epoch == 0 && schedule.first_epoch_every > 0 &&
                batches_done % schedule.first_epoch_every == 0 && start + B < N)
                checkpoint(epoch);
        }
        result.epoch_losses.push_back(mean_loss(model, data));
        check_loss(result.epoch_losses.back(), "after epoch " + std::to_string(epoch + 1));
        if (!probes.empty() && (schedule.per_epoch || epoch + 1 == cfg.epochs)) checkpoint(epoch);
    }
    return result;
}

StudyResult stratification_study(const TinyNet& net, const std::vector<ProbeGroup>& groups,
                                 int samples_per_group, JacobianTarget target, int workers) {
    if (samples_per_group < 1) throw InputError("samples_per_group must be positive");
    StudyResult out;
    for (const auto& group : groups) {
        if (group.samples.empty()) {
            out.warnings.push_back("group '" + group.name + "' is empty; skipped");
            continue;
        }
        GroupStats st;
        st.name = group.name;
        st.count = static_cast<int>(std::min<std::size_t>(group.samples.size(), samples_per_group));
        st.singular_values.resize(st.count);
        parallel_for(st.count, workers, [&](std::size_t i) {
            st.singular_values[i] = jacobian_singular_values(net, group.samples[i], target);
        });
        for (const auto& s : st.singular_values) st.cvs.push_back(cv_or_zero(s));
        const double n = st.count;
        st.mean_cv = std::accumulate(st.cvs.begin(), st.cvs.end(), 0.0) / n;
        double var = 0.0;
        for (double c : st.cvs) var += (c - st.mean_cv) * (c - st.mean_cv);
        st.std_cv = std::sqrt(var / n);
        std::vector<double> sorted = st.cvs;
        std::sort(sorted.begin(), sorted.end());
        st.median_cv = st.count % 2 ? sorted[st.count / 2]
                                    : 0.5 * (sorted[st.count / 2 - 1] + sorted[st.count / 2]);
        out.groups.push_back(std::move(st));
    }
    return out;
}

std::string cv_trace_to_csv(const CvTrace& trace) {
    std::ostringstream out;
    out << "checkpoint,sample_id,category,cv,sv_1,sv_2,sv_3,sv_4\n";
    for (const auto& r : trace.records) {
        out << r.checkpoint << ',' << r.sample_id << ',' << to_string(r.category) << ','
            << io::format_double(r.cv);
        for (std::size_t k = 0; k < 4; ++k) {
            out << ',';
            if (k < r.singular_values.size()) out << io::format_double(r.singular_values[k]);
        }
        out << '\n';
    }
    return out.str();
}

std::string study_summary_csv(const StudyResult& r) {
    std::ostringstream out;
    out << "group,samples,mean_cv,median_cv,std_cv\n";
    for (const auto& g : r.groups)
        out << g.name << ',' << g.count << ',' << io::format_double(g.mean_cv) << ','
            << io::format_double(g.median_cv) << ',' << io::format_double(g.std_cv) << '\n';
    return out.str();
}

std::string study_samples_csv(const StudyResult& r) {
    std::size_t width = 0;
    for (const auto& g : r.groups)
        for (const auto& s : g.singular_values) width = std::max(width, s.size());
    std::ostringstream out;
    out << "group,sample,cv";
    for (std::size_t k = 0; k < width; ++k) out << ",sv_" << (k + 1);
    out << '\n';
    for (const auto& g : r.groups) {
        for (int i = 0; i < g.count; ++i) {
            out << g.name << ',' << i << ',' << io::format_double(g.cvs[i]);
            for (std::size_t k = 0; k < width; ++k) {
                out << ',';
                if (k < g.singular_values[i].size()) out << io::format_double(g.singular_values[i][k]);
            }
            out << '\n';
        }
    }
    return out.str();
}

}  // namespace stratum::probe

#include "evsae/probe.hpp"

#include <algorithm>
#include <numeric>

namespace evsae {

namespace {

struct LogisticModel {
    Eigen::VectorXd w;
    double b = 0.0;
};

// full-batch gradient descent on the regularized cross-entropy; the bias is
// not penalized
LogisticModel fit_logistic(const Eigen::MatrixXd& X, const std::vector<int>& y,
                           const LogisticConfig& cfg) {
    const int64_t n = X.rows(), p = X.cols();
    LogisticModel model;
    model.w = Eigen::VectorXd::Zero(p);

    Eigen::VectorXd target(n);
    for (int64_t i = 0; i < n; ++i) target(i) = y[static_cast<size_t>(i)] ? 1.0 : 0.0;

    for (int iter = 0; iter < cfg.iterations; ++iter) {
        Eigen::VectorXd logits = X * model.w;
        logits.array() += model.b;
        const Eigen::VectorXd prob = 1.0 / (1.0 + (-logits.array()).exp());
        const Eigen::VectorXd err = prob - target;
        const Eigen::VectorXd gw =
            (X.transpose() * err) / static_cast<double>(n) + cfg.l2_strength / static_cast<double>(n) * model.w;
        const double gb = err.sum() / static_cast<double>(n);
        model.w -= cfg.learning_rate * gw;
        model.b -= cfg.learning_rate * gb;
    }
    return model;
}

double balanced_accuracy(const LogisticModel& model, const Eigen::MatrixXd& X,
                         const std::vector<int>& y) {
    int64_t tp = 0, tn = 0, np = 0, nn = 0;
    for (int64_t i = 0; i < X.rows(); ++i) {
        const double logit = X.row(i).dot(model.w) + model.b;
        const int pred = logit > 0.0 ? 1 : 0;
        if (y[static_cast<size_t>(i)] == 1) {
            ++np;
            if (pred == 1) ++tp;
        } else {
            ++nn;
            if (pred == 0) ++tn;
        }
    }
    const double tpr = np > 0 ? static_cast<double>(tp) / static_cast<double>(np) : 0.0;
    const double tnr = nn > 0 ? static_cast<double>(tn) / static_cast<double>(nn) : 0.0;
    return 0.5 * (tpr + tnr);
}

}  // namespace

double balanced_accuracy_cv(const Eigen::MatrixXd& X, const std::vector<int>& y, int folds,
                            uint64_t seed, const LogisticConfig& config) {
    const int64_t n = X.rows();
    if (n != static_cast<int64_t>(y.size())) throw ShapeMismatch("balanced_accuracy_cv: X/y mismatch");
    if (folds < 2) throw InvalidConfig("balanced_accuracy_cv: need at least 2 folds");

    std::vector<int64_t> pos, neg;
    for (int64_t i = 0; i < n; ++i) (y[static_cast<size_t>(i)] ? pos : neg).push_back(i);
    if (static_cast<int>(pos.size()) < folds || static_cast<int>(neg.size()) < folds)
        throw DegenerateClassSplit("stratified " + std::to_string(folds) +
                                   "-fold split needs >= " + std::to_string(folds) +
                                   " examples per class (have " + std::to_string(pos.size()) +
                                   " positive, " + std::to_string(neg.size()) + " negative)");

    // stratified assignment: shuffle within class, deal round-robin
    Rng rng(seed);
    rng.shuffle(pos);
    rng.shuffle(neg);
    std::vector<int> fold_of(static_cast<size_t>(n), 0);
    for (size_t i = 0; i < pos.size(); ++i) fold_of[static_cast<size_t>(pos[i])] = static_cast<int>(i % folds);
    for (size_t i = 0; i < neg.size(); ++i) fold_of[static_cast<size_t>(neg[i])] = static_cast<int>(i % folds);

    double acc_sum = 0.0;
    for (int fold = 0; fold < folds; ++fold) {
        std::vector<int64_t> train_idx, test_idx;
        for (int64_t i = 0; i < n; ++i)
            (fold_of[static_cast<size_t>(i)] == fold ? test_idx : train_idx).push_back(i);

        // standardize with train-fold statistics
        Eigen::MatrixXd Xtr(train_idx.size(), X.cols()), Xte(test_idx.size(), X.cols());
        std::vector<int> ytr, yte;
        for (size_t i = 0; i < train_idx.size(); ++i) {
            Xtr.row(static_cast<int64_t>(i)) = X.row(train_idx[i]);
            ytr.push_back(y[static_cast<size_t>(train_idx[i])]);
        }
        for (size_t i = 0; i < test_idx.size(); ++i) {
            Xte.row(static_cast<int64_t>(i)) = X.row(test_idx[i]);
            yte.push_back(y[static_cast<size_t>(test_idx[i])]);
        }
        const Eigen::RowVectorXd mean = Xtr.colwise().mean();
        Eigen::RowVectorXd stddev =
            ((Xtr.rowwise() - mean).array().square().colwise().mean()).sqrt();
        for (Eigen::Index c = 0; c < stddev.size(); ++c)
            if (stddev(c) == 0.0) stddev(c) = 1.0;
        Xtr = (Xtr.rowwise() - mean).array().rowwise() / stddev.array();
        Xte = (Xte.rowwise() - mean).array().rowwise() / stddev.array();

        const LogisticModel model = fit_logistic(Xtr, ytr, config);
        acc_sum += balanced_accuracy(model, Xte, yte);
    }
    return acc_sum / static_cast<double>(folds);
}

ProbeResult success_probe(const RolloutSet& set, const SaeParams& params, int layer, int folds,
                          uint64_t seed, const LogisticConfig& config) {
    const int64_t n = static_cast<int64_t>(set.rollouts.size());
    if (n < 4) throw DegenerateClassSplit("success_probe: too few episodes");

    std::vector<int> labels;
    int n_success = 0;
    for (const auto& r : set.rollouts) {
        labels.push_back(r.success ? 1 : 0);
        n_success += r.success ? 1 : 0;
    }
    if (n_success < 2 || n - n_success < 2)
        throw DegenerateClassSplit("success_probe: need >= 2 episodes per class, have " +
                                   std::to_string(n_success) + " successes of " + std::to_string(n));

    // mean-pooled SAE codes and raw hidden states per rollout
    const SuiteCodes codes = compute_suite_codes(params, set, layer);
    Eigen::MatrixXd X_codes(n, params.m());
    Eigen::MatrixXd X_raw(n, params.d());
    std::map<std::string, int> task_index;
    for (const auto& t : set.manifest.tasks)
        task_index.emplace(t.task_id, static_cast<int>(task_index.size()));
    Eigen::MatrixXd X_task = Eigen::MatrixXd::Zero(n, static_cast<int64_t>(task_index.size()));

    for (int64_t i = 0; i < n; ++i) {
        const Rollout& r = set.rollouts[static_cast<size_t>(i)];
        X_codes.row(i) = codes.by_episode.at(r.episode_id).colwise().mean();
        X_raw.row(i) = r.activations.at(layer).cast<double>().colwise().mean();
        X_task(i, task_index.at(r.task_id)) = 1.0;
    }

    std::vector<int> shuffled = labels;
    Rng rng(seed ^ 0x5AFEB00Full);
    rng.shuffle(shuffled);

    ProbeResult result;
    result.folds = folds;
    result.seed = seed;
    result.balanced_accuracy["sae_codes"] = balanced_accuracy_cv(X_codes, labels, folds, seed, config);
    result.balanced_accuracy["raw_hidden"] = balanced_accuracy_cv(X_raw, labels, folds, seed, config);
    result.balanced_accuracy["task_id_only"] = balanced_accuracy_cv(X_task, labels, folds, seed, config);
    result.balanced_accuracy["shuffled_labels"] =
        balanced_accuracy_cv(X_codes, shuffled, folds, seed, config);
    return result;
}

}  // namespace evsae

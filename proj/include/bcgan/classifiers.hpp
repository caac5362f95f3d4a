#pragma once

// Downstream learning algorithms used both as the evaluation roster and as
// the pre-trained classifier set: CART decision tree, random forest, linear
// SVM (l1/l2), and an MLP classifier. Every trainer is deterministic given
// (data, config, seed).

#include <bcgan/data.hpp>
#include <bcgan/mmd.hpp>
#include <bcgan/nn.hpp>
#include <bcgan/rng.hpp>

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace bcgan {

class Classifier {
public:
    virtual ~Classifier() = default;

    virtual Tensor posterior(const Tensor& X) const = 0;
    virtual std::size_t n_classes() const = 0;
    virtual std::string kind() const = 0;
    virtual json to_json() const = 0;

    /// Argmax of the posterior; ties resolve to the lowest class id.
    std::vector<int> predict(const Tensor& X) const {
        const Tensor p = posterior(X);
        std::vector<int> out(p.rows());
        for (std::size_t r = 0; r < p.rows(); ++r) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < p.cols(); ++c)
                if (p.at(r, c) > p.at(r, best)) best = c;
            out[r] = static_cast<int>(best);
        }
        return out;
    }

    virtual bool has_importances() const { return false; }
    virtual std::vector<double> importances() const {
        throw std::logic_error(kind() + " exposes no feature importances");
    }
};

inline double accuracy(const Classifier& c, const Dataset& test) {
    const auto pred = c.predict(test.features);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hit += (pred[i] == test.labels[i]);
    return test.size() == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(test.size());
}

// ---- decision tree ---------------------------------------------------------------

struct TreeNode {
    int feature = -1; // -1 marks a leaf
    double threshold = 0.0;
    int left = -1, right = -1;
    std::vector<double> counts; // leaf class counts
};

class DecisionTree : public Classifier {
public:
    DecisionTree() = default;
    DecisionTree(std::vector<TreeNode> nodes, std::size_t n_classes, std::vector<double> importances)
        : nodes_(std::move(nodes)), n_classes_(n_classes), importances_(std::move(importances)) {}

    Tensor posterior(const Tensor& X) const override {
        Tensor out = Tensor::zeros(X.rows(), n_classes_);
        for (std::size_t r = 0; r < X.rows(); ++r) {
            const TreeNode& leaf = descend(X, r);
            double total = 0.0;
            for (double c : leaf.counts) total += c;
            for (std::size_t k = 0; k < n_classes_; ++k) out.at(r, k) = leaf.counts[k] / total;
        }
        return out;
    }

    std::size_t n_classes() const override { return n_classes_; }
    std::string kind() const override { return "decision_tree"; }
    bool has_importances() const override { return true; }
    std::vector<double> importances() const override { return importances_; }

    std::size_t depth() const { return depth_of(0); }
    const std::vector<TreeNode>& nodes() const { return nodes_; }

    json to_json() const override {
        json jn = json::array();
        for (const auto& n : nodes_) {
            json e;
            e["feature"] = n.feature;
            e["threshold"] = double_to_hex(n.threshold);
            e["left"] = n.left;
            e["right"] = n.right;
            json cnt = json::array();
            for (double c : n.counts) cnt.push_back(double_to_hex(c));
            e["counts"] = std::move(cnt);
            jn.push_back(std::move(e));
        }
        json imp = json::array();
        for (double v : importances_) imp.push_back(double_to_hex(v));
        return json{{"kind", "decision_tree"}, {"n_classes", n_classes_},
                    {"nodes", std::move(jn)}, {"importances", std::move(imp)}};
    }

    static DecisionTree from_json(const json& j) {
        std::vector<TreeNode> nodes;
        for (const auto& e : j.at("nodes")) {
            TreeNode n;
            n.feature = e.at("feature").get<int>();
            n.threshold = hex_to_double(e.at("threshold").get<std::string>());
            n.left = e.at("left").get<int>();
            n.right = e.at("right").get<int>();
            for (const auto& c : e.at("counts")) n.counts.push_back(hex_to_double(c.get<std::string>()));
            nodes.push_back(std::move(n));
        }
        std::vector<double> imp;
        for (const auto& v : j.at("importances")) imp.push_back(hex_to_double(v.get<std::string>()));
        return DecisionTree(std::move(nodes), j.at("n_classes").get<std::size_t>(), std::move(imp));
    }

private:
    const TreeNode& descend(const Tensor& X, std::size_t r) const {
        int id = 0;
        while (nodes_[static_cast<std::size_t>(id)].feature >= 0) {
            const TreeNode& n = nodes_[static_cast<std::size_t>(id)];
            id = X.at(r, static_cast<std::size_t>(n.feature)) <= n.threshold ? n.left : n.right;
        }
        return nodes_[static_cast<std::size_t>(id)];
    }

    std::size_t depth_of(int id) const {
        const TreeNode& n = nodes_[static_cast<std::size_t>(id)];
        if (n.feature < 0) return 0;
        return 1 + std::max(depth_of(n.left), depth_of(n.right));
    }

    std::vector<TreeNode> nodes_;
    std::size_t n_classes_ = 0;
    std::vector<double> importances_;
};

namespace detail {

inline double gini(const std::vector<double>& counts, double total) {
    if (total <= 0.0) return 0.0;
    double s = 0.0;
    for (double c : counts) {
        const double p = c / total;
        s += p * p;
    }
    return 1.0 - s;
}

struct TreeBuilder {
    const Dataset& data;
    std::size_t n_classes;
    std::size_t max_depth;
    std::size_t mtry; // features examined per split; 0 means all
    Rng* rng;         // only consulted when mtry > 0
    double n_total;
    std::vector<TreeNode> nodes;
    std::vector<double> importances;

    TreeBuilder(const Dataset& d, std::size_t depth, std::size_t mtry_, Rng* r)
        : data(d), n_classes(d.n_classes()), max_depth(depth), mtry(mtry_), rng(r),
          n_total(0.0), importances(d.feature_dim(), 0.0) {}

    int build(std::vector<std::size_t>& rows, std::size_t depth) {
        std::vector<double> counts(n_classes, 0.0);
        for (std::size_t r : rows) counts[static_cast<std::size_t>(data.labels[r])] += 1.0;
        const double total = static_cast<double>(rows.size());
        const double node_gini = gini(counts, total);

        bool split_found = false;
        std::size_t best_feature = 0;
        double best_threshold = 0.0, best_impurity = 0.0;
        if (depth < max_depth && node_gini > 0.0 && rows.size() >= 2) {
            std::vector<std::size_t> features(data.feature_dim());
            std::iota(features.begin(), features.end(), std::size_t{0});
            if (mtry > 0 && mtry < features.size()) {
                // draw mtry distinct features, then scan in index order for
                // deterministic tie-breaking
                std::vector<std::size_t> chosen;
                std::vector<std::size_t> pool = features;
                for (std::size_t k = 0; k < mtry; ++k) {
                    const std::size_t pick = rng->uniform_index(pool.size());
                    chosen.push_back(pool[pick]);
                    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
                }
                std::sort(chosen.begin(), chosen.end());
                features = std::move(chosen);
            }
            for (std::size_t f : features) {
                std::vector<std::pair<double, int>> vals;
                vals.reserve(rows.size());
                for (std::size_t r : rows) vals.emplace_back(data.features.at(r, f), data.labels[r]);
                std::sort(vals.begin(), vals.end());
                std::vector<double> left(n_classes, 0.0);
                std::vector<double> right = counts;
                for (std::size_t i = 0; i + 1 < vals.size(); ++i) {
                    left[static_cast<std::size_t>(vals[i].second)] += 1.0;
                    right[static_cast<std::size_t>(vals[i].second)] -= 1.0;
                    if (vals[i].first == vals[i + 1].first) continue;
                    const double nl = static_cast<double>(i + 1);
                    const double nr = total - nl;
                    const double impurity = (nl * gini(left, nl) + nr * gini(right, nr)) / total;
                    if (!split_found || impurity < best_impurity) {
                        split_found = true;
                        best_impurity = impurity;
                        best_feature = f;
                        best_threshold = vals[i].first + 0.5 * (vals[i + 1].first - vals[i].first);
                    }
                }
            }
        }

        const int id = static_cast<int>(nodes.size());
        nodes.emplace_back();
        if (!split_found) {
            nodes[static_cast<std::size_t>(id)].counts = std::move(counts);
            return id;
        }

        importances[best_feature] += (total / n_total) * (node_gini - best_impurity);
        std::vector<std::size_t> lrows, rrows;
        for (std::size_t r : rows)
            (data.features.at(r, best_feature) <= best_threshold ? lrows : rrows).push_back(r);
        nodes[static_cast<std::size_t>(id)].feature = static_cast<int>(best_feature);
        nodes[static_cast<std::size_t>(id)].threshold = best_threshold;
        const int l = build(lrows, depth + 1);
        nodes[static_cast<std::size_t>(id)].left = l;
        const int r = build(rrows, depth + 1);
        nodes[static_cast<std::size_t>(id)].right = r;
        return id;
    }
};

inline DecisionTree train_tree_on_rows(const Dataset& data, std::vector<std::size_t> rows,
                                       std::size_t max_depth, std::size_t mtry, Rng* rng) {
    TreeBuilder b(data, max_depth, mtry, rng);
    b.n_total = static_cast<double>(rows.size());
    b.build(rows, 0);
    double s = 0.0;
    for (double v : b.importances) s += v;
    if (s > 0.0)
        for (double& v : b.importances) v /= s;
    return DecisionTree(std::move(b.nodes), b.n_classes, std::move(b.importances));
}

} // namespace detail

/// CART with Gini impurity; thresholds at midpoints of consecutive distinct
/// values; equal-impurity ties go to the lowest feature index, then the lowest
/// threshold.
inline DecisionTree train_decision_tree(const Dataset& data, std::size_t max_depth,
                                        std::uint64_t seed = 0) {
    if (data.size() == 0) throw std::invalid_argument("train_decision_tree: empty dataset");
    if (max_depth < 1) throw std::invalid_argument("train_decision_tree: max_depth must be >= 1");
    (void)seed; // deterministic without randomness; kept for interface uniformity
    std::vector<std::size_t> rows(data.size());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    return detail::train_tree_on_rows(data, std::move(rows), max_depth, 0, nullptr);
}

// ---- random forest ----------------------------------------------------------------

class RandomForest : public Classifier {
public:
    RandomForest() = default;
    RandomForest(std::vector<DecisionTree> trees, std::size_t n_classes, std::vector<double> imp)
        : trees_(std::move(trees)), n_classes_(n_classes), importances_(std::move(imp)) {}

    Tensor posterior(const Tensor& X) const override {
        Tensor out = Tensor::zeros(X.rows(), n_classes_);
        for (const auto& t : trees_) {
            const Tensor p = t.posterior(X);
            for (std::size_t i = 0; i < out.numel(); ++i) out.values[i] += p.values[i];
        }
        for (double& v : out.values) v /= static_cast<double>(trees_.size());
        return out;
    }

    std::size_t n_classes() const override { return n_classes_; }
    std::string kind() const override { return "random_forest"; }
    bool has_importances() const override { return true; }
    std::vector<double> importances() const override { return importances_; }
    const std::vector<DecisionTree>& trees() const { return trees_; }

    json to_json() const override {
        json jt = json::array();
        for (const auto& t : trees_) jt.push_back(t.to_json());
        json imp = json::array();
        for (double v : importances_) imp.push_back(double_to_hex(v));
        return json{{"kind", "random_forest"}, {"n_classes", n_classes_},
                    {"trees", std::move(jt)}, {"importances", std::move(imp)}};
    }

    static RandomForest from_json(const json& j) {
        std::vector<DecisionTree> trees;
        for (const auto& t : j.at("trees")) trees.push_back(DecisionTree::from_json(t));
        std::vector<double> imp;
        for (const auto& v : j.at("importances")) imp.push_back(hex_to_double(v.get<std::string>()));
        return RandomForest(std::move(trees), j.at("n_classes").get<std::size_t>(), std::move(imp));
    }

private:
    std::vector<DecisionTree> trees_;
    std::size_t n_classes_ = 0;
    std::vector<double> importances_;
};

struct ForestConfig {
    std::size_t n_trees = 10;
    std::size_t max_depth = 10;
    bool bootstrap = true;
    bool feature_subset = true; // sqrt(d) features per split
};

inline RandomForest train_random_forest(const Dataset& data, const ForestConfig& cfg,
                                        std::uint64_t seed) {
    if (data.size() == 0) throw std::invalid_argument("train_random_forest: empty dataset");
    if (cfg.n_trees < 1) throw std::invalid_argument("train_random_forest: n_trees must be >= 1");
    Rng base(seed);
    const std::size_t d = data.feature_dim();
    const std::size_t mtry =
        cfg.feature_subset ? std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(double(d)))) : 0;
    std::vector<DecisionTree> trees;
    std::vector<double> importances(d, 0.0);
    for (std::size_t t = 0; t < cfg.n_trees; ++t) {
        Rng rng = base.fork(t);
        std::vector<std::size_t> rows;
        if (cfg.bootstrap) {
            rows.reserve(data.size());
            for (std::size_t i = 0; i < data.size(); ++i) rows.push_back(rng.uniform_index(data.size()));
        } else {
            rows.resize(data.size());
            std::iota(rows.begin(), rows.end(), std::size_t{0});
        }
        DecisionTree tree = detail::train_tree_on_rows(data, std::move(rows), cfg.max_depth, mtry, &rng);
        const auto imp = tree.importances();
        for (std::size_t k = 0; k < d; ++k) importances[k] += imp[k];
        trees.push_back(std::move(tree));
    }
    double s = 0.0;
    for (double v : importances) s += v;
    if (s > 0.0)
        for (double& v : importances) v /= s;
    return RandomForest(std::move(trees), data.n_classes(), std::move(importances));
}

inline RandomForest train_random_forest(const Dataset& data, std::size_t n_trees,
                                        std::size_t max_depth, std::uint64_t seed) {
    ForestConfig cfg;
    cfg.n_trees = n_trees;
    cfg.max_depth = max_depth;
    return train_random_forest(data, cfg, seed);
}

// ---- linear SVM --------------------------------------------------------------------

enum class SvmPenalty { l1, l2 };

class LinearSvm : public Classifier {
public:
    LinearSvm() = default;
    LinearSvm(Tensor weights, Tensor biases, SvmPenalty penalty)
        : weights_(std::move(weights)), biases_(std::move(biases)), penalty_(penalty) {}

    /// Decision values, n x K.
    Tensor decision(const Tensor& X) const {
        Graph g;
        return g.value(g.add_rowvec(g.matmul(g.constant(X), g.constant(weights_)), g.constant(biases_)));
    }

    Tensor posterior(const Tensor& X) const override { return softmax_posterior(decision(X)); }
    std::size_t n_classes() const override { return weights_.cols(); }
    std::string kind() const override { return "linear_svm"; }

    /// Features with any above-threshold weight across the one-vs-rest heads.
    std::vector<std::size_t> selected_features(double threshold = 1e-6) const {
        std::vector<std::size_t> out;
        for (std::size_t f = 0; f < weights_.rows(); ++f) {
            double mx = 0.0;
            for (std::size_t c = 0; c < weights_.cols(); ++c)
                mx = std::max(mx, std::fabs(weights_.at(f, c)));
            if (mx > threshold) out.push_back(f);
        }
        return out;
    }

    const Tensor& weights() const { return weights_; }

    json to_json() const override {
        return json{{"kind", "linear_svm"},
                    {"penalty", penalty_ == SvmPenalty::l1 ? "l1" : "l2"},
                    {"weights", tensor_to_json(weights_)},
                    {"biases", tensor_to_json(biases_)}};
    }

    static LinearSvm from_json(const json& j) {
        return LinearSvm(tensor_from_json(j.at("weights")), tensor_from_json(j.at("biases")),
                         j.at("penalty") == "l1" ? SvmPenalty::l1 : SvmPenalty::l2);
    }

private:
    Tensor weights_; // d x K
    Tensor biases_;  // 1 x K
    SvmPenalty penalty_ = SvmPenalty::l2;
};

struct SvmConfig {
    double C = 1.0;
    SvmPenalty penalty = SvmPenalty::l2;
    std::size_t epochs = 400;
    double lr0 = 0.5;
    double lr_decay = 0.05; // lr_t = lr0 / (1 + lr_decay * t)
};

/// One-vs-rest hinge loss minimized by full-batch proximal subgradient descent
/// with a fixed schedule. Objective per head: penalty(w)/(C n) + mean hinge;
/// the l1 proximal step produces exact zeros, which is what the
/// feature-selection metric reads off.
inline LinearSvm train_linear_svm(const Dataset& data, const SvmConfig& cfg, std::uint64_t seed = 0) {
    if (!(cfg.C > 0.0)) throw std::invalid_argument("train_linear_svm: C must be positive");
    if (data.size() == 0) throw std::invalid_argument("train_linear_svm: empty dataset");
    (void)seed; // deterministic full-batch schedule; kept for interface uniformity
    const std::size_t n = data.size(), d = data.feature_dim(), K = data.n_classes();
    const double lambda = 1.0 / (cfg.C * static_cast<double>(n));

    Tensor W = Tensor::zeros(d, K);
    Tensor B = Tensor::zeros(1, K);
    std::vector<double> margin(n);
    for (std::size_t t = 0; t < cfg.epochs; ++t) {
        const double lr = cfg.lr0 / (1.0 + cfg.lr_decay * static_cast<double>(t));
        for (std::size_t c = 0; c < K; ++c) {
            // subgradient of the mean hinge for head c
            std::vector<double> gw(d, 0.0);
            double gb = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                double f = B.values[c];
                for (std::size_t k = 0; k < d; ++k) f += data.features.at(i, k) * W.at(k, c);
                const double y = data.labels[i] == static_cast<int>(c) ? 1.0 : -1.0;
                margin[i] = y * f;
                if (margin[i] < 1.0) {
                    for (std::size_t k = 0; k < d; ++k) gw[k] -= y * data.features.at(i, k);
                    gb -= y;
                }
            }
            const double inv_n = 1.0 / static_cast<double>(n);
            for (std::size_t k = 0; k < d; ++k) {
                double w = W.at(k, c) - lr * gw[k] * inv_n;
                if (cfg.penalty == SvmPenalty::l2) {
                    w -= lr * lambda * W.at(k, c);
                } else {
                    const double shrink = lr * lambda;
                    w = w > shrink ? w - shrink : (w < -shrink ? w + shrink : 0.0);
                }
                W.at(k, c) = w;
            }
            B.values[c] -= lr * gb * inv_n;
        }
    }
    return LinearSvm(std::move(W), std::move(B), cfg.penalty);
}

// ---- MLP classifier ------------------------------------------------------------------

class MlpClassifier : public Classifier {
public:
    MlpClassifier() = default;
    MlpClassifier(MlpSpec spec, MlpParams params) : spec_(std::move(spec)), params_(std::move(params)) {}

    Tensor logits(const Tensor& X) const { return mlp_forward(spec_, params_, X); }
    Tensor posterior(const Tensor& X) const override { return softmax_posterior(logits(X)); }
    std::size_t n_classes() const override { return spec_.output_width; }
    std::string kind() const override { return "mlp"; }

    const MlpSpec& spec() const { return spec_; }
    const MlpParams& params() const { return params_; }

    /// Frozen posterior map for use inside the boundary-calibration loss.
    PosteriorFn posterior_fn() const { return frozen_mlp_posterior(spec_, params_); }

    json to_json() const override {
        return json{{"kind", "mlp"}, {"spec", mlp_spec_to_json(spec_)},
                    {"params", mlp_params_to_json(params_)}};
    }

    static MlpClassifier from_json(const json& j) {
        return MlpClassifier(mlp_spec_from_json(j.at("spec")), mlp_params_from_json(j.at("params")));
    }

private:
    MlpSpec spec_;
    MlpParams params_;
};

struct MlpTrainConfig {
    std::vector<std::size_t> hidden = {100};
    std::size_t epochs = 80;
    std::size_t batch_size = 64;
    AdamConfig adam{1e-3, 0.9, 0.999, 1e-8};
};

inline MlpClassifier train_mlp_classifier(const Dataset& data, const MlpTrainConfig& cfg,
                                          std::uint64_t seed) {
    if (data.size() == 0) throw std::invalid_argument("train_mlp_classifier: empty dataset");
    MlpSpec spec;
    spec.input_width = data.feature_dim();
    spec.hidden_widths = cfg.hidden;
    spec.output_width = data.n_classes();
    spec.hidden_activation = Activation::leaky_relu;
    spec.output_activation = Activation::none;
    spec.validate();

    Rng rng(seed);
    MlpParams params = init_mlp(spec, rng);
    const auto param_ptrs = params.all();
    AdamState opt(std::vector<const Tensor*>(param_ptrs.begin(), param_ptrs.end()), cfg.adam);

    const std::size_t n = data.size();
    const std::size_t bs = std::min(cfg.batch_size, n);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto perm = rng.permutation(n);
        for (std::size_t start = 0; start + bs <= n; start += bs) {
            Tensor xb = Tensor::zeros(bs, spec.input_width);
            std::vector<int> yb(bs);
            for (std::size_t i = 0; i < bs; ++i) {
                for (std::size_t c = 0; c < spec.input_width; ++c)
                    xb.at(i, c) = data.features.at(perm[start + i], c);
                yb[i] = data.labels[perm[start + i]];
            }
            Graph g;
            MlpVars vars = register_mlp(g, params);
            Var loss = cross_entropy(g, mlp_forward(g, spec, vars, g.constant(std::move(xb))), yb);
            if (!std::isfinite(g.value(loss).scalar_value()))
                throw std::runtime_error("train_mlp_classifier: non-finite loss");
            Gradients grads = g.backward(loss);
            std::vector<Tensor> gs;
            for (Var w : vars.weights) gs.push_back(grads.tensor(w));
            for (Var b : vars.biases) gs.push_back(grads.tensor(b));
            opt.step(params.all(), gs);
        }
    }
    return MlpClassifier(std::move(spec), std::move(params));
}

// ---- pre-trained classifier set -----------------------------------------------------

struct PretrainedSet {
    std::vector<MlpClassifier> models;
    std::vector<std::uint64_t> split_seeds; // seed used for each half-split

    std::vector<PosteriorFn> posterior_fns() const {
        std::vector<PosteriorFn> fns;
        for (const auto& m : models) fns.push_back(m.posterior_fn());
        return fns;
    }
};

/// k MLPs, each trained on an independent random half of the data
/// (the floor(n/2)-sized half).
inline PretrainedSet make_pretrained_set(const Dataset& data, std::size_t k, std::uint64_t seed,
                                         const MlpTrainConfig& cfg = MlpTrainConfig{}) {
    if (k < 1) throw std::invalid_argument("make_pretrained_set: k must be >= 1");
    if (data.size() < 2) throw std::invalid_argument("make_pretrained_set: dataset too small to split");
    PretrainedSet set;
    Rng base(seed);
    for (std::size_t i = 0; i < k; ++i) {
        const std::uint64_t split_seed = base.fork(2 * i).seed();
        const std::uint64_t train_seed = base.fork(2 * i + 1).seed();
        auto [half, rest] = split_half_random(data, split_seed);
        (void)rest;
        set.models.push_back(train_mlp_classifier(half, cfg, train_seed));
        set.split_seeds.push_back(split_seed);
    }
    return set;
}

// ---- polymorphic serialization -------------------------------------------------------

inline std::unique_ptr<Classifier> classifier_from_json(const json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "decision_tree") return std::make_unique<DecisionTree>(DecisionTree::from_json(j));
    if (kind == "random_forest") return std::make_unique<RandomForest>(RandomForest::from_json(j));
    if (kind == "linear_svm") return std::make_unique<LinearSvm>(LinearSvm::from_json(j));
    if (kind == "mlp") return std::make_unique<MlpClassifier>(MlpClassifier::from_json(j));
    throw std::runtime_error("classifier_from_json: unknown kind '" + kind + "'");
}

} // namespace bcgan

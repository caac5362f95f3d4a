#pragma once

// Feed-forward networks on the autodiff graph: MLP specs and parameters,
// class-embedding conditioning, the Adam optimizer, and softmax posteriors.

#include <bcgan/rng.hpp>
#include <bcgan/serialize.hpp>
#include <bcgan/tensor.hpp>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace bcgan {

enum class Activation { leaky_relu, sigmoid, none };

inline std::string activation_name(Activation a) {
    switch (a) {
        case Activation::leaky_relu: return "leaky_relu";
        case Activation::sigmoid: return "sigmoid";
        case Activation::none: return "none";
    }
    return "?";
}

inline Activation activation_from_name(const std::string& s) {
    if (s == "leaky_relu") return Activation::leaky_relu;
    if (s == "sigmoid") return Activation::sigmoid;
    if (s == "none") return Activation::none;
    throw std::invalid_argument("unknown activation '" + s + "'");
}

struct MlpSpec {
    std::size_t input_width = 0;
    std::vector<std::size_t> hidden_widths;
    std::size_t output_width = 0;
    Activation hidden_activation = Activation::leaky_relu;
    Activation output_activation = Activation::none;
    double leaky_slope = 0.2;

    std::vector<std::size_t> layer_widths() const {
        std::vector<std::size_t> w{input_width};
        w.insert(w.end(), hidden_widths.begin(), hidden_widths.end());
        w.push_back(output_width);
        return w;
    }

    void validate() const {
        for (std::size_t w : layer_widths())
            if (w < 1) throw std::invalid_argument("MlpSpec: all widths must be >= 1");
    }
};

struct MlpParams {
    std::vector<Tensor> weights; // layer l: in x out
    std::vector<Tensor> biases;  // layer l: 1 x out

    std::vector<Tensor*> all() {
        std::vector<Tensor*> out;
        for (auto& w : weights) out.push_back(&w);
        for (auto& b : biases) out.push_back(&b);
        return out;
    }
    std::vector<const Tensor*> all() const {
        std::vector<const Tensor*> out;
        for (const auto& w : weights) out.push_back(&w);
        for (const auto& b : biases) out.push_back(&b);
        return out;
    }
};

/// He-style uniform init scaled by fan-in; biases start at zero.
inline MlpParams init_mlp(const MlpSpec& spec, Rng& rng) {
    spec.validate();
    MlpParams p;
    const auto widths = spec.layer_widths();
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const std::size_t fan_in = widths[l], fan_out = widths[l + 1];
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        Tensor w = Tensor::zeros(fan_in, fan_out);
        for (double& v : w.values) v = rng.uniform(-bound, bound);
        p.weights.push_back(std::move(w));
        p.biases.push_back(Tensor::zeros(1, fan_out));
    }
    return p;
}

/// Graph handles for one network's parameters.
struct MlpVars {
    std::vector<Var> weights;
    std::vector<Var> biases;
};

/// Registers parameters on a graph; trainable parameters become inputs,
/// frozen ones constants.
inline MlpVars register_mlp(Graph& g, const MlpParams& p, bool trainable = true) {
    MlpVars v;
    for (const auto& w : p.weights) v.weights.push_back(trainable ? g.input(w) : g.constant(w));
    for (const auto& b : p.biases) v.biases.push_back(trainable ? g.input(b) : g.constant(b));
    return v;
}

inline Var apply_activation(Graph& g, Var x, Activation act, double slope) {
    switch (act) {
        case Activation::leaky_relu: return g.leaky_relu(x, slope);
        case Activation::sigmoid: return g.sigmoid(x);
        case Activation::none: return x;
    }
    throw std::logic_error("unreachable");
}

/// Batched forward pass; x is n x input_width.
inline Var mlp_forward(Graph& g, const MlpSpec& spec, const MlpVars& vars, Var x) {
    if (g.value(x).cols() != spec.input_width)
        throw std::invalid_argument("mlp_forward: input width mismatch (got " +
                                    std::to_string(g.value(x).cols()) + ", want " +
                                    std::to_string(spec.input_width) + ")");
    Var h = x;
    const std::size_t n_layers = vars.weights.size();
    for (std::size_t l = 0; l < n_layers; ++l) {
        h = g.add_rowvec(g.matmul(h, vars.weights[l]), vars.biases[l]);
        const bool last = (l + 1 == n_layers);
        h = apply_activation(g, h, last ? spec.output_activation : spec.hidden_activation,
                             spec.leaky_slope);
    }
    return h;
}

/// Forward pass without keeping a graph around.
inline Tensor mlp_forward(const MlpSpec& spec, const MlpParams& params, const Tensor& x) {
    Graph g;
    MlpVars vars = register_mlp(g, params, false);
    return g.value(mlp_forward(g, spec, vars, g.constant(x)));
}

// ---- class-embedding conditioning -------------------------------------------

struct ClassEmbedding {
    Tensor table; // n_classes x d_emb

    std::size_t n_classes() const { return table.rows(); }
    std::size_t dim() const { return table.shape.size() == 2 ? table.shape[1] : 0; }
};

/// One-hot-style rows (cycled when d_emb < n_classes) plus small noise: the
/// class signal is strong and near-orthogonal from the first step, and the
/// table remains trainable.
inline ClassEmbedding init_embedding(std::size_t n_classes, std::size_t d_emb, Rng& rng) {
    ClassEmbedding e;
    e.table = Tensor::zeros(n_classes, d_emb);
    for (std::size_t r = 0; r < n_classes; ++r)
        for (std::size_t c = 0; c < d_emb; ++c)
            e.table.at(r, c) = (c == r % d_emb ? 1.0 : 0.0) + rng.normal(0.0, 0.05);
    return e;
}

/// Appends the label's embedding row to each input row: [x | table[label_i]].
/// A zero-width table is a no-op.
inline Var condition_input(Graph& g, Var x, const std::vector<int>& labels, Var table) {
    const Tensor& T = g.value(table);
    if (labels.size() != g.value(x).rows())
        throw std::invalid_argument("condition_input: one label per row required");
    for (int l : labels)
        if (l < 0 || static_cast<std::size_t>(l) >= T.rows())
            throw std::out_of_range("condition_input: label out of range");
    if (T.cols() == 0) return x;
    return g.concat_cols(x, g.embed_rows(table, labels));
}

inline Tensor condition_input(const Tensor& x, const std::vector<int>& labels,
                              const ClassEmbedding& emb) {
    Graph g;
    Var t = g.constant(emb.table);
    return g.value(condition_input(g, g.constant(x), labels, t));
}

// ---- Adam --------------------------------------------------------------------

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.5;
    double beta2 = 0.9;
    double eps = 1e-8;
};

/// Standard Adam with bias correction. One state instance owns the moment
/// buffers for a fixed parameter list (bound by shape, in order).
class AdamState {
public:
    AdamState() = default;

    AdamState(const std::vector<const Tensor*>& params, AdamConfig cfg) : cfg_(cfg) {
        for (const Tensor* p : params) {
            Tensor z = *p;
            std::fill(z.values.begin(), z.values.end(), 0.0);
            m_.push_back(z);
            v_.push_back(std::move(z));
        }
    }

    const AdamConfig& config() const { return cfg_; }
    long step_count() const { return step_; }

    void set_lr(double lr) { cfg_.lr = lr; }

    void step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads) {
        if (params.size() != m_.size() || grads.size() != m_.size())
            throw std::invalid_argument("AdamState::step: parameter count mismatch");
        ++step_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        for (std::size_t k = 0; k < params.size(); ++k) {
            Tensor& p = *params[k];
            const Tensor& gt = grads[k];
            if (gt.numel() != p.numel())
                throw std::invalid_argument("AdamState::step: gradient shape mismatch");
            if (!gt.all_finite()) throw std::runtime_error("AdamState::step: non-finite gradient");
            for (std::size_t i = 0; i < p.numel(); ++i) {
                const double gr = gt.values[i];
                m_[k].values[i] = cfg_.beta1 * m_[k].values[i] + (1.0 - cfg_.beta1) * gr;
                v_[k].values[i] = cfg_.beta2 * v_[k].values[i] + (1.0 - cfg_.beta2) * gr * gr;
                const double mhat = m_[k].values[i] / bc1;
                const double vhat = v_[k].values[i] / bc2;
                p.values[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }

private:
    AdamConfig cfg_;
    std::vector<Tensor> m_, v_;
    long step_ = 0;
};

// ---- losses ---------------------------------------------------------------------

/// Mean cross-entropy of logits against integer labels, via a log-sum-exp
/// with a constant max shift (the gradient is exact).
inline Var cross_entropy(Graph& g, Var logits, const std::vector<int>& labels) {
    const Tensor& L = g.value(logits);
    const std::size_t n = L.rows(), K = L.cols();
    if (labels.size() != n) throw std::invalid_argument("cross_entropy: one label per row required");
    Tensor rowmax = Tensor::zeros(n, 1);
    Tensor onehot = Tensor::zeros(n, K);
    for (std::size_t r = 0; r < n; ++r) {
        double mx = L.at(r, 0);
        for (std::size_t c = 1; c < K; ++c) mx = std::max(mx, L.at(r, c));
        rowmax.values[r] = mx;
        const int l = labels[r];
        if (l < 0 || static_cast<std::size_t>(l) >= K)
            throw std::out_of_range("cross_entropy: label out of range");
        onehot.at(r, static_cast<std::size_t>(l)) = 1.0;
    }
    Var mx = g.constant(std::move(rowmax));
    Var shifted = g.sub(logits, g.broadcast_cols(mx, K));
    Var lse = g.add(g.log(g.reduce_sum_cols(g.exp(shifted))), mx);
    Var label_logit = g.reduce_sum_cols(g.mul(logits, g.constant(std::move(onehot))));
    return g.mean(g.sub(lse, label_logit));
}

// ---- posteriors ---------------------------------------------------------------

/// Numerically stable row-wise softmax (max subtraction).
inline Tensor softmax_posterior(const Tensor& logits) {
    if (!logits.all_finite()) throw std::invalid_argument("softmax_posterior: non-finite logits");
    Tensor out = logits;
    const std::size_t n = out.rows(), d = out.cols();
    for (std::size_t r = 0; r < n; ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < d; ++c) mx = std::max(mx, out.at(r, c));
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            out.at(r, c) = std::exp(out.at(r, c) - mx);
            s += out.at(r, c);
        }
        for (std::size_t c = 0; c < d; ++c) out.at(r, c) /= s;
    }
    return out;
}

// ---- checkpoint serialization --------------------------------------------------

inline json mlp_spec_to_json(const MlpSpec& s) {
    return json{{"input_width", s.input_width},
                {"hidden_widths", s.hidden_widths},
                {"output_width", s.output_width},
                {"hidden_activation", activation_name(s.hidden_activation)},
                {"output_activation", activation_name(s.output_activation)},
                {"leaky_slope", double_to_hex(s.leaky_slope)}};
}

inline MlpSpec mlp_spec_from_json(const json& j) {
    MlpSpec s;
    s.input_width = j.at("input_width").get<std::size_t>();
    s.hidden_widths = j.at("hidden_widths").get<std::vector<std::size_t>>();
    s.output_width = j.at("output_width").get<std::size_t>();
    s.hidden_activation = activation_from_name(j.at("hidden_activation").get<std::string>());
    s.output_activation = activation_from_name(j.at("output_activation").get<std::string>());
    s.leaky_slope = hex_to_double(j.at("leaky_slope").get<std::string>());
    return s;
}

inline json mlp_params_to_json(const MlpParams& p) {
    json w = json::array(), b = json::array();
    for (const auto& t : p.weights) w.push_back(tensor_to_json(t));
    for (const auto& t : p.biases) b.push_back(tensor_to_json(t));
    return json{{"weights", std::move(w)}, {"biases", std::move(b)}};
}

inline MlpParams mlp_params_from_json(const json& j) {
    MlpParams p;
    for (const auto& t : j.at("weights")) p.weights.push_back(tensor_from_json(t));
    for (const auto& t : j.at("biases")) p.biases.push_back(tensor_from_json(t));
    return p;
}

} // namespace bcgan

#pragma once

// Conditional GAN trainers. Three variants share one loop: WGAN with gradient
// penalty, a simplified MMD-GAN (the critic is a feature map; the generator
// minimizes the unbiased squared MMD in that feature space while the critic
// maximizes it under the same penalty), and an ACGAN baseline. Any variant can
// add the boundary-calibration term to its generator loss; with lambda_bc = 0
// the training trajectory is bit-identical to the base variant because the
// calibration batch comes from a separate random stream that is only consulted
// when the term is active.

#include <bcgan/data.hpp>
#include <bcgan/mmd.hpp>
#include <bcgan/nn.hpp>
#include <bcgan/rng.hpp>

#include <cmath>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace bcgan {

enum class GanVariant { wgan_gp, mmd_gan, acgan };
enum class LipschitzMode { gradient_penalty, weight_clip };

inline std::string variant_name(GanVariant v) {
    switch (v) {
        case GanVariant::wgan_gp: return "wgan_gp";
        case GanVariant::mmd_gan: return "mmd_gan";
        case GanVariant::acgan: return "acgan";
    }
    return "?";
}

inline GanVariant variant_from_name(const std::string& s) {
    if (s == "wgan_gp") return GanVariant::wgan_gp;
    if (s == "mmd_gan") return GanVariant::mmd_gan;
    if (s == "acgan") return GanVariant::acgan;
    throw std::invalid_argument("unknown GAN variant '" + s + "'");
}

struct GanConfig {
    GanVariant variant = GanVariant::wgan_gp;
    double lambda_bc = 0.0;
    double lambda_gp = 10.0;
    std::size_t critic_steps = 5;
    std::size_t batch_size = 64;
    std::size_t epochs = 100;
    std::size_t noise_dim = 8;
    std::size_t embedding_dim = 8;
    std::uint64_t seed = 0;
    LipschitzMode lipschitz = LipschitzMode::gradient_penalty;
    double weight_clip = 0.01;
    std::vector<std::size_t> gen_hidden = {128, 128, 128};
    std::vector<std::size_t> critic_hidden = {128, 128, 128};
    std::size_t mmd_feature_dim = 16; // critic output width for mmd_gan
    AdamConfig adam{1e-4, 0.5, 0.9, 1e-8};
    bool lr_decay = false; // linear decay of both learning rates to 0 over the run
    KernelConfig bc_kernel = KernelConfig::median();

    void validate() const {
        if (lambda_bc < 0.0) throw std::invalid_argument("GanConfig: lambda_bc must be >= 0");
        if (critic_steps < 1) throw std::invalid_argument("GanConfig: critic_steps must be >= 1");
        if (batch_size < 2) throw std::invalid_argument("GanConfig: batch_size must be >= 2");
        if (noise_dim < 1) throw std::invalid_argument("GanConfig: noise_dim must be >= 1");
    }
};

struct GanBundle {
    MlpSpec gen_spec;
    MlpParams gen_params;
    MlpSpec critic_spec;
    MlpParams critic_params;
    ClassEmbedding gen_emb;
    ClassEmbedding critic_emb; // unused by acgan (its critic infers the class)
    ClassPrior prior;
    Schema schema;
    GanConfig config;
    Rng rng{0};

    std::size_t feature_dim() const { return gen_spec.output_width; }
    std::size_t n_classes() const { return prior.probabilities.size(); }
};

/// Fresh bundle shaped for the dataset; the class prior is estimated by
/// counting.
inline GanBundle init_gan(const Dataset& data, const GanConfig& cfg) {
    cfg.validate();
    GanBundle b;
    b.config = cfg;
    b.schema = data.schema;
    b.prior = class_prior(data);
    const std::size_t d = data.feature_dim();
    const std::size_t k = data.n_classes();

    b.gen_spec.input_width = cfg.noise_dim + cfg.embedding_dim;
    b.gen_spec.hidden_widths = cfg.gen_hidden;
    b.gen_spec.output_width = d;
    b.gen_spec.output_activation = Activation::sigmoid; // features live in [0,1]

    b.critic_spec.hidden_widths = cfg.critic_hidden;
    b.critic_spec.output_activation = Activation::none;
    if (cfg.variant == GanVariant::acgan) {
        b.critic_spec.input_width = d;
        b.critic_spec.output_width = 1 + k; // source logit + class logits
    } else {
        b.critic_spec.input_width = d + cfg.embedding_dim;
        b.critic_spec.output_width = cfg.variant == GanVariant::mmd_gan ? cfg.mmd_feature_dim : 1;
    }

    Rng init_rng(cfg.seed);
    Rng gr = init_rng.fork(1), cr = init_rng.fork(2), ge = init_rng.fork(3), ce = init_rng.fork(4);
    b.gen_params = init_mlp(b.gen_spec, gr);
    b.critic_params = init_mlp(b.critic_spec, cr);
    b.gen_emb = init_embedding(k, cfg.embedding_dim, ge);
    b.critic_emb = init_embedding(k, cfg.embedding_dim, ce);
    b.rng = init_rng.fork(5);
    return b;
}

// ---- sampling -----------------------------------------------------------------------

inline Tensor sample_noise(Rng& rng, std::size_t n, std::size_t dim) {
    Tensor z = Tensor::zeros(n, dim);
    for (double& v : z.values) v = rng.normal();
    return z;
}

inline std::vector<int> sample_labels(Rng& rng, const ClassPrior& prior, std::size_t n) {
    std::vector<int> out(n);
    for (auto& l : out) l = static_cast<int>(rng.categorical(prior.probabilities));
    return out;
}

/// Generator forward without gradients.
inline Tensor generate_features(const GanBundle& b, const Tensor& z, const std::vector<int>& labels) {
    Graph g;
    Var zin = g.constant(z);
    Var cond = condition_input(g, zin, labels, g.constant(b.gen_emb.table));
    MlpVars vars = register_mlp(g, b.gen_params, false);
    return g.value(mlp_forward(g, b.gen_spec, vars, cond));
}

/// Draws (x, y) pairs: y from the class prior unless given, x = G(z, y).
inline Dataset sample_conditional(GanBundle& b, std::size_t n,
                                  const std::optional<std::vector<int>>& labels = std::nullopt) {
    std::vector<int> y;
    if (labels) {
        if (labels->size() != n)
            throw std::invalid_argument("sample_conditional: need one label per requested row");
        for (int l : *labels)
            if (l < 0 || static_cast<std::size_t>(l) >= b.n_classes())
                throw std::out_of_range("sample_conditional: label out of range");
        y = *labels;
    } else {
        y = sample_labels(b.rng, b.prior, n);
    }
    const Tensor z = sample_noise(b.rng, n, b.config.noise_dim);
    Dataset out;
    out.schema = b.schema;
    out.features = generate_features(b, z, y);
    out.labels = std::move(y);
    return out;
}

// ---- loss builders --------------------------------------------------------------------

namespace detail {

inline Var critic_forward(Graph& g, const GanBundle& b, const MlpVars& critic_vars, Var emb_table,
                          Var x, const std::vector<int>& labels) {
    if (b.config.variant == GanVariant::acgan) return mlp_forward(g, b.critic_spec, critic_vars, x);
    Var cond = condition_input(g, x, labels, emb_table);
    return mlp_forward(g, b.critic_spec, critic_vars, cond);
}

/// Mean (||grad_x critic_sum(x_hat)|| - 1)^2 over interpolates. The critic
/// rows are independent, so differentiating the batch sum yields per-row
/// input gradients.
inline Var gradient_penalty(Graph& g, const GanBundle& b, const MlpVars& critic_vars, Var emb_table,
                            const Tensor& x_hat_vals, const std::vector<int>& labels, Var& x_hat_out) {
    Var x_hat = g.input(x_hat_vals);
    x_hat_out = x_hat;
    Var out = critic_forward(g, b, critic_vars, emb_table, x_hat, labels);
    Var igrad = g.input_gradient_node(g.sum(out), x_hat);
    Var sq_norm = g.add_const(g.reduce_sum_cols(g.square(igrad)), 1e-12);
    return g.mean(g.square(g.add_const(g.sqrt(sq_norm), -1.0)));
}

inline Tensor interpolate_rows(const Tensor& a, const Tensor& c, const std::vector<double>& eps) {
    Tensor out = a;
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t col = 0; col < a.cols(); ++col)
            out.at(r, col) = eps[r] * a.at(r, col) + (1.0 - eps[r]) * c.at(r, col);
    return out;
}

} // namespace detail

struct CriticLoss {
    Var total;
    Var base;
    Var penalty; // invalid when the mode is weight clipping or the variant acgan
    MlpVars critic_vars;
    Var critic_emb; // invalid for acgan
};

/// Critic objective on one batch pair. `eps` holds the per-row interpolation
/// coefficients for the gradient penalty (one per row; ignored under weight
/// clipping and for acgan).
inline CriticLoss build_critic_loss(Graph& g, const GanBundle& b, const Tensor& real,
                                    const Tensor& fake, const std::vector<int>& real_labels,
                                    const std::vector<int>& fake_labels,
                                    const std::vector<double>& eps) {
    if (real.rows() != fake.rows())
        throw std::invalid_argument("build_critic_loss: real/fake batch sizes differ");
    CriticLoss out;
    out.critic_vars = register_mlp(g, b.critic_params, true);
    const bool use_gp = b.config.lipschitz == LipschitzMode::gradient_penalty;

    if (b.config.variant == GanVariant::acgan) {
        Var logits_real = mlp_forward(g, b.critic_spec, out.critic_vars, g.constant(real));
        Var logits_fake = mlp_forward(g, b.critic_spec, out.critic_vars, g.constant(fake));
        const std::size_t k = b.n_classes();
        Var s_real = g.slice_cols(logits_real, 0, 1);
        Var s_fake = g.slice_cols(logits_fake, 0, 1);
        Var adv = g.add(g.mean(g.softplus(g.scale(s_real, -1.0))), g.mean(g.softplus(s_fake)));
        Var aux = g.add(cross_entropy(g, g.slice_cols(logits_real, 1, 1 + k), real_labels),
                        cross_entropy(g, g.slice_cols(logits_fake, 1, 1 + k), fake_labels));
        out.base = g.add(adv, aux);
        out.total = out.base;
        return out;
    }

    out.critic_emb = g.input(b.critic_emb.table);
    Var d_real = detail::critic_forward(g, b, out.critic_vars, out.critic_emb, g.constant(real), real_labels);
    Var d_fake = detail::critic_forward(g, b, out.critic_vars, out.critic_emb, g.constant(fake), fake_labels);

    if (b.config.variant == GanVariant::wgan_gp) {
        out.base = g.sub(g.mean(d_fake), g.mean(d_real));
    } else { // mmd_gan: critic maximizes the feature-space discrepancy
        const double sigma = resolve_bandwidth(b.config.bc_kernel, g.value(d_real), g.value(d_fake));
        out.base = g.scale(mmd2_unbiased(g, d_real, d_fake, sigma), -1.0);
    }

    if (use_gp) {
        if (eps.size() != real.rows())
            throw std::invalid_argument("build_critic_loss: need one interpolation weight per row");
        const Tensor x_hat = detail::interpolate_rows(real, fake, eps);
        Var x_hat_var{};
        out.penalty = detail::gradient_penalty(g, b, out.critic_vars, out.critic_emb, x_hat,
                                               real_labels, x_hat_var);
        out.total = g.add(out.base, g.scale(out.penalty, b.config.lambda_gp));
    } else {
        out.total = out.base;
    }
    return out;
}

struct GeneratorLoss {
    Var total;
    Var base;
    Var bc; // invalid when lambda_bc == 0
    Var fake;
    MlpVars gen_vars;
    Var gen_emb;
};

/// Generator objective. `real`/`real_labels` feed the mmd_gan base term (may
/// be empty for wgan/acgan); `bc_real` feeds the boundary-calibration term and
/// is required exactly when lambda_bc > 0.
inline GeneratorLoss build_generator_loss(Graph& g, const GanBundle& b, const Tensor& z,
                                          const std::vector<int>& labels, const Tensor& real,
                                          const std::vector<int>& real_labels,
                                          const std::vector<PosteriorFn>& classifiers,
                                          const Tensor& bc_real) {
    const GanConfig& cfg = b.config;
    if (cfg.lambda_bc > 0.0 && classifiers.empty())
        throw std::invalid_argument("build_generator_loss: lambda_bc > 0 needs classifiers");

    GeneratorLoss out;
    out.gen_vars = register_mlp(g, b.gen_params, true);
    out.gen_emb = g.input(b.gen_emb.table);
    Var cond = condition_input(g, g.constant(z), labels, out.gen_emb);
    out.fake = mlp_forward(g, b.gen_spec, out.gen_vars, cond);

    MlpVars critic_frozen = register_mlp(g, b.critic_params, false);
    Var critic_emb_frozen{};
    if (cfg.variant != GanVariant::acgan) critic_emb_frozen = g.constant(b.critic_emb.table);

    switch (cfg.variant) {
        case GanVariant::wgan_gp: {
            Var d_fake = detail::critic_forward(g, b, critic_frozen, critic_emb_frozen, out.fake, labels);
            out.base = g.scale(g.mean(d_fake), -1.0);
            break;
        }
        case GanVariant::mmd_gan: {
            Var h_real = detail::critic_forward(g, b, critic_frozen, critic_emb_frozen,
                                                g.constant(real), real_labels);
            Var h_fake = detail::critic_forward(g, b, critic_frozen, critic_emb_frozen, out.fake, labels);
            const double sigma = resolve_bandwidth(cfg.bc_kernel, g.value(h_real), g.value(h_fake));
            out.base = mmd2_unbiased(g, h_real, h_fake, sigma);
            break;
        }
        case GanVariant::acgan: {
            Var logits = mlp_forward(g, b.critic_spec, critic_frozen, out.fake);
            const std::size_t k = b.n_classes();
            Var adv = g.mean(g.softplus(g.scale(g.slice_cols(logits, 0, 1), -1.0)));
            Var aux = cross_entropy(g, g.slice_cols(logits, 1, 1 + k), labels);
            out.base = g.add(adv, aux);
            break;
        }
    }

    if (cfg.lambda_bc > 0.0) {
        out.bc = bc_loss(g, bc_real, out.fake, classifiers, cfg.bc_kernel);
        out.total = g.add(out.base, g.scale(out.bc, cfg.lambda_bc));
    } else {
        out.total = out.base;
    }
    return out;
}

// ---- training loop ----------------------------------------------------------------------

struct LossRecord {
    std::size_t step = 0; // generator step, 1-based
    double critic_loss = 0.0;
    double gen_base_loss = 0.0;
    double bc_loss = 0.0;
    double total = 0.0;
};

using LossHistory = std::vector<LossRecord>;

/// Generator steps per epoch under the alternating schedule.
inline std::size_t generator_steps_per_epoch(const GanConfig& cfg, std::size_t n) {
    const std::size_t batch = std::min(cfg.batch_size, n);
    return std::max<std::size_t>(1, n / (batch * cfg.critic_steps));
}

namespace detail {

class BatchStream {
public:
    BatchStream(const Dataset& data, std::size_t batch, Rng& rng)
        : data_(data), batch_(std::min(batch, data.size())), rng_(rng) {
        reshuffle();
    }

    std::pair<Tensor, std::vector<int>> next() {
        if (pos_ + batch_ > perm_.size()) reshuffle();
        Tensor x = Tensor::zeros(batch_, data_.feature_dim());
        std::vector<int> y(batch_);
        for (std::size_t i = 0; i < batch_; ++i) {
            const std::size_t r = perm_[pos_ + i];
            for (std::size_t c = 0; c < data_.feature_dim(); ++c)
                x.at(i, c) = data_.features.at(r, c);
            y[i] = data_.labels[r];
        }
        pos_ += batch_;
        return {std::move(x), std::move(y)};
    }

    std::size_t batch() const { return batch_; }

private:
    void reshuffle() {
        perm_ = rng_.permutation(data_.size());
        pos_ = 0;
    }

    const Dataset& data_;
    std::size_t batch_;
    Rng& rng_;
    std::vector<std::size_t> perm_;
    std::size_t pos_ = 0;
};

inline void clip_params(MlpParams& p, ClassEmbedding& emb, double c) {
    auto clamp = [c](Tensor& t) {
        for (double& v : t.values) v = std::min(c, std::max(-c, v));
    };
    for (auto& w : p.weights) clamp(w);
    for (auto& b : p.biases) clamp(b);
    clamp(emb.table);
}

} // namespace detail

/// Alternating critic/generator training. Deterministic given (bundle.config,
/// seed, data). The boundary-calibration batches come from a forked stream so
/// disabling the term does not perturb the base trajectory.
inline LossHistory train(GanBundle& b, const Dataset& data,
                         const std::vector<PosteriorFn>& classifiers = {}) {
    const GanConfig& cfg = b.config;
    cfg.validate();
    data.validate();
    if (cfg.lambda_bc > 0.0 && classifiers.empty())
        throw std::invalid_argument("train: lambda_bc > 0 requires a pre-trained classifier set");

    Rng run_rng = Rng(cfg.seed).fork(100);
    Rng bc_rng = Rng(cfg.seed).fork(200); // consulted only when lambda_bc > 0
    detail::BatchStream stream(data, cfg.batch_size, run_rng);
    const std::size_t batch = stream.batch();

    const bool acgan = cfg.variant == GanVariant::acgan;
    const bool clip = cfg.lipschitz == LipschitzMode::weight_clip && !acgan;

    auto critic_param_ptrs = [&] {
        std::vector<Tensor*> ps = b.critic_params.all();
        if (!acgan) ps.push_back(&b.critic_emb.table);
        return ps;
    };
    auto gen_param_ptrs = [&] {
        std::vector<Tensor*> ps = b.gen_params.all();
        ps.push_back(&b.gen_emb.table);
        return ps;
    };
    auto as_const = [](const std::vector<Tensor*>& v) {
        return std::vector<const Tensor*>(v.begin(), v.end());
    };

    AdamState critic_opt(as_const(critic_param_ptrs()), cfg.adam);
    AdamState gen_opt(as_const(gen_param_ptrs()), cfg.adam);

    LossHistory history;
    const std::size_t cycles = generator_steps_per_epoch(cfg, data.size());
    const std::size_t total_gen_steps = cycles * cfg.epochs;
    std::size_t gen_step = 0;
    double last_critic_loss = 0.0;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t cycle = 0; cycle < cycles; ++cycle) {
            if (cfg.lr_decay) {
                const double f = 1.0 - static_cast<double>(gen_step) / static_cast<double>(total_gen_steps);
                critic_opt.set_lr(cfg.adam.lr * f);
                gen_opt.set_lr(cfg.adam.lr * f);
            }
            for (std::size_t k = 0; k < cfg.critic_steps; ++k) {
                auto [real, labels] = stream.next();
                const Tensor z = sample_noise(run_rng, batch, cfg.noise_dim);
                const Tensor fake = generate_features(b, z, labels);
                std::vector<double> eps(batch);
                for (double& e : eps) e = run_rng.uniform01();

                Graph g;
                CriticLoss loss = build_critic_loss(g, b, real, fake, labels, labels, eps);
                last_critic_loss = g.value(loss.total).scalar_value();
                if (!std::isfinite(last_critic_loss))
                    throw std::runtime_error("train: non-finite critic loss at generator step " +
                                             std::to_string(gen_step + 1));
                Gradients grads = g.backward(loss.total);
                std::vector<Tensor> gs;
                for (Var w : loss.critic_vars.weights) gs.push_back(grads.tensor(w));
                for (Var bias : loss.critic_vars.biases) gs.push_back(grads.tensor(bias));
                if (!acgan) gs.push_back(grads.tensor(loss.critic_emb));
                critic_opt.step(critic_param_ptrs(), gs);
                if (clip) detail::clip_params(b.critic_params, b.critic_emb, cfg.weight_clip);
            }

            // generator step
            const std::vector<int> labels = sample_labels(run_rng, b.prior, batch);
            const Tensor z = sample_noise(run_rng, batch, cfg.noise_dim);
            Tensor real_for_base;
            std::vector<int> real_labels_for_base;
            if (cfg.variant == GanVariant::mmd_gan) {
                auto [rx, ry] = stream.next();
                real_for_base = std::move(rx);
                real_labels_for_base = std::move(ry);
            }
            Tensor bc_real;
            if (cfg.lambda_bc > 0.0) {
                bc_real = Tensor::zeros(batch, data.feature_dim());
                for (std::size_t i = 0; i < batch; ++i) {
                    const std::size_t r = bc_rng.uniform_index(data.size());
                    for (std::size_t c = 0; c < data.feature_dim(); ++c)
                        bc_real.at(i, c) = data.features.at(r, c);
                }
            }

            Graph g;
            GeneratorLoss loss = build_generator_loss(g, b, z, labels, real_for_base,
                                                      real_labels_for_base, classifiers, bc_real);
            const double total = g.value(loss.total).scalar_value();
            const double base = g.value(loss.base).scalar_value();
            const double bc = loss.bc.valid() ? g.value(loss.bc).scalar_value() : 0.0;
            if (!std::isfinite(total))
                throw std::runtime_error(
                    "train: non-finite generator loss at step " + std::to_string(gen_step + 1) +
                    " (base=" + std::to_string(base) + ", bc=" + std::to_string(bc) + ")");
            Gradients grads = g.backward(loss.total);
            std::vector<Tensor> gs;
            for (Var w : loss.gen_vars.weights) gs.push_back(grads.tensor(w));
            for (Var bias : loss.gen_vars.biases) gs.push_back(grads.tensor(bias));
            gs.push_back(grads.tensor(loss.gen_emb));
            gen_opt.step(gen_param_ptrs(), gs);

            ++gen_step;
            history.push_back({gen_step, last_critic_loss, base, bc, total});
        }
    }
    return history;
}

// ---- loss-history CSV ---------------------------------------------------------------------

inline void write_loss_csv(const LossHistory& h, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_loss_csv: cannot open '" + path + "'");
    f << "# bcgan.loss_history.v1\n";
    f << "step,critic_loss,gen_base_loss,bc_loss,total\n";
    char buf[128];
    for (const auto& r : h) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g\n", r.step, r.critic_loss,
                      r.gen_base_loss, r.bc_loss, r.total);
        f << buf;
    }
}

inline LossHistory read_loss_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("read_loss_csv: cannot open '" + path + "'");
    LossHistory h;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#' || line.rfind("step,", 0) == 0) continue;
        LossRecord r;
        if (std::sscanf(line.c_str(), "%zu,%lg,%lg,%lg,%lg", &r.step, &r.critic_loss,
                        &r.gen_base_loss, &r.bc_loss, &r.total) != 5)
            throw std::runtime_error("read_loss_csv: malformed line '" + line + "'");
        h.push_back(r);
    }
    return h;
}

// ---- checkpoint ------------------------------------------------------------------------------

inline json gan_config_to_json(const GanConfig& c) {
    json j;
    j["variant"] = variant_name(c.variant);
    j["lambda_bc"] = double_to_hex(c.lambda_bc);
    j["lambda_gp"] = double_to_hex(c.lambda_gp);
    j["critic_steps"] = c.critic_steps;
    j["batch_size"] = c.batch_size;
    j["epochs"] = c.epochs;
    j["noise_dim"] = c.noise_dim;
    j["embedding_dim"] = c.embedding_dim;
    j["seed"] = c.seed;
    j["lipschitz"] = c.lipschitz == LipschitzMode::gradient_penalty ? "gradient_penalty" : "weight_clip";
    j["weight_clip"] = double_to_hex(c.weight_clip);
    j["gen_hidden"] = c.gen_hidden;
    j["critic_hidden"] = c.critic_hidden;
    j["mmd_feature_dim"] = c.mmd_feature_dim;
    j["adam"] = {{"lr", double_to_hex(c.adam.lr)},
                 {"beta1", double_to_hex(c.adam.beta1)},
                 {"beta2", double_to_hex(c.adam.beta2)},
                 {"eps", double_to_hex(c.adam.eps)}};
    j["lr_decay"] = c.lr_decay;
    j["bc_kernel"] = {{"mode", c.bc_kernel.mode == KernelConfig::Bandwidth::fixed ? "fixed" : "median"},
                      {"sigma", double_to_hex(c.bc_kernel.sigma)}};
    return j;
}

inline GanConfig gan_config_from_json(const json& j) {
    GanConfig c;
    c.variant = variant_from_name(j.at("variant").get<std::string>());
    c.lambda_bc = hex_to_double(j.at("lambda_bc").get<std::string>());
    c.lambda_gp = hex_to_double(j.at("lambda_gp").get<std::string>());
    c.critic_steps = j.at("critic_steps").get<std::size_t>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.epochs = j.at("epochs").get<std::size_t>();
    c.noise_dim = j.at("noise_dim").get<std::size_t>();
    c.embedding_dim = j.at("embedding_dim").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.lipschitz = j.at("lipschitz") == "gradient_penalty" ? LipschitzMode::gradient_penalty
                                                          : LipschitzMode::weight_clip;
    c.weight_clip = hex_to_double(j.at("weight_clip").get<std::string>());
    c.gen_hidden = j.at("gen_hidden").get<std::vector<std::size_t>>();
    c.critic_hidden = j.at("critic_hidden").get<std::vector<std::size_t>>();
    c.mmd_feature_dim = j.at("mmd_feature_dim").get<std::size_t>();
    c.adam.lr = hex_to_double(j.at("adam").at("lr").get<std::string>());
    c.adam.beta1 = hex_to_double(j.at("adam").at("beta1").get<std::string>());
    c.adam.beta2 = hex_to_double(j.at("adam").at("beta2").get<std::string>());
    c.adam.eps = hex_to_double(j.at("adam").at("eps").get<std::string>());
    c.lr_decay = j.at("lr_decay").get<bool>();
    c.bc_kernel = j.at("bc_kernel").at("mode") == "fixed"
                      ? KernelConfig::fixed_sigma(hex_to_double(j.at("bc_kernel").at("sigma").get<std::string>()))
                      : KernelConfig::median();
    return c;
}

inline json gan_bundle_to_json(const GanBundle& b) {
    json prior = json::array();
    for (double p : b.prior.probabilities) prior.push_back(double_to_hex(p));
    return json{{"format", "bcgan.checkpoint.v1"},
                {"kind", "gan"},
                {"config", gan_config_to_json(b.config)},
                {"gen_spec", mlp_spec_to_json(b.gen_spec)},
                {"gen_params", mlp_params_to_json(b.gen_params)},
                {"critic_spec", mlp_spec_to_json(b.critic_spec)},
                {"critic_params", mlp_params_to_json(b.critic_params)},
                {"gen_emb", tensor_to_json(b.gen_emb.table)},
                {"critic_emb", tensor_to_json(b.critic_emb.table)},
                {"prior", std::move(prior)},
                {"schema", schema_to_json(b.schema)}};
}

inline GanBundle gan_bundle_from_json(const json& j) {
    require_format(j, "bcgan.checkpoint.v1");
    if (j.at("kind") != "gan") throw std::runtime_error("checkpoint is not a GAN bundle");
    GanBundle b;
    b.config = gan_config_from_json(j.at("config"));
    b.gen_spec = mlp_spec_from_json(j.at("gen_spec"));
    b.gen_params = mlp_params_from_json(j.at("gen_params"));
    b.critic_spec = mlp_spec_from_json(j.at("critic_spec"));
    b.critic_params = mlp_params_from_json(j.at("critic_params"));
    b.gen_emb.table = tensor_from_json(j.at("gen_emb"));
    b.critic_emb.table = tensor_from_json(j.at("critic_emb"));
    for (const auto& p : j.at("prior")) b.prior.probabilities.push_back(hex_to_double(p.get<std::string>()));
    b.schema = schema_from_json(j.at("schema"));
    b.rng = Rng(b.config.seed).fork(5);
    return b;
}

} // namespace bcgan

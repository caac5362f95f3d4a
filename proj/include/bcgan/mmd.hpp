#pragma once

// Gaussian-kernel two-sample machinery: the unbiased squared-MMD estimator
// and the boundary-calibration loss that averages it over the posterior
// distributions of a set of frozen classifiers.
//
// The kernel is k(x,x') = exp(-||x-x'||^2 / (2 sigma^2)). The estimator is
// the standard unbiased form
//
//   1/(n(n-1)) sum_{i != i'} k(x_i, x_i') + 1/(m(m-1)) sum_{j != j'} k(y_j, y_j')
//     - 2/(nm) sum_{i,j} k(x_i, y_j)
//
// which can be negative; nothing here clamps it.

#include <bcgan/nn.hpp>
#include <bcgan/tensor.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

namespace bcgan {

struct KernelConfig {
    enum class Bandwidth { fixed, median_heuristic };

    Bandwidth mode = Bandwidth::median_heuristic;
    double sigma = 1.0;

    static KernelConfig fixed_sigma(double s) {
        if (!(s > 0.0)) throw std::invalid_argument("KernelConfig: sigma must be positive");
        return KernelConfig{Bandwidth::fixed, s};
    }
    static KernelConfig median() { return KernelConfig{Bandwidth::median_heuristic, 1.0}; }

    void validate() const {
        if (mode == Bandwidth::fixed && !(sigma > 0.0))
            throw std::invalid_argument("KernelConfig: sigma must be positive");
    }
};

/// Bandwidth from the lower median of pairwise squared distances:
/// sigma = sqrt(median / 2), falling back to 1 when the median is zero.
inline double median_heuristic(const Tensor& Z) {
    const std::size_t n = Z.rows();
    if (n < 2) throw std::invalid_argument("median_heuristic: need at least 2 rows");
    const std::size_t d = Z.cols();
    std::vector<double> dists;
    dists.reserve(n * (n - 1) / 2);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double diff = Z.at(i, k) - Z.at(j, k);
                s += diff * diff;
            }
            dists.push_back(s);
        }
    const std::size_t mid = (dists.size() - 1) / 2; // lower median
    std::nth_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(mid), dists.end());
    const double med = dists[mid];
    if (med <= 0.0) return 1.0;
    return std::sqrt(med / 2.0);
}

/// Bandwidth for a two-sample problem: fixed, or the median heuristic on the
/// pooled rows of X and Y.
inline double resolve_bandwidth(const KernelConfig& cfg, const Tensor& X, const Tensor& Y) {
    cfg.validate();
    if (cfg.mode == KernelConfig::Bandwidth::fixed) return cfg.sigma;
    Tensor pooled = Tensor::zeros(X.rows() + Y.rows(), X.cols());
    std::copy(X.values.begin(), X.values.end(), pooled.values.begin());
    std::copy(Y.values.begin(), Y.values.end(), pooled.values.begin() + static_cast<std::ptrdiff_t>(X.numel()));
    return median_heuristic(pooled);
}

inline Tensor gaussian_kernel(const Tensor& X, const Tensor& Y, const KernelConfig& cfg) {
    if (X.cols() != Y.cols()) throw std::invalid_argument("gaussian_kernel: dimension mismatch");
    const double sigma = resolve_bandwidth(cfg, X, Y);
    const double inv = -1.0 / (2.0 * sigma * sigma);
    Tensor K = Tensor::zeros(X.rows(), Y.rows());
    const std::size_t d = X.cols();
    for (std::size_t i = 0; i < X.rows(); ++i)
        for (std::size_t j = 0; j < Y.rows(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double diff = X.at(i, k) - Y.at(j, k);
                s += diff * diff;
            }
            K.at(i, j) = std::exp(inv * s);
        }
    return K;
}

/// Graph node for the kernel matrix at a fixed bandwidth.
inline Var gaussian_kernel(Graph& g, Var X, Var Y, double sigma) {
    if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_kernel: sigma must be positive");
    return g.exp(g.scale(g.pairwise_sq_dists(X, Y), -1.0 / (2.0 * sigma * sigma)));
}

/// Unbiased squared-MMD estimate as a graph node (fixed bandwidth). The
/// self-kernel diagonals are exactly 1, so the off-diagonal sums are formed by
/// subtracting the sample counts.
inline Var mmd2_unbiased(Graph& g, Var X, Var Y, double sigma) {
    const double n = static_cast<double>(g.value(X).rows());
    const double m = static_cast<double>(g.value(Y).rows());
    if (n < 2 || m < 2) throw std::invalid_argument("mmd2_unbiased: need at least 2 rows per sample");
    Var xx = g.scale(g.add_const(g.sum(gaussian_kernel(g, X, X, sigma)), -n), 1.0 / (n * (n - 1.0)));
    Var yy = g.scale(g.add_const(g.sum(gaussian_kernel(g, Y, Y, sigma)), -m), 1.0 / (m * (m - 1.0)));
    Var xy = g.scale(g.sum(gaussian_kernel(g, X, Y, sigma)), -2.0 / (n * m));
    return g.add(g.add(xx, yy), xy);
}

inline double mmd2_unbiased(const Tensor& X, const Tensor& Y, const KernelConfig& cfg) {
    if (X.rows() < 2 || Y.rows() < 2)
        throw std::invalid_argument("mmd2_unbiased: need at least 2 rows per sample");
    if (X.cols() != Y.cols()) throw std::invalid_argument("mmd2_unbiased: dimension mismatch");
    const double sigma = resolve_bandwidth(cfg, X, Y);
    Graph g;
    return g.value(mmd2_unbiased(g, g.constant(X), g.constant(Y), sigma)).scalar_value();
}

/// A frozen classifier's posterior map for graph inputs; implementations must
/// register their parameters as constants.
using PosteriorFn = std::function<Var(Graph&, Var)>;

/// Boundary-calibration loss: mean over classifiers of the unbiased squared
/// MMD between the classifier's posteriors on the real batch and on the fake
/// batch. The real batch enters as a constant, so gradients flow only into
/// x_fake. With the median heuristic, the bandwidth is resolved per classifier
/// on the pooled posterior batch and treated as a constant.
inline Var bc_loss(Graph& g, const Tensor& x_real, Var x_fake,
                   const std::vector<PosteriorFn>& classifiers, const KernelConfig& cfg) {
    if (classifiers.empty()) throw std::invalid_argument("bc_loss: classifier set is empty");
    if (x_real.rows() < 2 || g.value(x_fake).rows() < 2)
        throw std::invalid_argument("bc_loss: batches need at least 2 rows");
    Var real_in = g.constant(x_real);
    Var acc{};
    for (const auto& classify : classifiers) {
        Var p_real = classify(g, real_in);
        Var p_fake = classify(g, x_fake);
        const double sigma = resolve_bandwidth(cfg, g.value(p_real), g.value(p_fake));
        Var term = mmd2_unbiased(g, p_real, p_fake, sigma);
        acc = acc.valid() ? g.add(acc, term) : term;
    }
    return g.scale(acc, 1.0 / static_cast<double>(classifiers.size()));
}

/// Posterior map of a frozen MLP classifier (logits then softmax).
inline PosteriorFn frozen_mlp_posterior(const MlpSpec& spec, const MlpParams& params) {
    return [spec, params](Graph& g, Var x) {
        MlpVars vars = register_mlp(g, params, false);
        return g.softmax_rows(mlp_forward(g, spec, vars, x));
    };
}

} // namespace bcgan

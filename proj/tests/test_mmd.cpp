#include <catch2/catch_amalgamated.hpp>

#include <bcgan/mmd.hpp>
#include <bcgan/rng.hpp>

#include "fd_check.hpp"

#include <algorithm>
#include <cmath>

using namespace bcgan;

namespace {

// Brute-force double-loop oracle for the unbiased estimator.
double mmd2_oracle(const Tensor& X, const Tensor& Y, double sigma) {
    auto k = [sigma](const Tensor& A, std::size_t i, const Tensor& B, std::size_t j) {
        double s = 0.0;
        for (std::size_t c = 0; c < A.cols(); ++c) {
            const double diff = A.at(i, c) - B.at(j, c);
            s += diff * diff;
        }
        return std::exp(-s / (2.0 * sigma * sigma));
    };
    const std::size_t n = X.rows(), m = Y.rows();
    double xx = 0.0, yy = 0.0, xy = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (i != j) xx += k(X, i, X, j);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j)
            if (i != j) yy += k(Y, i, Y, j);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) xy += k(X, i, Y, j);
    return xx / (double(n) * (n - 1)) + yy / (double(m) * (m - 1)) - 2.0 * xy / (double(n) * m);
}

Tensor gaussian_sample(Rng& rng, std::size_t n, double mean, double stddev) {
    Tensor t = Tensor::zeros(n, 1);
    for (double& v : t.values) v = rng.normal(mean, stddev);
    return t;
}

} // namespace

TEST_CASE("gaussian kernel") {
    SECTION("k(x,x) = 1 for any sigma") {
        Rng rng(2);
        const Tensor X = fdcheck::random_matrix(rng, 5, 3);
        for (double sigma : {0.1, 1.0, 25.0}) {
            const Tensor K = gaussian_kernel(X, X, KernelConfig::fixed_sigma(sigma));
            for (std::size_t i = 0; i < 5; ++i) CHECK(K.at(i, i) == 1.0);
        }
    }

    SECTION("hand value at unit bandwidth") {
        const Tensor X = Tensor::matrix(1, 1, {0.0});
        const Tensor Y = Tensor::matrix(1, 1, {1.0});
        const Tensor K = gaussian_kernel(X, Y, KernelConfig::fixed_sigma(1.0));
        CHECK(K.values[0] == Catch::Approx(std::exp(-0.5)).epsilon(1e-12));
    }

    SECTION("scaling inputs and sigma together leaves K unchanged") {
        Rng rng(5);
        const double factor = 3.7;
        Tensor X = fdcheck::random_matrix(rng, 4, 2);
        Tensor Y = fdcheck::random_matrix(rng, 3, 2);
        const Tensor K1 = gaussian_kernel(X, Y, KernelConfig::fixed_sigma(0.8));
        Tensor Xs = X, Ys = Y;
        for (double& v : Xs.values) v *= factor;
        for (double& v : Ys.values) v *= factor;
        const Tensor K2 = gaussian_kernel(Xs, Ys, KernelConfig::fixed_sigma(0.8 * factor));
        for (std::size_t i = 0; i < K1.numel(); ++i)
            CHECK(K1.values[i] == Catch::Approx(K2.values[i]).epsilon(1e-12));
    }

    SECTION("symmetry and unit diagonal of the self-kernel") {
        Rng rng(8);
        const Tensor X = fdcheck::random_matrix(rng, 6, 4);
        const Tensor K = gaussian_kernel(X, X, KernelConfig::median());
        for (std::size_t i = 0; i < 6; ++i) {
            CHECK(K.at(i, i) == 1.0);
            for (std::size_t j = 0; j < 6; ++j)
                CHECK(std::fabs(K.at(i, j) - K.at(j, i)) < 1e-12);
        }
    }

    SECTION("invalid arguments throw") {
        CHECK_THROWS_AS(KernelConfig::fixed_sigma(0.0), std::invalid_argument);
        CHECK_THROWS_AS(KernelConfig::fixed_sigma(-1.0), std::invalid_argument);
        const Tensor X = Tensor::zeros(2, 2), Y = Tensor::zeros(2, 3);
        CHECK_THROWS_AS(gaussian_kernel(X, Y, KernelConfig::median()), std::invalid_argument);
    }
}

TEST_CASE("median heuristic") {
    SECTION("two scalars") {
        const Tensor Z = Tensor::matrix(2, 1, {0.0, 2.0});
        CHECK(median_heuristic(Z) == Catch::Approx(std::sqrt(2.0)).epsilon(1e-12));
    }

    SECTION("identical rows fall back to sigma = 1") {
        const Tensor Z = Tensor::matrix(3, 2, {1, 2, 1, 2, 1, 2});
        CHECK(median_heuristic(Z) == 1.0);
    }

    SECTION("duplicated dataset matches the enumerated lower-median oracle") {
        Rng rng(11);
        const Tensor Z = fdcheck::random_matrix(rng, 6, 2);
        Tensor dup = Tensor::zeros(12, 2);
        for (std::size_t i = 0; i < 6; ++i)
            for (std::size_t c = 0; c < 2; ++c) {
                dup.at(2 * i, c) = Z.at(i, c);
                dup.at(2 * i + 1, c) = Z.at(i, c);
            }
        // oracle: enumerate all pairs, take the lower median
        auto oracle = [](const Tensor& M) {
            std::vector<double> d;
            for (std::size_t i = 0; i < M.rows(); ++i)
                for (std::size_t j = i + 1; j < M.rows(); ++j) {
                    double s = 0.0;
                    for (std::size_t c = 0; c < M.cols(); ++c) {
                        const double diff = M.at(i, c) - M.at(j, c);
                        s += diff * diff;
                    }
                    d.push_back(s);
                }
            std::sort(d.begin(), d.end());
            const double med = d[(d.size() - 1) / 2];
            return med <= 0.0 ? 1.0 : std::sqrt(med / 2.0);
        };
        CHECK(median_heuristic(Z) == Catch::Approx(oracle(Z)).epsilon(1e-12));
        CHECK(median_heuristic(dup) == Catch::Approx(oracle(dup)).epsilon(1e-12));
    }

    SECTION("fewer than two rows throws") {
        CHECK_THROWS_AS(median_heuristic(Tensor::zeros(1, 3)), std::invalid_argument);
    }
}

TEST_CASE("mmd2_unbiased") {
    SECTION("hand expansion for X = Y = {0,1} at sigma = 1") {
        const Tensor X = Tensor::matrix(2, 1, {0.0, 1.0});
        const double got = mmd2_unbiased(X, X, KernelConfig::fixed_sigma(1.0));
        const double want = std::exp(-0.5) - 1.0; // 2e^{-1/2} - (1 + e^{-1/2})
        CHECK(std::fabs(got - want) < 1e-12);
        CHECK(got == Catch::Approx(-0.39347).margin(5e-6));
    }

    SECTION("two point masses at the same location give exactly zero") {
        const Tensor X = Tensor::matrix(4, 2, {3, 3, 3, 3, 3, 3, 3, 3});
        const Tensor Y = Tensor::matrix(5, 2, {3, 3, 3, 3, 3, 3, 3, 3, 3, 3});
        CHECK(mmd2_unbiased(X, Y, KernelConfig::fixed_sigma(2.0)) == 0.0);
    }

    SECTION("matches the brute-force double-loop oracle on random inputs") {
        Rng rng(31);
        for (int t = 0; t < 20; ++t) {
            const Tensor X = fdcheck::random_matrix(rng, 5 + t % 4, 3);
            const Tensor Y = fdcheck::random_matrix(rng, 4 + t % 3, 3);
            const double sigma = rng.uniform(0.3, 2.0);
            const double got = mmd2_unbiased(X, Y, KernelConfig::fixed_sigma(sigma));
            CHECK(got == Catch::Approx(mmd2_oracle(X, Y, sigma)).margin(1e-12));
        }
    }

    SECTION("symmetry in its arguments") {
        Rng rng(37);
        const Tensor X = fdcheck::random_matrix(rng, 6, 2);
        const Tensor Y = fdcheck::random_matrix(rng, 8, 2);
        const auto cfg = KernelConfig::fixed_sigma(0.9);
        CHECK(std::fabs(mmd2_unbiased(X, Y, cfg) - mmd2_unbiased(Y, X, cfg)) < 1e-12);
    }

    SECTION("separated Gaussians give a large positive estimate") {
        std::vector<double> vals;
        for (std::uint64_t seed : {1u, 2u, 3u}) {
            Rng rng(seed);
            const Tensor X = gaussian_sample(rng, 200, 0.0, 1.0);
            const Tensor Y = gaussian_sample(rng, 200, 5.0, 1.0);
            vals.push_back(mmd2_unbiased(X, Y, KernelConfig::median()));
        }
        std::sort(vals.begin(), vals.end());
        CHECK(vals[1] > 0.5);
    }

    SECTION("unbiasedness: mean over resamples of one distribution is near zero") {
        Rng rng(101);
        const int reps = 200;
        std::vector<double> est(reps);
        for (int r = 0; r < reps; ++r) {
            const Tensor X = gaussian_sample(rng, 64, 0.0, 1.0);
            const Tensor Y = gaussian_sample(rng, 64, 0.0, 1.0);
            est[r] = mmd2_unbiased(X, Y, KernelConfig::fixed_sigma(1.0));
        }
        double mean = 0.0;
        for (double v : est) mean += v;
        mean /= reps;
        double var = 0.0;
        for (double v : est) var += (v - mean) * (v - mean);
        var /= (reps - 1);
        const double se = std::sqrt(var / reps);
        CHECK(std::fabs(mean) < 3.0 * se);
    }

    SECTION("separation: positive in at least 95% of trials") {
        Rng rng(202);
        int positive = 0;
        for (int t = 0; t < 100; ++t) {
            const Tensor X = gaussian_sample(rng, 64, 0.0, 1.0);
            const Tensor Y = gaussian_sample(rng, 64, 3.0, 1.0);
            if (mmd2_unbiased(X, Y, KernelConfig::median()) > 0.0) ++positive;
        }
        CHECK(positive >= 95);
    }

    SECTION("too-small samples throw") {
        const Tensor X = Tensor::zeros(1, 2), Y = Tensor::zeros(4, 2);
        CHECK_THROWS_AS(mmd2_unbiased(X, Y, KernelConfig::median()), std::invalid_argument);
        CHECK_THROWS_AS(mmd2_unbiased(Y, X, KernelConfig::median()), std::invalid_argument);
    }
}

TEST_CASE("bc_loss") {
    Rng rng(55);
    MlpSpec cls_spec{2, {8}, 3, Activation::leaky_relu, Activation::none};
    const MlpParams cls_params = init_mlp(cls_spec, rng);
    const std::vector<PosteriorFn> classifiers = {frozen_mlp_posterior(cls_spec, cls_params)};

    SECTION("identical real and fake batches stay at or below zero") {
        const Tensor batch = fdcheck::random_matrix(rng, 32, 2, 0.0, 1.0);
        Graph g;
        Var fake = g.input(batch);
        const double v = g.value(bc_loss(g, batch, fake, classifiers, KernelConfig::median())).scalar_value();
        CHECK(v <= 1e-12);
        CHECK(std::fabs(v) < 0.05);
    }

    SECTION("constant-logit classifier gives zero loss for any data") {
        MlpParams constant = init_mlp(cls_spec, rng);
        for (auto& w : constant.weights)
            std::fill(w.values.begin(), w.values.end(), 0.0);
        for (auto& b : constant.biases)
            std::fill(b.values.begin(), b.values.end(), 0.0);
        const std::vector<PosteriorFn> constant_cls = {frozen_mlp_posterior(cls_spec, constant)};
        const Tensor real = fdcheck::random_matrix(rng, 16, 2);
        const Tensor fake_vals = fdcheck::random_matrix(rng, 16, 2);
        Graph g;
        Var fake = g.input(fake_vals);
        const double v =
            g.value(bc_loss(g, real, fake, constant_cls, KernelConfig::median())).scalar_value();
        CHECK(std::fabs(v) < 1e-12);
    }

    SECTION("disjoint halves of one distribution stay below the two-sample noise floor") {
        std::vector<double> vals;
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            Rng r2(seed);
            const std::size_t n = 256;
            Tensor a = Tensor::zeros(n, 2), b = Tensor::zeros(n, 2);
            for (double& v : a.values) v = r2.uniform01();
            for (double& v : b.values) v = r2.uniform01();
            Graph g;
            Var fake = g.input(b);
            vals.push_back(std::fabs(
                g.value(bc_loss(g, a, fake, classifiers, KernelConfig::median())).scalar_value()));
        }
        std::sort(vals.begin(), vals.end());
        CHECK(vals[2] < 4.0 / std::sqrt(256.0));
    }

    SECTION("gradient flows into the fake batch only") {
        const Tensor real = fdcheck::random_matrix(rng, 8, 2);
        const Tensor fake_vals = fdcheck::random_matrix(rng, 8, 2);
        Graph g;
        Var fake = g.input(fake_vals);
        Var loss = bc_loss(g, real, fake, classifiers, KernelConfig::median());
        Gradients grads = g.backward(loss);
        CHECK(grads.touched(fake));
        bool any_nonzero = false;
        for (double v : grads.tensor(fake).values) any_nonzero |= (v != 0.0);
        CHECK(any_nonzero);
    }

    SECTION("gradient matches finite differences at fixed bandwidth") {
        const auto cfg = KernelConfig::fixed_sigma(0.7);
        const Tensor real = fdcheck::random_matrix(rng, 6, 2);
        auto build = [&](Graph& g, const std::vector<Var>& in) {
            return bc_loss(g, real, in[0], classifiers, cfg);
        };
        for (int t = 0; t < 5; ++t) {
            std::vector<Tensor> inputs = {fdcheck::random_matrix(rng, 6, 2)};
            CHECK(fdcheck::max_grad_rel_err(build, inputs) < 1e-4);
        }
    }

    SECTION("empty classifier set and tiny batches throw") {
        const Tensor batch = fdcheck::random_matrix(rng, 8, 2);
        Graph g;
        Var fake = g.input(batch);
        CHECK_THROWS_AS(bc_loss(g, batch, fake, {}, KernelConfig::median()), std::invalid_argument);
        Graph g2;
        Var tiny = g2.input(Tensor::zeros(1, 2));
        CHECK_THROWS_AS(bc_loss(g2, batch, tiny, classifiers, KernelConfig::median()),
                        std::invalid_argument);
    }
}

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "sscsr/losses.hpp"
#include "sscsr/rng.hpp"

using namespace sscsr;

namespace {

ProbVector random_simplex(RngStream& rng, std::size_t c) {
    ProbVector p(c);
    double sum = 0.0;
    for (auto& v : p) {
        v = -std::log(1.0 - rng.uniform());
        sum += v;
    }
    for (auto& v : p) v /= sum;
    return p;
}

// Central finite differences against an analytic gradient.
template <typename F>
void check_grad(F f, ProbVector x, const ProbVector& analytic, double h = 1e-5,
                double tol = 1e-4) {
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double saved = x[k];
        x[k] = saved + h;
        const double up = f(x);
        x[k] = saved - h;
        const double dn = f(x);
        x[k] = saved;
        const double fd = (up - dn) / (2.0 * h);
        const double denom = std::max({std::abs(fd), std::abs(analytic[k]), 1e-6});
        INFO("component " << k << " fd=" << fd << " analytic=" << analytic[k]);
        CHECK(std::abs(fd - analytic[k]) / denom < tol);
    }
}

} // namespace

TEST_CASE("cross_entropy known values") {
    CHECK(cross_entropy({1.0, 0.0}, {1.0, 0.0}) == 0.0);
    CHECK(cross_entropy({0.5, 0.5}, {0.5, 0.5}) == Catch::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(cross_entropy({1.0, 0.0}, {0.5, 0.5}) == Catch::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK_THROWS_AS(cross_entropy({1.0, 0.0}, {1.0, 0.0, 0.0}), ShapeError);
}

TEST_CASE("kl_div known values and asymmetry") {
    RngStream rng(7);
    for (int i = 0; i < 20; ++i) {
        auto p = random_simplex(rng, 5);
        CHECK(kl_div(p, p) == 0.0);
    }
    CHECK(kl_div({1.0, 0.0}, {0.5, 0.5}) == Catch::Approx(std::log(2.0)).epsilon(1e-12));

    const double fwd = 0.9 * std::log(0.9 / 0.5) + 0.1 * std::log(0.1 / 0.5);
    const double rev = 0.5 * std::log(0.5 / 0.9) + 0.5 * std::log(0.5 / 0.1);
    CHECK(kl_div({0.9, 0.1}, {0.5, 0.5}) == Catch::Approx(fwd).epsilon(1e-12));
    CHECK(kl_div({0.5, 0.5}, {0.9, 0.1}) == Catch::Approx(rev).epsilon(1e-12));
    CHECK(std::abs(fwd - rev) > 1e-3);
}

TEST_CASE("mse_consistency known values") {
    CHECK(mse_consistency({0.3, 0.7}, {0.3, 0.7}) == 0.0);
    CHECK(mse_consistency({1.0, 0.0}, {0.0, 1.0}) == Catch::Approx(2.0));
    CHECK(mse_consistency({0.75, 0.25}, {0.25, 0.75}) == Catch::Approx(0.5));
}

TEST_CASE("scaled_cross_entropy matches standard form at alpha 0") {
    RngStream rng(11);
    for (int i = 0; i < 200; ++i) {
        auto t = random_simplex(rng, 2 + i % 9);
        auto p = random_simplex(rng, 2 + i % 9);
        CHECK(scaled_cross_entropy(t, p, 0.0) == cross_entropy(t, p));
    }
}

TEST_CASE("scaled_cross_entropy known values") {
    CHECK(scaled_cross_entropy({1.0, 0.0}, {0.7, 0.3}, 2.0) == 0.0);
    CHECK(scaled_cross_entropy({0.5, 0.5}, {0.5, 0.5}, 1.0) ==
          Catch::Approx(0.5 * std::log(2.0)).epsilon(1e-12));
    CHECK_THROWS_AS(scaled_cross_entropy({0.5, 0.5}, {0.5, 0.5}, -1.0), ConfigError);
}

TEST_CASE("scaled_cross_entropy strictly decreasing in alpha for p = q") {
    // max-prob grid for a 2-class self-consistent prediction
    for (double m = 0.55; m < 1.0; m += 0.05) {
        const ProbVector p{m, 1.0 - m};
        double prev = scaled_cross_entropy(p, p, 0.0);
        for (double a = 0.5; a <= 4.0; a += 0.5) {
            const double cur = scaled_cross_entropy(p, p, a);
            CHECK(cur < prev);
            prev = cur;
        }
    }
    // tends to 0 as confidence approaches 1 for alpha > 0
    const ProbVector sharp{0.9999, 0.0001};
    CHECK(scaled_cross_entropy(sharp, sharp, 1.0) < 1e-3);
}

TEST_CASE("swapped_prediction_loss symmetry and known values") {
    RngStream rng(3);
    for (int i = 0; i < 100; ++i) {
        auto p = random_simplex(rng, 4);
        auto q = random_simplex(rng, 4);
        const double a = (i % 5) * 0.75;
        CHECK(swapped_prediction_loss(p, q, a) == swapped_prediction_loss(q, p, a));
    }
    CHECK(swapped_prediction_loss({1.0, 0.0}, {1.0, 0.0}, 0.0) == 0.0);
    CHECK(swapped_prediction_loss({0.5, 0.5}, {0.5, 0.5}, 0.0) ==
          Catch::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("entropy decomposition identity") {
    RngStream rng(23);
    for (int i = 0; i < 2000; ++i) {
        const std::size_t c = 2 + static_cast<std::size_t>(rng.uniform_index(23));
        auto p = random_simplex(rng, c);
        auto q = random_simplex(rng, c);
        const double lhs = cross_entropy(p, q);
        const double rhs = cross_entropy(p, p) + kl_div(p, q);
        CHECK(std::abs(lhs - rhs) < 1e-9);
    }
}

TEST_CASE("losses are non-negative") {
    RngStream rng(5);
    for (int i = 0; i < 500; ++i) {
        auto p = random_simplex(rng, 6);
        auto q = random_simplex(rng, 6);
        CHECK(kl_div(p, q) >= -1e-12);
        CHECK(mse_consistency(p, q) >= 0.0);
        CHECK(cross_entropy(p, q) >= -1e-12);
        CHECK(scaled_cross_entropy(p, q, 2.0) >= -1e-12);
        CHECK(swapped_prediction_loss(p, q, 1.5) >= -1e-12);
    }
}

TEST_CASE("pseudo_label thresholding and tie-break") {
    auto l1 = pseudo_label({0.96, 0.04}, 0.95);
    REQUIRE(l1.has_value());
    CHECK(l1->class_index == 0);

    CHECK_FALSE(pseudo_label({0.7, 0.3}, 0.95).has_value());

    auto l3 = pseudo_label({0.5, 0.5}, 0.5);
    REQUIRE(l3.has_value());
    CHECK(l3->class_index == 0);

    auto l4 = pseudo_label({0.1, 0.45, 0.45}, 0.4);
    REQUIRE(l4.has_value());
    CHECK(l4->class_index == 1);
}

TEST_CASE("supervised_loss batch semantics") {
    std::vector<ProbVector> preds{{1.0, 0.0}, {0.0, 1.0}};
    std::vector<OneHotLabel> labels{{0}, {1}};
    CHECK(supervised_loss(preds, labels) == Catch::Approx(0.0).margin(1e-12));

    std::vector<ProbVector> uni{{0.25, 0.25, 0.25, 0.25}};
    CHECK(supervised_loss(uni, {{2}}) == Catch::Approx(std::log(4.0)).epsilon(1e-12));

    // batch mean equals arithmetic mean of per-pair losses
    std::vector<ProbVector> mixed{{0.7, 0.3}, {0.2, 0.8}, {0.5, 0.5}};
    std::vector<OneHotLabel> ml{{0}, {1}, {0}};
    double expect = (-std::log(0.7) - std::log(0.8) - std::log(0.5)) / 3.0;
    CHECK(supervised_loss(mixed, ml) == Catch::Approx(expect).epsilon(1e-12));

    CHECK_THROWS_AS(supervised_loss({}, {}), DegenerateInputError);
}

TEST_CASE("unsupervised_loss per-form values") {
    RngStream rng(17);
    std::vector<ProbVector> one_hot{{1.0, 0.0}, {0.0, 1.0}};
    for (auto form : {ConsistencyForm::SWAPPED, ConsistencyForm::CE, ConsistencyForm::KL,
                      ConsistencyForm::MSE, ConsistencyForm::CE_PSEUDO}) {
        auto r = unsupervised_loss(one_hot, one_hot, form, {});
        CHECK(std::abs(r.value) < 1e-12);
    }

    // CE_PSEUDO with nothing above threshold
    std::vector<ProbVector> soft{{0.6, 0.4}, {0.55, 0.45}};
    auto r = unsupervised_loss(soft, soft, ConsistencyForm::CE_PSEUDO, {0.0, 0.95, 1.0});
    CHECK(r.value == 0.0);
    CHECK(r.retained == 0);

    // MSE form equals lambda * mean of per-pair squared distances
    std::vector<ProbVector> po{{1.0, 0.0}, {0.75, 0.25}};
    std::vector<ProbVector> pa{{0.0, 1.0}, {0.25, 0.75}};
    UnsupParams mse_params;
    mse_params.lambda = 1.0;
    auto m = unsupervised_loss(po, pa, ConsistencyForm::MSE, mse_params);
    CHECK(m.value == Catch::Approx((2.0 + 0.5) / 2.0));
    mse_params.lambda = 0.25;
    auto m2 = unsupervised_loss(po, pa, ConsistencyForm::MSE, mse_params);
    CHECK(m2.value == Catch::Approx(0.25 * (2.0 + 0.5) / 2.0));
}

TEST_CASE("scaled_cross_entropy gradients match finite differences") {
    RngStream rng(41);
    for (double alpha : {0.0, 1.0, 2.0, 3.5}) {
        auto t = random_simplex(rng, 5);
        auto p = random_simplex(rng, 5);
        auto g = scaled_cross_entropy_grads(t, p, alpha);
        check_grad([&](const ProbVector& x) { return scaled_cross_entropy(x, p, alpha); }, t,
                   g.d_first);
        check_grad([&](const ProbVector& x) { return scaled_cross_entropy(t, x, alpha); }, p,
                   g.d_second);
    }
}

TEST_CASE("swapped/kl/mse gradients match finite differences") {
    RngStream rng(43);
    for (int i = 0; i < 5; ++i) {
        auto p = random_simplex(rng, 4);
        auto q = random_simplex(rng, 4);

        auto gs = swapped_prediction_grads(p, q, 2.0);
        check_grad([&](const ProbVector& x) { return swapped_prediction_loss(x, q, 2.0); }, p,
                   gs.d_first);
        check_grad([&](const ProbVector& x) { return swapped_prediction_loss(p, x, 2.0); }, q,
                   gs.d_second);

        auto gk = kl_grads(p, q);
        check_grad([&](const ProbVector& x) { return kl_div(x, q); }, p, gk.d_first);
        check_grad([&](const ProbVector& x) { return kl_div(p, x); }, q, gk.d_second);

        auto gm = mse_grads(p, q);
        check_grad([&](const ProbVector& x) { return mse_consistency(x, q); }, p, gm.d_first);
        check_grad([&](const ProbVector& x) { return mse_consistency(p, x); }, q, gm.d_second);
    }
}

TEST_CASE("batch unsupervised gradients match finite differences") {
    RngStream rng(47);
    const std::size_t bsz = 3, c = 4;
    std::vector<ProbVector> po, pa;
    for (std::size_t b = 0; b < bsz; ++b) {
        po.push_back(random_simplex(rng, c));
        pa.push_back(random_simplex(rng, c));
    }
    UnsupParams params;
    params.alpha = 1.5;
    params.tau = 0.2; // low enough that CE_PSEUDO retains everything
    params.lambda = 0.8;

    for (auto form : {ConsistencyForm::SWAPPED, ConsistencyForm::CE, ConsistencyForm::KL,
                      ConsistencyForm::MSE, ConsistencyForm::CE_PSEUDO}) {
        auto g = unsupervised_loss_grad(po, pa, form, params);
        for (std::size_t b = 0; b < bsz; ++b) {
            // d/d preds_aug always flows
            check_grad(
                [&](const ProbVector& x) {
                    auto copy = pa;
                    copy[b] = x;
                    return unsupervised_loss(po, copy, form, params).value;
                },
                pa[b], g.grad_aug[b]);
            if (form == ConsistencyForm::SWAPPED || form == ConsistencyForm::KL ||
                form == ConsistencyForm::MSE) {
                check_grad(
                    [&](const ProbVector& x) {
                        auto copy = po;
                        copy[b] = x;
                        return unsupervised_loss(copy, pa, form, params).value;
                    },
                    po[b], g.grad_orig[b]);
            } else {
                // stop-gradient target by default
                for (double v : g.grad_orig[b]) CHECK(v == 0.0);
            }
        }
    }
}

TEST_CASE("supervised gradient matches finite differences") {
    RngStream rng(53);
    std::vector<ProbVector> preds{random_simplex(rng, 4), random_simplex(rng, 4)};
    std::vector<OneHotLabel> labels{{1}, {3}};
    auto g = supervised_loss_grad(preds, labels);
    for (std::size_t b = 0; b < preds.size(); ++b) {
        check_grad(
            [&](const ProbVector& x) {
                auto copy = preds;
                copy[b] = x;
                return supervised_loss(copy, labels);
            },
            preds[b], g.grad[b]);
    }
}

TEST_CASE("stop_grad_target override") {
    RngStream rng(59);
    std::vector<ProbVector> po{random_simplex(rng, 3)};
    std::vector<ProbVector> pa{random_simplex(rng, 3)};
    auto on = unsupervised_loss_grad(po, pa, ConsistencyForm::KL, {}, StopGradTarget::On);
    for (double v : on.grad_orig[0]) CHECK(v == 0.0);
    auto off = unsupervised_loss_grad(po, pa, ConsistencyForm::CE, {}, StopGradTarget::Off);
    double mag = 0.0;
    for (double v : off.grad_orig[0]) mag += std::abs(v);
    CHECK(mag > 0.0);
}

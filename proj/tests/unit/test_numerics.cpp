#include "doctest.h"
#include "oracles.hpp"

#include "fours/errors.hpp"
#include "fours/numerics/normal.hpp"
#include "fours/numerics/optimizer.hpp"
#include "fours/numerics/quadrature.hpp"
#include "fours/numerics/random.hpp"
#include "fours/numerics/roots.hpp"
#include "fours/numerics/sobol.hpp"
#include "fours/numerics/splines.hpp"

#include <cmath>
#include <limits>
#include <random>

using namespace fours::numerics;
using doctest::Approx;

TEST_CASE("normal cdf and pdf") {
    CHECK(normal_cdf(0.0) == 0.5);
    CHECK(normal_pdf(0.0) == Approx(0.3989422804).epsilon(1e-10));
    // mpmath.ncdf(1.96)
    CHECK(std::abs(normal_cdf(1.96) - 0.97500210485178) < 1e-13);
    for (double x = -38.0; x <= 38.0; x += 0.173) {
        CHECK(std::abs(normal_cdf(x) + normal_cdf(-x) - 1.0) <= 1e-15);
        CHECK(normal_pdf(x) == normal_pdf(-x));
    }
}

TEST_CASE("normal quantile inverts the cdf") {
    for (double p : {1e-300, 1e-12, 0.01, 0.3, 0.5, 0.8, 0.975, 1.0 - 1e-12}) {
        CHECK(normal_cdf(normal_quantile(p)) == Approx(p).epsilon(1e-12));
    }
    CHECK(std::isinf(normal_quantile(0.0)));
    CHECK(std::isinf(normal_quantile(1.0)));
}

TEST_CASE("interval probability is accurate in both tails") {
    CHECK(normal_interval_probability(-1.0, 1.0) == Approx(0.682689492137086).epsilon(1e-13));
    // upper tail: plain subtraction of cdfs would cancel to zero
    const double tail = normal_interval_probability(9.0, 10.0);
    CHECK(tail > 0.0);
    CHECK(tail == Approx(oracle::phi_cdf(-9.0) - oracle::phi_cdf(-10.0)).epsilon(1e-10));
    CHECK(normal_interval_probability(1.0, 1.0) == 0.0);
    CHECK(normal_interval_probability(-INFINITY, INFINITY) == 1.0);
}

TEST_CASE("gauss-legendre rules") {
    const auto one = gauss_legendre(1, -1.0, 1.0);
    CHECK(one.nodes[0] == 0.0);
    CHECK(one.weights[0] == Approx(2.0));

    const auto two = gauss_legendre(2, 0.0, 1.0);
    double cube = 0.0;
    for (int i = 0; i < 2; ++i) cube += two.weights[i] * std::pow(two.nodes[i], 3);
    CHECK(cube == Approx(0.25).epsilon(1e-15));

    // exactness up to degree 2n - 1
    for (int n = 1; n <= 12; ++n) {
        const auto rule = gauss_legendre(n, -0.5, 2.0);
        for (int deg = 0; deg <= 2 * n - 1; ++deg) {
            double s = 0.0;
            for (int i = 0; i < n; ++i) s += rule.weights[i] * std::pow(rule.nodes[i], deg);
            const double exact = (std::pow(2.0, deg + 1) - std::pow(-0.5, deg + 1)) / (deg + 1);
            CHECK(s == Approx(exact).epsilon(1e-12));
        }
    }
    CHECK_THROWS_AS(gauss_legendre(0, 0.0, 1.0), fours::DomainError);
}

TEST_CASE("panel integration of an endpoint singularity matches adaptive Simpson") {
    auto f = [](double t) { return std::sqrt(t); };
    const double reference = oracle::adaptive_simpson(f, 0.0, 5.0, 1e-14);
    CHECK(std::abs(reference - 2.0 / 3.0 * std::pow(5.0, 1.5)) < 1e-10);
    const double panels = integrate_panels(f, 0.0, 5.0, {}, 30);
    CHECK(std::abs(panels - reference) <= 1e-10);
}

TEST_CASE("sobol sequence matches Joe-Kuo reference points") {
    SobolSequence seq(16);
    std::vector<std::vector<double>> pts;
    for (int i = 0; i <= 1000; ++i) pts.push_back(seq.next());
    for (double v : pts[0]) CHECK(v == 0.0);
    const std::vector<double> p5{0.875, 0.875, 0.125, 0.375, 0.875, 0.625, 0.875, 0.375,
                                 0.375, 0.125, 0.375, 0.875, 0.875, 0.125, 0.875, 0.375};
    const std::vector<double> p100{0.4140625, 0.2578125, 0.7734375, 0.7265625, 0.8828125, 0.7421875,
                                   0.0234375, 0.4765625, 0.6328125, 0.6953125, 0.4609375, 0.6796875,
                                   0.4765625, 0.8515625, 0.3203125, 0.4921875};
    const std::vector<double> p1000{0.2197265625, 0.0966796875, 0.5185546875, 0.6767578125,
                                    0.2802734375, 0.9072265625, 0.0458984375, 0.8994140625,
                                    0.5009765625, 0.0693359375, 0.0849609375, 0.2548828125,
                                    0.1611328125, 0.3837890625, 0.1435546875, 0.3701171875};
    CHECK(pts[5] == p5);
    CHECK(pts[100] == p100);
    CHECK(pts[1000] == p1000);
    CHECK_THROWS_AS(SobolSequence(17), fours::DomainError);
    CHECK_THROWS_AS(SobolSequence(0), fours::DomainError);
}

TEST_CASE("sobol normal points") {
    const auto first = sobol_normal(1, 1);
    CHECK(first(0, 0) == 0.0);  // second Sobol point is 0.5
    CHECK(sobol_normal(3, 64) == sobol_normal(3, 64));

    const auto pts = sobol_normal(4, 4096);
    for (int d = 0; d < 4; ++d) CHECK(std::abs(pts.col(d).mean()) <= 0.02);

    const auto moment = sobol_normal(2, 2048);
    for (int d = 0; d < 2; ++d) CHECK(std::abs(moment.col(d).squaredNorm() / 2048.0 - 1.0) <= 0.01);

    // moment error shrinks with the point count
    const double e256 = std::abs(sobol_normal(1, 256).col(0).squaredNorm() / 256.0 - 1.0);
    const double e4096 = std::abs(sobol_normal(1, 4096).col(0).squaredNorm() / 4096.0 - 1.0);
    CHECK(e4096 < e256);
}

TEST_CASE("brent root") {
    CHECK(brent_root([](double x) { return x - 2.0; }, 0.0, 5.0, 1e-14) == Approx(2.0).epsilon(1e-14));
    const double z = brent_root([](double x) { return normal_cdf(x) - 0.975; }, 0.0, 4.0, 1e-14);
    CHECK(std::abs(z - 1.95996398454005) < 1e-10);
    const double r = brent_root([](double x) { return x * x * x; }, -1.0, 2.0, 1e-12);
    CHECK(std::abs(r) < 1e-4);  // cube flattens the residual: |r|^3 < tol
    CHECK(std::abs(r * r * r) < 1e-12);
    CHECK_THROWS_AS(brent_root([](double x) { return x * x + 1.0; }, -1.0, 1.0), fours::BracketError);
}

TEST_CASE("brent minimize") {
    const auto m = brent_minimize([](double x) { return (x - 0.3) * (x - 0.3) + 1.0; }, -1.0, 1.0, 1e-12);
    CHECK(m.x == Approx(0.3).epsilon(1e-8));
    CHECK(m.value == Approx(1.0));
}

TEST_CASE("marquardt-levenberg on a quadratic") {
    auto f = [](const Eigen::VectorXd& x) { return -(x[0] - 3.0) * (x[0] - 3.0); };
    const auto res = marquardt_levenberg(f, Eigen::VectorXd::Zero(1));
    REQUIRE(res.converged);
    CHECK(res.argmax[0] == Approx(3.0).epsilon(1e-8));
    CHECK(res.rdm <= 1e-8);
    CHECK(res.param_converged);
    CHECK(res.objective_converged);
}

TEST_CASE("marquardt-levenberg on Rosenbrock") {
    auto f = [](const Eigen::VectorXd& x) {
        return -((1.0 - x[0]) * (1.0 - x[0]) + 100.0 * (x[1] - x[0] * x[0]) * (x[1] - x[0] * x[0]));
    };
    Eigen::VectorXd start(2);
    start << -1.2, 1.0;
    const auto res = marquardt_levenberg(f, start);
    REQUIRE(res.converged);
    CHECK(std::abs(res.argmax[0] - 1.0) <= 1e-5);
    CHECK(std::abs(res.argmax[1] - 1.0) <= 1e-5);
}

TEST_CASE("marquardt-levenberg logistic regression matches IRLS") {
    const std::vector<int> labels{0, 0, 1, 0, 0, 1, 0, 1, 0, 1, 1, 0, 1, 1, 0, 1, 1, 1, 0, 1};
    Eigen::MatrixXd x(20, 2);
    Eigen::VectorXd y(20);
    for (int i = 0; i < 20; ++i) {
        x(i, 0) = 1.0;
        x(i, 1) = -2.0 + 4.0 * i / 19.0;
        y[i] = labels[i];
    }
    auto loglik = [&](const Eigen::VectorXd& b) {
        double s = 0.0;
        for (int i = 0; i < 20; ++i) {
            const double eta = x.row(i).dot(b);
            s += y[i] * eta - std::log1p(std::exp(eta));
        }
        return s;
    };
    const auto res = marquardt_levenberg(loglik, Eigen::VectorXd::Zero(2));
    REQUIRE(res.converged);
    const auto ref = oracle::logistic_irls(x, y);
    CHECK(std::abs(res.argmax[0] - ref[0]) <= 1e-5);
    CHECK(std::abs(res.argmax[1] - ref[1]) <= 1e-5);
}

TEST_CASE("marquardt-levenberg never accepts a decreasing step and reports non-convergence") {
    std::vector<double> values;
    auto f = [&](const Eigen::VectorXd& x) {
        const double v = -std::pow(x[0] - 1.0, 4) - std::pow(x[1] + 2.0, 2);
        return v;
    };
    fours::numerics::SmoothObjective obj;
    obj.value = f;
    obj.derivatives = [&](const Eigen::VectorXd& x) {
        auto d = finite_difference_derivatives(f, x);
        values.push_back(d.value);
        return d;
    };
    OptimizerSettings settings;
    settings.max_iterations = 3;
    const auto res = marquardt_levenberg(obj, Eigen::Vector2d(5.0, 5.0), settings);
    for (std::size_t i = 1; i < values.size(); ++i) CHECK(values[i] >= values[i - 1]);
    CHECK_FALSE(res.converged);
    CHECK(res.status == "maximum number of iterations reached");
}

TEST_CASE("marquardt-levenberg rejects non-finite trial points") {
    // log-barrier objective: undefined for x <= 0
    auto f = [](const Eigen::VectorXd& x) {
        if (x[0] <= 0.0) return std::nan("");
        return std::log(x[0]) - x[0];
    };
    const auto res = marquardt_levenberg(f, Eigen::VectorXd::Constant(1, 0.05));
    REQUIRE(res.converged);
    CHECK(res.argmax[0] == Approx(1.0).epsilon(1e-5));
}

TEST_CASE("optimizer settings validation") {
    OptimizerSettings s;
    s.rdm_tol = 0.0;
    CHECK_THROWS_AS(s.validate(), fours::DomainError);
}

TEST_CASE("b-spline partition of unity") {
    SplineBasis b(SplineKind::CubicBSpline, {1.0, 2.5, 4.0}, {0.0, 6.0});
    CHECK(b.size() == 7);
    for (double t = 0.0; t <= 6.0; t += 0.01) {
        const auto v = b.evaluate(t);
        CHECK(v.sum() == Approx(1.0).epsilon(1e-13));
        CHECK(v.minCoeff() >= 0.0);
    }
    CHECK(b.evaluate(6.0).sum() == Approx(1.0));
}

TEST_CASE("i-spline limits and monotonicity") {
    SplineBasis b(SplineKind::QuadraticISpline, {2.0, 5.0, 7.0}, {0.0, 10.0});
    CHECK(b.size() == 6);
    CHECK(b.evaluate(0.0).cwiseAbs().maxCoeff() == 0.0);
    CHECK((b.evaluate(10.0).array() - 1.0).abs().maxCoeff() < 1e-14);
    Eigen::VectorXd prev = b.evaluate(0.0);
    for (double t = 0.01; t <= 10.0; t += 0.01) {
        const auto v = ispline_eval(b, t);
        CHECK((v.array() >= prev.array() - 1e-15).all());
        CHECK(v.maxCoeff() <= 1.0);
        prev = v;
    }
    // M-splines are the derivative of the I-splines
    for (double t : {0.5, 2.0, 3.3, 6.9, 9.5}) {
        const double h = 1e-6;
        const Eigen::VectorXd fd = (b.evaluate(t + h) - b.evaluate(t - h)) / (2.0 * h);
        CHECK((fd - b.derivative(t)).cwiseAbs().maxCoeff() < 1e-6);
    }
    // each M-spline integrates to one
    for (int i = 0; i < b.size(); ++i) {
        const double mass = integrate_panels([&](double t) { return b.derivative(t)[i]; }, 0.0, 10.0,
                                             {2.0, 5.0, 7.0}, 10);
        CHECK(mass == Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("natural cubic spline") {
    SplineBasis b(SplineKind::NaturalCubic, {1.5}, {0.0, 6.0});
    CHECK(b.size() == 2);
    CHECK(b.evaluate(0.0).cwiseAbs().maxCoeff() == 0.0);
    // second derivative at the boundary knots, by finite differences
    const double h = 1e-4;
    for (double t : {0.0, 6.0}) {
        const Eigen::VectorXd fd = (b.evaluate(t + h) - 2.0 * b.evaluate(t) + b.evaluate(t - h)) / (h * h);
        CHECK(fd.cwiseAbs().maxCoeff() < 1e-4);
    }
    // linear beyond the right boundary
    const Eigen::VectorXd slope1 = b.evaluate(8.0) - b.evaluate(7.0);
    const Eigen::VectorXd slope2 = b.evaluate(9.0) - b.evaluate(8.0);
    CHECK((slope1 - slope2).cwiseAbs().maxCoeff() < 1e-12);
    // analytic derivative agrees with differences
    for (double t : {0.7, 1.5, 3.0}) {
        const Eigen::VectorXd fd = (b.evaluate(t + 1e-6) - b.evaluate(t - 1e-6)) / 2e-6;
        CHECK((fd - b.derivative(t)).cwiseAbs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("malformed knots are rejected") {
    CHECK_THROWS_AS(SplineBasis(SplineKind::CubicBSpline, {2.0, 1.0}, {0.0, 3.0}), fours::DomainError);
    CHECK_THROWS_AS(SplineBasis(SplineKind::NaturalCubic, {5.0}, {0.0, 3.0}), fours::DomainError);
    CHECK_THROWS_AS(SplineBasis(SplineKind::QuadraticISpline, {}, {1.0, 1.0}), fours::DomainError);
}

TEST_CASE("quantile knots") {
    const auto k = quantile_knots({4.0, 1.0, 3.0, 2.0}, {0.0, 0.5, 1.0});
    CHECK(k[0] == 1.0);
    CHECK(k[1] == Approx(2.5));
    CHECK(k[2] == 4.0);
}

TEST_CASE("bivariate normal cdf") {
    // scipy.stats.multivariate_normal.cdf at abseps 1e-14
    struct Case {
        double h, k, r, p;
    };
    const Case cases[] = {{0.3, -0.5, 0.2, 0.217213249051493},   {1.0, 0.5, 0.6, 0.641828990063871},
                          {-1.2, 0.4, -0.8, 0.0090911095786687}, {0.7, 0.7, 0.95, 0.718559557200445},
                          {-0.5, 0.3, -0.97, 0.0105715159096126}, {2.0, -1.5, 0.5, 0.0667817746911133},
                          {-3.0, -2.5, 0.99, 0.00134983372730065}};
    for (const auto& c : cases) CHECK(std::abs(bivariate_normal_cdf(c.h, c.k, c.r) - c.p) < 1e-12);

    // one-dimensional integral of phi(x) Phi((k - r x) / sqrt(1 - r^2))
    for (double r : {-0.9, -0.4, 0.0, 0.35, 0.8, 0.93}) {
        for (double h : {-1.5, 0.2, 1.1}) {
            const double k = 0.4 - 0.5 * h;
            const double s = std::sqrt(1.0 - r * r);
            const double ref = oracle::adaptive_simpson(
                [&](double x) { return oracle::phi_pdf(x) * oracle::phi_cdf((k - r * x) / s); }, -12.0, h, 1e-14);
            CHECK(std::abs(bivariate_normal_cdf(h, k, r) - ref) < 1e-12);
        }
    }
    CHECK(bivariate_normal_cdf(0.0, 0.0, 0.0) == Approx(0.25).epsilon(1e-15));
    CHECK(bivariate_normal_cdf(0.5, 1.0, 1.0) == Approx(normal_cdf(0.5)).epsilon(1e-14));
    CHECK(bivariate_normal_cdf(std::numeric_limits<double>::infinity(), 0.3, 0.5) == normal_cdf(0.3));
    CHECK(bivariate_normal_cdf(-std::numeric_limits<double>::infinity(), 0.3, 0.5) == 0.0);
}

TEST_CASE("portable rng") {
    Rng a(42), b(42), c(43);
    bool differs = false;
    for (int i = 0; i < 100; ++i) {
        const double x = a.uniform();
        CHECK(x == b.uniform());
        CHECK(x > 0.0);
        CHECK(x < 1.0);
        differs |= x != c.uniform();
    }
    CHECK(differs);
    CHECK(derive_seed(1, 0) != derive_seed(1, 1));
    CHECK(derive_seed(1, 0) != derive_seed(2, 0));
    double sum = 0.0, sq = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double z = a.normal();
        sum += z;
        sq += z * z;
    }
    CHECK(std::abs(sum / n) < 0.03);
    CHECK(std::abs(sq / n - 1.0) < 0.04);
    std::vector<int> hits(7, 0);
    for (int i = 0; i < 7000; ++i) ++hits[a.index(7)];
    for (int h : hits) CHECK(h > 850);
}

#include "fours/numerics/normal.hpp"

#include <boost/math/special_functions/erf.hpp>
#include <algorithm>
#include <cmath>
#include <limits>

namespace fours::numerics {

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kTwoPi = 6.283185307179586477;

// Half Gauss-Legendre rules with 6, 12 and 20 points.
constexpr double kW[3][10] = {
    {0.1713244923791705, 0.3607615730481384, 0.4679139345726904},
    {0.04717533638651177, 0.1069393259953183, 0.1600783285433464, 0.2031674267230659, 0.2334925365383547,
     0.2491470458134029},
    {0.01761400713915212, 0.04060142980038694, 0.06267204833410906, 0.08327674157670475, 0.1019301198172404,
     0.1181945319615184, 0.1316886384491766, 0.1420961093183821, 0.1491729864726037, 0.1527533871307259}};
constexpr double kX[3][10] = {
    {-0.9324695142031522, -0.6612093864662647, -0.2386191860831970},
    {-0.9815606342467191, -0.9041172563704750, -0.7699026741943050, -0.5873179542866171, -0.3678314989981802,
     -0.1252334085114692},
    {-0.9931285991850949, -0.9639719272779138, -0.9122344282513259, -0.8391169718222188, -0.7463319064601508,
     -0.6360536807265150, -0.5108670019508271, -0.3737060887154196, -0.2277858511416451, -0.07652652113349733}};

// P(X > dh, Y > dk).
double bvnd(double dh, double dk, double r) {
    int ng = 0, lg = 3;
    if (std::abs(r) < 0.3) {
        ng = 0;
        lg = 3;
    } else if (std::abs(r) < 0.75) {
        ng = 1;
        lg = 6;
    } else {
        ng = 2;
        lg = 10;
    }
    double h = dh, k = dk, hk = h * k, bvn = 0.0;
    if (std::abs(r) < 0.925) {
        const double hs = (h * h + k * k) / 2.0;
        const double asr = std::asin(r);
        for (int i = 0; i < lg; ++i) {
            double sn = std::sin(asr * (kX[ng][i] + 1.0) / 2.0);
            bvn += kW[ng][i] * std::exp((sn * hk - hs) / (1.0 - sn * sn));
            sn = std::sin(asr * (-kX[ng][i] + 1.0) / 2.0);
            bvn += kW[ng][i] * std::exp((sn * hk - hs) / (1.0 - sn * sn));
        }
        return bvn * asr / (2.0 * kTwoPi) + normal_cdf(-h) * normal_cdf(-k);
    }
    if (r < 0.0) {
        k = -k;
        hk = -hk;
    }
    if (std::abs(r) < 1.0) {
        const double as = (1.0 - r) * (1.0 + r);
        double a = std::sqrt(as);
        const double bs = (h - k) * (h - k);
        const double c = (4.0 - hk) / 8.0;
        const double d = (12.0 - hk) / 16.0;
        bvn = a * std::exp(-(bs / as + hk) / 2.0) * (1.0 - c * (bs - as) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as * as / 5.0);
        if (hk > -160.0) {
            const double b = std::sqrt(bs);
            bvn -= std::exp(-hk / 2.0) * std::sqrt(kTwoPi) * normal_cdf(-b / a) * b * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
        }
        a /= 2.0;
        for (int i = 0; i < lg; ++i) {
            for (int is = -1; is <= 1; is += 2) {
                const double xs = std::pow(a * (is * kX[ng][i] + 1.0), 2);
                const double rs = std::sqrt(1.0 - xs);
                const double e = -(bs / xs + hk) / 2.0;
                if (e > -100.0)
                    bvn += a * kW[ng][i] * std::exp(e) *
                           (std::exp(-hk * xs / (2.0 * (1.0 + rs) * (1.0 + rs))) / rs - (1.0 + c * xs * (1.0 + d * xs)));
            }
        }
        bvn = -bvn / kTwoPi;
    }
    if (r > 0.0) return bvn + normal_cdf(-std::max(h, k));
    return -bvn + std::max(0.0, normal_cdf(-h) - normal_cdf(-k));
}

}  // namespace

double normal_cdf(double x) {
    return 0.5 * std::erfc(-x * kInvSqrt2);
}

double normal_pdf(double x) {
    return kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

double normal_quantile(double p) {
    if (p <= 0.0) return -std::numeric_limits<double>::infinity();
    if (p >= 1.0) return std::numeric_limits<double>::infinity();
    if (p < 0.5) return -std::sqrt(2.0) * boost::math::erfc_inv(2.0 * p);
    return std::sqrt(2.0) * boost::math::erfc_inv(2.0 * (1.0 - p));
}

double normal_interval_probability(double lower, double upper) {
    if (!(upper > lower)) return 0.0;
    if (lower > 0.0) {
        // Both bounds in the upper tail: use survival functions.
        return normal_cdf(-lower) - normal_cdf(-upper);
    }
    return normal_cdf(upper) - normal_cdf(lower);
}

double bivariate_normal_cdf(double h, double k, double rho) {
    if (h == -std::numeric_limits<double>::infinity() || k == -std::numeric_limits<double>::infinity()) return 0.0;
    if (h == std::numeric_limits<double>::infinity()) return normal_cdf(k);
    if (k == std::numeric_limits<double>::infinity()) return normal_cdf(h);
    return std::clamp(bvnd(-h, -k, rho), 0.0, 1.0);
}

}  // namespace fours::numerics

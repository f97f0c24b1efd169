#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "bpeimg/markov.hpp"

using namespace bpeimg;

namespace {

const double kLn2 = std::log(2.0);

double h2(double d) { return -d * std::log(d) - (1 - d) * std::log(1 - d); }

// Mean and standard error of independent per-unit estimates.
struct Estimate {
    double mean = 0.0;
    double se = 0.0;
};

Estimate summarize(const std::vector<double>& xs) {
    double s = 0, s2 = 0;
    for (double x : xs) s += x;
    const double n = static_cast<double>(xs.size());
    const double mean = s / n;
    for (double x : xs) s2 += (x - mean) * (x - mean);
    return {mean, std::sqrt(s2 / (n - 1) / n)};
}

MarkovKernel random_kernel(std::mt19937_64& rng, std::size_t c, bool allow_zeros) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<std::vector<double>> rows(c, std::vector<double>(c));
    for (auto& row : rows) {
        double sum = 0;
        for (auto& x : row) {
            x = (allow_zeros && u(rng) < 0.3) ? 0.0 : u(rng) + 1e-3;
            sum += x;
        }
        if (sum == 0) {
            row[0] = 1;
            sum = 1;
        }
        for (auto& x : row) x /= sum;
    }
    return MarkovKernel(rows);
}

} // namespace

TEST_CASE("closed-form oracles") {
    // Frozen from 30-digit mpmath evaluations.
    const auto k = MarkovKernel::binary_flip(0.9, 0.9);
    const auto pi = stationary(k);
    CHECK(pi.probs[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(entropy(pi) == doctest::Approx(0.6931471805599453).epsilon(1e-12));
    CHECK(h_infinity(k, pi) == doctest::Approx(0.3250829733914482).epsilon(1e-12));

    const auto r256 = prop2_bound(k, 256);
    CHECK(r256.epsilon == doctest::Approx(0.4194353655160811).epsilon(1e-12));
    CHECK(r256.prop2_bound == doctest::Approx(0.5599427765358531).epsilon(1e-12));
    CHECK(r256.delta == doctest::Approx(0.1).epsilon(1e-12));
    const auto r4096 = prop2_bound(k, 4096);
    CHECK(r4096.epsilon == doctest::Approx(0.2796235770107207).epsilon(1e-12));
    CHECK(r4096.prop2_bound == doctest::Approx(0.4512682023135648).epsilon(1e-12));
    CHECK_THROWS_WITH_AS(prop2_bound(k, 2), doctest::Contains("3.355"), DataError);

    const auto asym = MarkovKernel::binary_flip(0.3, 0.6);
    const auto pa = stationary(asym);
    CHECK(pa.probs[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(entropy(pa) == doctest::Approx(0.6365141682948128).epsilon(1e-12));
    CHECK(h_infinity(asym, pa) == doctest::Approx(0.6315800903730145).epsilon(1e-12));

    CHECK(joint_entropy_exact(k, pi, 2) == doctest::Approx(2.036460307902787).epsilon(1e-12));
}

TEST_CASE("switching-rate ratios") {
    const double deltas[] = {0.3, 0.2, 0.1, 0.05, 0.01};
    const double ratios[] = {1.1346991, 1.3851795, 2.1322162, 3.4916572, 12.377289};
    const double rates[] = {0.6108643, 0.5004024, 0.3250830, 0.1985152, 0.0560015};
    for (int i = 0; i < 5; ++i) {
        const auto r = remark1_rate(deltas[i]);
        CHECK(r.rate == doctest::Approx(rates[i]).epsilon(1e-6));
        CHECK(r.ratio == doctest::Approx(ratios[i]).epsilon(1e-6));
        CHECK(r.rate == doctest::Approx(h_infinity(MarkovKernel::binary_flip(1 - deltas[i], 1 - deltas[i]),
                                                   StationaryDist{{0.5, 0.5}})));
    }
    CHECK_THROWS_AS(remark1_rate(0.0), DataError);
    CHECK_THROWS_AS(remark1_rate(1.0), DataError);
}

TEST_CASE("bound needs a positive delta") {
    const auto k = MarkovKernel({{0.0, 1.0}, {0.5, 0.5}});
    CHECK(k.is_ergodic());
    CHECK_THROWS_WITH_AS(prop2_bound(k, 256), doctest::Contains("delta"), DataError);
    CHECK_THROWS_AS(prop2_epsilon(0.1, 1), DataError);
}

TEST_CASE("entropy report json") {
    const auto r = prop2_bound(MarkovKernel::binary_flip(0.9, 0.9), 256);
    const auto nats = r.to_json();
    CHECK(nats.find("\"unit\": \"nats\"") != std::string::npos);
    CHECK(nats.find("\"dictionary_size_D\": 256") != std::string::npos);
    const auto bits = r.to_json(true);
    CHECK(bits.find("\"h_pi\": 1") != std::string::npos);
}

TEST_CASE("kernel validation, ergodicity and json") {
    CHECK_THROWS_AS(MarkovKernel({{0.5, 0.6}, {0.5, 0.5}}), DataError);
    CHECK_THROWS_AS(MarkovKernel({{1.5, -0.5}, {0.5, 0.5}}), DataError);
    CHECK_THROWS_AS(MarkovKernel({{1.0}, {0.5, 0.5}}), DataError);
    CHECK_THROWS_AS(MarkovKernel({}), DataError);

    CHECK_FALSE(MarkovKernel({{0, 1}, {1, 0}}).is_ergodic());  // period 2
    CHECK_FALSE(MarkovKernel({{1, 0}, {0, 1}}).is_ergodic());  // reducible
    CHECK_FALSE(MarkovKernel({{0, 1, 0}, {0, 0, 1}, {1, 0, 0}}).is_ergodic());
    CHECK(MarkovKernel({{0, 1, 0}, {0, 0, 1}, {0.5, 0, 0.5}}).is_ergodic());
    CHECK_THROWS_AS(stationary(MarkovKernel({{0, 1}, {1, 0}})), DataError);

    const auto k = MarkovKernel({{0.2, 0.3, 0.5}, {0.1, 0.1, 0.8}, {0.6, 0.4, 0.0}});
    CHECK(MarkovKernel::from_json(k.to_json()).to_json() == k.to_json());
    const auto parsed = MarkovKernel::from_json(R"({"alphabet_size": 2, "transition": [[0.1, 0.9], [0.9, 0.1]]})");
    CHECK(parsed(0, 1) == 0.9);
    CHECK_THROWS_AS(MarkovKernel::from_json(R"({"alphabet_size": 3, "transition": [[0.1, 0.9], [0.9, 0.1]]})"),
                    DataError);
    CHECK_THROWS_AS(MarkovKernel::from_json("[1,2"), DataError);
}

TEST_CASE("random kernel fuzz") {
    std::mt19937_64 rng(101);
    int checked = 0;
    for (int i = 0; i < 1200; ++i) {
        const std::size_t c = 2 + i % 7;
        const auto k = random_kernel(rng, c, i % 3 == 0);
        if (!k.is_ergodic()) {
            CHECK_THROWS_AS(stationary(k), DataError);
            continue;
        }
        const auto pi = stationary(k);
        CHECK(stationary_residual(k, pi) < 1e-10);
        const double hpi = entropy(pi), hinf = h_infinity(k, pi);
        CHECK(hinf >= -1e-12);
        CHECK(hinf <= hpi + 1e-12);
        CHECK(hpi <= std::log(static_cast<double>(c)) + 1e-12);
        if (k.min_entry() > 0) {
            for (std::uint64_t d : {256ull, 4096ull, 1ull << 20}) {
                const double eps = prop2_epsilon(k.min_entry(), d);
                if (eps < 1) CHECK(prop2_bound(k, d).prop2_bound >= hinf);
            }
        }
        ++checked;
    }
    CHECK(checked >= 1000);
}

TEST_CASE("two-by-two image entropy by exhaustive enumeration") {
    std::mt19937_64 rng(103);
    std::vector<MarkovKernel> kernels{MarkovKernel::binary_flip(0.9, 0.9), MarkovKernel::binary_flip(0.3, 0.6)};
    for (int i = 0; i < 20; ++i) kernels.push_back(random_kernel(rng, 2 + i % 2, false));
    for (const auto& k : kernels) {
        const auto pi = stationary(k);
        const std::size_t c = k.alphabet_size();
        // Columns are independent chains started from pi: P = prod_col pi(top) P(bottom | top).
        double h = 0;
        for (std::size_t a = 0; a < c; ++a)
            for (std::size_t b = 0; b < c; ++b)
                for (std::size_t x = 0; x < c; ++x)
                    for (std::size_t y = 0; y < c; ++y) {
                        const double p = pi.probs[a] * k(a, x) * pi.probs[b] * k(b, y);
                        if (p > 0) h -= p * std::log(p);
                    }
        CHECK(std::abs(joint_entropy_exact(k, pi, 2) - h) < 1e-12);
    }
}

TEST_CASE("scenario generator") {
    SUBCASE("deterministic two-cycle") {
        const auto k = MarkovKernel({{0, 1}, {1, 0}});
        const StationaryDist pi{{0.5, 0.5}};
        const auto g = gen_scenario(k, pi, 8, ScenarioAxis::column, 5);
        for (std::uint32_t r = 1; r < 8; ++r)
            for (std::uint32_t c = 0; c < 8; ++c) CHECK(g.at(r, c) == 1 - g.at(r - 1, c));
        const auto t = gen_scenario(k, pi, 8, ScenarioAxis::row, 5);
        for (std::uint32_t r = 0; r < 8; ++r)
            for (std::uint32_t c = 1; c < 8; ++c) CHECK(t.at(r, c) == 1 - t.at(r, c - 1));
    }
    SUBCASE("seed determinism") {
        const auto k = MarkovKernel::binary_flip(0.3, 0.6);
        const auto pi = stationary(k);
        CHECK(gen_scenario(k, pi, 16, ScenarioAxis::column, 9, 3) == gen_scenario(k, pi, 16, ScenarioAxis::column, 9, 3));
        CHECK_FALSE(gen_scenario(k, pi, 16, ScenarioAxis::column, 9, 3) ==
                    gen_scenario(k, pi, 16, ScenarioAxis::column, 9, 4));
        CHECK_FALSE(gen_scenario(k, pi, 16, ScenarioAxis::column, 9, 3) ==
                    gen_scenario(k, pi, 16, ScenarioAxis::column, 10, 3));
    }
    SUBCASE("Monte Carlo statistics") {
        const auto k = MarkovKernel::binary_flip(0.3, 0.6);
        const auto pi = stationary(k);
        const std::uint32_t m = 64;
        // Columns are independent chains, so per-column frequencies are i.i.d. units.
        std::vector<double> ones, vert01, vert11, horiz01;
        for (std::uint64_t s = 0; s < 250; ++s) {
            const auto g = gen_scenario(k, pi, m, ScenarioAxis::column, 77, s);
            for (std::uint32_t c = 0; c < m; ++c) {
                double n1 = 0, v01 = 0, v11 = 0;
                for (std::uint32_t r = 0; r < m; ++r) {
                    n1 += g.at(r, c);
                    if (r + 1 < m) {
                        v01 += g.at(r, c) == 0 && g.at(r + 1, c) == 1;
                        v11 += g.at(r, c) == 1 && g.at(r + 1, c) == 1;
                    }
                }
                ones.push_back(n1 / m);
                vert01.push_back(v01 / (m - 1));
                vert11.push_back(v11 / (m - 1));
            }
            // Rows of adjacent column pairs (c, c+1) for even c are independent units.
            for (std::uint32_t c = 0; c + 1 < m; c += 2) {
                double h01 = 0;
                for (std::uint32_t r = 0; r < m; ++r) h01 += g.at(r, c) == 0 && g.at(r, c + 1) == 1;
                horiz01.push_back(h01 / m);
            }
        }
        const auto e1 = summarize(ones);
        CHECK(std::abs(e1.mean - pi.probs[1]) < 3 * e1.se);
        const auto e01 = summarize(vert01);
        CHECK(std::abs(e01.mean - pi.probs[0] * k(0, 1)) < 3 * e01.se);
        const auto e11 = summarize(vert11);
        CHECK(std::abs(e11.mean - pi.probs[1] * k(1, 1)) < 3 * e11.se);
        const auto h01 = summarize(horiz01);
        CHECK(std::abs(h01.mean - pi.probs[0] * pi.probs[1]) < 3 * h01.se);
        CHECK(ones.size() * m >= 1'000'000);
    }
}

TEST_CASE("2D k-th order generator") {
    SUBCASE("parameter checks") {
        CHECK_THROWS_AS(gen_defn1({0.9, 0.9, 1}, 1, 0), DataError);
        CHECK_THROWS_AS(gen_defn1({0.9, 0.9, 3}, 3, 0), DataError);
        CHECK_THROWS_AS(gen_defn1({0.0, 0.0, 1}, 8, 0), DataError);
        CHECK_THROWS_AS(gen_defn1({1.2, 0.5, 1}, 8, 0), DataError);
        CHECK(Defn1Params{0.3, 0.6, 1}.stationary_probs()[0] == doctest::Approx(2.0 / 3.0));
    }
    SUBCASE("p = q = 1 gives a checkerboard") {
        for (std::uint64_t s = 0; s < 10; ++s) {
            const auto g = gen_defn1({1.0, 1.0, 1}, 9, 4, s);
            for (std::uint32_t r = 0; r < 9; ++r)
                for (std::uint32_t c = 0; c < 9; ++c) CHECK(g.at(r, c) == (g.at(0, 0) ^ ((r + c) & 1u)));
        }
    }
    SUBCASE("higher order uses the k-distant parents") {
        const auto g = gen_defn1({1.0, 1.0, 2}, 10, 1);
        for (std::uint32_t r = 2; r < 10; ++r)
            for (std::uint32_t c = 0; c < 10; ++c) CHECK(g.at(r, c) == 1 - g.at(r - 2, c));
    }
    SUBCASE("seed determinism") {
        CHECK(gen_defn1({0.9, 0.9, 1}, 16, 3, 1) == gen_defn1({0.9, 0.9, 1}, 16, 3, 1));
        CHECK_FALSE(gen_defn1({0.9, 0.9, 1}, 16, 3, 1) == gen_defn1({0.9, 0.9, 1}, 16, 3, 2));
    }
    SUBCASE("Monte Carlo statistics") {
        const double flip = 0.9;
        std::vector<double> marginal, vertical_identity;
        for (std::uint64_t s = 0; s < 250; ++s) {
            const auto g = gen_defn1({flip, flip, 1}, 64, 21, s);
            double ones = 0, d = 0, n = 0;
            for (std::uint32_t r = 0; r < 64; ++r) {
                for (std::uint32_t c = 0; c < 64; ++c) {
                    ones += g.at(r, c);
                    if (r == 0 || c == 0) continue;
                    // P(X = up) = 1/2 (1 - flip) + 1/2 P(kernel(left) = up), given both parents.
                    const bool agree = g.at(r - 1, c) == g.at(r, c - 1);
                    const double expected = 0.5 * (1 - flip) + 0.5 * (agree ? 1 - flip : flip);
                    d += (g.at(r, c) == g.at(r - 1, c)) - expected;
                    ++n;
                }
            }
            marginal.push_back(ones / (64.0 * 64.0));
            vertical_identity.push_back(d / n);
        }
        const auto em = summarize(marginal);
        CHECK(std::abs(em.mean - 0.5) < 3 * em.se);
        const auto ev = summarize(vertical_identity);
        CHECK(std::abs(ev.mean) < 3 * ev.se);
    }
}

TEST_CASE("optimal loss under a hidden parent coin") {
    const auto half = optimal_loss_defn1({0.5, 0.5, 1}, 32, 10'000, 1);
    CHECK(half.mean == doctest::Approx(kLn2).epsilon(1e-12));

    const auto ones = optimal_loss_defn1({1.0, 1.0, 1}, 32, 10'000, 1);
    CHECK(ones.mean == doctest::Approx(0.0));
    CHECK(ones.parent_agreement == 1.0);

    const auto est = optimal_loss_defn1({0.9, 0.9, 1}, 32, 100'000, 5);
    CHECK(est.samples == 100'000);
    CHECK(est.mean > h2(0.1));
    CHECK(est.mean < kLn2);
    // Agreeing parents leave H(0.1); disagreeing parents give a uniform mixture.
    const double a = est.parent_agreement;
    CHECK(est.mean == doctest::Approx(a * h2(0.1) + (1 - a) * kLn2).epsilon(1e-9));
    CHECK(est.std_error > 0);
    CHECK(est.std_error < 0.01);

    CHECK_THROWS_AS(optimal_loss_defn1({0.9, 0.9, 1}, 32, 9'999, 1), DataError);
}

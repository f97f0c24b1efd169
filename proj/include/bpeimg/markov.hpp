#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bpeimg/grid.hpp"

namespace bpeimg {

// Row-stochastic transition matrix; entry (a, b) is P(b | a).
class MarkovKernel {
public:
    static constexpr double kRowTolerance = 1e-12;

    explicit MarkovKernel(std::vector<std::vector<double>> rows);

    // Binary chain with P(1|0) = p and P(0|1) = q.
    static MarkovKernel binary_flip(double p, double q);

    std::size_t alphabet_size() const noexcept { return size_; }
    double operator()(std::size_t from, std::size_t to) const noexcept { return p_[from * size_ + to]; }
    std::span<const double> row(std::size_t from) const noexcept { return {p_.data() + from * size_, size_}; }
    double min_entry() const noexcept;

    // Single recurrent class covering every state and aperiodic.
    bool is_ergodic() const;

    std::string to_json() const;
    static MarkovKernel from_json(std::string_view text);

private:
    std::size_t size_ = 0;
    std::vector<double> p_;
};

struct StationaryDist {
    std::vector<double> probs;
};

struct StationaryOptions {
    std::size_t max_iterations = 10'000'000;
    double tolerance = 1e-13;  // L1 change between successive iterates
};

// Power iteration from the uniform distribution. Throws DataError for a
// non-ergodic kernel or when the iteration budget runs out.
StationaryDist stationary(const MarkovKernel& kernel, const StationaryOptions& options = {});
double stationary_residual(const MarkovKernel& kernel, const StationaryDist& pi);

// Shannon entropy in nats, 0 log 0 = 0.
double entropy(std::span<const double> dist);
inline double entropy(const StationaryDist& dist) { return entropy(dist.probs); }

// Conditional entropy rate -sum pi(a) P(b|a) log P(b|a), nats.
double h_infinity(const MarkovKernel& kernel, const StationaryDist& pi);

struct EntropyReport {
    double h_pi = 0.0;
    double h_inf = 0.0;
    double delta = 0.0;
    double epsilon = 0.0;
    double prop2_bound = 0.0;
    std::uint64_t dictionary_size_D = 0;

    std::string to_json(bool bits = false) const;
};

// Token-dictionary loss bound H_inf / (1 - eps), eps = ln(1/delta) / (0.99 ln D).
// Throws DataError when delta = 0 or eps >= 1 (the message carries eps).
EntropyReport prop2_bound(const MarkovKernel& kernel, std::uint64_t dictionary_size);
double prop2_epsilon(double delta, std::uint64_t dictionary_size);

// Entropy of a whole m x m Scenario image: m H(pi) + m (m - 1) H_inf.
double joint_entropy_exact(const MarkovKernel& kernel, const StationaryDist& pi, std::uint64_t m);

struct SwitchingRate {
    double rate = 0.0;   // delta ln(1/delta) + (1 - delta) ln(1/(1 - delta))
    double ratio = 0.0;  // ln 2 / rate
};
SwitchingRate remark1_rate(double delta);

enum class ScenarioAxis { column, row };
ScenarioAxis parse_scenario_axis(std::string_view text);
std::string_view to_string(ScenarioAxis axis);

// Independent chains started from pi run down every column (or along every
// row). `stream` selects the image within a seeded corpus.
TokenGrid gen_scenario(const MarkovKernel& kernel, const StationaryDist& pi, std::uint32_t m, ScenarioAxis axis,
                       std::uint64_t seed, std::uint64_t stream = 0);

struct Defn1Params {
    double p = 0.9;  // P(X = 1 | parent = 0)
    double q = 0.9;  // P(X = 0 | parent = 1)
    std::uint32_t k = 1;

    MarkovKernel kernel() const { return MarkovKernel::binary_flip(p, q); }
    // (q, p) / (p + q)
    std::vector<double> stationary_probs() const;
    void validate() const;
};

// Binary 2D k-th order process. Cells with neither a k-above nor a k-left
// parent are drawn from the stationary distribution; cells with one parent
// follow it; all others pick the parent with a fair coin.
TokenGrid gen_defn1(const Defn1Params& params, std::uint32_t m, std::uint64_t seed, std::uint64_t stream = 0);

struct LossEstimate {
    double mean = 0.0;
    double std_error = 0.0;
    double parent_agreement = 0.0;  // fraction of sampled cells whose two parents agree
    std::uint64_t samples = 0;
};

// Monte Carlo estimate of E[H(0.5 P(.|up) + 0.5 P(.|left))] over interior
// cells, the best raster-order loss when the parent coin is hidden.
LossEstimate optimal_loss_defn1(const Defn1Params& params, std::uint32_t m, std::uint64_t mc_samples,
                                std::uint64_t seed);

} // namespace bpeimg

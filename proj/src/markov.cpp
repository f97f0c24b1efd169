#include "bpeimg/markov.hpp"

#include <cmath>
#include <deque>
#include <json.hpp>
#include <numeric>
#include <sstream>

#include "bpeimg/numeric.hpp"
#include "bpeimg/rng.hpp"

namespace bpeimg {

namespace {

std::string format_double(double x) {
    if (std::isinf(x)) return x > 0 ? "\"inf\"" : "\"-inf\"";
    if (std::isnan(x)) return "\"nan\"";
    nlohmann::json j = x;
    return j.dump();
}

double binary_entropy(double p) {
    double h = 0.0;
    if (p > 0.0) h -= p * std::log(p);
    if (p < 1.0) h -= (1.0 - p) * std::log1p(-p);
    return h;
}

} // namespace

MarkovKernel::MarkovKernel(std::vector<std::vector<double>> rows) : size_(rows.size()) {
    if (size_ == 0) throw DataError("kernel alphabet must be non-empty");
    p_.reserve(size_ * size_);
    for (std::size_t a = 0; a < size_; ++a) {
        if (rows[a].size() != size_) {
            throw DataError("kernel row " + std::to_string(a) + " has " + std::to_string(rows[a].size()) +
                            " entries, expected " + std::to_string(size_));
        }
        CompensatedSum sum;
        for (double x : rows[a]) {
            if (!(x >= 0.0 && x <= 1.0)) throw DataError("kernel row " + std::to_string(a) + " has an entry outside [0, 1]");
            sum += x;
            p_.push_back(x);
        }
        if (std::abs(sum.value() - 1.0) > kRowTolerance) {
            std::ostringstream msg;
            msg.precision(17);
            msg << "kernel row " << a << " sums to " << sum.value();
            throw DataError(msg.str());
        }
    }
}

MarkovKernel MarkovKernel::binary_flip(double p, double q) { return MarkovKernel({{1.0 - p, p}, {q, 1.0 - q}}); }

double MarkovKernel::min_entry() const noexcept { return *std::min_element(p_.begin(), p_.end()); }

bool MarkovKernel::is_ergodic() const {
    const std::size_t n = size_;
    auto reach_all = [&](bool reverse) {
        std::vector<char> seen(n, 0);
        std::vector<std::size_t> stack{0};
        seen[0] = 1;
        std::size_t count = 0;
        while (!stack.empty()) {
            const std::size_t u = stack.back();
            stack.pop_back();
            ++count;
            for (std::size_t v = 0; v < n; ++v) {
                const double w = reverse ? (*this)(v, u) : (*this)(u, v);
                if (w > 0.0 && !seen[v]) {
                    seen[v] = 1;
                    stack.push_back(v);
                }
            }
        }
        return count == n;
    };
    if (!reach_all(false) || !reach_all(true)) return false;

    // Period = gcd over edges of (level(u) + 1 - level(v)) for BFS levels.
    std::vector<std::int64_t> level(n, -1);
    std::deque<std::size_t> queue{0};
    level[0] = 0;
    while (!queue.empty()) {
        const std::size_t u = queue.front();
        queue.pop_front();
        for (std::size_t v = 0; v < n; ++v) {
            if ((*this)(u, v) > 0.0 && level[v] < 0) {
                level[v] = level[u] + 1;
                queue.push_back(v);
            }
        }
    }
    std::int64_t period = 0;
    for (std::size_t u = 0; u < n; ++u)
        for (std::size_t v = 0; v < n; ++v)
            if ((*this)(u, v) > 0.0) period = std::gcd(period, std::abs(level[u] + 1 - level[v]));
    return period == 1;
}

std::string MarkovKernel::to_json() const {
    std::string out = "{\"alphabet_size\": " + std::to_string(size_) + ", \"transition\": [";
    for (std::size_t a = 0; a < size_; ++a) {
        out += a ? ", [" : "[";
        for (std::size_t b = 0; b < size_; ++b) {
            if (b) out += ", ";
            out += format_double((*this)(a, b));
        }
        out += "]";
    }
    return out + "]}";
}

MarkovKernel MarkovKernel::from_json(std::string_view text) {
    try {
        const auto doc = nlohmann::json::parse(text);
        auto rows = doc.at("transition").get<std::vector<std::vector<double>>>();
        if (doc.contains("alphabet_size") && doc.at("alphabet_size").get<std::size_t>() != rows.size()) {
            throw DataError("alphabet_size does not match the transition matrix");
        }
        return MarkovKernel(std::move(rows));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed kernel JSON: ") + e.what());
    }
}

StationaryDist stationary(const MarkovKernel& kernel, const StationaryOptions& options) {
    if (!kernel.is_ergodic()) throw DataError("non-ergodic kernel: no unique limiting stationary distribution");
    const std::size_t n = kernel.alphabet_size();
    std::vector<double> pi(n, 1.0 / static_cast<double>(n)), next(n);
    for (std::size_t it = 0; it < options.max_iterations; ++it) {
        std::fill(next.begin(), next.end(), 0.0);
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = 0; b < n; ++b) next[b] += pi[a] * kernel(a, b);
        const double norm = std::accumulate(next.begin(), next.end(), 0.0);
        double change = 0.0;
        for (std::size_t b = 0; b < n; ++b) {
            next[b] /= norm;
            change += std::abs(next[b] - pi[b]);
        }
        pi.swap(next);
        if (change < options.tolerance) return {std::move(pi)};
    }
    throw DataError("power iteration did not converge within " + std::to_string(options.max_iterations) +
                    " iterations");
}

double stationary_residual(const MarkovKernel& kernel, const StationaryDist& pi) {
    const std::size_t n = kernel.alphabet_size();
    double residual = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
        double x = 0.0;
        for (std::size_t a = 0; a < n; ++a) x += pi.probs[a] * kernel(a, b);
        residual += std::abs(x - pi.probs[b]);
    }
    return residual;
}

double entropy(std::span<const double> dist) {
    CompensatedSum h;
    for (double p : dist)
        if (p > 0.0) h += -p * std::log(p);
    return h.value();
}

double h_infinity(const MarkovKernel& kernel, const StationaryDist& pi) {
    const std::size_t n = kernel.alphabet_size();
    if (pi.probs.size() != n) {
        throw DataError("stationary distribution has " + std::to_string(pi.probs.size()) + " entries, kernel has " +
                        std::to_string(n) + " states");
    }
    CompensatedSum h;
    for (std::size_t a = 0; a < n; ++a) h += pi.probs[a] * entropy(kernel.row(a));
    return h.value();
}

std::string EntropyReport::to_json(bool bits) const {
    const double scale = bits ? 1.0 / std::log(2.0) : 1.0;
    std::string out = "{\n";
    out += "  \"unit\": \"" + std::string(bits ? "bits" : "nats") + "\",\n";
    out += "  \"h_pi\": " + format_double(h_pi * scale) + ",\n";
    out += "  \"h_inf\": " + format_double(h_inf * scale) + ",\n";
    out += "  \"delta\": " + format_double(delta) + ",\n";
    out += "  \"epsilon\": " + format_double(epsilon) + ",\n";
    out += "  \"prop2_bound\": " + format_double(prop2_bound * scale) + ",\n";
    out += "  \"dictionary_size_D\": " + std::to_string(dictionary_size_D) + "\n}\n";
    return out;
}

double prop2_epsilon(double delta, std::uint64_t dictionary_size) {
    if (!(delta > 0.0)) throw DataError("delta = 0: the dictionary bound needs every transition to be positive");
    if (dictionary_size < 2) throw DataError("dictionary size must be at least 2");
    return std::log(1.0 / delta) / (0.99 * std::log(static_cast<double>(dictionary_size)));
}

EntropyReport prop2_bound(const MarkovKernel& kernel, std::uint64_t dictionary_size) {
    const auto pi = stationary(kernel);
    EntropyReport report;
    report.h_pi = entropy(pi);
    report.h_inf = h_infinity(kernel, pi);
    report.delta = kernel.min_entry();
    report.dictionary_size_D = dictionary_size;
    report.epsilon = prop2_epsilon(report.delta, dictionary_size);
    if (report.epsilon >= 1.0) {
        std::ostringstream msg;
        msg.precision(6);
        msg << "epsilon = " << report.epsilon << " >= 1: dictionary size " << dictionary_size
            << " is too small for delta = " << report.delta;
        throw DataError(msg.str());
    }
    report.prop2_bound = report.h_inf / (1.0 - report.epsilon);
    return report;
}

double joint_entropy_exact(const MarkovKernel& kernel, const StationaryDist& pi, std::uint64_t m) {
    if (m == 0) throw DataError("m must be at least 1");
    const double md = static_cast<double>(m);
    return md * entropy(pi) + md * (md - 1.0) * h_infinity(kernel, pi);
}

SwitchingRate remark1_rate(double delta) {
    if (!(delta > 0.0 && delta < 1.0)) throw DataError("delta must lie in (0, 1)");
    const double rate = binary_entropy(delta);
    return {rate, std::log(2.0) / rate};
}

ScenarioAxis parse_scenario_axis(std::string_view text) {
    if (text == "column") return ScenarioAxis::column;
    if (text == "row") return ScenarioAxis::row;
    throw std::invalid_argument("unknown scenario axis '" + std::string(text) + "'");
}

std::string_view to_string(ScenarioAxis axis) { return axis == ScenarioAxis::column ? "column" : "row"; }

TokenGrid gen_scenario(const MarkovKernel& kernel, const StationaryDist& pi, std::uint32_t m, ScenarioAxis axis,
                       std::uint64_t seed, std::uint64_t stream) {
    if (m == 0) throw DataError("m must be positive");
    if (pi.probs.size() != kernel.alphabet_size()) throw DataError("stationary distribution does not match the kernel");
    TokenGrid grid(m, m);
    const CounterRng image_rng(seed, stream);
    for (std::uint32_t chain = 0; chain < m; ++chain) {
        CounterRng rng = image_rng.split(chain);
        auto state = static_cast<TokenId>(rng.categorical(pi.probs));
        for (std::uint32_t step = 0; step < m; ++step) {
            if (step > 0) state = static_cast<TokenId>(rng.categorical(kernel.row(state)));
            if (axis == ScenarioAxis::column) {
                grid.at(step, chain) = state;
            } else {
                grid.at(chain, step) = state;
            }
        }
    }
    return grid;
}

std::vector<double> Defn1Params::stationary_probs() const {
    validate();
    return {q / (p + q), p / (p + q)};
}

void Defn1Params::validate() const {
    if (!(p >= 0.0 && p <= 1.0 && q >= 0.0 && q <= 1.0)) throw DataError("p and q must lie in [0, 1]");
    if (k < 1) throw DataError("order k must be at least 1");
    if (p + q <= 0.0) throw DataError("p = q = 0 gives a non-ergodic flip kernel");
}

TokenGrid gen_defn1(const Defn1Params& params, std::uint32_t m, std::uint64_t seed, std::uint64_t stream) {
    params.validate();
    if (m <= params.k) throw DataError("grid size m must exceed the order k");
    const double pi1 = params.p / (params.p + params.q);
    const std::uint32_t k = params.k;
    TokenGrid grid(m, m);
    CounterRng rng(seed, stream);
    auto step = [&](TokenId parent) -> TokenId {
        return parent == 0 ? (rng.bernoulli(params.p) ? 1 : 0) : (rng.bernoulli(params.q) ? 0 : 1);
    };
    for (std::uint32_t i = 0; i < m; ++i) {
        for (std::uint32_t j = 0; j < m; ++j) {
            const bool has_up = i >= k, has_left = j >= k;
            TokenId value;
            if (!has_up && !has_left) {
                value = rng.bernoulli(pi1) ? 1 : 0;
            } else if (has_up && !has_left) {
                value = step(grid.at(i - k, j));
            } else if (!has_up) {
                value = step(grid.at(i, j - k));
            } else {
                const bool use_up = rng.bernoulli(0.5);
                value = step(use_up ? grid.at(i - k, j) : grid.at(i, j - k));
            }
            grid.at(i, j) = value;
        }
    }
    return grid;
}

LossEstimate optimal_loss_defn1(const Defn1Params& params, std::uint32_t m, std::uint64_t mc_samples,
                                std::uint64_t seed) {
    params.validate();
    if (mc_samples < 10'000) throw DataError("mc_samples must be at least 10^4");
    if (m <= params.k) throw DataError("grid size m must exceed the order k");
    auto p_one = [&](TokenId parent) { return parent == 0 ? params.p : 1.0 - params.q; };
    CompensatedSum sum, sum_sq;
    std::uint64_t samples = 0, agree = 0;
    for (std::uint64_t stream = 0; samples < mc_samples; ++stream) {
        const TokenGrid grid = gen_defn1(params, m, seed, stream);
        for (std::uint32_t i = params.k; i < m && samples < mc_samples; ++i) {
            for (std::uint32_t j = params.k; j < m && samples < mc_samples; ++j) {
                const TokenId up = grid.at(i - params.k, j), left = grid.at(i, j - params.k);
                const double h = binary_entropy(0.5 * (p_one(up) + p_one(left)));
                sum += h;
                sum_sq += h * h;
                agree += up == left;
                ++samples;
            }
        }
    }
    LossEstimate est;
    est.samples = samples;
    est.mean = sum.value() / static_cast<double>(samples);
    const double var = std::max(0.0, sum_sq.value() / static_cast<double>(samples) - est.mean * est.mean);
    est.std_error = std::sqrt(var / static_cast<double>(samples));
    est.parent_agreement = static_cast<double>(agree) / static_cast<double>(samples);
    return est;
}

} // namespace bpeimg

// Acceptance suite: one PASS/FAIL line per primary criterion. Exit status is
// non-zero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>

#include "bpeimg/codec.hpp"
#include "bpeimg/eval.hpp"
#include "bpeimg/markov.hpp"
#include "bpeimg/trainer.hpp"

using namespace bpeimg;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

int failures = 0;

void criterion(const char* id, const char* name, double limit_s, const std::function<Outcome()>& body) {
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
        out = body();
    } catch (const std::exception& e) {
        out = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs < limit_s;
    const bool pass = out.pass && in_time;
    if (!pass) ++failures;
    std::printf("[%s] %s %s: %s (%.2f s, limit %.0f s%s)\n", pass ? "PASS" : "FAIL", id, name, out.detail.c_str(),
                secs, limit_s, in_time ? "" : ", too slow");
    std::fflush(stdout);
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

const MarkovKernel kKernel = MarkovKernel::binary_flip(0.9, 0.9);
const GapSource kScenario = ScenarioSource{kKernel, ScenarioAxis::column};

GapConfig acceptance_config() {
    GapConfig cfg;
    cfg.source = kScenario;
    cfg.m = 64;
    cfg.num_train_grids = 200;
    cfg.num_eval_grids = 200;
    cfg.bpe_num_merges = 254;
    cfg.dictionary_size_D = 256;
    cfg.seed = 0;
    return cfg;
}

TokenGrid random_grid(std::mt19937_64& rng, std::uint32_t max_side, TokenId base) {
    const std::uint32_t h = 1 + rng() % max_side, w = 1 + rng() % max_side;
    std::vector<TokenId> cells(static_cast<std::size_t>(h) * w);
    for (std::size_t i = 0; i < cells.size(); ++i)
        cells[i] = (i >= w && rng() % 2) ? cells[i - w] : static_cast<TokenId>(rng() % base);
    return {h, w, std::move(cells)};
}

Vocabulary small_vocab(std::mt19937_64& rng, TokenId base, OrientationPolicy policy) {
    std::vector<TokenGrid> corpus;
    for (int i = 0; i < 3; ++i) corpus.push_back(random_grid(rng, 10, base));
    TrainConfig cfg;
    cfg.initial_vocab_size = base;
    cfg.num_merges = rng() % 40;
    cfg.orientation_policy = policy;
    return train(corpus, cfg);
}

Outcome entropy_oracles() {
    const auto pi = stationary(kKernel);
    const double h_pi = entropy(pi), h_inf = h_infinity(kKernel, pi);
    const double bound = prop2_bound(kKernel, 256).prop2_bound;
    const bool ok = std::abs(h_pi - 0.693147) < 1e-6 && std::abs(h_inf - 0.325083) < 1e-6 &&
                    std::abs(bound - 0.560) <= 0.001;
    return {ok, fmt("h_pi=%.6f h_inf=%.6f prop2_bound=%.6f", h_pi, h_inf, bound)};
}

Outcome flattened_floor(double& flattened_out) {
    const auto cfg = acceptance_config();
    const auto train_grids = generate_corpus(cfg.source, cfg.m, cfg.num_train_grids, cfg.seed, 0, 0);
    const auto eval_grids = generate_corpus(cfg.source, cfg.m, cfg.num_eval_grids, cfg.seed, kEvalStreamBase, 0);
    std::vector<TokenSequence> train_seq, eval_seq;
    for (const auto& g : train_grids) train_seq.push_back(flatten(g));
    for (const auto& g : eval_grids) eval_seq.push_back(flatten(g));
    UnigramFitOptions opts;
    opts.max_length = std::uint64_t{cfg.m} * cfg.m;
    const auto model = fit_unigram(train_seq, 2, opts);
    const double loss = unigram_loss(model, eval_seq, opts.max_length).total;
    flattened_out = loss;
    const double h_pi = entropy(stationary(kKernel));
    const bool ok = loss >= h_pi - 0.01 && loss <= h_pi + 0.03;
    return {ok, fmt("flattened=%.6f in [%.4f, %.4f]", loss, h_pi - 0.01, h_pi + 0.03)};
}

Outcome gap_closure(double flattened_ref) {
    const auto r = run_gap_experiment(acceptance_config());
    const double tok = r.tokenized.eval.total;
    const double upper = *r.prop2_bound + 0.02;
    const bool ok = tok <= upper && tok >= r.h_inf - 0.01 && r.gap() >= 0.10 &&
                    r.flattened.eval.total == flattened_ref && r.merges_learned == 254;
    return {ok, fmt("tokenized=%.6f in [%.4f, %.4f], gap=%.4f >= 0.10", tok, r.h_inf - 0.01, upper, r.gap()) +
                    fmt(", %.0f tokens/image, policy oriented", r.tokenized.mean_tokens_eval)};
}

Outcome exhaustive_m2() {
    const auto pi = stationary(kKernel);
    double brute = 0;
    for (unsigned image = 0; image < 16; ++image) {
        // Bits: (0,0), (0,1), (1,0), (1,1); columns are chains down the rows.
        const unsigned a = image & 1, b = (image >> 1) & 1, c = (image >> 2) & 1, d = (image >> 3) & 1;
        const double p = pi.probs[a] * kKernel(a, c) * pi.probs[b] * kKernel(b, d);
        brute -= p * std::log(p);
    }
    const double exact = joint_entropy_exact(kKernel, pi, 2);
    const double identity = 2 * entropy(pi) + 2 * h_infinity(kKernel, pi);
    const double err = std::max(std::abs(exact - brute), std::abs(identity - brute));
    return {err <= 1e-12, fmt("joint=%.15f brute=%.15f max_err=%.2e", exact, brute, err)};
}

Outcome property_suite() {
    std::mt19937_64 rng(2024);
    std::string failed;

    int partitions = 0;
    for (int v = 0; v < 50 && failed.empty(); ++v) {
        const auto policy = v % 2 ? OrientationPolicy::oriented : OrientationPolicy::agnostic;
        const auto vocab = small_vocab(rng, 2 + static_cast<TokenId>(rng() % 3), policy);
        for (int i = 0; i < 25; ++i, ++partitions) {
            const auto g = random_grid(rng, 14, vocab.base_vocab_size());
            const auto problem = check_segmentation(segment(g, vocab));
            if (!problem.empty()) failed = "partition: " + problem;
        }
    }

    int round_trips = 0;
    for (int v = 0; v < 50 && failed.empty(); ++v) {
        const auto vocab = small_vocab(rng, 2 + static_cast<TokenId>(rng() % 3), OrientationPolicy::oriented);
        for (int i = 0; i < 25; ++i, ++round_trips) {
            const auto g = random_grid(rng, 14, vocab.base_vocab_size());
            if (!(decode(encode(g, vocab).sequence, vocab) == g)) failed = "oriented round trip";
        }
    }

    int determinism = 0;
    for (int i = 0; i < 10 && failed.empty(); ++i, ++determinism) {
        std::vector<TokenGrid> corpus;
        for (int k = 0; k < 5; ++k) corpus.push_back(random_grid(rng, 16, 3));
        TrainConfig cfg;
        cfg.initial_vocab_size = 3;
        cfg.num_merges = 30;
        cfg.orientation_policy = i % 2 ? OrientationPolicy::oriented : OrientationPolicy::agnostic;
        cfg.threads = 1;
        const auto a = serialize_vocab(train(corpus, cfg));
        cfg.threads = 4;
        const auto b = serialize_vocab(train(corpus, cfg));
        if (a != b || a != serialize_vocab(train(corpus, cfg))) failed = "training determinism";
    }

    int early_stops = 0;
    for (int i = 0; i < 40 && failed.empty(); ++i) {
        std::vector<TokenGrid> corpus{random_grid(rng, 6, 2), random_grid(rng, 6, 2)};
        TrainConfig cfg;
        cfg.initial_vocab_size = 2;
        cfg.num_merges = 500;
        cfg.orientation_policy = i % 2 ? OrientationPolicy::oriented : OrientationPolicy::agnostic;
        const auto r = train_detailed(corpus, cfg);
        if (!r.stopped_early) {
            failed = "early stop not reached";
            break;
        }
        ++early_stops;
        for (const auto& seg : r.final_corpus) {
            if (!instance_contacts(seg, cfg.orientation_policy).empty()) failed = "contacts left after early stop";
            if (cfg.orientation_policy == OrientationPolicy::agnostic && seg.size() != 1)
                failed = "agnostic early stop left several instances";
        }
    }

    int zero_merge = 0;
    for (int i = 0; i < 200 && failed.empty(); ++i, ++zero_merge) {
        const auto g = random_grid(rng, 12, 4);
        for (auto policy : {OrientationPolicy::agnostic, OrientationPolicy::oriented})
            if (!(encode(g, Vocabulary(4, policy)).sequence == flatten(g))) failed = "zero-merge encode";
    }

    const bool ok = failed.empty() && partitions >= 1000 && round_trips >= 1000;
    return {ok, (failed.empty() ? std::string() : "failed " + failed + "; ") +
                    fmt("partition fuzz %.0f grids, oriented round trip %.0f grids, ", partitions, round_trips) +
                    fmt("determinism %.0f corpora, early stop %.0f runs, zero-merge %.0f grids", determinism,
                        early_stops, zero_merge)};
}

Outcome hand_traced() {
    const std::vector<TokenGrid> corpus{TokenGrid(2, 2, {0, 1, 0, 1})};
    std::string detail;
    bool ok = true;
    for (auto policy : {OrientationPolicy::agnostic, OrientationPolicy::oriented}) {
        TrainConfig cfg;
        cfg.initial_vocab_size = 2;
        cfg.num_merges = 2;
        cfg.orientation_policy = policy;
        const auto vocab = train(corpus, cfg);
        const auto& m = vocab.merges();
        const bool good = m.size() == 2 && m[0].left == 0 && m[0].right == 1 && m[0].new_id == 2 &&
                          m[1].left == 2 && m[1].right == 2 && m[1].new_id == 3;
        ok = ok && good;
        std::string merges;
        for (const auto& r : m)
            merges += "(" + std::to_string(r.left) + "," + std::to_string(r.right) + ")->" + std::to_string(r.new_id) + " ";
        detail += std::string(to_string(policy)) + ": " + merges;
    }
    return {ok, detail};
}

} // namespace

int main() {
    double flattened = 0;
    criterion("C1", "entropy oracles", 1, entropy_oracles);
    criterion("C2", "flattened unigram floor", 30, [&] { return flattened_floor(flattened); });
    criterion("C3", "tokenized gap closure", 300, [&] { return gap_closure(flattened); });
    criterion("C4", "exhaustive m=2 joint entropy", 1, exhaustive_m2);
    criterion("C5", "algorithm property suite", 60, property_suite);
    criterion("C6", "hand-traced training", 1, hand_traced);

    // Not a criterion: the same run under the agnostic policy, for reference.
    {
        auto cfg = acceptance_config();
        cfg.orientation_policy = OrientationPolicy::agnostic;
        const auto start = std::chrono::steady_clock::now();
        const auto r = run_gap_experiment(cfg);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::printf("[INFO] agnostic policy on the C3 corpus: tokenized=%.6f (h_inf=%.6f), gap=%.4f, "
                    "%.0f tokens/image (%.2f s)\n",
                    r.tokenized.eval.total, r.h_inf, r.gap(), r.tokenized.mean_tokens_eval, secs);
    }

    std::printf("%s: %d criteria failed\n", failures ? "FAILED" : "ALL PASSED", failures);
    return failures ? 1 : 0;
}

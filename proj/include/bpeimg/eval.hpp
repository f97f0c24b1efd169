#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "bpeimg/codec.hpp"
#include "bpeimg/markov.hpp"
#include "bpeimg/trainer.hpp"

namespace bpeimg {

enum class LengthModel { uniform, empirical };
std::string_view to_string(LengthModel model);
LengthModel parse_length_model(std::string_view text);

// Q(t) = Q_len(|t|) * prod Q_tok(t_r), with Q_tok over [0, vocab_size) and
// Q_len over {1, ..., max_length}.
class UnigramModel {
public:
    UnigramModel(std::vector<double> token_probs, double alpha, LengthModel length_model, std::uint64_t max_length,
                 std::vector<double> length_probs, std::string vocab_reference);

    std::size_t vocab_size() const noexcept { return token_probs_.size(); }
    std::span<const double> token_probs() const noexcept { return token_probs_; }
    double alpha() const noexcept { return alpha_; }
    LengthModel length_model() const noexcept { return length_model_; }
    std::uint64_t max_length() const noexcept { return max_length_; }
    const std::string& vocab_reference() const noexcept { return vocab_reference_; }

    // -log Q_tok(t); +inf outside the support.
    double token_nll(TokenId token) const noexcept;
    // -log Q_len(n); +inf outside the support.
    double length_nll(std::uint64_t length) const noexcept;

private:
    std::vector<double> token_probs_;
    double alpha_;
    LengthModel length_model_;
    std::uint64_t max_length_;
    std::vector<double> length_probs_;  // index n - 1, empirical model only
    std::string vocab_reference_;
};

struct UnigramFitOptions {
    double alpha = 0.5;
    LengthModel length_model = LengthModel::uniform;
    std::uint64_t max_length = 0;  // m^2
    std::string vocab_reference;
};

// Q_tok = (count + alpha) / (total + alpha * V).
UnigramModel fit_unigram(std::span<const TokenSequence> sequences, TokenId vocab_size,
                         const UnigramFitOptions& options);

struct LossBreakdown {
    double total = 0.0;         // nats per patch
    double token_part = 0.0;
    double length_part = 0.0;
    std::uint64_t images = 0;
    bool finite() const noexcept;
};

// Average of -[log Q_len(|t|) + sum log Q_tok(t_r)] / patches_per_image.
LossBreakdown unigram_loss(const UnigramModel& model, std::span<const TokenSequence> sequences,
                           std::uint64_t patches_per_image);

struct ScenarioSource {
    MarkovKernel kernel;
    ScenarioAxis axis = ScenarioAxis::column;
};
using GapSource = std::variant<ScenarioSource, Defn1Params>;

struct GapConfig {
    GapSource source = ScenarioSource{MarkovKernel::binary_flip(0.9, 0.9), ScenarioAxis::column};
    std::uint32_t m = 64;
    std::uint32_t num_train_grids = 200;
    std::uint32_t num_eval_grids = 200;
    std::size_t bpe_num_merges = 254;
    std::uint64_t dictionary_size_D = 256;
    std::uint64_t seed = 0;
    CountingPolicy counting_policy = CountingPolicy::symmetrized;
    // Agnostic token IDs do not determine the image, so their unigram loss is
    // not a cross-entropy of the source; oriented is the default here.
    OrientationPolicy orientation_policy = OrientationPolicy::oriented;
    double alpha = 0.5;
    LengthModel length_model = LengthModel::uniform;
    std::uint64_t defn1_mc_samples = 100'000;
    unsigned threads = 0;
    std::string run_config;  // JSON text echoed into the report
};

struct ConditionLoss {
    LossBreakdown eval;
    LossBreakdown train;
    double eval_alpha0 = 0.0;  // same fit with alpha = 0 (may be +inf)
    double mean_tokens_eval = 0.0;
    std::uint64_t min_tokens_eval = 0;
    std::uint64_t max_tokens_eval = 0;
};

struct GapReport {
    ConditionLoss flattened;
    ConditionLoss tokenized;
    double h_pi = 0.0;
    double h_inf = 0.0;
    double delta = 0.0;
    std::optional<double> epsilon;
    std::optional<double> prop2_bound;
    std::string prop2_status;
    std::optional<LossEstimate> defn1_optimal;
    std::size_t merges_learned = 0;
    bool training_stopped_early = false;
    std::string vocab_hash;
    GapConfig config;

    double gap() const noexcept { return flattened.eval.total - tokenized.eval.total; }
    // Losses and entropies in bits when `bits` is set; CSV rows stay in nats.
    std::string to_json(bool bits = false) const;
    static std::string csv_header();
    std::string csv_row() const;
};

// Grids for streams first_stream .. first_stream + count - 1. Eval splits start
// at kEvalStreamBase so they never collide with train streams under one seed.
std::vector<TokenGrid> generate_corpus(const GapSource& source, std::uint32_t m, std::uint32_t count,
                                       std::uint64_t seed, std::uint64_t first_stream, unsigned threads = 1);
constexpr std::uint64_t kEvalStreamBase = 1ull << 40;

GapReport run_gap_experiment(const GapConfig& config);

// -- probe datasets ----------------------------------------------------------

struct ProbeSplit {
    std::string name;
    std::uint32_t num_grids = 0;
    std::uint64_t first_stream = 0;
};

struct ProbeManifest {
    std::string json;
    std::filesystem::path path;
};

// All rows and all columns of `grids` as 1 x m sequences.
std::vector<TokenGrid> rows_and_columns(std::span<const TokenGrid> grids);

// One shared 1D vocabulary trained over every row and column. Ordered
// (oriented) rules keep the per-direction encoding lossless.
Vocabulary train_probe_vocab(std::span<const TokenGrid> grids, TokenId base_vocab_size, std::size_t num_merges,
                             unsigned threads = 1);

struct ProbeExportConfig {
    Defn1Params params;
    std::uint32_t m = 32;
    std::uint64_t seed = 0;
    std::vector<ProbeSplit> splits;
    std::uint64_t mc_samples = 100'000;
    double alpha = 0.5;
    std::string run_config;  // JSON text echoed into the manifest
    unsigned threads = 1;
};

// Writes <dir>/raw_<split>.jsonl, <dir>/tokenized_<split>.jsonl, the
// vocabulary and <dir>/manifest.json.
ProbeManifest export_probe_dataset(const ProbeExportConfig& config, const Vocabulary& vocab,
                                   const std::filesystem::path& dir);

} // namespace bpeimg

#include "bpeimg/eval.hpp"

#include <cmath>
#include <json.hpp>
#include <limits>

#include "bpeimg/numeric.hpp"
#include "bpeimg/parallel.hpp"

namespace bpeimg {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

nlohmann::ordered_json number(double x) {
    if (std::isfinite(x)) return x;
    return std::isnan(x) ? "nan" : (x > 0 ? "inf" : "-inf");
}

nlohmann::ordered_json embedded(const std::string& text) {
    auto j = nlohmann::ordered_json::parse(text, nullptr, false);
    return j.is_discarded() ? nlohmann::ordered_json(text) : j;
}

nlohmann::ordered_json optional_number(const std::optional<double>& x) {
    return x ? number(*x) : nlohmann::ordered_json(nullptr);
}

std::string csv_number(double x) {
    if (!std::isfinite(x)) return std::isnan(x) ? "nan" : (x > 0 ? "inf" : "-inf");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", x);
    return buf;
}

} // namespace

std::string_view to_string(LengthModel model) { return model == LengthModel::uniform ? "uniform" : "empirical"; }

LengthModel parse_length_model(std::string_view text) {
    if (text == "uniform") return LengthModel::uniform;
    if (text == "empirical") return LengthModel::empirical;
    throw std::invalid_argument("unknown length model '" + std::string(text) + "'");
}

UnigramModel::UnigramModel(std::vector<double> token_probs, double alpha, LengthModel length_model,
                           std::uint64_t max_length, std::vector<double> length_probs, std::string vocab_reference)
    : token_probs_(std::move(token_probs)),
      alpha_(alpha),
      length_model_(length_model),
      max_length_(max_length),
      length_probs_(std::move(length_probs)),
      vocab_reference_(std::move(vocab_reference)) {
    CompensatedSum sum;
    for (double p : token_probs_) sum += p;
    if (std::abs(sum.value() - 1.0) > 1e-9) throw DataError("token probabilities do not sum to 1");
    if (max_length_ == 0) throw DataError("length model needs a positive maximum length");
    if (length_model_ == LengthModel::empirical && length_probs_.size() != max_length_) {
        throw DataError("empirical length model needs one probability per length");
    }
}

double UnigramModel::token_nll(TokenId token) const noexcept {
    if (token >= token_probs_.size() || token_probs_[token] <= 0.0) return kInf;
    return -std::log(token_probs_[token]);
}

double UnigramModel::length_nll(std::uint64_t length) const noexcept {
    if (length < 1 || length > max_length_) return kInf;
    if (length_model_ == LengthModel::uniform) return std::log(static_cast<double>(max_length_));
    const double p = length_probs_[length - 1];
    return p > 0.0 ? -std::log(p) : kInf;
}

UnigramModel fit_unigram(std::span<const TokenSequence> sequences, TokenId vocab_size,
                         const UnigramFitOptions& options) {
    if (sequences.empty()) throw DataError("cannot fit a unigram model on an empty corpus");
    if (vocab_size == 0) throw DataError("vocab size must be positive");
    if (options.alpha < 0.0) throw DataError("smoothing alpha must be non-negative");
    std::vector<std::uint64_t> counts(vocab_size, 0);
    std::vector<std::uint64_t> lengths(options.max_length, 0);
    std::uint64_t total = 0;
    for (const auto& seq : sequences) {
        for (TokenId t : seq.tokens) {
            if (t >= vocab_size) {
                throw DataError("token " + std::to_string(t) + " is outside the vocabulary of size " +
                                std::to_string(vocab_size));
            }
            ++counts[t];
        }
        total += seq.tokens.size();
        if (!seq.tokens.empty() && seq.tokens.size() <= options.max_length) ++lengths[seq.tokens.size() - 1];
    }
    const double denom = static_cast<double>(total) + options.alpha * static_cast<double>(vocab_size);
    if (denom <= 0.0) throw DataError("corpus has no tokens and alpha = 0");
    std::vector<double> probs(vocab_size);
    for (TokenId t = 0; t < vocab_size; ++t) probs[t] = (static_cast<double>(counts[t]) + options.alpha) / denom;

    std::vector<double> length_probs;
    if (options.length_model == LengthModel::empirical) {
        const double len_denom = static_cast<double>(sequences.size()) +
                                 options.alpha * static_cast<double>(options.max_length);
        length_probs.resize(options.max_length);
        for (std::size_t n = 0; n < options.max_length; ++n) {
            length_probs[n] = (static_cast<double>(lengths[n]) + options.alpha) / len_denom;
        }
    }
    return UnigramModel(std::move(probs), options.alpha, options.length_model, options.max_length,
                        std::move(length_probs), options.vocab_reference);
}

bool LossBreakdown::finite() const noexcept { return std::isfinite(total); }

LossBreakdown unigram_loss(const UnigramModel& model, std::span<const TokenSequence> sequences,
                           std::uint64_t patches_per_image) {
    if (patches_per_image == 0) throw DataError("patches per image must be positive");
    CompensatedSum token_sum, length_sum;
    bool token_inf = false, length_inf = false;
    for (const auto& seq : sequences) {
        CompensatedSum image;
        for (TokenId t : seq.tokens) {
            const double nll = model.token_nll(t);
            if (std::isinf(nll)) token_inf = true;
            else image += nll;
        }
        token_sum += image.value();
        const double len = model.length_nll(seq.tokens.size());
        if (std::isinf(len)) length_inf = true;
        else length_sum += len;
    }
    LossBreakdown out;
    out.images = sequences.size();
    if (sequences.empty()) return out;
    const double scale = 1.0 / (static_cast<double>(patches_per_image) * static_cast<double>(sequences.size()));
    out.token_part = token_inf ? kInf : token_sum.value() * scale;
    out.length_part = length_inf ? kInf : length_sum.value() * scale;
    out.total = out.token_part + out.length_part;
    return out;
}

std::vector<TokenGrid> generate_corpus(const GapSource& source, std::uint32_t m, std::uint32_t count,
                                       std::uint64_t seed, std::uint64_t first_stream, unsigned threads) {
    std::vector<TokenGrid> grids(count);
    if (const auto* scenario = std::get_if<ScenarioSource>(&source)) {
        const StationaryDist pi = stationary(scenario->kernel);
        parallel_for(count, threads, [&](std::size_t i) {
            grids[i] = gen_scenario(scenario->kernel, pi, m, scenario->axis, seed, first_stream + i);
        });
    } else {
        const auto& params = std::get<Defn1Params>(source);
        params.validate();
        parallel_for(count, threads,
                     [&](std::size_t i) { grids[i] = gen_defn1(params, m, seed, first_stream + i); });
    }
    return grids;
}

namespace {

ConditionLoss evaluate_condition(const std::vector<TokenSequence>& train, const std::vector<TokenSequence>& eval,
                                 TokenId vocab_size, const GapConfig& config, const std::string& vocab_ref) {
    const std::uint64_t patches = static_cast<std::uint64_t>(config.m) * config.m;
    UnigramFitOptions options{config.alpha, config.length_model, patches, vocab_ref};
    const UnigramModel model = fit_unigram(train, vocab_size, options);
    ConditionLoss out;
    out.eval = unigram_loss(model, eval, patches);
    out.train = unigram_loss(model, train, patches);
    options.alpha = 0.0;
    out.eval_alpha0 = unigram_loss(fit_unigram(train, vocab_size, options), eval, patches).total;
    std::uint64_t tokens = 0;
    out.min_tokens_eval = std::numeric_limits<std::uint64_t>::max();
    for (const auto& seq : eval) {
        tokens += seq.tokens.size();
        out.min_tokens_eval = std::min<std::uint64_t>(out.min_tokens_eval, seq.tokens.size());
        out.max_tokens_eval = std::max<std::uint64_t>(out.max_tokens_eval, seq.tokens.size());
    }
    out.mean_tokens_eval = eval.empty() ? 0.0 : static_cast<double>(tokens) / static_cast<double>(eval.size());
    if (eval.empty()) out.min_tokens_eval = 0;
    return out;
}

nlohmann::ordered_json condition_json(const ConditionLoss& c, double scale) {
    nlohmann::ordered_json j;
    j["eval_loss"] = number(c.eval.total * scale);
    j["eval_token_part"] = number(c.eval.token_part * scale);
    j["eval_length_part"] = number(c.eval.length_part * scale);
    j["eval_loss_alpha0"] = number(c.eval_alpha0 * scale);
    j["train_loss"] = number(c.train.total * scale);
    j["eval_images"] = c.eval.images;
    j["mean_tokens_per_image"] = number(c.mean_tokens_eval);
    j["min_tokens_per_image"] = c.min_tokens_eval;
    j["max_tokens_per_image"] = c.max_tokens_eval;
    return j;
}

nlohmann::ordered_json config_json(const GapConfig& config) {
    nlohmann::ordered_json j;
    if (const auto* scenario = std::get_if<ScenarioSource>(&config.source)) {
        j["source"] = "scenario";
        j["axis"] = std::string(to_string(scenario->axis));
        j["kernel"] = nlohmann::ordered_json::parse(scenario->kernel.to_json());
    } else {
        const auto& params = std::get<Defn1Params>(config.source);
        j["source"] = "defn1";
        j["p"] = params.p;
        j["q"] = params.q;
        j["k"] = params.k;
        j["mc_samples"] = config.defn1_mc_samples;
    }
    j["m"] = config.m;
    j["num_train_grids"] = config.num_train_grids;
    j["num_eval_grids"] = config.num_eval_grids;
    j["bpe_num_merges"] = config.bpe_num_merges;
    j["dictionary_size_D"] = config.dictionary_size_D;
    j["seed"] = config.seed;
    j["counting_policy"] = std::string(to_string(config.counting_policy));
    j["orientation_policy"] = std::string(to_string(config.orientation_policy));
    j["alpha"] = config.alpha;
    j["length_model"] = std::string(to_string(config.length_model));
    return j;
}

} // namespace

GapReport run_gap_experiment(const GapConfig& config) {
    if (config.m == 0 || config.num_train_grids == 0 || config.num_eval_grids == 0) {
        throw DataError("gap experiment needs m > 0 and non-empty train and eval splits");
    }
    GapReport report;
    report.config = config;

    MarkovKernel kernel = MarkovKernel::binary_flip(0.5, 0.5);
    StationaryDist pi;
    if (const auto* scenario = std::get_if<ScenarioSource>(&config.source)) {
        kernel = scenario->kernel;
        pi = stationary(kernel);
    } else {
        const auto& params = std::get<Defn1Params>(config.source);
        kernel = params.kernel();
        pi = {params.stationary_probs()};
        report.defn1_optimal = optimal_loss_defn1(params, config.m, config.defn1_mc_samples, config.seed);
    }
    const auto base = static_cast<TokenId>(kernel.alphabet_size());
    report.h_pi = entropy(pi);
    report.h_inf = h_infinity(kernel, pi);
    report.delta = kernel.min_entry();
    try {
        report.epsilon = prop2_epsilon(report.delta, config.dictionary_size_D);
        if (*report.epsilon < 1.0) {
            report.prop2_bound = report.h_inf / (1.0 - *report.epsilon);
            report.prop2_status = "ok";
        } else {
            report.prop2_status = "epsilon >= 1: dictionary too small for this delta";
        }
    } catch (const DataError& e) {
        report.prop2_status = e.what();
    }

    const auto train_grids =
        generate_corpus(config.source, config.m, config.num_train_grids, config.seed, 0, config.threads);
    const auto eval_grids =
        generate_corpus(config.source, config.m, config.num_eval_grids, config.seed, kEvalStreamBase, config.threads);

    TrainConfig train_config;
    train_config.initial_vocab_size = base;
    train_config.num_merges = config.bpe_num_merges;
    train_config.counting_policy = config.counting_policy;
    train_config.orientation_policy = config.orientation_policy;
    train_config.threads = config.threads;
    TrainResult trained = train_detailed(train_grids, train_config);
    report.merges_learned = trained.vocab.merges().size();
    report.training_stopped_early = trained.stopped_early;
    report.vocab_hash = vocab_hash(trained.vocab);

    std::vector<TokenSequence> flat_train, flat_eval;
    for (const auto& g : train_grids) flat_train.push_back(flatten(g));
    for (const auto& g : eval_grids) flat_eval.push_back(flatten(g));
    report.flattened = evaluate_condition(flat_train, flat_eval, base, config, "flat");

    std::vector<TokenSequence> tok_train, tok_eval(eval_grids.size());
    for (const auto& seg : trained.final_corpus) tok_train.push_back(sequence_of(seg));
    parallel_for(eval_grids.size(), config.threads,
                 [&](std::size_t i) { tok_eval[i] = encode(eval_grids[i], trained.vocab).sequence; });
    report.tokenized = evaluate_condition(tok_train, tok_eval, trained.vocab.size(), config, report.vocab_hash);
    return report;
}

std::string GapReport::to_json(bool bits) const {
    const double scale = bits ? 1.0 / std::log(2.0) : 1.0;
    nlohmann::ordered_json j;
    j["tool"] = "bpeimg";
    j["version"] = BPEIMG_VERSION;
    j["unit"] = bits ? "bits per patch" : "nats per patch";
    j["flattened"] = condition_json(flattened, scale);
    j["tokenized"] = condition_json(tokenized, scale);
    j["gap"] = number(gap() * scale);
    nlohmann::ordered_json refs;
    refs["h_pi"] = number(h_pi * scale);
    refs["h_inf"] = number(h_inf * scale);
    refs["delta"] = number(delta);
    refs["epsilon"] = optional_number(epsilon);
    refs["prop2_bound"] = prop2_bound ? number(*prop2_bound * scale) : nlohmann::ordered_json(nullptr);
    refs["prop2_status"] = prop2_status;
    if (defn1_optimal) {
        refs["defn1_optimal_loss"] = number(defn1_optimal->mean * scale);
        refs["defn1_optimal_std_error"] = number(defn1_optimal->std_error * scale);
        refs["defn1_parent_agreement"] = number(defn1_optimal->parent_agreement);
        refs["defn1_mc_samples"] = defn1_optimal->samples;
    }
    j["references"] = refs;
    nlohmann::ordered_json corpus;
    corpus["num_train_grids"] = config.num_train_grids;
    corpus["num_eval_grids"] = config.num_eval_grids;
    corpus["m"] = config.m;
    corpus["patches_per_image"] = static_cast<std::uint64_t>(config.m) * config.m;
    corpus["merges_learned"] = merges_learned;
    corpus["training_stopped_early"] = training_stopped_early;
    corpus["vocab_hash"] = vocab_hash;
    j["corpus"] = corpus;
    j["config"] = config_json(config);
    if (!config.run_config.empty()) j["run_config"] = embedded(config.run_config);
    return j.dump(2) + "\n";
}

std::string GapReport::csv_header() {
    return "source,m,num_train,num_eval,merges,dictionary_size_D,seed,counting_policy,orientation_policy,alpha,"
           "length_model,h_pi,h_inf,prop2_bound,flattened_eval,tokenized_eval,gap,flattened_eval_alpha0,"
           "tokenized_eval_alpha0,mean_tokens_per_image,merges_learned,vocab_hash\n";
}

std::string GapReport::csv_row() const {
    std::string source;
    if (const auto* scenario = std::get_if<ScenarioSource>(&config.source)) {
        source = "scenario-" + std::string(to_string(scenario->axis));
    } else {
        const auto& p = std::get<Defn1Params>(config.source);
        source = "defn1-p" + csv_number(p.p) + "-q" + csv_number(p.q) + "-k" + std::to_string(p.k);
    }
    std::string row = source;
    auto add = [&](const std::string& v) { row += "," + v; };
    add(std::to_string(config.m));
    add(std::to_string(config.num_train_grids));
    add(std::to_string(config.num_eval_grids));
    add(std::to_string(config.bpe_num_merges));
    add(std::to_string(config.dictionary_size_D));
    add(std::to_string(config.seed));
    add(std::string(to_string(config.counting_policy)));
    add(std::string(to_string(config.orientation_policy)));
    add(csv_number(config.alpha));
    add(std::string(to_string(config.length_model)));
    add(csv_number(h_pi));
    add(csv_number(h_inf));
    add(prop2_bound ? csv_number(*prop2_bound) : "");
    add(csv_number(flattened.eval.total));
    add(csv_number(tokenized.eval.total));
    add(csv_number(gap()));
    add(csv_number(flattened.eval_alpha0));
    add(csv_number(tokenized.eval_alpha0));
    add(csv_number(tokenized.mean_tokens_eval));
    add(std::to_string(merges_learned));
    add(vocab_hash);
    return row + "\n";
}

} // namespace bpeimg

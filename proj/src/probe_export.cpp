#include <cmath>
#include <fstream>
#include <json.hpp>

#include "bpeimg/eval.hpp"
#include "bpeimg/parallel.hpp"

namespace bpeimg {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

std::vector<TokenGrid> rows_and_columns(std::span<const TokenGrid> grids) {
    std::vector<TokenGrid> out;
    for (const auto& g : grids) {
        for (std::uint32_t r = 0; r < g.height(); ++r) {
            std::vector<TokenId> row(g.cells().begin() + static_cast<std::ptrdiff_t>(r) * g.width(),
                                     g.cells().begin() + static_cast<std::ptrdiff_t>(r + 1) * g.width());
            out.push_back(TokenGrid::from_sequence(row));
        }
        for (std::uint32_t c = 0; c < g.width(); ++c) {
            std::vector<TokenId> col(g.height());
            for (std::uint32_t r = 0; r < g.height(); ++r) col[r] = g.at(r, c);
            out.push_back(TokenGrid::from_sequence(col));
        }
    }
    return out;
}

Vocabulary train_probe_vocab(std::span<const TokenGrid> grids, TokenId base_vocab_size, std::size_t num_merges,
                             unsigned threads) {
    const auto lines = rows_and_columns(grids);
    TrainConfig config;
    config.initial_vocab_size = base_vocab_size;
    config.num_merges = num_merges;
    config.counting_policy = CountingPolicy::symmetrized;
    config.orientation_policy = OrientationPolicy::oriented;
    config.threads = threads;
    return train(lines, config);
}

namespace {

struct SplitData {
    std::vector<TokenSequence> raw;
    // Per grid: rows 0..m-1 then columns 0..m-1.
    std::vector<std::vector<TokenSequence>> lines;
};

SplitData encode_split(const std::vector<TokenGrid>& grids, const Vocabulary& vocab, unsigned threads) {
    SplitData data;
    data.raw.resize(grids.size());
    data.lines.resize(grids.size());
    parallel_for(grids.size(), threads, [&](std::size_t i) {
        data.raw[i] = flatten(grids[i]);
        const auto lines = rows_and_columns(std::span(&grids[i], 1));
        for (const auto& line : lines) data.lines[i].push_back(encode_1d(line.cells(), vocab));
    });
    return data;
}

ordered_json embedded(const std::string& text) {
    auto j = ordered_json::parse(text, nullptr, false);
    return j.is_discarded() ? ordered_json(text) : j;
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open " + path.string() + " for writing");
    return out;
}

// Per-base-symbol unigram reference: each cell is seen once in the raw
// condition and twice (row and column, weight 1/2) in the tokenized one.
double flattened_reference(const UnigramModel& model, const SplitData& split, std::uint32_t m) {
    return unigram_loss(model, split.raw, static_cast<std::uint64_t>(m) * m).total;
}

LossBreakdown tokenized_reference(const UnigramModel& model, const SplitData& split, std::uint32_t m) {
    std::vector<TokenSequence> all;
    for (const auto& lines : split.lines) all.insert(all.end(), lines.begin(), lines.end());
    // unigram_loss divides by m per line; lines per grid = 2m, so the mean over
    // lines is already the half-weighted per-symbol loss.
    return unigram_loss(model, all, m);
}

} // namespace

ProbeManifest export_probe_dataset(const ProbeExportConfig& config, const Vocabulary& vocab, const fs::path& dir) {
    config.params.validate();
    if (config.splits.empty()) throw DataError("probe export needs at least one split");
    if (vocab.base_vocab_size() != 2) throw DataError("probe vocabulary must have base size 2");
    const std::uint32_t m = config.m;
    if (m <= config.params.k) throw DataError("m must exceed k");
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());

    const std::string hash = vocab_hash(vocab);
    ordered_json provenance;
    provenance["tool"] = "bpeimg";
    provenance["version"] = BPEIMG_VERSION;
    provenance["run_config"] = embedded(config.run_config);
    save_vocab(vocab, dir / "vocab.json", provenance.dump());

    std::vector<SplitData> data;
    ordered_json splits = ordered_json::array();
    for (const auto& split : config.splits) {
        if (split.name.empty() || split.name.find_first_of("/\\") != std::string::npos) {
            throw DataError("invalid split name '" + split.name + "'");
        }
        const auto grids = generate_corpus(config.params, m, split.num_grids, config.seed, split.first_stream,
                                           config.threads);
        data.push_back(encode_split(grids, vocab, config.threads));
        const SplitData& d = data.back();

        const std::string raw_name = "raw_" + split.name + ".jsonl";
        const std::string tok_name = "tokenized_" + split.name + ".jsonl";
        auto raw_out = open_out(dir / raw_name);
        auto tok_out = open_out(dir / tok_name);
        std::uint64_t tok_total = 0, row_tokens = 0, col_tokens = 0;
        for (std::size_t g = 0; g < grids.size(); ++g) {
            ordered_json line;
            line["grid"] = g;
            line["tokens"] = d.raw[g].tokens;
            line["base_symbols"] = static_cast<std::uint64_t>(m) * m;
            raw_out << line.dump() << '\n';
            for (std::size_t k = 0; k < d.lines[g].size(); ++k) {
                const bool is_row = k < m;
                const auto& tokens = d.lines[g][k].tokens;
                ordered_json tl;
                tl["grid"] = g;
                tl["direction"] = is_row ? "row" : "column";
                tl["index"] = is_row ? k : k - m;
                tl["tokens"] = tokens;
                tl["base_symbols"] = m;
                tok_out << tl.dump() << '\n';
                tok_total += tokens.size();
                (is_row ? row_tokens : col_tokens) += tokens.size();
            }
        }
        if (!raw_out || !tok_out) throw DataError("write failed in " + dir.string());

        const double n_grids = static_cast<double>(grids.size());
        const double lines = 2.0 * m * n_grids;
        ordered_json s;
        s["name"] = split.name;
        s["num_grids"] = split.num_grids;
        s["first_stream"] = split.first_stream;
        ordered_json raw;
        raw["file"] = raw_name;
        raw["num_sequences"] = grids.size();
        raw["sequence_length"] = static_cast<std::uint64_t>(m) * m;
        raw["base_symbols_per_sequence"] = static_cast<std::uint64_t>(m) * m;
        raw["base_symbols_per_token"] = 1.0;
        s["raw"] = raw;
        ordered_json tok;
        tok["file"] = tok_name;
        tok["num_sequences"] = 2ull * m * grids.size();
        tok["total_tokens"] = tok_total;
        tok["mean_tokens_per_sequence"] = lines > 0 ? static_cast<double>(tok_total) / lines : 0.0;
        tok["mean_tokens_per_row"] = n_grids > 0 ? static_cast<double>(row_tokens) / (m * n_grids) : 0.0;
        tok["mean_tokens_per_column"] = n_grids > 0 ? static_cast<double>(col_tokens) / (m * n_grids) : 0.0;
        tok["base_symbols_per_sequence"] = m;
        tok["base_symbols_per_token"] = tok_total > 0 ? lines * m / static_cast<double>(tok_total) : 0.0;
        tok["direction_weight"] = 0.5;
        s["tokenized"] = tok;
        splits.push_back(s);
    }

    // Unigram references are fit on the first split and scored on each.
    const std::uint64_t patches = static_cast<std::uint64_t>(m) * m;
    const auto flat_model = fit_unigram(data.front().raw, 2, {config.alpha, LengthModel::uniform, patches, "flat"});
    std::vector<TokenSequence> first_lines;
    for (const auto& lines : data.front().lines) first_lines.insert(first_lines.end(), lines.begin(), lines.end());
    const auto tok_model = fit_unigram(first_lines, vocab.size(), {config.alpha, LengthModel::uniform, m, hash});
    for (std::size_t i = 0; i < data.size(); ++i) {
        ordered_json refs;
        refs["flattened_unigram_per_symbol"] = flattened_reference(flat_model, data[i], m);
        const auto tok = tokenized_reference(tok_model, data[i], m);
        refs["tokenized_unigram_per_symbol"] = tok.total;
        refs["tokenized_unigram_token_part_per_symbol"] = tok.token_part;
        refs["tokenized_unigram_length_part_per_symbol"] = tok.length_part;
        splits[i]["unigram_references"] = refs;
    }

    const MarkovKernel kernel = config.params.kernel();
    const StationaryDist pi{config.params.stationary_probs()};
    const auto optimal = optimal_loss_defn1(config.params, m, config.mc_samples, config.seed);

    ordered_json manifest;
    manifest["tool"] = "bpeimg";
    manifest["version"] = BPEIMG_VERSION;
    manifest["format_version"] = 1;
    manifest["unit"] = "nats per base symbol";
    ordered_json gen;
    gen["process"] = "defn1";
    gen["p"] = config.params.p;
    gen["q"] = config.params.q;
    gen["k"] = config.params.k;
    gen["m"] = m;
    gen["seed"] = config.seed;
    manifest["generator"] = gen;
    ordered_json v;
    v["file"] = "vocab.json";
    v["hash"] = hash;
    v["base_vocab_size"] = vocab.base_vocab_size();
    v["num_merges"] = vocab.merges().size();
    v["size"] = vocab.size();
    v["orientation_policy"] = std::string(to_string(vocab.orientation_policy()));
    manifest["vocab"] = v;
    manifest["alpha"] = config.alpha;
    ordered_json refs;
    refs["h_pi"] = entropy(pi);
    refs["h_inf"] = h_infinity(kernel, pi);
    refs["optimal_loss_defn1"] = optimal.mean;
    refs["optimal_loss_defn1_std_error"] = optimal.std_error;
    refs["parent_agreement"] = optimal.parent_agreement;
    refs["mc_samples"] = optimal.samples;
    manifest["references"] = refs;
    manifest["splits"] = splits;
    manifest["run_config"] = embedded(config.run_config);

    ProbeManifest result{manifest.dump(2) + "\n", dir / "manifest.json"};
    auto out = open_out(result.path);
    out << result.json;
    if (!out) throw DataError("write failed for " + result.path.string());
    return result;
}

} // namespace bpeimg

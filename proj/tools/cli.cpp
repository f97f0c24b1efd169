#include "cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <sstream>

#include "bpeimg/codec.hpp"
#include "bpeimg/eval.hpp"
#include "bpeimg/grid_io.hpp"
#include "bpeimg/markov.hpp"
#include "bpeimg/parallel.hpp"
#include "bpeimg/trainer.hpp"
#include "bpeimg/vocabulary.hpp"

namespace bpeimg::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

// TOML by default; a file whose first non-blank character is '{' is read as
// JSON, with nested objects mapping to subcommand sections.
class TomlOrJsonConfig : public CLI::ConfigTOML {
public:
    std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
        std::string text((std::istreambuf_iterator<char>(input)), std::istreambuf_iterator<char>());
        const auto first = text.find_first_not_of(" \t\r\n");
        if (first == std::string::npos || text[first] != '{') {
            std::istringstream toml(text);
            return CLI::ConfigTOML::from_config(toml);
        }
        ordered_json j;
        try {
            j = ordered_json::parse(text);
        } catch (const ordered_json::parse_error& e) {
            throw CLI::ConfigError(std::string("invalid JSON config: ") + e.what());
        }
        std::vector<CLI::ConfigItem> items;
        flatten(j, {}, items);
        return items;
    }

private:
    static std::string scalar(const ordered_json& v) {
        if (v.is_string()) return v.get<std::string>();
        if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
        return v.dump();
    }

    static void flatten(const ordered_json& obj, const std::vector<std::string>& parents,
                        std::vector<CLI::ConfigItem>& items) {
        for (const auto& [key, value] : obj.items()) {
            if (value.is_object()) {
                auto sub = parents;
                sub.push_back(key);
                flatten(value, sub, items);
                continue;
            }
            CLI::ConfigItem item;
            item.parents = parents;
            item.name = key;
            if (value.is_array()) {
                for (const auto& v : value) item.inputs.push_back(scalar(v));
            } else {
                item.inputs.push_back(scalar(value));
            }
            items.push_back(std::move(item));
        }
    }
};

struct Globals {
    std::uint64_t seed = 0;
    std::string out = "-";
    std::string format = "text";
    bool bits = false;
    bool nats = false;
    unsigned threads = 0;
    int verbosity = 0;
};

class Context {
public:
    Context(const Globals& globals, std::ostream& out, std::ostream& err, ordered_json run_config)
        : globals(globals), run_config(std::move(run_config)), out_(out), err_(err) {}

    const Globals& globals;
    ordered_json run_config;

    void emit(const std::string& text) const {
        if (globals.out == "-") {
            out_ << text;
            out_.flush();
        } else {
            write_file(globals.out, text);
        }
    }
    std::ostream& log() const { return err_; }
    GridFormat format() const { return parse_grid_format(globals.format); }

    ordered_json header() const {
        ordered_json h;
        h["tool"] = "bpeimg";
        h["version"] = BPEIMG_VERSION;
        h["run_config"] = run_config;
        return h;
    }

    fs::path out_dir() const {
        if (globals.out == "-") throw CLI::ValidationError("--out", "this subcommand writes a directory; pass --out DIR");
        fs::path dir(globals.out);
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
        return dir;
    }

private:
    std::ostream& out_;
    std::ostream& err_;
};

// Every option that was set or has a default, for the chosen subcommand and
// the global flags. Help and config-file flags are left out.
ordered_json resolved_config(const CLI::App& app, const CLI::App& sub) {
    auto section = [](const CLI::App& a) {
        ordered_json j = ordered_json::object();
        for (const CLI::Option* opt : a.get_options()) {
            const std::string name = opt->get_single_name();
            if (name == "help" || name == "config" || name == "version" || name.empty()) continue;
            const auto& results = opt->results();
            if (opt->get_expected_min() == 0) {
                if (opt->count() > 0 && !results.empty()) {
                    j[name] = results.back();
                } else {
                    j[name] = opt->get_default_str().empty() ? "false" : opt->get_default_str();
                }
            } else if (opt->count() > 0) {
                if (results.size() > 1) j[name] = results;
                else j[name] = results.empty() ? std::string() : results.front();
            } else if (!opt->get_default_str().empty()) {
                j[name] = opt->get_default_str();
            }
        }
        return j;
    };
    ordered_json j;
    j["subcommand"] = sub.get_name();
    j["global"] = section(app);
    j["options"] = section(sub);
    return j;
}

std::vector<std::pair<std::string, TokenGrid>> load_grids(const fs::path& path,
                                                          std::optional<TokenId> base = std::nullopt) {
    std::vector<std::pair<std::string, TokenGrid>> out;
    if (fs::is_directory(path)) {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(path)) {
            const auto ext = entry.path().extension();
            if (entry.is_regular_file() && (ext == ".txt" || ext == ".igrd")) files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
        if (files.empty()) throw DataError("no .txt or .igrd grids in " + path.string());
        for (const auto& f : files) {
            try {
                out.emplace_back(f.filename().string(), load_grid_auto(f, base));
            } catch (const DataError& e) {
                throw DataError(f.string() + ": " + e.what());
            }
        }
    } else {
        out.emplace_back(path.filename().string(), load_grid_auto(path, base));
    }
    return out;
}

std::string grid_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "grid_%06zu", i);
    return buf;
}

void write_grid_dir(const Context& ctx, const std::vector<std::pair<std::string, TokenGrid>>& grids,
                    ordered_json manifest) {
    const fs::path dir = ctx.out_dir();
    const GridFormat format = ctx.format();
    ordered_json files = ordered_json::array();
    for (const auto& [name, grid] : grids) {
        const std::string file = name + std::string(file_extension(format));
        save_grid(grid, dir / file, format);
        files.push_back(file);
    }
    ordered_json j = ctx.header();
    for (auto& [k, v] : manifest.items()) j[k] = v;
    j["format"] = std::string(to_string(format));
    j["files"] = files;
    write_file(dir / "manifest.json", j.dump(2) + "\n");
}

MarkovKernel kernel_from(const std::string& kernel_path, double p, double q) {
    if (!kernel_path.empty()) return MarkovKernel::from_json(read_file(kernel_path));
    return MarkovKernel::binary_flip(p, q);
}

double to_unit(const Context& ctx, double nats) { return ctx.globals.bits ? nats / std::log(2.0) : nats; }

// -- subcommands -------------------------------------------------------------

struct TrainOpts {
    std::string corpus;
    std::size_t merges = 0;
    TokenId base = 0;
    std::string counting = "symmetrized";
    std::string orientation = "agnostic";
    std::string log;
};

int run_train(const Context& ctx, const TrainOpts& o) {
    const auto grids = load_grids(o.corpus);
    std::vector<TokenGrid> corpus;
    TokenId max_id = 0;
    for (const auto& [name, g] : grids) {
        corpus.push_back(g);
        for (TokenId t : g.cells()) max_id = std::max(max_id, t);
    }
    TrainConfig config;
    config.initial_vocab_size = o.base ? o.base : max_id + 1;
    config.num_merges = o.merges;
    config.counting_policy = parse_counting_policy(o.counting);
    config.orientation_policy = parse_orientation_policy(o.orientation);
    config.threads = ctx.globals.threads;

    std::unique_ptr<std::ofstream> log;
    if (!o.log.empty()) {
        log = std::make_unique<std::ofstream>(o.log, std::ios::binary);
        if (!*log) throw DataError("cannot open " + o.log + " for writing");
        *log << ordered_json{{"header", ctx.header()}}.dump() << '\n';
    }
    auto observer = [&](const TrainStep& step) {
        ordered_json j;
        j["iteration"] = step.iteration;
        j["left"] = step.rule.left;
        j["right"] = step.rule.right;
        j["orientation"] = std::string(to_string(step.rule.orientation));
        j["new_id"] = step.rule.new_id;
        j["freq"] = step.freq;
        if (log) *log << j.dump() << '\n';
        if (ctx.globals.verbosity > 0) ctx.log() << j.dump() << '\n';
    };
    const TrainResult result = train_detailed(corpus, config, observer);
    if (result.stopped_early && ctx.globals.verbosity >= 0) {
        ctx.log() << "training stopped early after " << result.vocab.merges().size()
                  << " merges: no adjacent pairs left\n";
    }
    ctx.emit(serialize_vocab(result.vocab, ctx.header().dump()));
    return kOk;
}

struct EncodeOpts {
    std::string vocab;
    std::string input;
    bool layout = false;
};

int run_encode(const Context& ctx, const EncodeOpts& o) {
    const Vocabulary vocab = load_vocab(o.vocab);
    const auto grids = load_grids(o.input, vocab.base_vocab_size());
    std::vector<Encoded> encoded(grids.size());
    parallel_for(grids.size(), ctx.globals.threads,
                 [&](std::size_t i) { encoded[i] = encode(grids[i].second, vocab, o.layout); });
    ordered_json header = ctx.header();
    header["vocab_hash"] = vocab_hash(vocab);
    std::string text = ordered_json{{"header", header}}.dump() + "\n";
    for (std::size_t i = 0; i < grids.size(); ++i) {
        ordered_json j;
        j["source"] = grids[i].first;
        j["dims"] = {grids[i].second.height(), grids[i].second.width()};
        j["tokens"] = encoded[i].sequence.tokens;
        if (encoded[i].layout) j["layout"] = encoded[i].layout->cell_to_instance;
        text += j.dump() + "\n";
    }
    ctx.emit(text);
    return kOk;
}

struct DecodeOpts {
    std::string vocab;
    std::string input;
    bool layout = false;
};

int run_decode(const Context& ctx, const DecodeOpts& o) {
    const Vocabulary vocab = load_vocab(o.vocab);
    std::istringstream lines(read_file(o.input));
    std::vector<std::pair<std::string, TokenGrid>> grids;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(lines, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto where = o.input + ":" + std::to_string(lineno) + ": ";
        ordered_json j;
        try {
            j = ordered_json::parse(line);
        } catch (const ordered_json::parse_error& e) {
            throw DataError(where + "invalid JSON");
        }
        if (j.contains("header")) continue;
        try {
            TokenSequence seq;
            seq.tokens = j.at("tokens").get<std::vector<TokenId>>();
            if (j.contains("dims")) {
                const auto dims = j.at("dims").get<std::vector<std::uint32_t>>();
                if (dims.size() != 2) throw DataError("dims must be [height, width]");
                seq.source_dims = GridDims{dims[0], dims[1]};
            }
            std::optional<LayoutSidecar> layout;
            if (o.layout && j.contains("layout")) {
                layout = LayoutSidecar{j.at("layout").get<std::vector<std::uint32_t>>()};
            }
            std::string name = j.contains("source") ? fs::path(j.at("source").get<std::string>()).stem().string()
                                                    : grid_name(grids.size());
            grids.emplace_back(std::move(name), decode(seq, vocab, layout));
        } catch (const DataError& e) {
            throw DataError(where + e.what());
        } catch (const ordered_json::exception& e) {
            throw DataError(where + e.what());
        }
    }
    if (ctx.globals.out == "-") {
        std::string text;
        for (const auto& [name, g] : grids) text += format_grid_text(g);
        ctx.emit(text);
        return kOk;
    }
    ordered_json manifest;
    manifest["vocab_hash"] = vocab_hash(vocab);
    write_grid_dir(ctx, grids, manifest);
    return kOk;
}

struct StatsOpts {
    std::string corpus;
    std::string vocab;
};

int run_stats(const Context& ctx, const StatsOpts& o) {
    if (o.corpus.empty() && o.vocab.empty()) throw CLI::ValidationError("stats", "pass --corpus, --vocab or both");
    ordered_json j = ctx.header();
    std::optional<Vocabulary> vocab;
    if (!o.vocab.empty()) vocab = load_vocab(o.vocab);
    std::vector<std::pair<std::string, TokenGrid>> grids;
    if (!o.corpus.empty()) {
        grids = load_grids(o.corpus, vocab ? std::optional(vocab->base_vocab_size()) : std::nullopt);
        std::map<TokenId, std::uint64_t> hist;
        std::uint64_t cells = 0;
        std::uint32_t hmin = UINT32_MAX, hmax = 0, wmin = UINT32_MAX, wmax = 0;
        for (const auto& [name, g] : grids) {
            for (TokenId t : g.cells()) ++hist[t];
            cells += g.size();
            hmin = std::min(hmin, g.height());
            hmax = std::max(hmax, g.height());
            wmin = std::min(wmin, g.width());
            wmax = std::max(wmax, g.width());
        }
        ordered_json c;
        c["num_grids"] = grids.size();
        c["cells"] = cells;
        c["height"] = {hmin, hmax};
        c["width"] = {wmin, wmax};
        ordered_json h = ordered_json::object();
        for (const auto& [t, n] : hist) h[std::to_string(t)] = n;
        c["symbol_histogram"] = h;
        j["corpus"] = c;
    }
    if (vocab) {
        const auto sizes = vocab->token_sizes();
        std::map<std::size_t, std::uint64_t> size_hist;
        for (TokenId t = vocab->base_vocab_size(); t < vocab->size(); ++t) ++size_hist[sizes[t]];
        ordered_json v;
        v["hash"] = vocab_hash(*vocab);
        v["base_vocab_size"] = vocab->base_vocab_size();
        v["num_merges"] = vocab->merges().size();
        v["size"] = vocab->size();
        v["orientation_policy"] = std::string(to_string(vocab->orientation_policy()));
        v["max_token_cells"] = sizes.empty() ? 0 : *std::max_element(sizes.begin(), sizes.end());
        ordered_json sh = ordered_json::object();
        for (const auto& [s, n] : size_hist) sh[std::to_string(s)] = n;
        v["merged_token_cell_histogram"] = sh;
        j["vocab"] = v;
    }
    if (vocab && !grids.empty()) {
        std::vector<TokenSequence> seqs(grids.size());
        parallel_for(grids.size(), ctx.globals.threads,
                     [&](std::size_t i) { seqs[i] = encode(grids[i].second, *vocab).sequence; });
        std::vector<std::uint64_t> usage(vocab->size(), 0);
        std::uint64_t tokens = 0, cells = 0;
        for (std::size_t i = 0; i < seqs.size(); ++i) {
            for (TokenId t : seqs[i].tokens) ++usage[t];
            tokens += seqs[i].tokens.size();
            cells += grids[i].second.size();
        }
        std::uint64_t base_uses = 0, unused_merged = 0;
        for (TokenId t = 0; t < vocab->size(); ++t) {
            if (vocab->is_base(t)) base_uses += usage[t];
            else if (usage[t] == 0) ++unused_merged;
        }
        ordered_json u;
        u["tokens"] = tokens;
        u["mean_tokens_per_grid"] = static_cast<double>(tokens) / static_cast<double>(grids.size());
        u["cells_per_token"] = tokens ? static_cast<double>(cells) / static_cast<double>(tokens) : 0.0;
        u["base_token_fraction"] = tokens ? static_cast<double>(base_uses) / static_cast<double>(tokens) : 0.0;
        u["unused_merged_tokens"] = unused_merged;
        u["token_usage"] = usage;
        j["usage"] = u;
    }
    ctx.emit(j.dump(2) + "\n");
    return kOk;
}

struct GenOpts {
    std::string kernel;
    double p = 0.9;
    double q = 0.9;
    std::uint32_t k = 1;
    std::uint32_t m = 32;
    std::uint32_t count = 1;
    std::uint64_t first_stream = 0;
    std::string axis = "column";
};

int run_gen_markov(const Context& ctx, const GenOpts& o) {
    const Defn1Params params{o.p, o.q, o.k};
    const auto grids = generate_corpus(params, o.m, o.count, ctx.globals.seed, o.first_stream, ctx.globals.threads);
    std::vector<std::pair<std::string, TokenGrid>> named;
    for (std::size_t i = 0; i < grids.size(); ++i) named.emplace_back(grid_name(o.first_stream + i), grids[i]);
    ordered_json gen;
    gen["process"] = "defn1";
    gen["p"] = o.p;
    gen["q"] = o.q;
    gen["k"] = o.k;
    gen["m"] = o.m;
    gen["seed"] = ctx.globals.seed;
    gen["first_stream"] = o.first_stream;
    write_grid_dir(ctx, named, {{"generator", gen}});
    return kOk;
}

int run_gen_scenario(const Context& ctx, const GenOpts& o) {
    const MarkovKernel kernel = kernel_from(o.kernel, o.p, o.q);
    const ScenarioSource source{kernel, parse_scenario_axis(o.axis)};
    const auto grids = generate_corpus(source, o.m, o.count, ctx.globals.seed, o.first_stream, ctx.globals.threads);
    std::vector<std::pair<std::string, TokenGrid>> named;
    for (std::size_t i = 0; i < grids.size(); ++i) named.emplace_back(grid_name(o.first_stream + i), grids[i]);
    ordered_json gen;
    gen["process"] = "scenario";
    gen["axis"] = o.axis;
    gen["kernel"] = ordered_json::parse(kernel.to_json());
    gen["m"] = o.m;
    gen["seed"] = ctx.globals.seed;
    gen["first_stream"] = o.first_stream;
    write_grid_dir(ctx, named, {{"generator", gen}});
    return kOk;
}

struct EntropyOpts {
    std::string kernel;
    double p = 0.9;
    double q = 0.9;
    std::uint64_t dict_size = 256;
    std::uint64_t m = 0;
};

int run_entropy(const Context& ctx, const EntropyOpts& o) {
    const MarkovKernel kernel = kernel_from(o.kernel, o.p, o.q);
    const EntropyReport report = prop2_bound(kernel, o.dict_size);
    ordered_json j = ordered_json::parse(report.to_json(ctx.globals.bits));
    if (o.m > 0) {
        const StationaryDist pi = stationary(kernel);
        j["m"] = o.m;
        j["joint_entropy_image"] = to_unit(ctx, joint_entropy_exact(kernel, pi, o.m));
    }
    const ordered_json header = ctx.header();
    for (const auto& [k, v] : header.items()) j[k] = v;
    ctx.emit(j.dump(2) + "\n");
    return kOk;
}

struct GapOpts {
    std::string source = "scenario";
    std::string kernel;
    double p = 0.9;
    double q = 0.9;
    std::uint32_t k = 1;
    std::string axis = "column";
    std::uint32_t m = 64;
    std::uint32_t train_grids = 200;
    std::uint32_t eval_grids = 200;
    std::size_t merges = 254;
    std::uint64_t dict_size = 0;
    std::string counting = "symmetrized";
    std::string orientation = "oriented";
    double alpha = 0.5;
    std::string length_model = "uniform";
    std::uint64_t mc_samples = 100'000;
    std::string csv;
};

int run_eval_gap(const Context& ctx, const GapOpts& o) {
    GapConfig config;
    TokenId base = 2;
    if (o.source == "scenario") {
        const MarkovKernel kernel = kernel_from(o.kernel, o.p, o.q);
        base = static_cast<TokenId>(kernel.alphabet_size());
        config.source = ScenarioSource{kernel, parse_scenario_axis(o.axis)};
    } else {
        config.source = Defn1Params{o.p, o.q, o.k};
    }
    config.m = o.m;
    config.num_train_grids = o.train_grids;
    config.num_eval_grids = o.eval_grids;
    config.bpe_num_merges = o.merges;
    config.dictionary_size_D = o.dict_size ? o.dict_size : base + o.merges;
    config.seed = ctx.globals.seed;
    config.counting_policy = parse_counting_policy(o.counting);
    config.orientation_policy = parse_orientation_policy(o.orientation);
    config.alpha = o.alpha;
    config.length_model = parse_length_model(o.length_model);
    config.defn1_mc_samples = o.mc_samples;
    config.threads = ctx.globals.threads;
    config.run_config = ctx.run_config.dump();
    const GapReport report = run_gap_experiment(config);
    if (!o.csv.empty()) {
        const bool fresh = !fs::exists(o.csv) || fs::file_size(o.csv) == 0;
        std::ofstream csv(o.csv, std::ios::app | std::ios::binary);
        if (!csv) throw DataError("cannot open " + o.csv + " for appending");
        if (fresh) csv << GapReport::csv_header();
        csv << report.csv_row();
    }
    ctx.emit(report.to_json(ctx.globals.bits));
    return kOk;
}

struct ProbeOpts {
    double p = 0.9;
    double q = 0.9;
    std::uint32_t k = 1;
    std::uint32_t m = 32;
    std::size_t merges = 8;
    std::string vocab;
    std::uint32_t train_grids = 100;
    std::uint32_t eval_grids = 100;
    std::uint64_t mc_samples = 100'000;
    double alpha = 0.5;
};

int run_export_probe(const Context& ctx, const ProbeOpts& o) {
    ProbeExportConfig config;
    config.params = {o.p, o.q, o.k};
    config.m = o.m;
    config.seed = ctx.globals.seed;
    config.splits = {{"train", o.train_grids, 0}, {"eval", o.eval_grids, kEvalStreamBase}};
    config.mc_samples = o.mc_samples;
    config.alpha = o.alpha;
    config.run_config = ctx.run_config.dump();
    config.threads = ctx.globals.threads;
    const fs::path dir = ctx.out_dir();
    Vocabulary vocab;
    if (!o.vocab.empty()) {
        vocab = load_vocab(o.vocab);
    } else {
        config.params.validate();
        const auto grids = generate_corpus(config.params, o.m, o.train_grids, config.seed, 0, config.threads);
        vocab = train_probe_vocab(grids, 2, o.merges, config.threads);
    }
    const auto manifest = export_probe_dataset(config, vocab, dir);
    if (ctx.globals.verbosity >= 0) ctx.log() << "wrote " << manifest.path.string() << '\n';
    return kOk;
}

struct MapOpts {
    std::uint64_t text_vocab = 0;
    std::uint64_t base = 0;
    std::uint64_t bpe = 0;
    std::string vocab;
};

int run_vocab_map(const Context& ctx, const MapOpts& o) {
    std::uint64_t base = o.base, bpe = o.bpe;
    if (!o.vocab.empty()) {
        const Vocabulary vocab = load_vocab(o.vocab);
        base = vocab.base_vocab_size();
        bpe = vocab.merges().size();
    }
    if (base == 0) throw CLI::ValidationError("vocab-map", "pass --base or --vocab");
    const VocabMap map = expand_vocab_map(o.text_vocab, base, bpe);
    ordered_json j = ordered_json::parse(map.to_json());
    const ordered_json header = ctx.header();
    for (const auto& [k, v] : header.items()) j[k] = v;
    ctx.emit(j.dump(2) + "\n");
    return kOk;
}

const std::vector<std::string> kCounting{"symmetrized", "paper_exact_upper_tri"};
const std::vector<std::string> kOrientation{"agnostic", "oriented"};

} // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"2D BPE tokenizer and Markov gap experiments for image token grids", "bpeimg"};
    app.set_version_flag("--version", std::string(BPEIMG_VERSION));
    app.config_formatter(std::make_shared<TomlOrJsonConfig>());
    app.set_config("--config", "", "TOML or JSON file with option values; flags override it");
    app.require_subcommand(1);
    app.fallthrough();

    Globals g;
    app.add_option("--seed", g.seed, "Global random seed")->capture_default_str();
    app.add_option("--out", g.out, "Output path, '-' for stdout")->capture_default_str();
    app.add_option("--format", g.format, "Grid file format")
        ->check(CLI::IsMember({"text", "binary"}))
        ->capture_default_str();
    auto* bits = app.add_flag("--bits", g.bits, "Report entropies and losses in bits")->capture_default_str();
    app.add_flag("--nats", g.nats, "Report in nats (default)")->excludes(bits)->capture_default_str();
    app.add_option("--threads", g.threads, "Worker threads, 0 = all cores")->capture_default_str();
    app.add_flag("-v,--verbose", g.verbosity, "More log output on stderr");

    TrainOpts train_o;
    auto* train_cmd = app.add_subcommand("train", "Learn merge rules from a corpus directory");
    train_cmd->add_option("--corpus", train_o.corpus, "Directory of grid files (or one file)")->required();
    train_cmd->add_option("--merges", train_o.merges, "Number of merges")->capture_default_str();
    train_cmd->add_option("--base-vocab", train_o.base, "Base codebook size, 0 = max ID + 1")->capture_default_str();
    train_cmd->add_option("--counting-policy", train_o.counting)->check(CLI::IsMember(kCounting))->capture_default_str();
    train_cmd->add_option("--orientation-policy", train_o.orientation)
        ->check(CLI::IsMember(kOrientation))
        ->capture_default_str();
    train_cmd->add_option("--log", train_o.log, "Per-iteration JSONL log file");

    EncodeOpts enc_o;
    auto* enc_cmd = app.add_subcommand("encode", "Encode grids to token JSONL");
    enc_cmd->add_option("--vocab", enc_o.vocab)->required();
    enc_cmd->add_option("--input", enc_o.input, "Grid file or directory")->required();
    enc_cmd->add_flag("--layout", enc_o.layout, "Emit the cell-to-token layout")->capture_default_str();

    DecodeOpts dec_o;
    auto* dec_cmd = app.add_subcommand("decode", "Decode token JSONL to grids");
    dec_cmd->add_option("--vocab", dec_o.vocab)->required();
    dec_cmd->add_option("--input", dec_o.input, "Token JSONL from encode")->required();
    dec_cmd->add_flag("--layout", dec_o.layout, "Use the layout field of each line")->capture_default_str();

    StatsOpts stats_o;
    auto* stats_cmd = app.add_subcommand("stats", "Corpus and vocabulary summaries");
    stats_cmd->add_option("--corpus", stats_o.corpus);
    stats_cmd->add_option("--vocab", stats_o.vocab);

    GenOpts gen_o;
    auto* gen_markov_cmd = app.add_subcommand("gen-markov", "Binary 2D k-th order Markov corpus");
    auto* gen_scen_cmd = app.add_subcommand("gen-scenario", "Independent Markov chains along one axis");
    for (auto* cmd : {gen_markov_cmd, gen_scen_cmd}) {
        cmd->add_option("--p", gen_o.p, "P(1 | 0)")->capture_default_str();
        cmd->add_option("--q", gen_o.q, "P(0 | 1)")->capture_default_str();
        cmd->add_option("--m", gen_o.m, "Grid side")->capture_default_str();
        cmd->add_option("--count", gen_o.count, "Number of grids")->capture_default_str();
        cmd->add_option("--first-stream", gen_o.first_stream, "Stream index of the first grid")
            ->capture_default_str();
    }
    gen_markov_cmd->add_option("--k", gen_o.k, "Markov order")->capture_default_str();
    gen_scen_cmd->add_option("--kernel", gen_o.kernel, "Kernel JSON {alphabet_size, transition}");
    gen_scen_cmd->add_option("--axis", gen_o.axis)->check(CLI::IsMember({"column", "row"}))->capture_default_str();

    EntropyOpts ent_o;
    auto* ent_cmd = app.add_subcommand("entropy", "Entropy references and the dictionary bound");
    ent_cmd->add_option("--kernel", ent_o.kernel, "Kernel JSON {alphabet_size, transition}");
    ent_cmd->add_option("--p", ent_o.p)->capture_default_str();
    ent_cmd->add_option("--q", ent_o.q)->capture_default_str();
    ent_cmd->add_option("--k", "Markov order (does not change the references)");
    ent_cmd->add_option("--dict-size", ent_o.dict_size, "Dictionary size D")->capture_default_str();
    ent_cmd->add_option("--m", ent_o.m, "Also report the m x m image entropy")->capture_default_str();

    GapOpts gap_o;
    auto* gap_cmd = app.add_subcommand("eval-gap", "Flattened vs tokenized unigram loss");
    gap_cmd->add_option("--source", gap_o.source)->check(CLI::IsMember({"scenario", "defn1"}))->capture_default_str();
    gap_cmd->add_option("--kernel", gap_o.kernel, "Kernel JSON for the scenario source");
    gap_cmd->add_option("--p", gap_o.p)->capture_default_str();
    gap_cmd->add_option("--q", gap_o.q)->capture_default_str();
    gap_cmd->add_option("--k", gap_o.k)->capture_default_str();
    gap_cmd->add_option("--axis", gap_o.axis)->check(CLI::IsMember({"column", "row"}))->capture_default_str();
    gap_cmd->add_option("--m", gap_o.m)->capture_default_str();
    gap_cmd->add_option("--train-grids", gap_o.train_grids)->capture_default_str();
    gap_cmd->add_option("--eval-grids", gap_o.eval_grids)->capture_default_str();
    gap_cmd->add_option("--merges", gap_o.merges)->capture_default_str();
    gap_cmd->add_option("--dict-size", gap_o.dict_size, "D for the bound, 0 = base + merges")->capture_default_str();
    gap_cmd->add_option("--counting-policy", gap_o.counting)->check(CLI::IsMember(kCounting))->capture_default_str();
    gap_cmd->add_option("--orientation-policy", gap_o.orientation)
        ->check(CLI::IsMember(kOrientation))
        ->capture_default_str();
    gap_cmd->add_option("--alpha", gap_o.alpha, "Additive smoothing")->capture_default_str();
    gap_cmd->add_option("--length-model", gap_o.length_model)
        ->check(CLI::IsMember({"uniform", "empirical"}))
        ->capture_default_str();
    gap_cmd->add_option("--mc-samples", gap_o.mc_samples)->capture_default_str();
    gap_cmd->add_option("--csv", gap_o.csv, "Append one CSV row (nats) to this file");

    ProbeOpts probe_o;
    auto* probe_cmd = app.add_subcommand("export-probe", "Write raw and row/column-tokenized probe datasets");
    probe_cmd->add_option("--p", probe_o.p)->capture_default_str();
    probe_cmd->add_option("--q", probe_o.q)->capture_default_str();
    probe_cmd->add_option("--k", probe_o.k)->capture_default_str();
    probe_cmd->add_option("--m", probe_o.m)->capture_default_str();
    probe_cmd->add_option("--merges", probe_o.merges, "Merges for the shared 1D vocabulary")->capture_default_str();
    probe_cmd->add_option("--vocab", probe_o.vocab, "Use this vocabulary instead of training one");
    probe_cmd->add_option("--train-grids", probe_o.train_grids)->capture_default_str();
    probe_cmd->add_option("--eval-grids", probe_o.eval_grids)->capture_default_str();
    probe_cmd->add_option("--mc-samples", probe_o.mc_samples)->capture_default_str();
    probe_cmd->add_option("--alpha", probe_o.alpha)->capture_default_str();

    MapOpts map_o;
    auto* map_cmd = app.add_subcommand("vocab-map", "Global ID layout after text-vocabulary expansion");
    map_cmd->add_option("--text-vocab", map_o.text_vocab, "Text vocabulary size n")->required();
    map_cmd->add_option("--base", map_o.base, "Base image codebook size C")->capture_default_str();
    map_cmd->add_option("--bpe", map_o.bpe, "Number of BPE image tokens M")->capture_default_str();
    map_cmd->add_option("--vocab", map_o.vocab, "Take C and M from a vocabulary file");

    std::vector<const char*> argv{"bpeimg"};
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUsage;
    }

    CLI::App* sub = app.get_subcommands().front();
    ordered_json run_config = resolved_config(app, *sub);
    run_config["global"]["verbose"] = std::to_string(g.verbosity);
    const Context ctx(g, out, err, std::move(run_config));
    try {
        if (sub == train_cmd) return run_train(ctx, train_o);
        if (sub == enc_cmd) return run_encode(ctx, enc_o);
        if (sub == dec_cmd) return run_decode(ctx, dec_o);
        if (sub == stats_cmd) return run_stats(ctx, stats_o);
        if (sub == gen_markov_cmd) return run_gen_markov(ctx, gen_o);
        if (sub == gen_scen_cmd) return run_gen_scenario(ctx, gen_o);
        if (sub == ent_cmd) return run_entropy(ctx, ent_o);
        if (sub == gap_cmd) return run_eval_gap(ctx, gap_o);
        if (sub == probe_cmd) return run_export_probe(ctx, probe_o);
        if (sub == map_cmd) return run_vocab_map(ctx, map_o);
    } catch (const CLI::ValidationError& e) {
        err << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << '\n';
        return kData;
    } catch (const nlohmann::json::exception& e) {
        err << "data error: " << e.what() << '\n';
        return kData;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kData;
    }
    return kUsage;
}

int dispatch(int argc, const char* const* argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return dispatch(args, std::cout, std::cerr);
}

} // namespace bpeimg::cli

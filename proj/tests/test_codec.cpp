#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <random>

#include "bpeimg/codec.hpp"
#include "bpeimg/trainer.hpp"

using namespace bpeimg;

namespace {

constexpr auto kAgnostic = OrientationPolicy::agnostic;
constexpr auto kOriented = OrientationPolicy::oriented;

TokenGrid random_grid(std::mt19937_64& rng, std::uint32_t max_side, TokenId base, double repeat = 0.0) {
    std::uniform_int_distribution<std::uint32_t> side(1, max_side);
    std::uniform_int_distribution<TokenId> id(0, base - 1);
    std::bernoulli_distribution copy(repeat);
    const std::uint32_t h = side(rng), w = side(rng);
    std::vector<TokenId> cells(static_cast<std::size_t>(h) * w);
    for (std::size_t i = 0; i < cells.size(); ++i) {
        cells[i] = (i >= w && copy(rng)) ? cells[i - w] : id(rng);
    }
    return {h, w, std::move(cells)};
}

Vocabulary trained(std::mt19937_64& rng, TokenId base, std::size_t merges, OrientationPolicy policy) {
    std::vector<TokenGrid> corpus;
    for (int i = 0; i < 4; ++i) corpus.push_back(random_grid(rng, 10, base, 0.6));
    TrainConfig cfg;
    cfg.initial_vocab_size = base;
    cfg.num_merges = merges;
    cfg.orientation_policy = policy;
    return train(corpus, cfg);
}

Vocabulary prefix(const Vocabulary& v, std::size_t n) {
    return Vocabulary(v.base_vocab_size(), v.orientation_policy(),
                      std::vector<MergeRule>(v.merges().begin(), v.merges().begin() + static_cast<std::ptrdiff_t>(n)));
}

// Base-ID histogram of every instance, for comparing a decoded grid against
// its source under a shared layout.
std::vector<std::vector<TokenId>> instance_contents(const TokenGrid& g, const LayoutSidecar& layout, std::size_t n) {
    std::vector<std::vector<TokenId>> out(n);
    for (std::size_t c = 0; c < layout.cell_to_instance.size(); ++c) out[layout.cell_to_instance[c]].push_back(g.cells()[c]);
    for (auto& v : out) std::sort(v.begin(), v.end());
    return out;
}

} // namespace

TEST_CASE("flatten and zero-merge encode") {
    std::mt19937_64 rng(1);
    for (int i = 0; i < 100; ++i) {
        const auto g = random_grid(rng, 9, 5);
        const auto flat = flatten(g);
        CHECK(flat.tokens == std::vector<TokenId>(g.cells().begin(), g.cells().end()));
        CHECK(flat.source_dims == GridDims{g.height(), g.width()});
        for (auto policy : {kAgnostic, kOriented}) {
            const auto enc = encode(g, Vocabulary(5, policy), true);
            CHECK(enc.sequence == flat);
            REQUIRE(enc.layout);
            for (std::size_t c = 0; c < g.size(); ++c) CHECK(enc.layout->cell_to_instance[c] == c);
        }
        CHECK(decode(flat, Vocabulary(5, kOriented)) == g);
    }
}

TEST_CASE("oriented decode example") {
    const Vocabulary v(2, kOriented, {{0, 1, 2, Orientation::horizontal}});
    const TokenSequence seq{{2, 2}, GridDims{2, 2}};
    CHECK(decode(seq, v) == TokenGrid(2, 2, {0, 1, 0, 1}));
    CHECK(encode(TokenGrid(2, 2, {0, 1, 0, 1}), v).sequence == seq);
}

TEST_CASE("oriented shapes") {
    const Vocabulary v(2, kOriented,
                       {{0, 1, 2, Orientation::horizontal}, {2, 2, 3, Orientation::vertical}, {1, 0, 4, Orientation::vertical}});
    const auto shapes = oriented_shapes(v);
    CHECK(shapes[1] == TokenShape{{0, 0, 1}});
    CHECK(shapes[2] == TokenShape{{0, 0, 0}, {0, 1, 1}});
    CHECK(shapes[3] == TokenShape{{0, 0, 0}, {0, 1, 1}, {1, 0, 0}, {1, 1, 1}});
    CHECK(shapes[4] == TokenShape{{0, 0, 1}, {1, 0, 0}});
    CHECK_THROWS_AS(oriented_shapes(Vocabulary(2, kAgnostic)), DataError);
}

TEST_CASE("oriented decode inverts encode") {
    std::mt19937_64 rng(7);
    int grids = 0;
    for (int v = 0; v < 40; ++v) {
        const TokenId base = 2 + static_cast<TokenId>(rng() % 3);
        const auto vocab = trained(rng, base, 5 + rng() % 40, kOriented);
        for (int i = 0; i < 30; ++i) {
            const auto g = random_grid(rng, 12, base, 0.5);
            const auto enc = encode(g, vocab, true);
            CHECK(decode(enc.sequence, vocab) == g);
            CHECK(decode(enc.sequence, vocab, enc.layout) == g);
            ++grids;
        }
    }
    CHECK(grids >= 1000);
}

TEST_CASE("agnostic decode needs the layout and respects token contents") {
    const Vocabulary v(2, kAgnostic, {{0, 1, 2, Orientation::any}});
    const TokenSequence seq{{2, 2}, GridDims{2, 2}};
    CHECK_THROWS_WITH_AS(decode(seq, v), doctest::Contains("layout required"), DataError);

    std::mt19937_64 rng(9);
    for (int k = 0; k < 20; ++k) {
        const auto vocab = trained(rng, 2, 3 + rng() % 12, kAgnostic);
        for (int i = 0; i < 20; ++i) {
            const auto g = random_grid(rng, 7, 2, 0.5);
            const auto enc = encode(g, vocab, true);
            const auto back = decode(enc.sequence, vocab, enc.layout);
            const auto n = enc.sequence.tokens.size();
            CHECK(instance_contents(back, *enc.layout, n) == instance_contents(g, *enc.layout, n));
        }
    }
}

TEST_CASE("agnostic decode of large irregular instances keeps their contents") {
    // Deep merge trees over big instances exhaust the exact replay and take
    // the best-effort path.
    std::mt19937_64 rng(11);
    std::vector<TokenGrid> corpus;
    for (int i = 0; i < 6; ++i) {
        std::vector<TokenId> cells(24 * 24);
        for (std::size_t c = 0; c < cells.size(); ++c) cells[c] = static_cast<TokenId>((c / 24 + c % 24 + (rng() % 7 == 0)) % 2);
        corpus.emplace_back(24, 24, std::move(cells));
    }
    TrainConfig cfg;
    cfg.initial_vocab_size = 2;
    cfg.num_merges = 60;
    const auto vocab = train(corpus, cfg);
    std::size_t largest = 0;
    for (const auto& g : corpus) {
        const auto enc = encode(g, vocab, true);
        const auto back = decode(enc.sequence, vocab, enc.layout);
        const auto n = enc.sequence.tokens.size();
        CHECK(instance_contents(back, *enc.layout, n) == instance_contents(g, *enc.layout, n));
        for (const auto& inst : instance_contents(g, *enc.layout, n)) largest = std::max(largest, inst.size());
    }
    CHECK(largest >= 64);
}

TEST_CASE("agnostic decode is lossy for mirrored pairs") {
    const Vocabulary v(2, kAgnostic, {{0, 1, 2, Orientation::any}});
    const auto a = encode(TokenGrid(1, 2, {0, 1}), v, true);
    const auto b = encode(TokenGrid(1, 2, {1, 0}), v, true);
    CHECK(a.sequence == b.sequence);
    CHECK(a.layout == b.layout);
}

TEST_CASE("encode replays training segmentation") {
    std::mt19937_64 rng(13);
    for (int i = 0; i < 60; ++i) {
        const auto policy = i % 2 ? kOriented : kAgnostic;
        std::vector<TokenGrid> corpus;
        for (int k = 0; k < 3; ++k) corpus.push_back(random_grid(rng, 10, 3, 0.5));
        TrainConfig cfg;
        cfg.initial_vocab_size = 3;
        cfg.num_merges = rng() % 30;
        cfg.orientation_policy = policy;
        const auto result = train_detailed(corpus, cfg);
        for (std::size_t g = 0; g < corpus.size(); ++g) {
            CHECK(segment(corpus[g], result.vocab) == result.final_corpus[g]);
            CHECK(encode(corpus[g], result.vocab).sequence.tokens == result.final_corpus[g].tokens());
        }
    }
}

TEST_CASE("more merges never lengthen an encoding") {
    std::mt19937_64 rng(19);
    for (int v = 0; v < 20; ++v) {
        const auto policy = v % 2 ? kOriented : kAgnostic;
        const auto vocab = trained(rng, 2, 30, policy);
        for (int i = 0; i < 10; ++i) {
            const auto g = random_grid(rng, 10, 2, 0.5);
            std::size_t last = g.size();
            for (std::size_t n = 0; n <= vocab.merges().size(); ++n) {
                const auto len = encode(g, prefix(vocab, n)).sequence.tokens.size();
                CHECK(len <= last);
                last = len;
            }
        }
    }
}

TEST_CASE("sequence order and layout") {
    const Vocabulary v(2, kOriented, {{0, 0, 2, Orientation::vertical}});
    const TokenGrid g(2, 3, {1, 0, 1, 1, 0, 1});
    const auto enc = encode(g, v, true);
    CHECK(enc.sequence.tokens == std::vector<TokenId>{1, 2, 1, 1, 1});
    CHECK(enc.layout->cell_to_instance == std::vector<std::uint32_t>{0, 1, 2, 3, 1, 4});
    auto bad = *enc.layout;
    std::swap(bad.cell_to_instance[0], bad.cell_to_instance[2]);
    CHECK_THROWS_AS(decode(enc.sequence, v, bad), DataError);
}

TEST_CASE("decode input errors") {
    const Vocabulary v(2, kOriented, {{0, 1, 2, Orientation::horizontal}});
    CHECK_THROWS_AS(decode({{3}, GridDims{1, 2}}, v), DataError);     // id out of range
    CHECK_THROWS_AS(decode({{2}, std::nullopt}, v), DataError);       // no dims
    CHECK_THROWS_AS(decode({{2, 0}, GridDims{1, 2}}, v), DataError);  // too long
    CHECK_THROWS_AS(decode({{0}, GridDims{1, 2}}, v), DataError);     // too short
    CHECK_THROWS_AS(decode({{0, 2}, GridDims{1, 2}}, v), DataError);  // does not fit
    CHECK_THROWS_AS(encode(TokenGrid(1, 2, {0, 5}), v), DataError);
}

TEST_CASE("encode_1d") {
    SUBCASE("greedy in training order") {
        const Vocabulary v(2, kOriented, {{0, 0, 2, Orientation::horizontal}, {2, 1, 3, Orientation::horizontal}});
        const std::vector<TokenId> seq{0, 0, 0, 1, 0, 0, 1};
        CHECK(encode_1d(seq, v).tokens == std::vector<TokenId>{2, 0, 1, 3});
    }
    SUBCASE("vertical rules never apply") {
        const Vocabulary v(2, kOriented, {{0, 0, 2, Orientation::vertical}});
        const std::vector<TokenId> seq{0, 0};
        CHECK(encode_1d(seq, v).tokens == seq);
    }
    SUBCASE("agnostic rules match either order") {
        const Vocabulary v(2, kAgnostic, {{0, 1, 2, Orientation::any}});
        const std::vector<TokenId> seq{1, 0, 0, 1};
        CHECK(encode_1d(seq, v).tokens == std::vector<TokenId>{2, 2});
    }
    SUBCASE("matches the grid path on 1 x n grids under the oriented policy") {
        std::mt19937_64 rng(43);
        for (int i = 0; i < 200; ++i) {
            const auto vocab = trained(rng, 2, rng() % 20, kOriented);
            std::vector<TokenId> seq(1 + rng() % 50);
            for (auto& t : seq) t = static_cast<TokenId>(rng() % 2);
            const auto grid_tokens = encode(TokenGrid::from_sequence(seq), vocab).sequence.tokens;
            CHECK(encode_1d(seq, vocab).tokens == grid_tokens);
        }
    }
}

TEST_CASE("vocabulary map") {
    const auto map = expand_vocab_map(1000, 8192, 4096);
    CHECK(map.global_id(0) == 1000);
    CHECK(map.global_id(8192) == 9192);
    CHECK(map.image_start == 13288);
    CHECK(map.image_end == 13289);
    CHECK(map.total_size() == 13290);
    CHECK_THROWS_AS(map.global_id(8192 + 4096), DataError);

    std::mt19937_64 rng(47);
    for (int i = 0; i < 200; ++i) {
        const std::uint64_t n = rng() % 5000, c = 1 + rng() % 9000, m = rng() % 9000;
        const auto vm = expand_vocab_map(n, c, m);
        // Text, base image, BPE image and markers tile [0, total) without overlap.
        CHECK(vm.global_id(0) == n);
        CHECK(vm.global_id(c - 1) == n + c - 1);
        if (m > 0) CHECK(vm.global_id(c) == n + c);
        if (m > 0) CHECK(vm.global_id(c + m - 1) == n + c + m - 1);
        CHECK(vm.image_start == n + c + m);
        CHECK(vm.image_end == vm.image_start + 1);
        CHECK(vm.total_size() == n + c + m + 2);
    }
}

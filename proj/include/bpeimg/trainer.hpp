#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "bpeimg/segmentation.hpp"
#include "bpeimg/vocabulary.hpp"

namespace bpeimg {

enum class Direction : std::uint8_t { horizontal = 0, vertical = 1 };

// How adjacency counts become merge candidates.
//  symmetrized:           no directional count is dropped. Under the agnostic
//                         policy (i, j) and (j, i) are summed; under the
//                         oriented policy every ordered entry is its own
//                         candidate.
//  paper_exact_upper_tri: only entries with first <= second are considered.
enum class CountingPolicy { symmetrized, paper_exact_upper_tri };

std::string_view to_string(CountingPolicy policy);
CountingPolicy parse_counting_policy(std::string_view text);

struct PairKey {
    TokenId first = 0;  // token of the raster-earlier instance
    TokenId second = 0;
    Direction direction = Direction::horizontal;

    std::uint64_t packed() const noexcept {
        return (static_cast<std::uint64_t>(first) << 33) | (static_cast<std::uint64_t>(second) << 1) |
               static_cast<std::uint64_t>(direction);
    }
    static PairKey unpack(std::uint64_t key) noexcept {
        return {static_cast<TokenId>(key >> 33), static_cast<TokenId>((key >> 1) & 0xFFFFFFFFu),
                static_cast<Direction>(key & 1u)};
    }
    friend auto operator<=>(const PairKey&, const PairKey&) = default;
};

// Sparse adjacency matrix A, one entry per (first, second, direction).
class AdjacencyCounts {
public:
    explicit AdjacencyCounts(TokenId current_vocab_size = 0) : vocab_size_(current_vocab_size) {}

    TokenId current_vocab_size() const noexcept { return vocab_size_; }
    void add(PairKey key, std::uint64_t n = 1);
    void merge(const AdjacencyCounts& other);
    std::uint64_t get(PairKey key) const;
    std::uint64_t get(TokenId first, TokenId second, Direction dir) const { return get({first, second, dir}); }
    std::size_t nonzero() const noexcept { return counts_.size(); }
    std::uint64_t total() const;

    // Entries in ascending key order.
    std::vector<std::pair<PairKey, std::uint64_t>> entries() const;

    friend bool operator==(const AdjacencyCounts&, const AdjacencyCounts&) = default;

private:
    TokenId vocab_size_;
    std::unordered_map<std::uint64_t, std::uint64_t> counts_;
};

// Contact between two distinct instances of one segmentation; `lo` is the
// raster-earlier instance.
struct Contact {
    std::uint32_t lo = 0;
    std::uint32_t hi = 0;
    Direction direction = Direction::horizontal;

    friend bool operator==(const Contact&, const Contact&) = default;
};

// Agnostic policy: every instance pair sharing at least one cell border, once
// per border direction, sorted by (lo, direction, hi).
// Oriented policy: only canonical placements, i.e. the instance whose min
// cell sits just right of the end of lo's top row run (horizontal) or just
// below the end of lo's left column run (vertical).
std::vector<Contact> instance_contacts(const Segmentation& seg, OrientationPolicy policy);

struct TrainConfig {
    TokenId initial_vocab_size = 1;
    std::size_t num_merges = 0;
    CountingPolicy counting_policy = CountingPolicy::symmetrized;
    OrientationPolicy orientation_policy = OrientationPolicy::agnostic;
    unsigned threads = 1;  // 0 = hardware concurrency
};

AdjacencyCounts update_matrix(std::span<const Segmentation> corpus, TokenId current_vocab_size,
                              OrientationPolicy policy, unsigned threads = 1);
// 1D branch: consecutive ordered pairs, all horizontal.
AdjacencyCounts update_matrix(std::span<const std::vector<TokenId>> sequences, TokenId current_vocab_size);

struct PairChoice {
    std::optional<MergeRule> pair;  // new_id left 0; the caller assigns it
    std::uint64_t freq = 0;
};

PairChoice max_freq_pair(const AdjacencyCounts& counts, CountingPolicy counting, OrientationPolicy orientation);

// One greedy raster pass fusing matching adjacent instances into rule.new_id.
Segmentation replace_pair(Segmentation seg, const MergeRule& rule, OrientationPolicy policy);

struct TrainStep {
    std::size_t iteration = 0;
    MergeRule rule;
    std::uint64_t freq = 0;
};

struct TrainResult {
    Vocabulary vocab;
    std::vector<Segmentation> final_corpus;
    bool stopped_early = false;  // left the loop through the f = 0 branch
};

using TrainObserver = std::function<void(const TrainStep&)>;

TrainResult train_detailed(std::span<const TokenGrid> corpus, const TrainConfig& config,
                           const TrainObserver& observer = {});
Vocabulary train(std::span<const TokenGrid> corpus, const TrainConfig& config,
                 const TrainObserver& observer = {});

} // namespace bpeimg

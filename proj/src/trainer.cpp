#include "bpeimg/trainer.hpp"

#include <algorithm>

#include "bpeimg/parallel.hpp"

namespace bpeimg {

std::string_view to_string(CountingPolicy policy) {
    return policy == CountingPolicy::symmetrized ? "symmetrized" : "paper_exact_upper_tri";
}

CountingPolicy parse_counting_policy(std::string_view text) {
    if (text == "symmetrized") return CountingPolicy::symmetrized;
    if (text == "paper_exact_upper_tri" || text == "upper_tri") return CountingPolicy::paper_exact_upper_tri;
    throw std::invalid_argument("unknown counting policy '" + std::string(text) + "'");
}

void AdjacencyCounts::add(PairKey key, std::uint64_t n) {
    if (key.first >= vocab_size_ || key.second >= vocab_size_) {
        throw DataError("token id out of range for current vocab size " + std::to_string(vocab_size_) + ": (" +
                        std::to_string(key.first) + ", " + std::to_string(key.second) + ")");
    }
    if (n) counts_[key.packed()] += n;
}

void AdjacencyCounts::merge(const AdjacencyCounts& other) {
    vocab_size_ = std::max(vocab_size_, other.vocab_size_);
    for (const auto& [key, n] : other.counts_) counts_[key] += n;
}

std::uint64_t AdjacencyCounts::get(PairKey key) const {
    auto it = counts_.find(key.packed());
    return it == counts_.end() ? 0 : it->second;
}

std::uint64_t AdjacencyCounts::total() const {
    std::uint64_t sum = 0;
    for (const auto& [key, n] : counts_) sum += n;
    return sum;
}

std::vector<std::pair<PairKey, std::uint64_t>> AdjacencyCounts::entries() const {
    std::vector<std::pair<std::uint64_t, std::uint64_t>> raw(counts_.begin(), counts_.end());
    std::sort(raw.begin(), raw.end());
    std::vector<std::pair<PairKey, std::uint64_t>> out;
    out.reserve(raw.size());
    for (const auto& [key, n] : raw) out.emplace_back(PairKey::unpack(key), n);
    return out;
}

namespace {

std::vector<Contact> agnostic_contacts(const Segmentation& seg) {
    const std::uint32_t h = seg.height(), w = seg.width();
    const auto owner = seg.owner();
    if (owner.size() >= (1ull << 31)) throw DataError("grid too large for contact packing");
    // (lo, direction, hi) packed so that integer order is the scan order.
    std::vector<std::uint64_t> packed;
    packed.reserve(2 * seg.size());
    auto push = [&](std::uint32_t a, std::uint32_t b, Direction dir) {
        const std::uint32_t lo = std::min(a, b), hi = std::max(a, b);
        packed.push_back((static_cast<std::uint64_t>(lo) << 32) | (static_cast<std::uint64_t>(dir) << 31) | hi);
    };
    for (std::uint32_t r = 0; r < h; ++r) {
        const std::uint32_t* row = owner.data() + static_cast<std::size_t>(r) * w;
        for (std::uint32_t c = 0; c + 1 < w; ++c) {
            if (row[c] != row[c + 1]) push(row[c], row[c + 1], Direction::horizontal);
        }
        if (r + 1 < h) {
            const std::uint32_t* below = row + w;
            for (std::uint32_t c = 0; c < w; ++c) {
                if (row[c] != below[c]) push(row[c], below[c], Direction::vertical);
            }
        }
    }
    std::sort(packed.begin(), packed.end());
    packed.erase(std::unique(packed.begin(), packed.end()), packed.end());
    std::vector<Contact> out;
    out.reserve(packed.size());
    for (std::uint64_t p : packed) {
        out.push_back({static_cast<std::uint32_t>(p >> 32), static_cast<std::uint32_t>(p & 0x7FFFFFFFu),
                       static_cast<Direction>((p >> 31) & 1u)});
    }
    return out;
}

std::vector<Contact> oriented_contacts(const Segmentation& seg) {
    const std::uint32_t h = seg.height(), w = seg.width();
    const auto owner = seg.owner();
    std::vector<Contact> out;
    out.reserve(2 * seg.size());
    for (std::uint32_t i = 0; i < seg.size(); ++i) {
        const std::uint32_t min_cell = seg.instance(i).min_cell();
        const std::uint32_t r0 = min_cell / w, c0 = min_cell % w;

        std::uint32_t c = c0;
        while (c + 1 < w && owner[static_cast<std::size_t>(r0) * w + c + 1] == i) ++c;
        if (c + 1 < w) {
            const std::uint32_t anchor = r0 * w + c + 1;
            const std::uint32_t j = owner[anchor];
            if (seg.instance(j).min_cell() == anchor) out.push_back({i, j, Direction::horizontal});
        }

        std::uint32_t r = r0;
        while (r + 1 < h && owner[static_cast<std::size_t>(r + 1) * w + c0] == i) ++r;
        if (r + 1 < h) {
            const std::uint32_t anchor = (r + 1) * w + c0;
            const std::uint32_t j = owner[anchor];
            if (seg.instance(j).min_cell() == anchor) out.push_back({i, j, Direction::vertical});
        }
    }
    return out;
}

void count_into(AdjacencyCounts& counts, const Segmentation& seg, OrientationPolicy policy) {
    const auto contacts = instance_contacts(seg, policy);
    for (const auto& contact : contacts) {
        counts.add({seg.instance(contact.lo).token, seg.instance(contact.hi).token, contact.direction});
    }
}

bool matches(const MergeRule& rule, TokenId earlier, TokenId later, Direction dir, OrientationPolicy policy) {
    if (policy == OrientationPolicy::agnostic) {
        return (earlier == rule.left && later == rule.right) || (earlier == rule.right && later == rule.left);
    }
    const Orientation want = dir == Direction::horizontal ? Orientation::horizontal : Orientation::vertical;
    return rule.orientation == want && earlier == rule.left && later == rule.right;
}

} // namespace

std::vector<Contact> instance_contacts(const Segmentation& seg, OrientationPolicy policy) {
    return policy == OrientationPolicy::agnostic ? agnostic_contacts(seg) : oriented_contacts(seg);
}

AdjacencyCounts update_matrix(std::span<const Segmentation> corpus, TokenId current_vocab_size,
                              OrientationPolicy policy, unsigned threads) {
    const std::size_t chunks = std::min<std::size_t>(corpus.size(), 4 * resolve_threads(threads));
    std::vector<AdjacencyCounts> partial(chunks, AdjacencyCounts(current_vocab_size));
    parallel_for(chunks, threads, [&](std::size_t chunk) {
        for (std::size_t g = chunk; g < corpus.size(); g += chunks) count_into(partial[chunk], corpus[g], policy);
    });
    AdjacencyCounts total(current_vocab_size);
    for (const auto& part : partial) total.merge(part);
    return total;
}

AdjacencyCounts update_matrix(std::span<const std::vector<TokenId>> sequences, TokenId current_vocab_size) {
    AdjacencyCounts counts(current_vocab_size);
    for (const auto& seq : sequences) {
        for (std::size_t j = 0; j + 1 < seq.size(); ++j) counts.add({seq[j], seq[j + 1], Direction::horizontal});
    }
    return counts;
}

PairChoice max_freq_pair(const AdjacencyCounts& counts, CountingPolicy counting, OrientationPolicy orientation) {
    std::unordered_map<std::uint64_t, std::uint64_t> candidates;
    for (const auto& [key, n] : counts.entries()) {
        if (counting == CountingPolicy::paper_exact_upper_tri && key.first > key.second) continue;
        PairKey candidate = key;
        if (orientation == OrientationPolicy::agnostic) {
            candidate = {std::min(key.first, key.second), std::max(key.first, key.second), Direction::horizontal};
        }
        candidates[candidate.packed()] += n;
    }
    std::uint64_t best_key = 0, best_freq = 0;
    for (const auto& [key, n] : candidates) {
        if (n > best_freq || (n == best_freq && n > 0 && key < best_key)) {
            best_key = key;
            best_freq = n;
        }
    }
    if (best_freq == 0) return {};
    const PairKey best = PairKey::unpack(best_key);
    Orientation o = Orientation::any;
    if (orientation == OrientationPolicy::oriented) {
        o = best.direction == Direction::horizontal ? Orientation::horizontal : Orientation::vertical;
    }
    return {MergeRule{best.first, best.second, 0, o}, best_freq};
}

Segmentation replace_pair(Segmentation seg, const MergeRule& rule, OrientationPolicy policy) {
    const auto contacts = instance_contacts(seg, policy);
    const std::size_t n = seg.size();
    std::vector<std::uint32_t> partner(n, Segmentation::npos);
    std::vector<char> consumed(n, 0);
    bool any = false;
    for (std::size_t k = 0; k < contacts.size();) {
        const std::uint32_t lo = contacts[k].lo;
        std::size_t end = k;
        while (end < contacts.size() && contacts[end].lo == lo) ++end;
        if (!consumed[lo]) {
            for (std::size_t e = k; e < end; ++e) {
                const Contact& c = contacts[e];
                if (consumed[c.hi]) continue;
                if (!matches(rule, seg.instance(lo).token, seg.instance(c.hi).token, c.direction, policy)) continue;
                partner[lo] = c.hi;
                consumed[lo] = consumed[c.hi] = 1;
                any = true;
                break;
            }
        }
        k = end;
    }
    if (!any) return seg;
    return std::move(seg).fused(partner, rule.new_id);
}

TrainResult train_detailed(std::span<const TokenGrid> corpus, const TrainConfig& config,
                           const TrainObserver& observer) {
    if (corpus.empty()) throw DataError("training corpus is empty");
    if (config.initial_vocab_size == 0) throw DataError("initial vocab size must be positive");
    TrainResult result;
    result.final_corpus.reserve(corpus.size());
    for (std::size_t g = 0; g < corpus.size(); ++g) {
        if (auto report = validate_grid(corpus[g], config.initial_vocab_size); !report.ok()) {
            throw DataError("corpus item " + std::to_string(g) + ": " + report.describe());
        }
        result.final_corpus.push_back(Segmentation::singletons(corpus[g]));
    }
    result.vocab = Vocabulary(config.initial_vocab_size, config.orientation_policy);
    auto& segs = result.final_corpus;

    for (std::size_t i = 0; i < config.num_merges; ++i) {
        const TokenId v = result.vocab.size();
        const auto counts = update_matrix(segs, v, config.orientation_policy, config.threads);
        auto choice = max_freq_pair(counts, config.counting_policy, config.orientation_policy);
        if (choice.freq == 0) {
            result.stopped_early = true;
            break;
        }
        MergeRule rule = *choice.pair;
        rule.new_id = result.vocab.append(rule.left, rule.right, rule.orientation);
        parallel_for(segs.size(), config.threads, [&](std::size_t g) {
            segs[g] = replace_pair(std::move(segs[g]), rule, config.orientation_policy);
        });
        if (observer) observer({i, rule, choice.freq});
    }
    return result;
}

Vocabulary train(std::span<const TokenGrid> corpus, const TrainConfig& config, const TrainObserver& observer) {
    return train_detailed(corpus, config, observer).vocab;
}

} // namespace bpeimg

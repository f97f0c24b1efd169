#include "bpeimg/codec.hpp"

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>

#include "bpeimg/trainer.hpp"

namespace bpeimg {

TokenSequence flatten(const TokenGrid& grid) {
    return {std::vector<TokenId>(grid.cells().begin(), grid.cells().end()), GridDims{grid.height(), grid.width()}};
}

Segmentation segment(const TokenGrid& grid, const Vocabulary& vocab) {
    if (auto report = validate_grid(grid, vocab); !report.ok()) throw DataError(report.describe());
    Segmentation seg = Segmentation::singletons(grid);
    // Live instance count per token; rules whose operands are absent are skipped.
    std::vector<std::size_t> live(vocab.size(), 0);
    for (TokenId id : grid.cells()) ++live[id];
    for (const auto& rule : vocab.merges()) {
        if (live[rule.left] == 0 || live[rule.right] == 0 || (rule.left == rule.right && live[rule.left] < 2)) {
            continue;
        }
        const std::size_t before = seg.size();
        seg = replace_pair(std::move(seg), rule, vocab.orientation_policy());
        const std::size_t fusions = before - seg.size();
        live[rule.new_id] += fusions;
        live[rule.left] -= fusions;
        live[rule.right] -= fusions;
    }
    return seg;
}

TokenSequence sequence_of(const Segmentation& seg) { return {seg.tokens(), GridDims{seg.height(), seg.width()}}; }

LayoutSidecar layout_of(const Segmentation& seg) {
    return {std::vector<std::uint32_t>(seg.owner().begin(), seg.owner().end())};
}

Encoded encode(const TokenGrid& grid, const Vocabulary& vocab, bool emit_layout) {
    const Segmentation seg = segment(grid, vocab);
    Encoded out{sequence_of(seg), std::nullopt};
    if (emit_layout) out.layout = layout_of(seg);
    return out;
}

TokenSequence encode_1d(std::span<const TokenId> seq, const Vocabulary& vocab) {
    std::vector<TokenId> cur(seq.begin(), seq.end());
    for (std::size_t i = 0; i < cur.size(); ++i) {
        if (cur[i] >= vocab.base_vocab_size()) {
            throw DataError("position " + std::to_string(i) + " holds id " + std::to_string(cur[i]) +
                            " outside the base codebook");
        }
    }
    const bool agnostic = vocab.orientation_policy() == OrientationPolicy::agnostic;
    std::vector<TokenId> next;
    for (const auto& rule : vocab.merges()) {
        if (rule.orientation == Orientation::vertical || cur.size() < 2) continue;
        next.clear();
        bool changed = false;
        for (std::size_t i = 0; i < cur.size();) {
            if (i + 1 < cur.size()) {
                const TokenId a = cur[i], b = cur[i + 1];
                const bool hit = (a == rule.left && b == rule.right) || (agnostic && a == rule.right && b == rule.left);
                if (hit) {
                    next.push_back(rule.new_id);
                    i += 2;
                    changed = true;
                    continue;
                }
            }
            next.push_back(cur[i++]);
        }
        if (changed) cur.swap(next);
    }
    return {std::move(cur), std::nullopt};
}

std::vector<TokenShape> oriented_shapes(const Vocabulary& vocab) {
    if (vocab.orientation_policy() != OrientationPolicy::oriented) {
        throw DataError("token shapes are only fixed under the oriented policy");
    }
    std::vector<TokenShape> shapes(vocab.size());
    for (TokenId t = 0; t < vocab.base_vocab_size(); ++t) shapes[t] = {{0, 0, t}};
    for (const auto& rule : vocab.merges()) {
        const TokenShape& a = shapes[rule.left];
        const TokenShape& b = shapes[rule.right];
        std::set<std::pair<std::int32_t, std::int32_t>> occupied;
        for (const auto& cell : a) occupied.insert({cell.dr, cell.dc});
        std::int32_t dr = 0, dc = 0;
        if (rule.orientation == Orientation::horizontal) {
            while (occupied.count({0, dc + 1})) ++dc;
            ++dc;
        } else {
            while (occupied.count({dr + 1, 0})) ++dr;
            ++dr;
        }
        TokenShape merged = a;
        for (const auto& cell : b) {
            ShapeCell moved{cell.dr + dr, cell.dc + dc, cell.base};
            if (!occupied.insert({moved.dr, moved.dc}).second || moved.dr < 0 || (moved.dr == 0 && moved.dc < 0)) {
                throw DataError("merge producing token " + std::to_string(rule.new_id) +
                                " has no consistent placement");
            }
            merged.push_back(moved);
        }
        std::sort(merged.begin(), merged.end(),
                  [](const ShapeCell& x, const ShapeCell& y) { return std::tie(x.dr, x.dc) < std::tie(y.dr, y.dc); });
        shapes[rule.new_id] = std::move(merged);
    }
    return shapes;
}

namespace {

void check_tokens(const TokenSequence& seq, const Vocabulary& vocab) {
    for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
        if (seq.tokens[i] >= vocab.size()) {
            throw DataError("token " + std::to_string(i) + " id " + std::to_string(seq.tokens[i]) +
                            " is outside the vocabulary");
        }
    }
}

TokenGrid decode_oriented(const TokenSequence& seq, const Vocabulary& vocab, const GridDims& dims,
                          const std::optional<LayoutSidecar>& layout) {
    const auto shapes = oriented_shapes(vocab);
    const std::size_t total = static_cast<std::size_t>(dims.height) * dims.width;
    std::vector<TokenId> cells(total);
    std::vector<std::uint32_t> placed(total, Segmentation::npos);
    std::size_t cursor = 0;
    for (std::uint32_t idx = 0; idx < seq.tokens.size(); ++idx) {
        while (cursor < total && placed[cursor] != Segmentation::npos) ++cursor;
        if (cursor == total) throw DataError("token sequence is longer than the grid it claims to cover");
        const auto r0 = static_cast<std::int64_t>(cursor / dims.width);
        const auto c0 = static_cast<std::int64_t>(cursor % dims.width);
        for (const auto& cell : shapes[seq.tokens[idx]]) {
            const std::int64_t r = r0 + cell.dr, c = c0 + cell.dc;
            if (r < 0 || c < 0 || r >= dims.height || c >= dims.width) {
                throw DataError("token " + std::to_string(idx) + " does not fit inside the " +
                                std::to_string(dims.height) + "x" + std::to_string(dims.width) + " grid");
            }
            const std::size_t at = static_cast<std::size_t>(r) * dims.width + static_cast<std::size_t>(c);
            if (placed[at] != Segmentation::npos) {
                throw DataError("token " + std::to_string(idx) + " overlaps token " + std::to_string(placed[at]));
            }
            placed[at] = idx;
            cells[at] = cell.base;
        }
    }
    if (std::find(placed.begin(), placed.end(), Segmentation::npos) != placed.end()) {
        throw DataError("token sequence does not cover the whole grid");
    }
    if (layout && layout->cell_to_instance != placed) {
        throw DataError("layout sidecar disagrees with the oriented token placement");
    }
    return TokenGrid(dims.height, dims.width, std::move(cells));
}

// Assigns base IDs to the cells of one agnostic instance by splitting its cell
// set along the token's merge tree. The part holding the min cell is the
// raster-earlier operand; both operand orders are tried.
class AgnosticExpander {
public:
    static constexpr std::size_t kStepBudget = 20'000;

    AgnosticExpander(const Vocabulary& vocab, std::uint32_t width, std::vector<TokenId>& out)
        : vocab_(vocab), sizes_(vocab.token_sizes()), width_(width), out_(out) {}

    // Exact replay of the merge tree first. When that runs out of budget the
    // instance gets a best-effort split, which still places the token's base
    // multiset on its cells. False means no realisation exists.
    bool expand_instance(const std::vector<std::uint32_t>& cells, TokenId token) {
        if (cells.size() != sizes_[token]) return false;
        steps_ = 0;
        try {
            return expand(cells, token);
        } catch (const BudgetExhausted&) {
            best_effort(cells, token);
            return true;
        }
    }

private:
    struct BudgetExhausted {};

    void best_effort(const std::vector<std::uint32_t>& cells, TokenId token) {
        if (vocab_.is_base(token)) {
            out_[cells.front()] = token;
            return;
        }
        const MergeRule& rule = vocab_.rule_for(token);
        const auto split = [&](const std::vector<std::uint32_t>& order, TokenId first, TokenId second, bool strict) {
            const auto k = static_cast<std::ptrdiff_t>(sizes_[first]);
            std::vector<std::uint32_t> part(order.begin(), order.begin() + k);
            std::sort(part.begin(), part.end());
            std::vector<std::uint32_t> rest;
            std::set_difference(cells.begin(), cells.end(), part.begin(), part.end(), std::back_inserter(rest));
            if (strict && !(connected(part) && connected(rest) && imbalance_possible(first, imbalance(part)) &&
                            imbalance_possible(second, imbalance(rest)))) {
                return false;
            }
            best_effort(part, first);
            best_effort(rest, second);
            return true;
        };
        for (const auto& order : cell_orders(cells)) {
            if (split(order, rule.left, rule.right, true) || split(order, rule.right, rule.left, true)) return;
        }
        split(cells, rule.left, rule.right, false);
    }

    long imbalance(const std::vector<std::uint32_t>& cells) const {
        long out = 0;
        for (std::uint32_t cell : cells) out += ((cell / width_ + cell % width_) & 1u) ? -1 : 1;
        return out;
    }

    using ShapeKey = std::pair<TokenId, std::vector<std::uint64_t>>;

    // Results depend only on the token and the translated shape, so solved
    // sub-pieces are replayed from the memo.
    bool expand(const std::vector<std::uint32_t>& cells, TokenId token) {
        if (cells.size() != sizes_[token]) return false;
        if (vocab_.is_base(token)) {
            out_[cells.front()] = token;
            return true;
        }
        if (!imbalance_possible(token, imbalance(cells))) return false;
        ShapeKey key{token, {}};
        std::uint32_t r0 = UINT32_MAX, c0 = UINT32_MAX;
        for (std::uint32_t cell : cells) {
            r0 = std::min(r0, cell / width_);
            c0 = std::min(c0, cell % width_);
        }
        key.second.reserve(cells.size());
        for (std::uint32_t cell : cells)
            key.second.push_back((std::uint64_t{cell / width_ - r0} << 32) | (cell % width_ - c0));
        if (auto it = memo_.find(key); it != memo_.end()) {
            if (!it->second) return false;
            for (std::size_t i = 0; i < cells.size(); ++i) out_[cells[i]] = (*it->second)[i];
            return true;
        }
        const bool ok = search(cells, token);
        std::optional<std::vector<TokenId>> result;
        if (ok) {
            result.emplace();
            for (std::uint32_t cell : cells) result->push_back(out_[cell]);
        }
        memo_.emplace(std::move(key), std::move(result));
        return ok;
    }

    bool search(const std::vector<std::uint32_t>& cells, TokenId token) {
        const MergeRule& rule = vocab_.rule_for(token);
        const std::pair<TokenId, TokenId> orders[2] = {{rule.left, rule.right}, {rule.right, rule.left}};
        const int num_orders = rule.left == rule.right ? 1 : 2;

        auto try_split = [&](std::vector<std::uint32_t> part, TokenId first, TokenId second) {
            std::sort(part.begin(), part.end());
            std::vector<std::uint32_t> rest;
            std::set_difference(cells.begin(), cells.end(), part.begin(), part.end(), std::back_inserter(rest));
            if (!connected(part) || !connected(rest)) return false;
            return expand(part, first) && expand(rest, second);
        };

        // Straight cuts and BFS balls first; merged pieces are usually compact.
        for (const auto& order : cell_orders(cells)) {
            for (int o = 0; o < num_orders; ++o) {
                const auto [first, second] = orders[o];
                const auto k = static_cast<std::ptrdiff_t>(sizes_[first]);
                if (try_split({order.begin(), order.begin() + k}, first, second)) return true;
            }
        }
        for (int o = 0; o < num_orders; ++o) {
            const auto [first, second] = orders[o];
            bool found = false;
            for_each_connected_subset(cells, sizes_[first], [&](const std::vector<std::uint32_t>& part) {
                std::vector<std::uint32_t> rest;
                std::set_difference(cells.begin(), cells.end(), part.begin(), part.end(), std::back_inserter(rest));
                if (!connected(rest)) return false;
                found = expand(part, first) && expand(rest, second);
                return found;
            });
            if (found) return true;
        }
        return false;
    }

    std::vector<std::vector<std::uint32_t>> cell_orders(const std::vector<std::uint32_t>& cells) const {
        std::vector<std::vector<std::uint32_t>> out;
        out.push_back(cells);
        out.emplace_back(cells.rbegin(), cells.rend());
        auto by_column = cells;
        std::stable_sort(by_column.begin(), by_column.end(), [&](std::uint32_t a, std::uint32_t b) {
            return std::pair(a % width_, a / width_) < std::pair(b % width_, b / width_);
        });
        out.push_back(by_column);
        out.emplace_back(by_column.rbegin(), by_column.rend());
        for (std::uint32_t start : {cells.front(), cells.back()}) {
            std::vector<std::uint32_t> bfs{start};
            std::vector<char> seen(cells.size(), 0);
            seen[std::lower_bound(cells.begin(), cells.end(), start) - cells.begin()] = 1;
            for (std::size_t i = 0; i < bfs.size(); ++i) {
                for_each_neighbour(bfs[i], cells, [&](std::size_t j) {
                    if (!seen[j]) {
                        seen[j] = 1;
                        bfs.push_back(cells[j]);
                    }
                });
            }
            if (bfs.size() == cells.size()) out.push_back(std::move(bfs));
        }
        return out;
    }

    // Checkerboard colour imbalances (black minus white) that some realisation
    // of `token` can have. A piece whose imbalance is outside the set cannot
    // be split along the token's merge tree.
    const std::vector<char>& imbalances(TokenId token) {
        if (imbalance_sets_.size() < sizes_.size()) imbalance_sets_.resize(sizes_.size());
        auto& set = imbalance_sets_[token];
        if (!set.empty()) return set;
        const std::size_t n = sizes_[token];
        set.assign(2 * n + 1, 0);
        if (vocab_.is_base(token)) {
            set[n - 1] = set[n + 1] = 1;
            return set;
        }
        const MergeRule& rule = vocab_.rule_for(token);
        if (vocab_.is_base(rule.left) && vocab_.is_base(rule.right)) {
            set[n] = 1;
            return set;
        }
        const std::vector<char> a = imbalances(rule.left);
        const std::vector<char>& b = imbalances(rule.right);
        const long na = static_cast<long>(sizes_[rule.left]), nb = static_cast<long>(sizes_[rule.right]);
        for (long x = -na; x <= na; ++x) {
            if (!a[x + na]) continue;
            for (long y = -nb; y <= nb; ++y)
                if (b[y + nb]) set[x + y + static_cast<long>(n)] = 1;
        }
        return set;
    }

    bool imbalance_possible(TokenId token, long imbalance) {
        const long n = static_cast<long>(sizes_[token]);
        return imbalance >= -n && imbalance <= n && imbalances(token)[imbalance + n];
    }

    bool adjacent(std::uint32_t a, std::uint32_t b) const {
        const std::uint32_t lo = std::min(a, b), hi = std::max(a, b);
        return (hi - lo == 1 && hi % width_ != 0) || hi - lo == width_;
    }

    // Calls f(index into `sorted`) for each 4-neighbour of `cell` present in
    // `sorted`, in increasing cell order.
    template <class F>
    void for_each_neighbour(std::uint32_t cell, const std::vector<std::uint32_t>& sorted, F&& f) const {
        const auto visit = [&](std::uint32_t other) {
            const auto it = std::lower_bound(sorted.begin(), sorted.end(), other);
            if (it != sorted.end() && *it == other) f(static_cast<std::size_t>(it - sorted.begin()));
        };
        if (cell >= width_) visit(cell - width_);
        if (cell % width_ != 0) visit(cell - 1);
        if ((cell + 1) % width_ != 0) visit(cell + 1);
        visit(cell + width_);
    }

    bool connected(const std::vector<std::uint32_t>& cells) const {
        if (cells.empty()) return false;
        std::vector<char> seen(cells.size(), 0);
        std::vector<std::size_t> stack{0};
        seen[0] = 1;
        std::size_t reached = 0;
        while (!stack.empty()) {
            const std::size_t i = stack.back();
            stack.pop_back();
            ++reached;
            for_each_neighbour(cells[i], cells, [&](std::size_t j) {
                if (!seen[j]) {
                    seen[j] = 1;
                    stack.push_back(j);
                }
            });
        }
        return reached == cells.size();
    }

    // Visits every connected subset of `cells` of size k containing
    // cells.front(), each exactly once; stops when `visit` returns true.
    template <class Visit>
    void for_each_connected_subset(const std::vector<std::uint32_t>& cells, std::size_t k, Visit&& visit) {
        if (k == 0 || k >= cells.size()) return;
        const std::size_t n = cells.size();
        std::vector<char> banned(n, 0), in_set(n, 0);
        std::vector<std::size_t> chosen{0};
        in_set[0] = 1;
        std::vector<std::size_t> frontier;
        for_each_neighbour(cells[0], cells, [&](std::size_t j) { frontier.push_back(j); });

        std::function<bool(std::vector<std::size_t>)> extend = [&](std::vector<std::size_t> candidates) -> bool {
            if (++steps_ > kStepBudget) throw BudgetExhausted{};
            if (chosen.size() == k) {
                std::vector<std::uint32_t> part;
                for (std::size_t i : chosen) part.push_back(cells[i]);
                std::sort(part.begin(), part.end());
                return visit(part);
            }
            std::vector<std::size_t> newly_banned;
            bool stop = false;
            for (std::size_t idx = 0; idx < candidates.size() && !stop; ++idx) {
                const std::size_t v = candidates[idx];
                std::vector<std::size_t> next(candidates.begin() + static_cast<std::ptrdiff_t>(idx) + 1,
                                              candidates.end());
                for_each_neighbour(cells[v], cells, [&](std::size_t j) {
                    if (in_set[j] || banned[j]) return;
                    if (std::find(next.begin(), next.end(), j) == next.end()) next.push_back(j);
                });
                in_set[v] = 1;
                chosen.push_back(v);
                stop = extend(std::move(next));
                chosen.pop_back();
                in_set[v] = 0;
                banned[v] = 1;
                newly_banned.push_back(v);
            }
            for (std::size_t v : newly_banned) banned[v] = 0;
            return stop;
        };
        extend(frontier);
    }

    const Vocabulary& vocab_;
    std::vector<std::size_t> sizes_;
    std::uint32_t width_;
    std::vector<TokenId>& out_;
    std::size_t steps_ = 0;
    std::map<ShapeKey, std::optional<std::vector<TokenId>>> memo_;
    std::vector<std::vector<char>> imbalance_sets_;
};

TokenGrid decode_agnostic(const TokenSequence& seq, const Vocabulary& vocab, const GridDims& dims,
                          const LayoutSidecar& layout) {
    const std::size_t total = static_cast<std::size_t>(dims.height) * dims.width;
    if (layout.cell_to_instance.size() != total) {
        throw DataError("layout has " + std::to_string(layout.cell_to_instance.size()) + " cells, dims give " +
                        std::to_string(total));
    }
    std::vector<TokenInstance> instances(seq.tokens.size());
    for (std::size_t i = 0; i < seq.tokens.size(); ++i) instances[i].token = seq.tokens[i];
    for (std::uint32_t cell = 0; cell < total; ++cell) {
        const std::uint32_t idx = layout.cell_to_instance[cell];
        if (idx >= instances.size()) throw DataError("layout cell " + std::to_string(cell) + " points past the sequence");
        instances[idx].cells.push_back(cell);
    }
    if (auto problem = check_segmentation(dims.height, dims.width, instances); !problem.empty()) {
        throw DataError("layout does not describe a valid segmentation: " + problem);
    }
    std::vector<TokenId> cells(total);
    AgnosticExpander expander(vocab, dims.width, cells);
    for (std::size_t i = 0; i < instances.size(); ++i) {
        if (!expander.expand_instance(instances[i].cells, instances[i].token)) {
            throw DataError("instance " + std::to_string(i) + " cannot be expanded as token " +
                            std::to_string(instances[i].token));
        }
    }
    return TokenGrid(dims.height, dims.width, std::move(cells));
}

} // namespace

TokenGrid decode(const TokenSequence& seq, const Vocabulary& vocab, const std::optional<LayoutSidecar>& layout) {
    check_tokens(seq, vocab);
    if (!seq.source_dims) throw DataError("decode needs the source grid dims");
    const GridDims dims = *seq.source_dims;
    if (dims.height == 0 || dims.width == 0) throw DataError("source dims must be positive");
    if (vocab.orientation_policy() == OrientationPolicy::oriented) return decode_oriented(seq, vocab, dims, layout);
    if (!layout) throw DataError("layout required: agnostic vocabularies do not fix token shapes");
    return decode_agnostic(seq, vocab, dims, *layout);
}

std::uint64_t VocabMap::global_id(std::uint64_t local) const {
    if (local >= base_image_vocab_size + bpe_vocab_size) {
        throw DataError("image token " + std::to_string(local) + " is outside the mapped image range");
    }
    return image_token_offset + local;
}

std::string VocabMap::to_json() const {
    return "{\n  \"text_vocab_size\": " + std::to_string(text_vocab_size) +
           ",\n  \"base_image_vocab_size\": " + std::to_string(base_image_vocab_size) +
           ",\n  \"bpe_vocab_size\": " + std::to_string(bpe_vocab_size) +
           ",\n  \"image_token_offset\": " + std::to_string(image_token_offset) +
           ",\n  \"special_tokens\": {\"image_start\": " + std::to_string(image_start) +
           ", \"image_end\": " + std::to_string(image_end) + "},\n  \"total_size\": " + std::to_string(total_size()) +
           "\n}\n";
}

VocabMap expand_vocab_map(std::uint64_t n_text, std::uint64_t base_size, std::uint64_t bpe_size) {
    VocabMap map;
    map.text_vocab_size = n_text;
    map.base_image_vocab_size = base_size;
    map.bpe_vocab_size = bpe_size;
    map.image_token_offset = n_text;
    map.image_start = n_text + base_size + bpe_size;
    map.image_end = map.image_start + 1;
    return map;
}

} // namespace bpeimg

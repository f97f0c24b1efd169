#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bpeimg/segmentation.hpp"
#include "bpeimg/vocabulary.hpp"

namespace bpeimg {

struct GridDims {
    std::uint32_t height = 0;
    std::uint32_t width = 0;

    friend bool operator==(const GridDims&, const GridDims&) = default;
};

struct TokenSequence {
    std::vector<TokenId> tokens;
    std::optional<GridDims> source_dims;

    friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

// Maps every cell (row-major) to the index of its token in the sequence.
struct LayoutSidecar {
    std::vector<std::uint32_t> cell_to_instance;

    friend bool operator==(const LayoutSidecar&, const LayoutSidecar&) = default;
};

struct Encoded {
    TokenSequence sequence;
    std::optional<LayoutSidecar> layout;
};

TokenSequence flatten(const TokenGrid& grid);

// Applies every merge rule in training order, starting from singletons.
Segmentation segment(const TokenGrid& grid, const Vocabulary& vocab);

// Tokens are emitted in raster order of each instance's min cell.
Encoded encode(const TokenGrid& grid, const Vocabulary& vocab, bool emit_layout = false);
TokenSequence sequence_of(const Segmentation& seg);
LayoutSidecar layout_of(const Segmentation& seg);

// Oriented vocabularies decode from source_dims alone (the layout, when
// given, is checked for consistency). Agnostic vocabularies need the layout;
// each instance is then expanded by searching for a split of its cell set
// that follows the token's merge tree.
TokenGrid decode(const TokenSequence& seq, const Vocabulary& vocab,
                 const std::optional<LayoutSidecar>& layout = std::nullopt);

// Greedy left-to-right BPE over a 1D sequence, rules in training order.
// Vertical rules never apply; agnostic rules match either order.
TokenSequence encode_1d(std::span<const TokenId> seq, const Vocabulary& vocab);

// Fixed shape of every token under the oriented policy: (row offset, column
// offset, base ID) relative to the token's min cell, in raster order.
struct ShapeCell {
    std::int32_t dr = 0;
    std::int32_t dc = 0;
    TokenId base = 0;

    friend bool operator==(const ShapeCell&, const ShapeCell&) = default;
};
using TokenShape = std::vector<ShapeCell>;

std::vector<TokenShape> oriented_shapes(const Vocabulary& vocab);

// Global ID layout after text-vocabulary expansion: text IDs, then base image
// IDs, then BPE image IDs, then the image start/end markers.
struct VocabMap {
    std::uint64_t text_vocab_size = 0;
    std::uint64_t base_image_vocab_size = 0;
    std::uint64_t bpe_vocab_size = 0;
    std::uint64_t image_token_offset = 0;
    std::uint64_t image_start = 0;
    std::uint64_t image_end = 0;

    std::uint64_t total_size() const noexcept { return image_end + 1; }
    // Local image-token id (base or BPE) to global id.
    std::uint64_t global_id(std::uint64_t local) const;
    std::string to_json() const;
};

VocabMap expand_vocab_map(std::uint64_t n_text, std::uint64_t base_size, std::uint64_t bpe_size);

} // namespace bpeimg

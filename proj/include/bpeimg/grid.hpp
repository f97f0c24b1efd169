#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bpeimg {

using TokenId = std::uint32_t;

// Raised for malformed or out-of-range input data (files, grids, sequences).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct CellPos {
    std::uint32_t row = 0;
    std::uint32_t col = 0;

    friend bool operator==(const CellPos&, const CellPos&) = default;
};

// Row-major grid of base token IDs, one quantized patch per cell.
class TokenGrid {
public:
    TokenGrid() = default;
    TokenGrid(std::uint32_t height, std::uint32_t width, std::vector<TokenId> cells);
    TokenGrid(std::uint32_t height, std::uint32_t width, TokenId fill = 0);

    // A 1D sequence is carried as a 1 x n grid.
    static TokenGrid from_sequence(std::span<const TokenId> seq);

    std::uint32_t height() const noexcept { return height_; }
    std::uint32_t width() const noexcept { return width_; }
    std::size_t size() const noexcept { return cells_.size(); }

    TokenId at(std::uint32_t row, std::uint32_t col) const { return cells_[index(row, col)]; }
    TokenId& at(std::uint32_t row, std::uint32_t col) { return cells_[index(row, col)]; }
    std::span<const TokenId> cells() const noexcept { return cells_; }
    std::span<TokenId> cells() noexcept { return cells_; }

    std::size_t index(std::uint32_t row, std::uint32_t col) const noexcept {
        return static_cast<std::size_t>(row) * width_ + col;
    }
    CellPos pos(std::size_t index) const noexcept {
        return {static_cast<std::uint32_t>(index / width_), static_cast<std::uint32_t>(index % width_)};
    }

    TokenGrid transposed() const;

    friend bool operator==(const TokenGrid&, const TokenGrid&) = default;

private:
    std::uint32_t height_ = 0;
    std::uint32_t width_ = 0;
    std::vector<TokenId> cells_;
};

struct GridIssue {
    CellPos cell;
    TokenId value = 0;
};

struct GridValidation {
    std::vector<GridIssue> issues;
    bool ok() const noexcept { return issues.empty(); }
    std::string describe() const;
};

// Lists every cell whose ID is not a base codebook ID.
GridValidation validate_grid(const TokenGrid& grid, TokenId base_vocab_size);

} // namespace bpeimg

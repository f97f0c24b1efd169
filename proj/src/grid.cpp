#include "bpeimg/grid.hpp"

#include <sstream>

namespace bpeimg {

TokenGrid::TokenGrid(std::uint32_t height, std::uint32_t width, std::vector<TokenId> cells)
    : height_(height), width_(width), cells_(std::move(cells)) {
    if (height == 0 || width == 0) throw DataError("grid dimensions must be positive");
    if (cells_.size() != static_cast<std::size_t>(height) * width) {
        std::ostringstream msg;
        msg << "cell count mismatch: expected " << static_cast<std::size_t>(height) * width << ", got "
            << cells_.size();
        throw DataError(msg.str());
    }
}

TokenGrid::TokenGrid(std::uint32_t height, std::uint32_t width, TokenId fill)
    : TokenGrid(height, width, std::vector<TokenId>(static_cast<std::size_t>(height) * width, fill)) {}

TokenGrid TokenGrid::from_sequence(std::span<const TokenId> seq) {
    return TokenGrid(1, static_cast<std::uint32_t>(seq.size()), std::vector<TokenId>(seq.begin(), seq.end()));
}

TokenGrid TokenGrid::transposed() const {
    TokenGrid out(width_, height_);
    for (std::uint32_t r = 0; r < height_; ++r)
        for (std::uint32_t c = 0; c < width_; ++c) out.at(c, r) = at(r, c);
    return out;
}

std::string GridValidation::describe() const {
    std::ostringstream out;
    for (const auto& issue : issues) {
        out << "cell (" << issue.cell.row << ", " << issue.cell.col << ") holds id " << issue.value
            << " outside the base codebook\n";
    }
    return out.str();
}

GridValidation validate_grid(const TokenGrid& grid, TokenId base_vocab_size) {
    GridValidation report;
    const auto cells = grid.cells();
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (cells[i] >= base_vocab_size) report.issues.push_back({grid.pos(i), cells[i]});
    }
    return report;
}

} // namespace bpeimg

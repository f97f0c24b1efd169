#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "bpeimg/grid.hpp"

namespace bpeimg {

// One token occupying an edge-connected set of cells. `cells` holds
// row-major cell indices in ascending order, so cells.front() is the
// instance's top-left-most cell.
struct TokenInstance {
    TokenId token = 0;
    std::vector<std::uint32_t> cells;

    std::uint32_t min_cell() const { return cells.front(); }

    friend bool operator==(const TokenInstance&, const TokenInstance&) = default;
};

// Partition of a grid into token instances, ordered by the raster position
// of each instance's min cell. Immutable once built.
class Segmentation {
public:
    static constexpr std::uint32_t npos = std::numeric_limits<std::uint32_t>::max();

    Segmentation() = default;

    // Every cell its own instance.
    static Segmentation singletons(const TokenGrid& grid);

    // Builds from explicit instances; throws DataError if they do not form a
    // valid segmentation (see check_segmentation).
    static Segmentation from_instances(std::uint32_t height, std::uint32_t width,
                                       std::vector<TokenInstance> instances);

    std::uint32_t height() const noexcept { return height_; }
    std::uint32_t width() const noexcept { return width_; }
    std::size_t cell_count() const noexcept { return owner_.size(); }
    std::size_t size() const noexcept { return instances_.size(); }

    const std::vector<TokenInstance>& instances() const noexcept { return instances_; }
    const TokenInstance& instance(std::uint32_t i) const { return instances_[i]; }
    // Instance index owning each cell, row-major.
    std::span<const std::uint32_t> owner() const noexcept { return owner_; }

    std::vector<TokenId> tokens() const;

    // Fuses instance i with instance partner[i] (when not npos) into one
    // instance labelled `new_id`. The absorbed partner must have a later min
    // cell than i. Consumes *this.
    Segmentation fused(std::span<const std::uint32_t> partner, TokenId new_id) &&;

    friend bool operator==(const Segmentation& a, const Segmentation& b) {
        return a.height_ == b.height_ && a.width_ == b.width_ && a.instances_ == b.instances_;
    }

private:
    Segmentation(std::uint32_t height, std::uint32_t width, std::vector<TokenInstance> instances);
    void rebuild_owner();

    std::uint32_t height_ = 0;
    std::uint32_t width_ = 0;
    std::vector<TokenInstance> instances_;
    std::vector<std::uint32_t> owner_;
};

// Partition, 4-connectivity and raster ordering check. Returns an empty
// string when valid, otherwise a description of the first violation.
std::string check_segmentation(std::uint32_t height, std::uint32_t width,
                               std::span<const TokenInstance> instances);
inline std::string check_segmentation(const Segmentation& seg) {
    return check_segmentation(seg.height(), seg.width(), seg.instances());
}

} // namespace bpeimg

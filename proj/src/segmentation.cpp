#include "bpeimg/segmentation.hpp"

#include <algorithm>
#include <deque>

namespace bpeimg {

Segmentation::Segmentation(std::uint32_t height, std::uint32_t width, std::vector<TokenInstance> instances)
    : height_(height), width_(width), instances_(std::move(instances)) {
    rebuild_owner();
}

void Segmentation::rebuild_owner() {
    owner_.assign(static_cast<std::size_t>(height_) * width_, npos);
    for (std::uint32_t i = 0; i < instances_.size(); ++i) {
        for (std::uint32_t cell : instances_[i].cells) owner_[cell] = i;
    }
}

Segmentation Segmentation::singletons(const TokenGrid& grid) {
    std::vector<TokenInstance> instances(grid.size());
    const auto cells = grid.cells();
    for (std::uint32_t i = 0; i < cells.size(); ++i) instances[i] = {cells[i], {i}};
    return Segmentation(grid.height(), grid.width(), std::move(instances));
}

Segmentation Segmentation::from_instances(std::uint32_t height, std::uint32_t width,
                                          std::vector<TokenInstance> instances) {
    for (auto& inst : instances) std::sort(inst.cells.begin(), inst.cells.end());
    std::stable_sort(instances.begin(), instances.end(), [](const TokenInstance& a, const TokenInstance& b) {
        if (a.cells.empty() || b.cells.empty()) return !a.cells.empty() && b.cells.empty();
        return a.min_cell() < b.min_cell();
    });
    if (auto problem = check_segmentation(height, width, instances); !problem.empty()) {
        throw DataError("invalid segmentation: " + problem);
    }
    return Segmentation(height, width, std::move(instances));
}

std::vector<TokenId> Segmentation::tokens() const {
    std::vector<TokenId> out;
    out.reserve(instances_.size());
    for (const auto& inst : instances_) out.push_back(inst.token);
    return out;
}

Segmentation Segmentation::fused(std::span<const std::uint32_t> partner, TokenId new_id) && {
    const std::size_t n = instances_.size();
    std::vector<char> absorbed(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        if (partner[i] != npos) absorbed[partner[i]] = 1;
    }
    std::vector<TokenInstance> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (absorbed[i]) continue;
        TokenInstance inst = std::move(instances_[i]);
        if (partner[i] != npos) {
            auto& other = instances_[partner[i]].cells;
            std::vector<std::uint32_t> cells;
            cells.reserve(inst.cells.size() + other.size());
            std::merge(inst.cells.begin(), inst.cells.end(), other.begin(), other.end(), std::back_inserter(cells));
            inst.cells = std::move(cells);
            inst.token = new_id;
        }
        out.push_back(std::move(inst));
    }
    instances_ = std::move(out);
    rebuild_owner();
    return std::move(*this);
}

std::string check_segmentation(std::uint32_t height, std::uint32_t width, std::span<const TokenInstance> instances) {
    const std::size_t total = static_cast<std::size_t>(height) * width;
    std::vector<std::uint32_t> owner(total, Segmentation::npos);
    std::size_t covered = 0;
    for (std::uint32_t i = 0; i < instances.size(); ++i) {
        const auto& cells = instances[i].cells;
        if (cells.empty()) return "instance " + std::to_string(i) + " is empty";
        if (!std::is_sorted(cells.begin(), cells.end())) return "instance " + std::to_string(i) + " cells unsorted";
        if (i > 0 && instances[i - 1].min_cell() >= cells.front()) {
            return "instance " + std::to_string(i) + " is out of raster order";
        }
        for (std::uint32_t cell : cells) {
            if (cell >= total) return "instance " + std::to_string(i) + " has a cell outside the grid";
            if (owner[cell] != Segmentation::npos) {
                return "cell " + std::to_string(cell) + " belongs to instances " + std::to_string(owner[cell]) +
                       " and " + std::to_string(i);
            }
            owner[cell] = i;
            ++covered;
        }
    }
    if (covered != total) return "instances cover " + std::to_string(covered) + " of " + std::to_string(total) + " cells";

    // 4-connectivity of each instance.
    std::vector<char> seen(total, 0);
    std::deque<std::uint32_t> queue;
    for (std::uint32_t i = 0; i < instances.size(); ++i) {
        const auto& cells = instances[i].cells;
        std::size_t reached = 0;
        queue.push_back(cells.front());
        seen[cells.front()] = 1;
        while (!queue.empty()) {
            const std::uint32_t cell = queue.front();
            queue.pop_front();
            ++reached;
            const std::uint32_t r = cell / width, c = cell % width;
            auto visit = [&](std::uint32_t next) {
                if (owner[next] == i && !seen[next]) {
                    seen[next] = 1;
                    queue.push_back(next);
                }
            };
            if (c > 0) visit(cell - 1);
            if (c + 1 < width) visit(cell + 1);
            if (r > 0) visit(cell - width);
            if (r + 1 < height) visit(cell + width);
        }
        if (reached != cells.size()) return "instance " + std::to_string(i) + " is not edge-connected";
    }
    return {};
}

} // namespace bpeimg

#include "bpeimg/grid_io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace bpeimg {

namespace {

constexpr std::string_view kMagic = "IGRD";
constexpr unsigned char kBinaryVersion = 0x01;

std::vector<std::string_view> split_lines(std::string_view text) {
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(start, end - start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        lines.push_back(line);
        start = end + 1;
    }
    return lines;
}

// Parses space-separated non-negative decimals; `what` names the line in errors.
std::vector<std::uint64_t> parse_numbers(std::string_view line, const std::string& what) {
    std::vector<std::uint64_t> out;
    std::size_t i = 0;
    while (i < line.size()) {
        if (line[i] == ' ' || line[i] == '\t') {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
        std::string_view tok = line.substr(i, j - i);
        std::uint64_t value = 0;
        auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
        if (ec != std::errc() || ptr != tok.data() + tok.size()) {
            throw DataError(what + ": non-integer value '" + std::string(tok) + "'");
        }
        out.push_back(value);
        i = j;
    }
    return out;
}

void check_id(std::uint64_t value, std::uint32_t row, std::uint32_t col, std::optional<TokenId> base) {
    if (value > 0xFFFFFFFFull) {
        throw DataError("cell (" + std::to_string(row) + ", " + std::to_string(col) + ") id does not fit in 32 bits");
    }
    if (base && value >= *base) {
        throw DataError("cell (" + std::to_string(row) + ", " + std::to_string(col) + ") holds id " +
                        std::to_string(value) + " >= base vocab size " + std::to_string(*base));
    }
}

std::uint32_t read_u32le(std::string_view bytes, std::size_t offset) {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + offset);
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_u32le(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>((v >> 8) & 0xFF));
    out.push_back(static_cast<char>((v >> 16) & 0xFF));
    out.push_back(static_cast<char>((v >> 24) & 0xFF));
}

} // namespace

GridFormat parse_grid_format(std::string_view text) {
    if (text == "text") return GridFormat::text;
    if (text == "binary") return GridFormat::binary;
    throw std::invalid_argument("unknown grid format '" + std::string(text) + "'");
}

std::string_view to_string(GridFormat format) { return format == GridFormat::text ? "text" : "binary"; }

std::string_view file_extension(GridFormat format) { return format == GridFormat::text ? ".txt" : ".igrd"; }

TokenGrid parse_grid_text(std::string_view text, std::optional<TokenId> base_vocab_size) {
    auto lines = split_lines(text);
    while (!lines.empty() && lines.back().empty()) lines.pop_back();
    if (lines.empty()) throw DataError("malformed header: empty grid file");

    const auto header = parse_numbers(lines[0], "malformed header");
    if (header.size() != 2 || header[0] == 0 || header[1] == 0 || header[0] > 0xFFFFFFFFull ||
        header[1] > 0xFFFFFFFFull) {
        throw DataError("malformed header: expected \"h w\" with positive integers");
    }
    const auto height = static_cast<std::uint32_t>(header[0]);
    const auto width = static_cast<std::uint32_t>(header[1]);
    if (lines.size() - 1 != height) {
        throw DataError("cell count mismatch: expected " + std::to_string(height) + " rows, got " +
                        std::to_string(lines.size() - 1));
    }

    std::vector<TokenId> cells;
    cells.reserve(static_cast<std::size_t>(height) * width);
    for (std::uint32_t r = 0; r < height; ++r) {
        const auto row = parse_numbers(lines[r + 1], "row " + std::to_string(r));
        if (row.size() != width) {
            throw DataError("cell count mismatch: row " + std::to_string(r) + " has " + std::to_string(row.size()) +
                            " cells, expected " + std::to_string(width));
        }
        for (std::uint32_t c = 0; c < width; ++c) {
            check_id(row[c], r, c, base_vocab_size);
            cells.push_back(static_cast<TokenId>(row[c]));
        }
    }
    return TokenGrid(height, width, std::move(cells));
}

TokenGrid parse_grid_binary(std::string_view bytes, std::optional<TokenId> base_vocab_size) {
    constexpr std::size_t header_size = 4 + 1 + 4 + 4;
    if (bytes.size() < header_size || bytes.substr(0, 4) != kMagic) {
        throw DataError("malformed header: missing IGRD magic");
    }
    if (static_cast<unsigned char>(bytes[4]) != kBinaryVersion) {
        throw DataError("malformed header: unsupported binary grid version " +
                        std::to_string(static_cast<unsigned char>(bytes[4])));
    }
    const std::uint32_t height = read_u32le(bytes, 5);
    const std::uint32_t width = read_u32le(bytes, 9);
    if (height == 0 || width == 0) throw DataError("malformed header: grid dimensions must be positive");
    const std::size_t count = static_cast<std::size_t>(height) * width;
    if (bytes.size() != header_size + 4 * count) {
        throw DataError("cell count mismatch: expected " + std::to_string(count) + " ids, payload holds " +
                        std::to_string((bytes.size() - header_size) / 4.0));
    }
    std::vector<TokenId> cells(count);
    for (std::size_t i = 0; i < count; ++i) {
        cells[i] = read_u32le(bytes, header_size + 4 * i);
        check_id(cells[i], static_cast<std::uint32_t>(i / width), static_cast<std::uint32_t>(i % width),
                 base_vocab_size);
    }
    return TokenGrid(height, width, std::move(cells));
}

std::string format_grid_text(const TokenGrid& grid) {
    std::string out;
    out.reserve(grid.size() * 4 + 16);
    out += std::to_string(grid.height()) + ' ' + std::to_string(grid.width()) + '\n';
    char buf[16];
    for (std::uint32_t r = 0; r < grid.height(); ++r) {
        for (std::uint32_t c = 0; c < grid.width(); ++c) {
            if (c) out.push_back(' ');
            auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, grid.at(r, c));
            out.append(buf, ptr);
        }
        out.push_back('\n');
    }
    return out;
}

std::string format_grid_binary(const TokenGrid& grid) {
    std::string out;
    out.reserve(13 + 4 * grid.size());
    out += kMagic;
    out.push_back(static_cast<char>(kBinaryVersion));
    put_u32le(out, grid.height());
    put_u32le(out, grid.width());
    for (TokenId id : grid.cells()) put_u32le(out, id);
    return out;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed: " + path.string());
}

TokenGrid load_grid(const std::filesystem::path& path, GridFormat format, std::optional<TokenId> base_vocab_size) {
    const std::string bytes = read_file(path);
    try {
        return format == GridFormat::text ? parse_grid_text(bytes, base_vocab_size)
                                          : parse_grid_binary(bytes, base_vocab_size);
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

TokenGrid load_grid_auto(const std::filesystem::path& path, std::optional<TokenId> base_vocab_size) {
    const std::string bytes = read_file(path);
    const bool binary = bytes.size() >= 4 && std::string_view(bytes).substr(0, 4) == kMagic;
    try {
        return binary ? parse_grid_binary(bytes, base_vocab_size) : parse_grid_text(bytes, base_vocab_size);
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

void save_grid(const TokenGrid& grid, const std::filesystem::path& path, GridFormat format) {
    write_file(path, format == GridFormat::text ? format_grid_text(grid) : format_grid_binary(grid));
}

} // namespace bpeimg

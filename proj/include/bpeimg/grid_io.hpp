#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "bpeimg/grid.hpp"

namespace bpeimg {

enum class GridFormat { text, binary };

GridFormat parse_grid_format(std::string_view text);
std::string_view to_string(GridFormat format);
std::string_view file_extension(GridFormat format);

// Text: "h w" header line, then h lines of w decimal IDs.
// Binary: "IGRD", version 0x01, u32le h, u32le w, h*w u32le IDs.
// When `base_vocab_size` is given, IDs at or above it are rejected with
// their row/col.
TokenGrid parse_grid_text(std::string_view text, std::optional<TokenId> base_vocab_size = std::nullopt);
TokenGrid parse_grid_binary(std::string_view bytes, std::optional<TokenId> base_vocab_size = std::nullopt);
std::string format_grid_text(const TokenGrid& grid);
std::string format_grid_binary(const TokenGrid& grid);

TokenGrid load_grid(const std::filesystem::path& path, GridFormat format,
                    std::optional<TokenId> base_vocab_size = std::nullopt);
void save_grid(const TokenGrid& grid, const std::filesystem::path& path, GridFormat format);

// Guesses the format from the leading magic bytes.
TokenGrid load_grid_auto(const std::filesystem::path& path, std::optional<TokenId> base_vocab_size = std::nullopt);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

} // namespace bpeimg

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "bpeimg/grid.hpp"

namespace bpeimg {

enum class OrientationPolicy { agnostic, oriented };

enum class Orientation { any, horizontal, vertical };

std::string_view to_string(OrientationPolicy policy);
std::string_view to_string(Orientation orientation);
OrientationPolicy parse_orientation_policy(std::string_view text);
Orientation parse_orientation(std::string_view text);

struct MergeRule {
    TokenId left = 0;
    TokenId right = 0;
    TokenId new_id = 0;
    Orientation orientation = Orientation::any;

    friend bool operator==(const MergeRule&, const MergeRule&) = default;
};

// Base codebook size plus merge rules in training order. Rule i creates
// token base_vocab_size + i.
class Vocabulary {
public:
    static constexpr int kFormatVersion = 1;

    Vocabulary() = default;
    Vocabulary(TokenId base_vocab_size, OrientationPolicy policy, std::vector<MergeRule> merges = {});

    TokenId base_vocab_size() const noexcept { return base_vocab_size_; }
    OrientationPolicy orientation_policy() const noexcept { return policy_; }
    const std::vector<MergeRule>& merges() const noexcept { return merges_; }
    TokenId size() const noexcept { return base_vocab_size_ + static_cast<TokenId>(merges_.size()); }
    bool is_base(TokenId id) const noexcept { return id < base_vocab_size_; }

    // Rule that produced a merged token; `id` must be >= base_vocab_size.
    const MergeRule& rule_for(TokenId id) const { return merges_.at(id - base_vocab_size_); }

    // Appends (left, right) as the next token and returns its id.
    TokenId append(TokenId left, TokenId right, Orientation orientation = Orientation::any);

    // Number of base cells a token expands to.
    std::vector<std::size_t> token_sizes() const;

    friend bool operator==(const Vocabulary&, const Vocabulary&) = default;

private:
    void check_rule(const MergeRule& rule, std::size_t index) const;

    TokenId base_vocab_size_ = 1;
    OrientationPolicy policy_ = OrientationPolicy::agnostic;
    std::vector<MergeRule> merges_;
};

GridValidation validate_grid(const TokenGrid& grid, const Vocabulary& vocab);

// Canonical JSON text; identical vocabularies give identical bytes. An
// optional provenance object (already serialized JSON) is appended verbatim.
std::string serialize_vocab(const Vocabulary& vocab, std::string_view provenance_json = {});
Vocabulary parse_vocab(std::string_view json_text);

void save_vocab(const Vocabulary& vocab, const std::filesystem::path& path, std::string_view provenance_json = {});
Vocabulary load_vocab(const std::filesystem::path& path);

// Hex SHA-256 of the canonical serialization (provenance excluded).
std::string vocab_hash(const Vocabulary& vocab);

} // namespace bpeimg

#include "bpeimg/vocabulary.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <json.hpp>

#include "bpeimg/grid_io.hpp"

namespace bpeimg {

std::string_view to_string(OrientationPolicy policy) {
    return policy == OrientationPolicy::agnostic ? "agnostic" : "oriented";
}

std::string_view to_string(Orientation orientation) {
    switch (orientation) {
    case Orientation::horizontal: return "horizontal";
    case Orientation::vertical: return "vertical";
    case Orientation::any: break;
    }
    return "any";
}

OrientationPolicy parse_orientation_policy(std::string_view text) {
    if (text == "agnostic") return OrientationPolicy::agnostic;
    if (text == "oriented") return OrientationPolicy::oriented;
    throw std::invalid_argument("unknown orientation policy '" + std::string(text) + "'");
}

Orientation parse_orientation(std::string_view text) {
    if (text == "any") return Orientation::any;
    if (text == "horizontal" || text == "h") return Orientation::horizontal;
    if (text == "vertical" || text == "v") return Orientation::vertical;
    throw std::invalid_argument("unknown orientation '" + std::string(text) + "'");
}

Vocabulary::Vocabulary(TokenId base_vocab_size, OrientationPolicy policy, std::vector<MergeRule> merges)
    : base_vocab_size_(base_vocab_size), policy_(policy), merges_(std::move(merges)) {
    if (base_vocab_size_ == 0) throw DataError("base vocab size must be positive");
    for (std::size_t i = 0; i < merges_.size(); ++i) check_rule(merges_[i], i);
}

void Vocabulary::check_rule(const MergeRule& rule, std::size_t index) const {
    const TokenId expected = base_vocab_size_ + static_cast<TokenId>(index);
    if (rule.new_id != expected) {
        throw DataError("merge " + std::to_string(index) + " has new_id " + std::to_string(rule.new_id) +
                        ", expected " + std::to_string(expected));
    }
    if (rule.left >= rule.new_id || rule.right >= rule.new_id) {
        throw DataError("merge " + std::to_string(index) + " (" + std::to_string(rule.left) + ", " +
                        std::to_string(rule.right) + ") references an id not defined before " +
                        std::to_string(rule.new_id));
    }
    const bool oriented = rule.orientation != Orientation::any;
    if (policy_ == OrientationPolicy::agnostic && oriented) {
        throw DataError("merge " + std::to_string(index) + " carries an orientation under the agnostic policy");
    }
    if (policy_ == OrientationPolicy::oriented && !oriented) {
        throw DataError("merge " + std::to_string(index) + " lacks an orientation under the oriented policy");
    }
}

TokenId Vocabulary::append(TokenId left, TokenId right, Orientation orientation) {
    MergeRule rule{left, right, size(), orientation};
    check_rule(rule, merges_.size());
    merges_.push_back(rule);
    return rule.new_id;
}

std::vector<std::size_t> Vocabulary::token_sizes() const {
    std::vector<std::size_t> sizes(size(), 1);
    for (const auto& rule : merges_) sizes[rule.new_id] = sizes[rule.left] + sizes[rule.right];
    return sizes;
}

GridValidation validate_grid(const TokenGrid& grid, const Vocabulary& vocab) {
    return validate_grid(grid, vocab.base_vocab_size());
}

std::string serialize_vocab(const Vocabulary& vocab, std::string_view provenance_json) {
    std::string out = "{\n";
    out += "  \"format_version\": " + std::to_string(Vocabulary::kFormatVersion) + ",\n";
    out += "  \"base_vocab_size\": " + std::to_string(vocab.base_vocab_size()) + ",\n";
    out += "  \"orientation_policy\": \"" + std::string(to_string(vocab.orientation_policy())) + "\",\n";
    out += "  \"merges\": [";
    const auto& merges = vocab.merges();
    for (std::size_t i = 0; i < merges.size(); ++i) {
        out += i ? ",\n    [" : "\n    [";
        out += std::to_string(merges[i].left) + ", " + std::to_string(merges[i].right);
        if (merges[i].orientation != Orientation::any) {
            out += ", \"" + std::string(to_string(merges[i].orientation)) + "\"";
        }
        out += "]";
    }
    out += merges.empty() ? "]" : "\n  ]";
    if (!provenance_json.empty()) {
        out += ",\n  \"provenance\": ";
        out += provenance_json;
    }
    out += "\n}\n";
    return out;
}

Vocabulary parse_vocab(std::string_view json_text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("vocabulary is not valid JSON: ") + e.what());
    }
    try {
        const int version = doc.at("format_version").get<int>();
        if (version != Vocabulary::kFormatVersion) {
            throw DataError("vocabulary format_version " + std::to_string(version) + " is not supported (expected " +
                            std::to_string(Vocabulary::kFormatVersion) + ")");
        }
        const auto base = doc.at("base_vocab_size").get<std::int64_t>();
        if (base <= 0 || base > 0xFFFFFFFFll) throw DataError("base_vocab_size out of range");
        const auto policy = parse_orientation_policy(doc.at("orientation_policy").get<std::string>());
        std::vector<MergeRule> merges;
        const auto& list = doc.at("merges");
        if (!list.is_array()) throw DataError("merges must be an array");
        for (std::size_t i = 0; i < list.size(); ++i) {
            const auto& entry = list[i];
            if (!entry.is_array() || entry.size() < 2 || entry.size() > 3) {
                throw DataError("merge " + std::to_string(i) + " must be [left, right] or [left, right, orientation]");
            }
            const auto left = entry[0].get<std::int64_t>();
            const auto right = entry[1].get<std::int64_t>();
            if (left < 0 || right < 0 || left > 0xFFFFFFFFll || right > 0xFFFFFFFFll) {
                throw DataError("merge " + std::to_string(i) + " has an id out of range");
            }
            Orientation orientation = Orientation::any;
            if (entry.size() == 3) orientation = parse_orientation(entry[2].get<std::string>());
            merges.push_back({static_cast<TokenId>(left), static_cast<TokenId>(right),
                              static_cast<TokenId>(base + static_cast<std::int64_t>(i)), orientation});
        }
        return Vocabulary(static_cast<TokenId>(base), policy, std::move(merges));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed vocabulary: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw DataError(std::string("malformed vocabulary: ") + e.what());
    }
}

void save_vocab(const Vocabulary& vocab, const std::filesystem::path& path, std::string_view provenance_json) {
    write_file(path, serialize_vocab(vocab, provenance_json));
}

Vocabulary load_vocab(const std::filesystem::path& path) {
    try {
        return parse_vocab(read_file(path));
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

std::string vocab_hash(const Vocabulary& vocab) {
    const std::string bytes = serialize_vocab(vocab);
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int length = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("SHA-256 digest failed");
    }
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < length; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xF]);
    }
    return out;
}

} // namespace bpeimg

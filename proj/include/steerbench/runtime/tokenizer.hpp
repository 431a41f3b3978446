#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace steerbench::runtime {

// Byte-level BPE tokenizer (GPT-2 vocab.json + merges.txt semantics), or a
// plain byte tokenizer where token id == byte value.
//
// detokenize(tokenize(t)) == t for any byte string: every byte is reachable
// through the byte-to-symbol table, so nothing is dropped or normalized.
class Tokenizer {
public:
    static Tokenizer load(const std::filesystem::path &vocab_json, const std::filesystem::path &merges_txt);
    static Tokenizer from_strings(const std::string &vocab_json, const std::string &merges_txt);
    static Tokenizer bytes();

    std::vector<int> encode(std::string_view text) const;
    std::string decode(std::span<const int> ids) const;

    int vocab_size() const { return static_cast<int>(id_to_bytes_.size()); }
    bool byte_level_only() const { return byte_mode_; }

    // Raw bytes a token decodes to.
    const std::string &token_bytes(int id) const;
    // Id of the token whose decoded bytes are exactly `raw`, if one exists.
    std::optional<int> token_id(std::string_view raw) const;

private:
    std::vector<int> bpe(std::string_view piece) const;

    bool byte_mode_ = false;
    std::vector<std::string> id_to_bytes_;
    std::unordered_map<std::string, int> bytes_to_id_;     // raw bytes -> id
    std::unordered_map<std::string, int> merge_ranks_;      // "left right" (symbol form) -> rank
    std::vector<std::string> byte_symbol_;                  // byte -> GPT-2 unicode symbol (UTF-8)
};

// Splits text the way GPT-2's pre-tokenization regex does:
//   's|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+
std::vector<std::string_view> pretokenize(std::string_view text);

} // namespace steerbench::runtime

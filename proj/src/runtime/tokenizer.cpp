#include "steerbench/runtime/tokenizer.hpp"

#include "steerbench/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <limits>
#include <sstream>

namespace steerbench::runtime {

namespace {

struct CodepointRange {
    char32_t lo, hi;
};

#include "unicode_tables.inc"

template <std::size_t N>
bool in_ranges(const CodepointRange (&table)[N], char32_t cp) {
    auto it = std::upper_bound(std::begin(table), std::end(table), cp,
                               [](char32_t v, const CodepointRange &r) { return v < r.lo; });
    if (it == std::begin(table)) return false;
    --it;
    return cp <= it->hi;
}

enum class CharClass { Letter, Number, Space, Other };

struct Cp {
    char32_t value;
    std::size_t offset; // byte offset of the first byte
    std::size_t len;    // byte length
    CharClass cls;
};

CharClass classify(char32_t cp, bool valid) {
    if (!valid) return CharClass::Other;
    if (in_ranges(kLetterRanges, cp)) return CharClass::Letter;
    if (in_ranges(kNumberRanges, cp)) return CharClass::Number;
    if (in_ranges(kSpaceRanges, cp)) return CharClass::Space;
    return CharClass::Other;
}

// Decodes UTF-8; each invalid byte becomes its own "Other" codepoint.
std::vector<Cp> decode_utf8(std::string_view s) {
    std::vector<Cp> out;
    out.reserve(s.size());
    std::size_t i = 0;
    while (i < s.size()) {
        const auto b0 = static_cast<unsigned char>(s[i]);
        std::size_t len = 0;
        char32_t cp = 0;
        if (b0 < 0x80) {
            len = 1;
            cp = b0;
        } else if ((b0 & 0xE0) == 0xC0) {
            len = 2;
            cp = b0 & 0x1F;
        } else if ((b0 & 0xF0) == 0xE0) {
            len = 3;
            cp = b0 & 0x0F;
        } else if ((b0 & 0xF8) == 0xF0) {
            len = 4;
            cp = b0 & 0x07;
        }
        bool valid = len > 0 && i + len <= s.size();
        for (std::size_t k = 1; valid && k < len; ++k) {
            const auto b = static_cast<unsigned char>(s[i + k]);
            if ((b & 0xC0) != 0x80) valid = false;
            cp = (cp << 6) | (b & 0x3F);
        }
        if (valid) {
            // reject overlong forms and surrogates
            static constexpr char32_t min_for_len[] = {0, 0, 0x80, 0x800, 0x10000};
            if (cp < min_for_len[len] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) valid = false;
        }
        if (!valid) {
            out.push_back({0xFFFD, i, 1, CharClass::Other});
            ++i;
            continue;
        }
        out.push_back({cp, i, len, classify(cp, true)});
        i += len;
    }
    return out;
}

std::string encode_utf8(char32_t cp) {
    std::string out;
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
    return out;
}

// GPT-2's bytes_to_unicode(): printable bytes map to themselves, the rest are
// shifted to codepoints 256+.
std::vector<std::string> make_byte_symbols() {
    std::vector<std::string> table(256);
    std::vector<bool> direct(256, false);
    for (int b = '!'; b <= '~'; ++b) direct[static_cast<std::size_t>(b)] = true;
    for (int b = 0xA1; b <= 0xAC; ++b) direct[static_cast<std::size_t>(b)] = true;
    for (int b = 0xAE; b <= 0xFF; ++b) direct[static_cast<std::size_t>(b)] = true;
    int next = 0;
    for (int b = 0; b < 256; ++b) {
        const char32_t cp = direct[static_cast<std::size_t>(b)] ? static_cast<char32_t>(b) : static_cast<char32_t>(256 + next++);
        table[static_cast<std::size_t>(b)] = encode_utf8(cp);
    }
    return table;
}

bool is_contraction_at(const std::vector<Cp> &cps, std::size_t i, std::size_t &len) {
    if (cps[i].value != U'\'' || i + 1 >= cps.size()) return false;
    const char32_t a = cps[i + 1].value;
    if (a == U's' || a == U't' || a == U'm' || a == U'd') {
        len = 2;
        return true;
    }
    if (i + 2 < cps.size()) {
        const char32_t b = cps[i + 2].value;
        if ((a == U'r' && b == U'e') || (a == U'v' && b == U'e') || (a == U'l' && b == U'l')) {
            len = 3;
            return true;
        }
    }
    return false;
}

} // namespace

std::vector<std::string_view> pretokenize(std::string_view text) {
    const std::vector<Cp> cps = decode_utf8(text);
    std::vector<std::string_view> out;
    const std::size_t n = cps.size();
    auto emit = [&](std::size_t from, std::size_t to) {
        const std::size_t begin = cps[from].offset;
        const std::size_t end = to < n ? cps[to].offset : text.size();
        out.push_back(text.substr(begin, end - begin));
    };
    auto run_of = [&](std::size_t j, auto pred) {
        while (j < n && pred(cps[j])) ++j;
        return j;
    };
    auto is_space = [](const Cp &c) { return c.cls == CharClass::Space; };

    std::size_t i = 0;
    while (i < n) {
        std::size_t len = 0;
        if (is_contraction_at(cps, i, len)) {
            emit(i, i + len);
            i += len;
            continue;
        }
        // ` ?\p{L}+`, ` ?\p{N}+`, ` ?[^\s\p{L}\p{N}]+`: optional literal space,
        // then a run of one class.
        const bool lead_space = cps[i].value == U' ' && i + 1 < n;
        const std::size_t body = lead_space ? i + 1 : i;
        const CharClass cls = cps[body].cls;
        if (cls != CharClass::Space) {
            const std::size_t end = run_of(body, [cls](const Cp &c) { return c.cls == cls; });
            emit(i, end);
            i = end;
            continue;
        }

        // \s+(?!\S) then \s+
        const std::size_t end = run_of(i, is_space);
        if (end == n) {
            emit(i, end);
            i = end;
        } else if (end - i >= 2) {
            emit(i, end - 1);
            i = end - 1;
        } else {
            emit(i, end);
            i = end;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

Tokenizer Tokenizer::bytes() {
    Tokenizer t;
    t.byte_mode_ = true;
    t.id_to_bytes_.resize(256);
    for (int b = 0; b < 256; ++b) {
        t.id_to_bytes_[static_cast<std::size_t>(b)] = std::string(1, static_cast<char>(b));
        t.bytes_to_id_[t.id_to_bytes_[static_cast<std::size_t>(b)]] = b;
    }
    return t;
}

Tokenizer Tokenizer::load(const std::filesystem::path &vocab_json, const std::filesystem::path &merges_txt) {
    auto slurp = [](const std::filesystem::path &p) {
        std::ifstream in(p, std::ios::binary);
        if (!in) throw LoadError("cannot open tokenizer file " + p.string());
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    return from_strings(slurp(vocab_json), slurp(merges_txt));
}

Tokenizer Tokenizer::from_strings(const std::string &vocab_json, const std::string &merges_txt) {
    Tokenizer t;
    t.byte_symbol_ = make_byte_symbols();
    std::unordered_map<std::string, unsigned char> symbol_to_byte;
    for (int b = 0; b < 256; ++b) symbol_to_byte[t.byte_symbol_[static_cast<std::size_t>(b)]] = static_cast<unsigned char>(b);

    nlohmann::json vocab;
    try {
        vocab = nlohmann::json::parse(vocab_json);
    } catch (const nlohmann::json::exception &e) {
        throw LoadError(std::string("malformed vocab.json: ") + e.what());
    }
    if (!vocab.is_object() || vocab.empty()) throw LoadError("malformed vocab.json: expected a non-empty object");

    int max_id = -1;
    for (auto it = vocab.begin(); it != vocab.end(); ++it) {
        if (!it.value().is_number_integer()) throw LoadError("malformed vocab.json: id for '" + it.key() + "' is not an integer");
        max_id = std::max(max_id, it.value().get<int>());
    }
    if (max_id < 0) throw LoadError("malformed vocab.json: negative ids");
    t.id_to_bytes_.assign(static_cast<std::size_t>(max_id) + 1, std::string());
    std::vector<bool> seen(static_cast<std::size_t>(max_id) + 1, false);
    for (auto it = vocab.begin(); it != vocab.end(); ++it) {
        const int id = it.value().get<int>();
        if (id < 0) throw LoadError("malformed vocab.json: negative id");
        // symbol string -> raw bytes
        std::string raw;
        for (const Cp &c : decode_utf8(it.key())) {
            auto sym = symbol_to_byte.find(encode_utf8(c.value));
            if (sym == symbol_to_byte.end())
                throw LoadError("malformed vocab.json: token '" + it.key() + "' uses a symbol outside the byte table");
            raw.push_back(static_cast<char>(sym->second));
        }
        if (seen[static_cast<std::size_t>(id)]) throw LoadError("malformed vocab.json: duplicate id " + std::to_string(id));
        seen[static_cast<std::size_t>(id)] = true;
        t.id_to_bytes_[static_cast<std::size_t>(id)] = raw;
        t.bytes_to_id_.emplace(raw, id);
    }
    for (int b = 0; b < 256; ++b)
        if (!t.bytes_to_id_.count(std::string(1, static_cast<char>(b))))
            throw LoadError("malformed vocab.json: byte " + std::to_string(b) + " has no token");

    std::istringstream lines(merges_txt);
    std::string line;
    int rank = 0;
    int lineno = 0;
    while (std::getline(lines, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || (lineno == 1 && line.rfind("#version", 0) == 0)) continue;
        const auto sp = line.find(' ');
        if (sp == std::string::npos || sp == 0 || sp + 1 >= line.size() || line.find(' ', sp + 1) != std::string::npos)
            throw LoadError("malformed merges.txt at line " + std::to_string(lineno) + ": '" + line + "'");
        t.merge_ranks_.emplace(line, rank++);
    }
    return t;
}

std::vector<int> Tokenizer::bpe(std::string_view piece) const {
    std::vector<std::string> symbols;
    symbols.reserve(piece.size());
    for (unsigned char b : piece) symbols.push_back(byte_symbol_[b]);

    while (symbols.size() > 1) {
        int best_rank = std::numeric_limits<int>::max();
        std::size_t best = 0;
        for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
            auto it = merge_ranks_.find(symbols[i] + " " + symbols[i + 1]);
            if (it != merge_ranks_.end() && it->second < best_rank) {
                best_rank = it->second;
                best = i;
            }
        }
        if (best_rank == std::numeric_limits<int>::max()) break;
        // merge every occurrence of the best pair, left to right
        const std::string left = symbols[best], right = symbols[best + 1];
        std::vector<std::string> merged;
        merged.reserve(symbols.size());
        for (std::size_t i = 0; i < symbols.size();) {
            if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
                merged.push_back(left + right);
                i += 2;
            } else {
                merged.push_back(symbols[i]);
                ++i;
            }
        }
        symbols = std::move(merged);
    }

    std::vector<int> ids;
    ids.reserve(symbols.size());
    std::size_t consumed = 0;
    for (const auto &sym : symbols) {
        // symbol -> the bytes it covers in `piece`
        std::size_t nbytes = 0;
        for (const Cp &c : decode_utf8(sym)) {
            (void)c;
            ++nbytes;
        }
        const std::string raw(piece.substr(consumed, nbytes));
        consumed += nbytes;
        auto it = bytes_to_id_.find(raw);
        if (it == bytes_to_id_.end()) throw ContractError("BPE produced a symbol missing from the vocabulary");
        ids.push_back(it->second);
    }
    return ids;
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
    std::vector<int> ids;
    if (byte_mode_) {
        ids.reserve(text.size());
        for (unsigned char b : text) ids.push_back(b);
        return ids;
    }
    for (std::string_view piece : pretokenize(text)) {
        const auto part = bpe(piece);
        ids.insert(ids.end(), part.begin(), part.end());
    }
    return ids;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
    std::string out;
    for (int id : ids) out += token_bytes(id);
    return out;
}

const std::string &Tokenizer::token_bytes(int id) const {
    if (id < 0 || id >= vocab_size()) throw ContractError("token id " + std::to_string(id) + " out of range");
    return id_to_bytes_[static_cast<std::size_t>(id)];
}

std::optional<int> Tokenizer::token_id(std::string_view raw) const {
    auto it = bytes_to_id_.find(std::string(raw));
    if (it == bytes_to_id_.end()) return std::nullopt;
    return it->second;
}

} // namespace steerbench::runtime

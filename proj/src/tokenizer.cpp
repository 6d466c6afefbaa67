#include "loopscope/tokenizer.hpp"

#include <array>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace loopscope {

namespace {

// ---- byte-level alphabet (GPT-2 bytes_to_unicode) ----
// Printable bytes map to themselves; the rest map to 256, 257, ... in byte
// order, so every byte has a visible stand-in character.
std::array<char32_t, 256> build_byte_to_char() {
    std::array<char32_t, 256> table{};
    auto printable = [](int b) {
        return (b >= 33 && b <= 126) || (b >= 161 && b <= 172) || (b >= 174 && b <= 255);
    };
    int n = 0;
    for (int b = 0; b < 256; ++b) {
        table[static_cast<std::size_t>(b)] =
            printable(b) ? static_cast<char32_t>(b) : static_cast<char32_t>(256 + n++);
    }
    return table;
}

const std::array<char32_t, 256>& byte_to_char() {
    static const auto table = build_byte_to_char();
    return table;
}

const std::unordered_map<char32_t, std::uint8_t>& char_to_byte() {
    static const auto table = [] {
        std::unordered_map<char32_t, std::uint8_t> m;
        for (int b = 0; b < 256; ++b) m[byte_to_char()[static_cast<std::size_t>(b)]] = static_cast<std::uint8_t>(b);
        return m;
    }();
    return table;
}

// ---- UTF-8 ----

void append_utf8(std::string& out, char32_t cp) {
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
}

struct Scalar {
    char32_t cp;
    std::size_t offset;  // byte offset in the source
    std::size_t len;     // byte length
};

// Invalid bytes decode as one scalar each (0xDC00 + byte, never a valid
// codepoint) so arbitrary byte strings survive the chunking untouched.
std::vector<Scalar> decode_scalars(std::string_view text) {
    std::vector<Scalar> out;
    out.reserve(text.size());
    std::size_t i = 0;
    while (i < text.size()) {
        const auto b0 = static_cast<std::uint8_t>(text[i]);
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
        bool ok = len > 0 && i + len <= text.size();
        if (ok) {
            for (std::size_t k = 1; k < len; ++k) {
                const auto bk = static_cast<std::uint8_t>(text[i + k]);
                if ((bk & 0xC0) != 0x80) {
                    ok = false;
                    break;
                }
                cp = (cp << 6) | (bk & 0x3F);
            }
        }
        if (!ok) {
            out.push_back({static_cast<char32_t>(0xDC00 + b0), i, 1});
            ++i;
        } else {
            out.push_back({cp, i, len});
            i += len;
        }
    }
    return out;
}

// ---- character classes for the pretokenizer ----

bool is_space_cp(char32_t c) {
    if (c == ' ' || (c >= 0x09 && c <= 0x0D) || (c >= 0x1C && c <= 0x1F)) return true;
    if (c == 0x85 || c == 0xA0 || c == 0x1680) return true;
    if (c >= 0x2000 && c <= 0x200A) return true;
    return c == 0x2028 || c == 0x2029 || c == 0x202F || c == 0x205F || c == 0x3000;
}

bool is_letter_cp(char32_t c) {
    if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z')) return true;
    if (c < 0x80) return false;
    if (c == 0xAA || c == 0xB5 || c == 0xBA) return true;
    if ((c >= 0xC0 && c <= 0xD6) || (c >= 0xD8 && c <= 0xF6) || (c >= 0xF8 && c <= 0x2AF)) return true;
    if ((c >= 0x370 && c <= 0x373) || (c >= 0x376 && c <= 0x377) || (c >= 0x37A && c <= 0x37D)) return true;
    if (c == 0x37F || c == 0x386 || (c >= 0x388 && c <= 0x3FF && c != 0x38B && c != 0x38D && c != 0x3A2)) return true;
    if ((c >= 0x400 && c <= 0x481) || (c >= 0x48A && c <= 0x52F)) return true;
    if ((c >= 0x531 && c <= 0x556) || (c >= 0x561 && c <= 0x587)) return true;
    if ((c >= 0x5D0 && c <= 0x5EA) || (c >= 0x5EF && c <= 0x5F2)) return true;
    if ((c >= 0x620 && c <= 0x64A) || (c >= 0x66E && c <= 0x66F) || (c >= 0x671 && c <= 0x6D3)) return true;
    if ((c >= 0x904 && c <= 0x939) || (c >= 0x958 && c <= 0x961)) return true;
    if ((c >= 0x3041 && c <= 0x3096) || (c >= 0x30A1 && c <= 0x30FA) || c == 0x30FC) return true;
    if ((c >= 0x4E00 && c <= 0x9FFF) || (c >= 0x3400 && c <= 0x4DBF)) return true;
    if (c >= 0xAC00 && c <= 0xD7A3) return true;
    return false;
}

bool is_number_cp(char32_t c) {
    if (c >= '0' && c <= '9') return true;
    if (c == 0xB2 || c == 0xB3 || c == 0xB9 || (c >= 0xBC && c <= 0xBE)) return true;
    if ((c >= 0x660 && c <= 0x669) || (c >= 0x6F0 && c <= 0x6F9)) return true;
    if (c >= 0x966 && c <= 0x96F) return true;
    return c >= 0xFF10 && c <= 0xFF19;
}

enum class CharClass { kSpace, kLetter, kNumber, kOther };

CharClass classify(char32_t c) {
    if (is_space_cp(c)) return CharClass::kSpace;
    if (is_letter_cp(c)) return CharClass::kLetter;
    if (is_number_cp(c)) return CharClass::kNumber;
    return CharClass::kOther;
}

}  // namespace

std::vector<std::string> pretokenize_gpt2(std::string_view text) {
    const std::vector<Scalar> s = decode_scalars(text);
    const std::size_t n = s.size();
    std::vector<std::string> chunks;

    auto slice = [&](std::size_t from, std::size_t to) {  // scalar indices, [from, to)
        const std::size_t b0 = s[from].offset;
        const std::size_t b1 = s[to - 1].offset + s[to - 1].len;
        return std::string(text.substr(b0, b1 - b0));
    };

    std::size_t i = 0;
    while (i < n) {
        const char32_t c = s[i].cp;

        // lowercase contractions: 's 't 're 've 'm 'll 'd
        if (c == '\'' && i + 1 < n) {
            const char32_t a = s[i + 1].cp;
            if (a == 's' || a == 't' || a == 'm' || a == 'd') {
                chunks.push_back(slice(i, i + 2));
                i += 2;
                continue;
            }
            if (i + 2 < n) {
                const char32_t b = s[i + 2].cp;
                if ((a == 'r' && b == 'e') || (a == 'v' && b == 'e') || (a == 'l' && b == 'l')) {
                    chunks.push_back(slice(i, i + 3));
                    i += 3;
                    continue;
                }
            }
        }

        CharClass cls = classify(c);
        std::size_t start = i;
        if (c == ' ' && i + 1 < n && classify(s[i + 1].cp) != CharClass::kSpace) {
            cls = classify(s[i + 1].cp);  // " ?" prefix of the next run
            ++i;
        }

        if (cls == CharClass::kSpace) {
            std::size_t j = i;
            while (j < n && classify(s[j].cp) == CharClass::kSpace) ++j;
            if (j == n) {  // trailing whitespace is one chunk
                chunks.push_back(slice(start, j));
                i = j;
                continue;
            }
            if (j - i > 1) {  // all but the last whitespace char
                chunks.push_back(slice(start, j - 1));
                i = j - 1;
                continue;
            }
            // single whitespace char before a non-space: a plain space glues
            // to the next chunk (handled above); anything else stands alone
            chunks.push_back(slice(start, i + 1));
            ++i;
            continue;
        }

        std::size_t j = i;
        if (cls == CharClass::kOther) {
            while (j < n && classify(s[j].cp) == CharClass::kOther) ++j;
        } else {
            while (j < n && classify(s[j].cp) == cls) ++j;
        }
        chunks.push_back(slice(start, j));
        i = j;
    }
    return chunks;
}

std::string truncate_scalars(std::string_view text, std::size_t n) {
    const std::vector<Scalar> s = decode_scalars(text);
    if (s.size() <= n) return std::string(text);
    if (n == 0) return std::string();
    const Scalar& last = s[n - 1];
    return std::string(text.substr(0, last.offset + last.len));
}

Vocab Vocab::byte_fallback() {
    Vocab v;
    v.mode_ = TokenizerMode::kByte;
    v.size_ = 256;
    return v;
}

Vocab Vocab::load_bpe(const std::string& vocab_json_path, const std::string& merges_path) {
    Vocab v;
    v.mode_ = TokenizerMode::kBpe;

    std::ifstream vf(vocab_json_path);
    if (!vf) throw std::runtime_error("cannot open vocab file: " + vocab_json_path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(vf);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error("vocab file is not valid JSON: " + vocab_json_path + ": " + e.what());
    }
    TokenId max_id = -1;
    for (const auto& [token, id_json] : j.items()) {
        const auto id = id_json.get<TokenId>();
        if (id < 0) throw std::runtime_error("negative token id in " + vocab_json_path);
        if (!v.token_to_id_.emplace(token, id).second) {
            throw std::runtime_error("duplicate token in vocab: " + token);
        }
        max_id = std::max(max_id, id);
    }
    if (max_id < 0) throw std::runtime_error("empty vocab: " + vocab_json_path);
    v.size_ = max_id + 1;
    v.id_to_token_.assign(static_cast<std::size_t>(v.size_), std::string());
    for (const auto& [token, id] : v.token_to_id_) v.id_to_token_[static_cast<std::size_t>(id)] = token;

    std::ifstream mf(merges_path);
    if (!mf) throw std::runtime_error("cannot open merges file: " + merges_path);
    std::string line;
    int rank = 0;
    int line_no = 0;
    while (std::getline(mf, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line_no == 1 && line.rfind("#version", 0) == 0) continue;
        const std::size_t space = line.find(' ');
        if (space == std::string::npos || space == 0 || space + 1 >= line.size() ||
            line.find(' ', space + 1) != std::string::npos) {
            throw std::runtime_error("malformed merges file " + merges_path + " at line " +
                                     std::to_string(line_no));
        }
        v.merge_rank_.emplace(line.substr(0, space) + '\x01' + line.substr(space + 1), rank++);
    }
    return v;
}

std::vector<TokenId> Vocab::bpe_chunk(std::string_view chunk_bytes) const {
    // bytes -> alphabet symbols
    std::vector<std::string> word;
    word.reserve(chunk_bytes.size());
    for (const char ch : chunk_bytes) {
        std::string sym;
        append_utf8(sym, byte_to_char()[static_cast<std::uint8_t>(ch)]);
        word.push_back(std::move(sym));
    }

    // repeatedly merge the lowest-ranked adjacent pair, left to right
    while (word.size() > 1) {
        int best_rank = std::numeric_limits<int>::max();
        std::size_t best_pos = 0;
        for (std::size_t k = 0; k + 1 < word.size(); ++k) {
            const auto it = merge_rank_.find(word[k] + '\x01' + word[k + 1]);
            if (it != merge_rank_.end() && it->second < best_rank) {
                best_rank = it->second;
                best_pos = k;
            }
        }
        if (best_rank == std::numeric_limits<int>::max()) break;

        const std::string left = word[best_pos];
        const std::string right = word[best_pos + 1];
        std::vector<std::string> merged;
        merged.reserve(word.size());
        for (std::size_t k = 0; k < word.size();) {
            if (k + 1 < word.size() && word[k] == left && word[k + 1] == right) {
                merged.push_back(left + right);
                k += 2;
            } else {
                merged.push_back(word[k]);
                ++k;
            }
        }
        word = std::move(merged);
    }

    std::vector<TokenId> ids;
    ids.reserve(word.size());
    for (const auto& sym : word) {
        const auto it = token_to_id_.find(sym);
        if (it == token_to_id_.end()) throw std::runtime_error("symbol not in vocabulary: " + sym);
        ids.push_back(it->second);
    }
    return ids;
}

TokenSequence Vocab::encode(std::string_view text) const {
    TokenSequence seq;
    if (mode_ == TokenizerMode::kByte) {
        seq.ids.reserve(text.size());
        for (const char ch : text) seq.ids.push_back(static_cast<TokenId>(static_cast<std::uint8_t>(ch)));
        return seq;
    }
    for (const std::string& chunk : pretokenize_gpt2(text)) {
        const auto ids = bpe_chunk(chunk);
        seq.ids.insert(seq.ids.end(), ids.begin(), ids.end());
    }
    return seq;
}

std::string Vocab::decode(std::span<const TokenId> tokens) const {
    std::string out;
    if (mode_ == TokenizerMode::kByte) {
        out.reserve(tokens.size());
        for (const TokenId t : tokens) {
            if (t < 0 || t > 255) throw std::out_of_range("token id " + std::to_string(t) + " out of range");
            out.push_back(static_cast<char>(static_cast<std::uint8_t>(t)));
        }
        return out;
    }
    for (const TokenId t : tokens) {
        if (t < 0 || t >= size_ || id_to_token_[static_cast<std::size_t>(t)].empty()) {
            throw std::out_of_range("token id " + std::to_string(t) + " out of range");
        }
        const std::string& sym = id_to_token_[static_cast<std::size_t>(t)];
        for (const Scalar& sc : decode_scalars(sym)) {
            const auto it = char_to_byte().find(sc.cp);
            if (it == char_to_byte().end()) {
                throw std::runtime_error("vocab token contains a character outside the byte alphabet");
            }
            out.push_back(static_cast<char>(it->second));
        }
    }
    return out;
}

}  // namespace loopscope

#include "lorakit/bpe.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_map>

#include "lorakit/errors.hpp"
#include "lorakit/serialize.hpp"

namespace lorakit {

namespace {

std::vector<int> bytes_to_ids(std::string_view text) {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (unsigned char b : text) ids.push_back(static_cast<int>(b));
    return ids;
}

// Replaces every left-to-right occurrence of (left, right) with merged_id.
void apply_merge(std::vector<int>& seq, int left, int right, int merged_id) {
    std::size_t write = 0;
    for (std::size_t read = 0; read < seq.size(); ++read) {
        if (read + 1 < seq.size() && seq[read] == left && seq[read + 1] == right) {
            seq[write++] = merged_id;
            ++read;
        } else {
            seq[write++] = seq[read];
        }
    }
    seq.resize(write);
}

std::string hex_escape(std::string_view bytes) {
    static const char* digits = "0123456789abcdef";
    std::string out;
    out.reserve(bytes.size() * 2);
    for (unsigned char b : bytes) {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 0xf]);
    }
    return out;
}

std::string hex_unescape(std::string_view hex, std::size_t line_no) {
    auto nibble = [&](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        return -1;
    };
    if (hex.size() % 2 != 0) {
        throw DataError("vocabulary file: odd-length hex token on line " + std::to_string(line_no));
    }
    std::string out;
    out.reserve(hex.size() / 2);
    for (std::size_t i = 0; i < hex.size(); i += 2) {
        int hi = nibble(hex[i]), lo = nibble(hex[i + 1]);
        if (hi < 0 || lo < 0) {
            throw DataError("vocabulary file: invalid hex on line " + std::to_string(line_no));
        }
        out.push_back(static_cast<char>((hi << 4) | lo));
    }
    return out;
}

// Returns the byte offset of the first invalid UTF-8 byte, or npos if valid.
std::size_t first_invalid_utf8(std::string_view s) {
    std::size_t i = 0;
    auto cont = [&](std::size_t j, unsigned char lo = 0x80, unsigned char hi = 0xbf) {
        if (j >= s.size()) return false;
        unsigned char b = static_cast<unsigned char>(s[j]);
        return b >= lo && b <= hi;
    };
    while (i < s.size()) {
        unsigned char b = static_cast<unsigned char>(s[i]);
        if (b < 0x80) {
            i += 1;
        } else if (b >= 0xc2 && b <= 0xdf) {
            if (!cont(i + 1)) return i;
            i += 2;
        } else if (b == 0xe0) {
            if (!cont(i + 1, 0xa0) || !cont(i + 2)) return i;
            i += 3;
        } else if (b >= 0xe1 && b <= 0xec) {
            if (!cont(i + 1) || !cont(i + 2)) return i;
            i += 3;
        } else if (b == 0xed) {
            if (!cont(i + 1, 0x80, 0x9f) || !cont(i + 2)) return i;
            i += 3;
        } else if (b >= 0xee && b <= 0xef) {
            if (!cont(i + 1) || !cont(i + 2)) return i;
            i += 3;
        } else if (b == 0xf0) {
            if (!cont(i + 1, 0x90) || !cont(i + 2) || !cont(i + 3)) return i;
            i += 4;
        } else if (b >= 0xf1 && b <= 0xf3) {
            if (!cont(i + 1) || !cont(i + 2) || !cont(i + 3)) return i;
            i += 4;
        } else if (b == 0xf4) {
            if (!cont(i + 1, 0x80, 0x8f) || !cont(i + 2) || !cont(i + 3)) return i;
            i += 4;
        } else {
            return i;
        }
    }
    return std::string_view::npos;
}

BpeVocab base_vocab() {
    BpeVocab vocab;
    vocab.id_to_bytes.reserve(256);
    for (int b = 0; b < 256; ++b) vocab.id_to_bytes.push_back(std::string(1, static_cast<char>(b)));
    return vocab;
}

}  // namespace

BpeVocab train_bpe(const std::vector<std::string>& corpus, std::size_t vocab_size,
                   std::uint64_t /*seed: training is fully deterministic*/) {
    if (corpus.empty()) throw DataError("train_bpe: empty corpus");
    if (vocab_size < 257) {
        throw ConfigError("train_bpe: vocab_size must be at least 257 (256 bytes + pad), got " +
                          std::to_string(vocab_size));
    }
    BpeVocab vocab = base_vocab();
    const std::size_t target_merges = vocab_size - 257;

    std::vector<std::vector<int>> sequences;
    sequences.reserve(corpus.size());
    for (const std::string& text : corpus) sequences.push_back(bytes_to_ids(text));

    for (std::size_t m = 0; m < target_merges; ++m) {
        std::unordered_map<std::uint64_t, std::size_t> counts;
        for (const auto& seq : sequences) {
            for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
                std::uint64_t key = (static_cast<std::uint64_t>(seq[i]) << 32) |
                                    static_cast<std::uint64_t>(seq[i + 1]);
                ++counts[key];
            }
        }
        bool found = false;
        std::size_t best_count = 0;
        int best_left = 0, best_right = 0;
        for (const auto& [key, count] : counts) {
            if (count < 2) continue;
            int left = static_cast<int>(key >> 32);
            int right = static_cast<int>(key & 0xffffffff);
            if (!found || count > best_count) {
                found = true;
                best_count = count;
                best_left = left;
                best_right = right;
                continue;
            }
            if (count == best_count) {
                auto candidate = std::tie(vocab.id_to_bytes[left], vocab.id_to_bytes[right]);
                auto incumbent =
                    std::tie(vocab.id_to_bytes[best_left], vocab.id_to_bytes[best_right]);
                if (candidate < incumbent) {
                    best_left = left;
                    best_right = right;
                }
            }
        }
        if (!found) break;  // no pair occurs twice

        int merged_id = static_cast<int>(vocab.id_to_bytes.size());
        vocab.merges.emplace_back(best_left, best_right);
        vocab.id_to_bytes.push_back(vocab.id_to_bytes[best_left] + vocab.id_to_bytes[best_right]);
        for (auto& seq : sequences) apply_merge(seq, best_left, best_right, merged_id);
    }
    return vocab;
}

std::vector<int> encode(const BpeVocab& vocab, std::string_view text) {
    std::vector<int> ids = bytes_to_ids(text);
    for (std::size_t m = 0; m < vocab.merges.size(); ++m) {
        if (ids.size() < 2) break;
        apply_merge(ids, vocab.merges[m].first, vocab.merges[m].second, static_cast<int>(256 + m));
    }
    return ids;
}

std::string decode(const BpeVocab& vocab, std::span<const int> ids) {
    std::string out;
    for (int id : ids) {
        if (id == vocab.pad_id()) continue;  // padding carries no bytes
        if (id < 0 || static_cast<std::size_t>(id) >= vocab.id_to_bytes.size()) {
            throw DataError("decode: unknown token id " + std::to_string(id));
        }
        out += vocab.id_to_bytes[static_cast<std::size_t>(id)];
    }
    std::size_t bad = first_invalid_utf8(out);
    if (bad != std::string_view::npos) {
        throw DataError("decode: invalid UTF-8 at byte offset " + std::to_string(bad));
    }
    return out;
}

void save_vocab(const std::filesystem::path& path, const BpeVocab& vocab) {
    std::ostringstream out;
    out << "lorakit-bpe v1 merges=" << vocab.merges.size() << " vocab=" << vocab.size() << "\n";
    for (const auto& [left, right] : vocab.merges) {
        out << left << ' ' << right << ' ' << hex_escape(vocab.id_to_bytes[left]) << ' '
            << hex_escape(vocab.id_to_bytes[right]) << "\n";
    }
    write_text_file(path, out.str());
}

BpeVocab load_vocab(const std::filesystem::path& path) {
    std::istringstream in(read_text_file(path));
    std::string header;
    if (!std::getline(in, header)) throw DataError(path.string() + ": empty vocabulary file");

    std::size_t n_merges = 0, declared_vocab = 0;
    {
        std::istringstream fields(header);
        std::string tag, version, merges_field, vocab_field;
        fields >> tag >> version >> merges_field >> vocab_field;
        if (tag != "lorakit-bpe" || version != "v1" ||
            merges_field.rfind("merges=", 0) != 0 || vocab_field.rfind("vocab=", 0) != 0) {
            throw DataError(path.string() + ": unrecognized vocabulary header: " + header);
        }
        try {
            n_merges = std::stoull(merges_field.substr(7));
            declared_vocab = std::stoull(vocab_field.substr(6));
        } catch (const std::exception&) {
            throw DataError(path.string() + ": malformed counts in header: " + header);
        }
    }

    BpeVocab vocab = base_vocab();
    std::string line;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream fields(line);
        long left = -1, right = -1;
        std::string left_hex, right_hex;
        if (!(fields >> left >> right >> left_hex >> right_hex)) {
            throw DataError(path.string() + ": malformed merge on line " + std::to_string(line_no));
        }
        auto in_range = [&](long id) {
            return id >= 0 && static_cast<std::size_t>(id) < vocab.id_to_bytes.size();
        };
        if (!in_range(left) || !in_range(right)) {
            throw DataError(path.string() + ": merge references unknown token id on line " +
                            std::to_string(line_no));
        }
        if (hex_unescape(left_hex, line_no) != vocab.id_to_bytes[left] ||
            hex_unescape(right_hex, line_no) != vocab.id_to_bytes[right]) {
            throw DataError(path.string() + ": hex bytes disagree with token ids on line " +
                            std::to_string(line_no));
        }
        vocab.merges.emplace_back(static_cast<int>(left), static_cast<int>(right));
        vocab.id_to_bytes.push_back(vocab.id_to_bytes[left] + vocab.id_to_bytes[right]);
    }
    if (vocab.merges.size() != n_merges || vocab.size() != declared_vocab) {
        throw DataError(path.string() + ": merge count does not match header");
    }
    return vocab;
}

}  // namespace lorakit

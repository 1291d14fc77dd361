#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace lorakit {

// Byte-level byte-pair-encoding vocabulary. Ids 0..255 are the raw bytes,
// ids 256..256+n_merges-1 the learned merges in order, and the final id is a
// padding token that carries no byte content.
struct BpeVocab {
    std::vector<std::pair<int, int>> merges;   // learned order, ids of the merged pair
    std::vector<std::string> id_to_bytes;      // byte content per id (pad excluded)

    std::size_t size() const { return id_to_bytes.size() + 1; }
    int pad_id() const { return static_cast<int>(id_to_bytes.size()); }
};

// Greedy BPE training: repeatedly merge the most frequent adjacent pair,
// breaking frequency ties by lexicographically smallest (left bytes, right
// bytes), until the vocabulary (bytes + merges + pad) reaches vocab_size or no
// pair occurs twice. The algorithm is deterministic; `seed` is accepted for
// interface stability and does not influence the result.
BpeVocab train_bpe(const std::vector<std::string>& corpus, std::size_t vocab_size,
                   std::uint64_t seed);

std::vector<int> encode(const BpeVocab& vocab, std::string_view text);
std::string decode(const BpeVocab& vocab, std::span<const int> ids);

// Line-oriented vocabulary file: header with version and counts, then one
// hex-escaped merge pair per line in learned order.
void save_vocab(const std::filesystem::path& path, const BpeVocab& vocab);
BpeVocab load_vocab(const std::filesystem::path& path);

}  // namespace lorakit

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace lorakit {

struct Message {
    std::string author_id;
    long line_no = 0;
    std::string time;
    std::string text;
};

struct Conversation {
    std::string id;
    std::vector<Message> messages;
};

struct LabeledExample {
    std::string text;
    int label = 0;  // 1 = positive class (predatory / abusive)
    std::string source_id;
};

struct RemovedStats {
    std::size_t author_rule = 0;   // not exactly two distinct authors
    std::size_t length_rule = 0;   // fewer than 7 messages (among two-author conversations)

    std::size_t total() const { return author_rule + length_rule; }
};

struct DatasetStats {
    std::size_t total = 0;
    std::size_t positives = 0;
    std::size_t negatives = 0;
    std::size_t min_len = 0;  // text length in Unicode code points
    std::size_t max_len = 0;
    std::optional<double> imbalance_pct;  // 100 * positives / negatives; absent when negatives == 0
};

// Chat-log XML: conversations of messages, each message carrying author, time,
// and text elements. Malformed XML raises ParseError; schema violations raise
// DataError naming the conversation.
std::vector<Conversation> parse_pan12_xml(const std::filesystem::path& path);

// Keeps conversations with exactly two distinct authors and at least 7
// messages. Rule 1 (author count) is tested first; removals are tallied by the
// rule that rejected them.
std::pair<std::vector<Conversation>, RemovedStats> filter_conversations(
    const std::vector<Conversation>& conversations);

// One author id per line; blank lines ignored.
std::set<std::string> load_predator_ids(const std::filesystem::path& path);

// Label 1 iff any message author is in predator_ids. Text renders messages in
// order as "author: text" lines joined with newlines.
std::vector<LabeledExample> label_conversations(const std::vector<Conversation>& conversations,
                                                const std::set<std::string>& predator_ids);

// Delimited UTF-8 file with a header row (RFC-4180-style quoting). Label cell
// equal to positive_token maps to 1. When negative_token is provided, any
// other cell value is a data error; otherwise every non-positive cell maps to 0.
std::vector<LabeledExample> load_tabular(const std::filesystem::path& path,
                                         const std::string& text_column,
                                         const std::string& label_column,
                                         const std::string& positive_token,
                                         const std::optional<std::string>& negative_token = {},
                                         char delimiter = ',');

// Uniform shuffle under seed, then prefix split; train size = round(fraction*n).
std::pair<std::vector<LabeledExample>, std::vector<LabeledExample>> split_dataset(
    const std::vector<LabeledExample>& examples, double train_fraction, std::uint64_t seed);

DatasetStats dataset_stats(const std::vector<LabeledExample>& examples);

// Processed datasets persist as "label<TAB>text" lines with backslash escapes
// for backslash, tab, newline, and carriage return.
void save_dataset(const std::filesystem::path& path, const std::vector<LabeledExample>& examples);
std::vector<LabeledExample> load_dataset(const std::filesystem::path& path);

}  // namespace lorakit

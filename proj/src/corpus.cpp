#include "lorakit/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "lorakit/errors.hpp"
#include "lorakit/rng.hpp"
#include "lorakit/serialize.hpp"
#include "lorakit/xml.hpp"

namespace lorakit {

namespace {

std::size_t count_code_points(std::string_view text) {
    std::size_t count = 0;
    for (unsigned char b : text) {
        if ((b & 0xc0) != 0x80) ++count;  // count non-continuation bytes
    }
    return count;
}

}  // namespace

std::vector<Conversation> parse_pan12_xml(const std::filesystem::path& path) {
    XmlNode root = parse_xml(read_text_file(path));
    if (root.name != "conversations") {
        throw DataError(path.string() + ": expected <conversations> root, found <" + root.name +
                        ">");
    }
    std::vector<Conversation> conversations;
    conversations.reserve(root.children.size());
    for (const XmlNode& conv_node : root.children) {
        if (conv_node.name != "conversation") {
            throw DataError(path.string() + ": unexpected <" + conv_node.name +
                            "> under <conversations>");
        }
        Conversation conversation;
        if (const std::string* id = conv_node.attribute("id")) {
            conversation.id = *id;
        } else {
            throw DataError(path.string() + ": conversation without an id attribute");
        }
        for (const XmlNode& msg_node : conv_node.children) {
            if (msg_node.name != "message") {
                throw DataError("conversation " + conversation.id + ": unexpected <" +
                                msg_node.name + "> element");
            }
            Message message;
            const XmlNode* author = msg_node.child("author");
            if (author == nullptr || author->text.empty()) {
                throw DataError("conversation " + conversation.id +
                                ": message without an author");
            }
            message.author_id = author->text;
            if (const XmlNode* time = msg_node.child("time")) message.time = time->text;
            if (const XmlNode* text = msg_node.child("text")) message.text = text->text;
            if (const std::string* line = msg_node.attribute("line")) {
                try {
                    message.line_no = std::stol(*line);
                } catch (const std::exception&) {
                    throw DataError("conversation " + conversation.id +
                                    ": non-numeric message line attribute '" + *line + "'");
                }
            }
            conversation.messages.push_back(std::move(message));
        }
        conversations.push_back(std::move(conversation));
    }
    return conversations;
}

std::pair<std::vector<Conversation>, RemovedStats> filter_conversations(
    const std::vector<Conversation>& conversations) {
    std::vector<Conversation> kept;
    RemovedStats removed;
    for (const Conversation& conversation : conversations) {
        std::set<std::string> authors;
        for (const Message& message : conversation.messages) authors.insert(message.author_id);
        if (authors.size() != 2) {
            ++removed.author_rule;
            continue;
        }
        if (conversation.messages.size() < 7) {
            ++removed.length_rule;
            continue;
        }
        kept.push_back(conversation);
    }
    return {std::move(kept), removed};
}

std::set<std::string> load_predator_ids(const std::filesystem::path& path) {
    std::istringstream in(read_text_file(path));
    std::set<std::string> ids;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) ids.insert(line);
    }
    return ids;
}

std::vector<LabeledExample> label_conversations(const std::vector<Conversation>& conversations,
                                                const std::set<std::string>& predator_ids) {
    std::vector<LabeledExample> examples;
    examples.reserve(conversations.size());
    for (const Conversation& conversation : conversations) {
        LabeledExample example;
        example.source_id = conversation.id;
        std::string text;
        bool predatory = false;
        for (const Message& message : conversation.messages) {
            if (!text.empty()) text.push_back('\n');
            text += message.author_id;
            text += ": ";
            text += message.text;
            if (predator_ids.count(message.author_id)) predatory = true;
        }
        example.text = std::move(text);
        example.label = predatory ? 1 : 0;
        examples.push_back(std::move(example));
    }
    return examples;
}

namespace {

// RFC-4180-style reader: quoted fields may contain the delimiter, doubled
// quotes, and line breaks. Returns one row of cells; consumes the trailing
// newline. `row_no` counts physical lines for error messages.
std::optional<std::vector<std::string>> read_row(std::string_view content, std::size_t& pos,
                                                 std::size_t& row_no, char delimiter) {
    if (pos >= content.size()) return std::nullopt;
    ++row_no;
    std::vector<std::string> cells(1);
    bool quoted = false;
    while (pos < content.size()) {
        char c = content[pos];
        if (quoted) {
            if (c == '"') {
                if (pos + 1 < content.size() && content[pos + 1] == '"') {
                    cells.back().push_back('"');
                    pos += 2;
                } else {
                    quoted = false;
                    ++pos;
                }
            } else {
                cells.back().push_back(c);
                ++pos;
            }
            continue;
        }
        if (c == '"' && cells.back().empty()) {
            quoted = true;
            ++pos;
        } else if (c == delimiter) {
            cells.emplace_back();
            ++pos;
        } else if (c == '\n' || c == '\r') {
            if (c == '\r' && pos + 1 < content.size() && content[pos + 1] == '\n') ++pos;
            ++pos;
            return cells;
        } else {
            cells.back().push_back(c);
            ++pos;
        }
    }
    if (quoted) {
        throw DataError("unterminated quoted field starting near row " + std::to_string(row_no));
    }
    return cells;
}

}  // namespace

std::vector<LabeledExample> load_tabular(const std::filesystem::path& path,
                                         const std::string& text_column,
                                         const std::string& label_column,
                                         const std::string& positive_token,
                                         const std::optional<std::string>& negative_token,
                                         char delimiter) {
    std::string content = read_text_file(path);
    // Drop a UTF-8 byte-order mark if present.
    if (content.rfind("\xef\xbb\xbf", 0) == 0) content.erase(0, 3);

    std::size_t pos = 0, row_no = 0;
    auto header = read_row(content, pos, row_no, delimiter);
    if (!header) throw DataError(path.string() + ": empty file");

    auto find_column = [&](const std::string& name) -> std::size_t {
        auto it = std::find(header->begin(), header->end(), name);
        if (it == header->end()) {
            throw DataError(path.string() + ": missing column '" + name + "' in header");
        }
        return static_cast<std::size_t>(it - header->begin());
    };
    const std::size_t text_idx = find_column(text_column);
    const std::size_t label_idx = find_column(label_column);

    std::vector<LabeledExample> examples;
    while (auto row = read_row(content, pos, row_no, delimiter)) {
        if (row->size() == 1 && (*row)[0].empty()) continue;  // blank line
        if (row->size() != header->size()) {
            throw DataError(path.string() + ": row " + std::to_string(row_no) + " has " +
                            std::to_string(row->size()) + " cells, header has " +
                            std::to_string(header->size()));
        }
        LabeledExample example;
        example.text = (*row)[text_idx];
        const std::string& token = (*row)[label_idx];
        if (token == positive_token) {
            example.label = 1;
        } else if (!negative_token || token == *negative_token) {
            example.label = 0;
        } else {
            throw DataError(path.string() + ": row " + std::to_string(row_no) +
                            " has unknown label token '" + token + "'");
        }
        example.source_id = path.filename().string() + ":" + std::to_string(row_no);
        examples.push_back(std::move(example));
    }
    return examples;
}

std::pair<std::vector<LabeledExample>, std::vector<LabeledExample>> split_dataset(
    const std::vector<LabeledExample>& examples, double train_fraction, std::uint64_t seed) {
    if (examples.empty()) throw DataError("split_dataset: empty input");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw ConfigError("split_dataset: train_fraction must lie in (0, 1), got " +
                          std::to_string(train_fraction));
    }
    std::vector<std::size_t> order(examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);

    const auto train_count = static_cast<std::size_t>(
        std::llround(train_fraction * static_cast<double>(examples.size())));
    std::vector<LabeledExample> train, test;
    train.reserve(train_count);
    test.reserve(examples.size() - train_count);
    for (std::size_t i = 0; i < order.size(); ++i) {
        (i < train_count ? train : test).push_back(examples[order[i]]);
    }
    return {std::move(train), std::move(test)};
}

DatasetStats dataset_stats(const std::vector<LabeledExample>& examples) {
    DatasetStats stats;
    stats.total = examples.size();
    bool first = true;
    for (const LabeledExample& example : examples) {
        if (example.label == 1) {
            ++stats.positives;
        } else {
            ++stats.negatives;
        }
        std::size_t len = count_code_points(example.text);
        if (first) {
            stats.min_len = stats.max_len = len;
            first = false;
        } else {
            stats.min_len = std::min(stats.min_len, len);
            stats.max_len = std::max(stats.max_len, len);
        }
    }
    if (stats.negatives > 0) {
        stats.imbalance_pct =
            100.0 * static_cast<double>(stats.positives) / static_cast<double>(stats.negatives);
    }
    return stats;
}

namespace {

std::string escape_text(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    for (char c : text) {
        switch (c) {
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\t': out += "\\t"; break;
            case '\r': out += "\\r"; break;
            default: out.push_back(c);
        }
    }
    return out;
}

std::string unescape_text(std::string_view text, std::size_t line_no) {
    std::string out;
    out.reserve(text.size());
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (text[i] != '\\') {
            out.push_back(text[i]);
            continue;
        }
        if (i + 1 >= text.size()) {
            throw DataError("dataset file: dangling escape on line " + std::to_string(line_no));
        }
        switch (text[++i]) {
            case '\\': out.push_back('\\'); break;
            case 'n': out.push_back('\n'); break;
            case 't': out.push_back('\t'); break;
            case 'r': out.push_back('\r'); break;
            default:
                throw DataError("dataset file: unknown escape '\\" + std::string(1, text[i]) +
                                "' on line " + std::to_string(line_no));
        }
    }
    return out;
}

}  // namespace

void save_dataset(const std::filesystem::path& path, const std::vector<LabeledExample>& examples) {
    std::string out;
    for (const LabeledExample& example : examples) {
        out += std::to_string(example.label);
        out.push_back('\t');
        out += escape_text(example.text);
        out.push_back('\n');
    }
    write_text_file(path, out);
}

std::vector<LabeledExample> load_dataset(const std::filesystem::path& path) {
    std::istringstream in(read_text_file(path));
    std::vector<LabeledExample> examples;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::size_t tab = line.find('\t');
        if (tab == std::string::npos || (line[0] != '0' && line[0] != '1') || tab != 1) {
            throw DataError(path.string() + ": malformed record on line " +
                            std::to_string(line_no));
        }
        LabeledExample example;
        example.label = line[0] - '0';
        example.text = unescape_text(std::string_view(line).substr(tab + 1), line_no);
        example.source_id = path.filename().string() + ":" + std::to_string(line_no);
        examples.push_back(std::move(example));
    }
    return examples;
}

}  // namespace lorakit

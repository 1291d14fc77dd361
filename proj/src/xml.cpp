#include "lorakit/xml.hpp"

#include <cctype>

#include "lorakit/errors.hpp"

namespace lorakit {

const std::string* XmlNode::attribute(std::string_view attr_name) const {
    for (const auto& [name_, value] : attributes) {
        if (name_ == attr_name) return &value;
    }
    return nullptr;
}

const XmlNode* XmlNode::child(std::string_view child_name) const {
    for (const XmlNode& node : children) {
        if (node.name == child_name) return &node;
    }
    return nullptr;
}

namespace {

bool is_name_start(char c) {
    return std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == ':';
}

bool is_name_char(char c) {
    return is_name_start(c) || std::isdigit(static_cast<unsigned char>(c)) || c == '-' || c == '.';
}

class Parser {
public:
    explicit Parser(std::string_view content) : content_(content) {}

    XmlNode parse_document() {
        skip_prolog_and_misc();
        if (at_end() || peek() != '<') fail("expected root element");
        XmlNode root = parse_element();
        skip_misc();
        if (!at_end()) fail("trailing content after root element");
        return root;
    }

private:
    std::string_view content_;
    std::size_t pos_ = 0;
    std::size_t line_ = 1;
    std::size_t column_ = 1;

    [[noreturn]] void fail(const std::string& message) const {
        throw ParseError(message, line_, column_);
    }

    bool at_end() const { return pos_ >= content_.size(); }
    char peek() const { return content_[pos_]; }

    bool starts_with(std::string_view prefix) const {
        return content_.substr(pos_, prefix.size()) == prefix;
    }

    char advance() {
        char c = content_[pos_++];
        if (c == '\n') {
            ++line_;
            column_ = 1;
        } else {
            ++column_;
        }
        return c;
    }

    void advance_by(std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) {
            if (at_end()) fail("unexpected end of input");
            advance();
        }
    }

    void skip_whitespace() {
        while (!at_end() && std::isspace(static_cast<unsigned char>(peek()))) advance();
    }

    void expect(char c) {
        if (at_end() || peek() != c) fail(std::string("expected '") + c + "'");
        advance();
    }

    void skip_until(std::string_view terminator, const char* what) {
        while (!at_end()) {
            if (starts_with(terminator)) {
                advance_by(terminator.size());
                return;
            }
            advance();
        }
        fail(std::string("unterminated ") + what);
    }

    void skip_prolog_and_misc() {
        skip_whitespace();
        if (starts_with("<?xml")) {
            skip_until("?>", "XML declaration");
        }
        skip_misc();
    }

    // Skips whitespace, comments, and processing instructions between nodes.
    void skip_misc() {
        while (true) {
            skip_whitespace();
            if (starts_with("<!--")) {
                skip_until("-->", "comment");
            } else if (starts_with("<?")) {
                skip_until("?>", "processing instruction");
            } else {
                return;
            }
        }
    }

    std::string parse_name() {
        if (at_end() || !is_name_start(peek())) fail("expected a name");
        std::string name;
        while (!at_end() && is_name_char(peek())) name.push_back(advance());
        return name;
    }

    std::string decode_entity() {
        // Caller consumed nothing; we are positioned at '&'.
        std::size_t at_line = line_, at_col = column_;
        advance();  // '&'
        std::string entity;
        while (!at_end() && peek() != ';') {
            entity.push_back(advance());
            if (entity.size() > 10) break;
        }
        if (at_end() || peek() != ';') {
            throw ParseError("unterminated entity reference", at_line, at_col);
        }
        advance();  // ';'
        if (entity == "amp") return "&";
        if (entity == "lt") return "<";
        if (entity == "gt") return ">";
        if (entity == "quot") return "\"";
        if (entity == "apos") return "'";
        if (entity.size() > 1 && entity[0] == '#') {
            bool hex = entity.size() > 2 && (entity[1] == 'x' || entity[1] == 'X');
            unsigned long code = 0;
            try {
                code = std::stoul(entity.substr(hex ? 2 : 1), nullptr, hex ? 16 : 10);
            } catch (const std::exception&) {
                throw ParseError("malformed numeric character reference &" + entity + ";", at_line,
                                 at_col);
            }
            return encode_utf8(code, at_line, at_col);
        }
        throw ParseError("unknown entity &" + entity + ";", at_line, at_col);
    }

    static std::string encode_utf8(unsigned long code, std::size_t at_line, std::size_t at_col) {
        std::string out;
        if (code <= 0x7f) {
            out.push_back(static_cast<char>(code));
        } else if (code <= 0x7ff) {
            out.push_back(static_cast<char>(0xc0 | (code >> 6)));
            out.push_back(static_cast<char>(0x80 | (code & 0x3f)));
        } else if (code <= 0xffff) {
            if (code >= 0xd800 && code <= 0xdfff) {
                throw ParseError("character reference to a surrogate code point", at_line, at_col);
            }
            out.push_back(static_cast<char>(0xe0 | (code >> 12)));
            out.push_back(static_cast<char>(0x80 | ((code >> 6) & 0x3f)));
            out.push_back(static_cast<char>(0x80 | (code & 0x3f)));
        } else if (code <= 0x10ffff) {
            out.push_back(static_cast<char>(0xf0 | (code >> 18)));
            out.push_back(static_cast<char>(0x80 | ((code >> 12) & 0x3f)));
            out.push_back(static_cast<char>(0x80 | ((code >> 6) & 0x3f)));
            out.push_back(static_cast<char>(0x80 | (code & 0x3f)));
        } else {
            throw ParseError("character reference outside Unicode range", at_line, at_col);
        }
        return out;
    }

    std::string parse_attribute_value() {
        if (at_end() || (peek() != '"' && peek() != '\'')) fail("expected quoted attribute value");
        char quote = advance();
        std::string value;
        while (!at_end() && peek() != quote) {
            if (peek() == '&') {
                value += decode_entity();
            } else if (peek() == '<') {
                fail("'<' is not allowed inside an attribute value");
            } else {
                value.push_back(advance());
            }
        }
        if (at_end()) fail("unterminated attribute value");
        advance();  // closing quote
        return value;
    }

    XmlNode parse_element() {
        expect('<');
        XmlNode node;
        node.name = parse_name();
        while (true) {
            skip_whitespace();
            if (at_end()) fail("unterminated start tag <" + node.name + ">");
            if (peek() == '/') {
                advance();
                expect('>');
                return node;  // self-closing
            }
            if (peek() == '>') {
                advance();
                break;
            }
            std::string attr_name = parse_name();
            skip_whitespace();
            expect('=');
            skip_whitespace();
            node.attributes.emplace_back(std::move(attr_name), parse_attribute_value());
        }
        parse_content(node);
        return node;
    }

    void parse_content(XmlNode& node) {
        while (true) {
            if (at_end()) fail("missing closing tag </" + node.name + ">");
            if (peek() == '<') {
                if (starts_with("</")) {
                    advance_by(2);
                    std::string closing = parse_name();
                    if (closing != node.name) {
                        fail("mismatched closing tag </" + closing + "> for <" + node.name + ">");
                    }
                    skip_whitespace();
                    expect('>');
                    return;
                }
                if (starts_with("<!--")) {
                    skip_until("-->", "comment");
                    continue;
                }
                if (starts_with("<![CDATA[")) {
                    advance_by(9);
                    std::size_t start_line = line_, start_col = column_;
                    std::string chunk;
                    while (!at_end() && !starts_with("]]>")) chunk.push_back(advance());
                    if (at_end()) throw ParseError("unterminated CDATA section", start_line, start_col);
                    advance_by(3);
                    node.text += chunk;
                    continue;
                }
                if (starts_with("<?")) {
                    skip_until("?>", "processing instruction");
                    continue;
                }
                node.children.push_back(parse_element());
            } else if (peek() == '&') {
                node.text += decode_entity();
            } else {
                node.text.push_back(advance());
            }
        }
    }
};

}  // namespace

XmlNode parse_xml(std::string_view content) {
    Parser parser(content);
    return parser.parse_document();
}

}  // namespace lorakit

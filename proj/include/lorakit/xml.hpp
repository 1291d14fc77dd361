#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace lorakit {

// Minimal XML document tree: enough for record-style corpora (elements,
// attributes, character data, comments, CDATA, entity references). No
// namespaces, DTDs, or processing beyond skipping the prolog.
struct XmlNode {
    std::string name;
    std::vector<std::pair<std::string, std::string>> attributes;
    std::vector<XmlNode> children;
    std::string text;  // concatenated character data directly inside this element

    // First attribute value by name, or nullptr.
    const std::string* attribute(std::string_view attr_name) const;
    // First child element by name, or nullptr.
    const XmlNode* child(std::string_view child_name) const;
};

// Parses a complete document and returns the root element. Malformed input
// raises ParseError with 1-based line and column.
XmlNode parse_xml(std::string_view content);

}  // namespace lorakit

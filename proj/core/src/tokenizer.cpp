#include "apprag/tokenizer.hpp"

#include <cctype>

namespace apprag {

std::vector<std::string> Tokenizer::tokens(std::string_view text) const {
    std::vector<std::string> out;
    for (const auto& span : spans(text)) {
        out.emplace_back(text.substr(span.begin, span.end - span.begin));
    }
    return out;
}

std::vector<TokenSpan> WhitespaceTokenizer::spans(std::string_view text) const {
    std::vector<TokenSpan> out;
    std::size_t i = 0;
    const std::size_t n = text.size();
    while (i < n) {
        while (i < n && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        if (i >= n) break;
        std::size_t begin = i;
        while (i < n && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        out.push_back({begin, i});
    }
    return out;
}

const Tokenizer& default_tokenizer() {
    static const WhitespaceTokenizer tokenizer;
    return tokenizer;
}

}  // namespace apprag

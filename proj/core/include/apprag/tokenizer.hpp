#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace apprag {

/// Half-open byte range [begin, end) of one token inside a text.
struct TokenSpan {
    std::size_t begin = 0;
    std::size_t end = 0;
};

/// Pluggable token counter. The built-in implementation treats tokens as
/// whitespace-delimited words; a model tokenizer can be swapped in behind
/// this interface without touching the chunker or the index.
class Tokenizer {
public:
    virtual ~Tokenizer() = default;

    virtual std::vector<TokenSpan> spans(std::string_view text) const = 0;

    /// Budget cost of a single token. Word tokenizers return 1; a subword
    /// tokenizer may charge more, which is what makes a lone token able to
    /// exceed the chunk budget.
    virtual int weight(std::string_view token) const { return 1; }

    virtual std::string name() const = 0;

    std::size_t count(std::string_view text) const { return spans(text).size(); }
    std::vector<std::string> tokens(std::string_view text) const;
};

/// Tokens are maximal runs of non-whitespace bytes.
class WhitespaceTokenizer final : public Tokenizer {
public:
    std::vector<TokenSpan> spans(std::string_view text) const override;
    std::string name() const override { return "whitespace"; }
};

const Tokenizer& default_tokenizer();

}  // namespace apprag

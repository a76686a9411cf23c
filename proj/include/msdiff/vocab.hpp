#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace msd {

using TokenId = std::size_t;

/// Closed word list of the toy world. Ids are dense 0..V-1 in list order.
class Vocab {
public:
    static constexpr const char* pad_token = "<pad>";
    static constexpr const char* null_token = "<null>";

    Vocab();  // the default toy vocabulary
    explicit Vocab(std::vector<std::string> tokens);

    std::size_t size() const { return tokens_.size(); }
    TokenId id(const std::string& token) const;  // throws VocabError
    bool contains(const std::string& token) const { return index_.count(token) != 0; }
    const std::string& token(TokenId id) const;
    TokenId pad() const { return pad_; }
    TokenId null() const { return null_; }
    const std::vector<std::string>& tokens() const { return tokens_; }

    // Lower-cases, drops commas and periods, splits on whitespace.
    std::vector<TokenId> encode(const std::string& text) const;
    std::string decode(const std::vector<TokenId>& ids) const;

private:
    std::vector<std::string> tokens_;
    std::map<std::string, TokenId> index_;
    TokenId pad_ = 0;
    TokenId null_ = 0;
};

// Words of the synthetic world, shared by data generation and evaluation.
const std::vector<std::string>& shape_words();
const std::vector<std::string>& color_words();
const std::vector<std::string>& background_words();

}  // namespace msd

#include "msdiff/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include "msdiff/error.hpp"

namespace msd {

const std::vector<std::string>& shape_words() {
    static const std::vector<std::string> w{"circle", "square", "triangle", "star"};
    return w;
}

const std::vector<std::string>& color_words() {
    static const std::vector<std::string> w{"red", "green", "blue", "yellow", "purple"};
    return w;
}

const std::vector<std::string>& background_words() {
    static const std::vector<std::string> w{"gray", "black", "white"};
    return w;
}

static std::vector<std::string> default_tokens() {
    std::vector<std::string> t{Vocab::pad_token, Vocab::null_token, "a", "and", "on", "in", "with",
                               "wearing", "the", "background", "woman"};
    for (const auto& w : color_words()) t.push_back(w);
    for (const auto& w : background_words()) t.push_back(w);
    for (const auto& w : shape_words()) t.push_back(w);
    return t;
}

Vocab::Vocab() : Vocab(default_tokens()) {}

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    for (TokenId i = 0; i < tokens_.size(); ++i) {
        if (!index_.emplace(tokens_[i], i).second) throw ParseError("duplicate vocabulary entry '" + tokens_[i] + "'");
    }
    if (!index_.count(pad_token) || !index_.count(null_token)) {
        throw ParseError("vocabulary must contain <pad> and <null>");
    }
    pad_ = index_.at(pad_token);
    null_ = index_.at(null_token);
}

TokenId Vocab::id(const std::string& token) const {
    auto it = index_.find(token);
    if (it == index_.end()) throw VocabError("unknown token '" + token + "'");
    return it->second;
}

const std::string& Vocab::token(TokenId id) const {
    if (id >= tokens_.size()) {
        throw VocabError("token id " + std::to_string(id) + " out of range for vocabulary of " +
                         std::to_string(tokens_.size()));
    }
    return tokens_[id];
}

std::vector<TokenId> Vocab::encode(const std::string& text) const {
    std::string clean;
    clean.reserve(text.size());
    for (char ch : text) {
        if (ch == ',' || ch == '.') {
            clean.push_back(' ');
        } else {
            clean.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        }
    }
    std::istringstream is(clean);
    std::vector<TokenId> ids;
    std::string word;
    while (is >> word) ids.push_back(id(word));
    return ids;
}

std::string Vocab::decode(const std::vector<TokenId>& ids) const {
    std::string out;
    for (TokenId i : ids) {
        if (i == pad_) continue;
        if (!out.empty()) out += ' ';
        out += token(i);
    }
    return out;
}

}  // namespace msd

#include "askdesk/text.hpp"

namespace askdesk::text {
namespace {

bool is_token_byte(unsigned char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c >= 0x80;
}

char lower(char c) {
    return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

const std::unordered_set<std::string>& stopwords() {
    static const std::unordered_set<std::string> words = {
        "a",    "an",   "and",   "are",  "as",   "at",   "be",    "by",    "can",  "do",
        "does", "for",  "from",  "get",  "has",  "have", "how",   "i",     "if",   "in",
        "is",   "it",   "its",   "me",   "my",   "of",   "on",    "or",    "our",  "should",
        "so",   "that", "the",   "their", "then", "there", "this", "to",   "was",  "we",
        "what", "when", "where", "which", "who", "why",  "will",  "with",  "you",  "your",
    };
    return words;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view input) {
    std::vector<std::string> tokens;
    std::string current;
    for (char c : input) {
        if (is_token_byte(static_cast<unsigned char>(c))) {
            current.push_back(lower(c));
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

std::unordered_set<std::string> token_set(std::string_view input) {
    auto tokens = tokenize(input);
    return {std::make_move_iterator(tokens.begin()), std::make_move_iterator(tokens.end())};
}

std::string to_lower(std::string_view input) {
    std::string out(input);
    for (auto& c : out) c = lower(c);
    return out;
}

bool is_space(char c) noexcept {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

std::vector<std::string_view> split_words(std::string_view input) {
    std::vector<std::string_view> words;
    std::size_t i = 0;
    while (i < input.size()) {
        while (i < input.size() && is_space(input[i])) ++i;
        std::size_t start = i;
        while (i < input.size() && !is_space(input[i])) ++i;
        if (i > start) words.push_back(input.substr(start, i - start));
    }
    return words;
}

std::string_view trim(std::string_view s) noexcept {
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

bool is_stopword(std::string_view token) {
    return stopwords().count(std::string(token)) > 0;
}

std::vector<std::string> content_tokens(std::string_view input) {
    std::vector<std::string> out;
    std::unordered_set<std::string> seen;
    for (auto& t : tokenize(input)) {
        if (is_stopword(t)) continue;
        if (seen.insert(t).second) out.push_back(std::move(t));
    }
    return out;
}

}  // namespace askdesk::text

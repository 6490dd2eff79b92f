#pragma once

#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace askdesk::text {

// Lowercases ASCII and splits on every byte that is not an ASCII letter or
// digit. Bytes >= 0x80 are kept inside tokens so UTF-8 words stay whole.
std::vector<std::string> tokenize(std::string_view input);

std::unordered_set<std::string> token_set(std::string_view input);

std::string to_lower(std::string_view input);

// Whitespace-separated words, no normalization.
std::vector<std::string_view> split_words(std::string_view input);

bool is_space(char c) noexcept;

std::string_view trim(std::string_view s) noexcept;

// Small English function-word list used by the mock reader and judge.
bool is_stopword(std::string_view token);

// tokenize() minus stopwords, deduplicated in first-occurrence order.
std::vector<std::string> content_tokens(std::string_view input);

}  // namespace askdesk::text

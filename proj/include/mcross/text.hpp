#pragma once

#include <cctype>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

namespace mcross {

inline bool is_word_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '\'';
}

inline std::string lower_copy(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

// Splits on whitespace and punctuation, keeping apostrophes inside words so
// contractions survive as single tokens. Case is preserved; lowercasing
// happens at vocabulary lookup time.
inline std::vector<std::string> split_tokens(std::string_view text) {
    std::vector<std::string> out;
    size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && !is_word_char(text[i])) ++i;
        size_t j = i;
        while (j < text.size() && is_word_char(text[j])) ++j;
        if (j > i) {
            std::string_view tok = text.substr(i, j - i);
            // strip leading/trailing apostrophes left by quoting
            while (!tok.empty() && tok.front() == '\'') tok.remove_prefix(1);
            while (!tok.empty() && tok.back() == '\'') tok.remove_suffix(1);
            if (!tok.empty()) out.emplace_back(tok);
        }
        i = j;
    }
    return out;
}

inline std::vector<std::string> split_tokens_lower(std::string_view text) {
    auto toks = split_tokens(text);
    for (auto& t : toks) t = lower_copy(t);
    return toks;
}

// Sentence boundaries as (char_start, char_end) offsets: terminator runs of
// .!? followed by whitespace or end of text close a sentence.
inline std::vector<std::pair<int, int>> split_sentences(std::string_view text) {
    std::vector<std::pair<int, int>> out;
    size_t start = 0;
    size_t i = 0;
    auto flush = [&](size_t end) {
        while (start < end && std::isspace(static_cast<unsigned char>(text[start]))) ++start;
        size_t e = end;
        while (e > start && std::isspace(static_cast<unsigned char>(text[e - 1]))) --e;
        if (e > start) out.emplace_back(static_cast<int>(start), static_cast<int>(e));
        start = end;
    };
    while (i < text.size()) {
        char c = text[i];
        if (c == '.' || c == '!' || c == '?') {
            size_t j = i;
            while (j < text.size() && (text[j] == '.' || text[j] == '!' || text[j] == '?')) ++j;
            if (j >= text.size() || std::isspace(static_cast<unsigned char>(text[j]))) {
                flush(j);
                i = j;
                continue;
            }
            i = j;
            continue;
        }
        ++i;
    }
    flush(text.size());
    return out;
}

inline const std::unordered_set<std::string>& stopwords() {
    static const std::unordered_set<std::string> words = {
        "a", "an", "the", "and", "or", "but", "if", "then", "than", "of", "to", "in",
        "on", "at", "by", "for", "with", "from", "into", "onto", "as", "is", "are",
        "was", "were", "be", "been", "being", "it", "its", "this", "that", "these",
        "those", "he", "she", "they", "them", "his", "her", "their", "we", "us",
        "our", "you", "your", "i", "me", "my", "not", "no", "so", "do", "does",
        "did", "have", "has", "had", "will", "would", "can", "could", "may",
        "might", "shall", "should", "there", "here", "what", "which", "who",
        "whom", "when", "where", "why", "how", "all", "each", "both", "any",
        "some", "such", "only", "own", "same", "too", "very", "s", "t", "just",
        "also", "about", "over", "under", "again", "once", "during", "before",
        "after", "between", "up", "down", "out", "off",
    };
    return words;
}

inline bool is_stopword(std::string_view tok) {
    return stopwords().count(lower_copy(tok)) > 0;
}

inline bool is_capitalized(std::string_view tok) {
    return !tok.empty() && std::isupper(static_cast<unsigned char>(tok[0])) != 0;
}

inline std::string join_tokens(const std::vector<std::string>& toks, size_t from, size_t to_excl) {
    std::string out;
    for (size_t i = from; i < to_excl && i < toks.size(); ++i) {
        if (!out.empty()) out += ' ';
        out += toks[i];
    }
    return out;
}

inline std::string join_tokens(const std::vector<std::string>& toks) {
    return join_tokens(toks, 0, toks.size());
}

} // namespace mcross

#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "mcross/samples.hpp"
#include "mcross/text.hpp"

namespace mcross {

constexpr int kPadId = 0;
constexpr int kUnkId = 1;
constexpr int kClsId = 2;
constexpr int kSepId = 3;
constexpr int kBlankId = 4;
constexpr int kNumSpecials = 5;

// Dense token ids; specials pinned at 0..4, unknown lookups map to [UNK].
class Vocab {
public:
    Vocab() {
        for (const char* s : {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[BLANK]"}) add(s);
    }

    int add(const std::string& tok) {
        auto it = map_.find(tok);
        if (it != map_.end()) return it->second;
        int id = static_cast<int>(tokens_.size());
        map_.emplace(tok, id);
        tokens_.push_back(tok);
        return id;
    }

    int id(const std::string& tok) const {
        auto it = map_.find(tok);
        return it == map_.end() ? kUnkId : it->second;
    }

    const std::string& token(int id) const { return tokens_.at(static_cast<size_t>(id)); }
    int size() const { return static_cast<int>(tokens_.size()); }
    const std::vector<std::string>& tokens() const { return tokens_; }

    // Token-list encoding: specials match exactly, everything else lowercased.
    std::vector<int> encode(const std::vector<std::string>& toks) const {
        std::vector<int> out;
        out.reserve(toks.size());
        for (const auto& t : toks) {
            if (t == kBlankToken) {
                out.push_back(kBlankId);
            } else {
                out.push_back(id(lower_copy(t)));
            }
        }
        return out;
    }

    static Vocab from_tokens(const std::vector<std::string>& tokens_in_id_order) {
        Vocab v;
        for (size_t i = static_cast<size_t>(kNumSpecials); i < tokens_in_id_order.size(); ++i)
            v.add(tokens_in_id_order[i]);
        return v;
    }

private:
    std::unordered_map<std::string, int> map_;
    std::vector<std::string> tokens_;
};

// Raw-text path: lowercase + whitespace/punctuation split, then lookup.
inline std::vector<int> tokenize(const std::string& text, const Vocab& vocab) {
    std::vector<int> out;
    for (const auto& t : split_tokens_lower(text)) out.push_back(vocab.id(t));
    return out;
}

// Builds a vocabulary from sample pairs: all query/passage tokens, lowercased,
// sorted by (count desc, token asc) under the cap. Deterministic.
inline Vocab build_vocab(const std::vector<SamplePair>& pairs, int cap = 0) {
    std::map<std::string, long> counts;
    auto feed = [&](const std::vector<std::string>& toks) {
        for (const auto& t : toks) {
            if (t == kBlankToken) continue;
            counts[lower_copy(t)] += 1;
        }
    };
    for (const auto& p : pairs) {
        feed(p.cloze.query_tokens);
        feed(p.cloze.passage_tokens);
        if (p.natural) feed(p.natural->query_tokens);
    }
    std::vector<std::pair<std::string, long>> ranked(counts.begin(), counts.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    Vocab v;
    for (const auto& [tok, _] : ranked) {
        if (cap > 0 && v.size() >= cap) break;
        v.add(tok);
    }
    return v;
}

} // namespace mcross

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "mcross/corpus.hpp"
#include "mcross/text.hpp"

namespace mcross {

struct ParagraphRef {
    std::string doc_id;
    int index = 0;

    bool operator==(const ParagraphRef& o) const {
        return doc_id == o.doc_id && index == o.index;
    }
    bool operator<(const ParagraphRef& o) const {
        if (doc_id != o.doc_id) return doc_id < o.doc_id;
        return index < o.index;
    }
};

// Inverted statistics over paragraphs; the scoring unit is one paragraph.
// Terms are lowercased surface tokens.
struct RetrievalIndex {
    struct Unit {
        ParagraphRef ref;
        std::vector<std::string> tokens_lower;
        std::unordered_map<std::string, int> tf;
        int length = 0;
    };

    std::vector<Unit> units;                       // sorted by (doc_id, index)
    std::unordered_map<std::string, int> df;       // paragraphs containing term
    double avg_len = 0.0;
    double k1 = 1.2;
    double b = 0.75;

    double idf(const std::string& term) const {
        auto it = df.find(term);
        double n = static_cast<double>(it == df.end() ? 0 : it->second);
        double total = static_cast<double>(units.size());
        return std::log(1.0 + (total - n + 0.5) / (n + 0.5));
    }

    // Okapi BM25 with Lucene-style idf smoothing; each unique query term
    // counts once (query term frequency ignored).
    double score(const Unit& u, const std::vector<std::string>& query_terms_lower) const {
        std::vector<std::string> uniq = query_terms_lower;
        std::sort(uniq.begin(), uniq.end());
        uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
        double s = 0.0;
        for (const auto& t : uniq) {
            auto it = u.tf.find(t);
            if (it == u.tf.end()) continue;
            double tf = static_cast<double>(it->second);
            double norm = 1.0 - b + b * static_cast<double>(u.length) / avg_len;
            s += idf(t) * tf * (k1 + 1.0) / (tf + k1 * norm);
        }
        return s;
    }
};

inline RetrievalIndex build_index(const std::vector<Document>& corpus, double k1 = 1.2,
                                  double b = 0.75) {
    if (corpus.empty()) throw Error("build_index: empty corpus");
    RetrievalIndex idx;
    idx.k1 = k1;
    idx.b = b;
    long total_len = 0;
    for (const auto& d : corpus) {
        for (const auto& p : d.paragraphs) {
            RetrievalIndex::Unit u;
            u.ref = {d.id, p.index};
            for (const auto& tok : p.tokens()) u.tokens_lower.push_back(lower_copy(tok));
            u.length = static_cast<int>(u.tokens_lower.size());
            for (const auto& t : u.tokens_lower) u.tf[t] += 1;
            total_len += u.length;
            idx.units.push_back(std::move(u));
        }
    }
    std::sort(idx.units.begin(), idx.units.end(),
              [](const auto& a, const auto& b2) { return a.ref < b2.ref; });
    for (const auto& u : idx.units)
        for (const auto& [t, _] : u.tf) idx.df[t] += 1;
    idx.avg_len = idx.units.empty() ? 0.0
                                    : static_cast<double>(total_len) /
                                          static_cast<double>(idx.units.size());
    return idx;
}

inline bool contains_subsequence(const std::vector<std::string>& haystack,
                                 const std::vector<std::string>& needle) {
    if (needle.empty() || needle.size() > haystack.size()) return false;
    for (size_t i = 0; i + needle.size() <= haystack.size(); ++i) {
        bool ok = true;
        for (size_t j = 0; j < needle.size(); ++j) {
            if (haystack[i + j] != needle[j]) {
                ok = false;
                break;
            }
        }
        if (ok) return true;
    }
    return false;
}

// Highest-scoring paragraph that contains the answer as a contiguous token
// run and is not the excluded paragraph. Ties break on (doc_id, index)
// ascending. nullopt when no paragraph supports the answer.
inline std::optional<ParagraphRef> retrieve_passage(const RetrievalIndex& idx,
                                                    const std::vector<std::string>& query_tokens,
                                                    const std::vector<std::string>& answer_tokens,
                                                    const ParagraphRef& exclude) {
    std::vector<std::string> q;
    for (const auto& t : query_tokens)
        if (t != "[BLANK]") q.push_back(lower_copy(t));
    std::vector<std::string> ans;
    for (const auto& t : answer_tokens) ans.push_back(lower_copy(t));

    const RetrievalIndex::Unit* best = nullptr;
    double best_score = 0.0;
    for (const auto& u : idx.units) {
        if (u.ref == exclude) continue;
        if (!contains_subsequence(u.tokens_lower, ans)) continue;
        double s = idx.score(u, q);
        if (!best || s > best_score || (s == best_score && u.ref < best->ref)) {
            best = &u;
            best_score = s;
        }
    }
    if (!best) return std::nullopt;
    return best->ref;
}

} // namespace mcross

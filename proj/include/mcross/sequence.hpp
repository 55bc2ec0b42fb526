#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mcross/common.hpp"
#include "mcross/vocab.hpp"

namespace mcross {

enum class Mark : uint8_t { Special, Query, Passage, Pad };

// Layout: [CLS] q [SEP] p [SEP] [PAD]*; fixed length max_seq.
struct TokenSequence {
    std::vector<int> ids;
    std::vector<Mark> marks;
    int n_real = 0;          // tokens before padding
    int passage_offset = 0;  // index of first passage token
    int passage_len = 0;

    int max_seq() const { return static_cast<int>(ids.size()); }

    // BERT-style two-segment split: [CLS] q [SEP] -> 0, rest -> 1.
    int segment(int pos) const { return pos < passage_offset ? 0 : 1; }
};

inline TokenSequence build_sequence(const std::vector<int>& query_ids,
                                    const std::vector<int>& passage_ids, int max_seq) {
    int q = static_cast<int>(query_ids.size());
    int budget = max_seq - q - 3;
    if (budget < 1) throw Error("build_sequence: query leaves no passage budget");
    int plen = std::min<int>(static_cast<int>(passage_ids.size()), budget);

    TokenSequence s;
    s.ids.assign(static_cast<size_t>(max_seq), kPadId);
    s.marks.assign(static_cast<size_t>(max_seq), Mark::Pad);
    int pos = 0;
    s.ids[static_cast<size_t>(pos)] = kClsId;
    s.marks[static_cast<size_t>(pos)] = Mark::Special;
    ++pos;
    for (int i = 0; i < q; ++i, ++pos) {
        s.ids[static_cast<size_t>(pos)] = query_ids[static_cast<size_t>(i)];
        s.marks[static_cast<size_t>(pos)] = Mark::Query;
    }
    s.ids[static_cast<size_t>(pos)] = kSepId;
    s.marks[static_cast<size_t>(pos)] = Mark::Special;
    ++pos;
    s.passage_offset = pos;
    for (int i = 0; i < plen; ++i, ++pos) {
        s.ids[static_cast<size_t>(pos)] = passage_ids[static_cast<size_t>(i)];
        s.marks[static_cast<size_t>(pos)] = Mark::Passage;
    }
    s.ids[static_cast<size_t>(pos)] = kSepId;
    s.marks[static_cast<size_t>(pos)] = Mark::Special;
    ++pos;
    s.n_real = pos;
    s.passage_len = plen;
    return s;
}

} // namespace mcross

#pragma once

#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mcross/jsonl.hpp"
#include "mcross/text.hpp"

namespace mcross {

struct Paragraph {
    std::string doc_id;
    int index = 0;
    std::string text;
    std::vector<std::pair<int, int>> sentences; // (char_start, char_end)

    std::vector<std::string> tokens() const { return split_tokens(text); }

    std::string sentence_text(size_t s) const {
        auto [a, b] = sentences.at(s);
        return text.substr(static_cast<size_t>(a), static_cast<size_t>(b - a));
    }
};

struct Document {
    std::string id;
    std::string title;
    std::vector<Paragraph> paragraphs;
};

inline void validate_paragraph(const Paragraph& p) {
    int prev_end = 0;
    for (auto [a, b] : p.sentences) {
        if (a < prev_end || b <= a || b > static_cast<int>(p.text.size()))
            throw Error("paragraph " + p.doc_id + ":" + std::to_string(p.index) +
                        ": bad sentence offsets");
        prev_end = b;
    }
}

inline Document make_document(const std::string& id, const std::string& title,
                              const std::vector<std::string>& paragraph_texts) {
    Document d;
    d.id = id;
    d.title = title;
    int idx = 0;
    for (const auto& text : paragraph_texts) {
        Paragraph p;
        p.doc_id = id;
        p.index = idx++;
        p.text = text;
        p.sentences = split_sentences(text);
        validate_paragraph(p);
        d.paragraphs.push_back(std::move(p));
    }
    if (d.paragraphs.empty()) throw Error("document " + id + " has no paragraphs");
    return d;
}

// Corpus input: JSONL, one document per line:
//   {"id": ..., "title": ..., "paragraphs": ["text", ...]}
inline std::vector<Document> load_corpus(const std::string& path) {
    std::vector<Document> docs;
    std::unordered_set<std::string> seen;
    for_each_jsonl(path, [&](size_t lineno, const json& j) {
        std::string id = j.at("id").get<std::string>();
        if (!seen.insert(id).second)
            throw Error(path + ":" + std::to_string(lineno) + ": duplicate document id " + id);
        std::string title = j.value("title", std::string());
        std::vector<std::string> paras = j.at("paragraphs").get<std::vector<std::string>>();
        docs.push_back(make_document(id, title, paras));
    });
    if (docs.empty()) throw Error(path + ": empty corpus");
    return docs;
}

inline void save_corpus(const std::vector<Document>& docs, const std::string& path) {
    JsonlWriter out(path);
    for (const auto& d : docs) {
        std::vector<std::string> paras;
        for (const auto& p : d.paragraphs) paras.push_back(p.text);
        out.write(json{{"id", d.id}, {"title", d.title}, {"paragraphs", paras}});
    }
}

} // namespace mcross

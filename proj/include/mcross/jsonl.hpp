#pragma once

#include <fstream>
#include <functional>
#include <string>

#include <json.hpp>

#include "mcross/common.hpp"

namespace mcross {

using json = nlohmann::json;

// Calls fn(line_number, parsed) for every non-empty line of a JSONL file.
inline void for_each_jsonl(const std::string& path,
                           const std::function<void(size_t, const json&)>& fn) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) throw Error(path + ":" + std::to_string(lineno) + ": bad JSON");
        fn(lineno, j);
    }
}

class JsonlWriter {
public:
    explicit JsonlWriter(const std::string& path) : out_(path, std::ios::binary) {
        if (!out_) throw Error("cannot open " + path + " for writing");
    }
    void write(const json& j) {
        out_ << j.dump() << '\n';
    }
    void flush() { out_.flush(); }

private:
    std::ofstream out_;
};

inline uint64_t digest_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path);
    uint64_t h = 0xcbf29ce484222325ull;
    char buf[1 << 14];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
        h = fnv1a64(std::string_view(buf, static_cast<size_t>(in.gcount())), h);
        if (!in) break;
    }
    return h;
}

} // namespace mcross

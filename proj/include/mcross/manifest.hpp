#pragma once

#include <cstdio>
#include <ctime>
#include <fstream>
#include <map>
#include <string>

#include "mcross/jsonl.hpp"

namespace mcross {

inline std::string now_iso8601() {
    std::time_t t = std::time(nullptr);
    char buf[32];
    std::tm tm_utc;
    gmtime_r(&t, &tm_utc);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

// Best-effort git revision of the working tree; "unknown" outside a checkout.
inline std::string source_revision() {
    FILE* p = popen("git rev-parse HEAD 2>/dev/null", "r");
    if (!p) return "unknown";
    char buf[64] = {0};
    size_t n = fread(buf, 1, sizeof(buf) - 1, p);
    int rc = pclose(p);
    if (rc != 0 || n == 0) return "unknown";
    std::string rev(buf, n);
    while (!rev.empty() && (rev.back() == '\n' || rev.back() == '\r')) rev.pop_back();
    return rev.empty() ? "unknown" : rev;
}

// Everything needed to re-execute a run bit-identically on one platform:
// config snapshot, code revision, master seed, input digests, timestamps.
struct RunManifest {
    json config;
    std::string revision;
    uint64_t seed = 0;
    std::map<std::string, std::string> data_digests;
    std::string started_at;
    std::string finished_at;

    json to_json() const {
        json j;
        j["config"] = config;
        j["source_revision"] = revision;
        j["seed"] = seed;
        j["data_digests"] = data_digests;
        j["started_at"] = started_at;
        j["finished_at"] = finished_at.empty() ? json(nullptr) : json(finished_at);
        return j;
    }

    void write(const std::string& path) const {
        std::ofstream f(path, std::ios::trunc);
        if (!f) throw Error("cannot write manifest " + path);
        f << to_json().dump(2) << "\n";
    }
};

} // namespace mcross

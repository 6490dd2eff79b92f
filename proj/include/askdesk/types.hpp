#pragma once

#include <compare>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace askdesk {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Identifies one chunk: the document it came from and its position inside it.
struct ChunkRef {
    std::string origin_id;
    std::uint32_t local_id = 0;

    auto operator<=>(const ChunkRef&) const = default;
    bool operator==(const ChunkRef&) const = default;
};

std::string to_string(const ChunkRef& ref);

struct ChunkRefHash {
    std::size_t operator()(const ChunkRef& ref) const noexcept;
};

/// One ranked result. Ranks are 1-based.
struct SearchHit {
    ChunkRef ref;
    double score = 0.0;
    int rank = 0;
};

struct ScoredRef {
    ChunkRef ref;
    double score = 0.0;
};

// Sorts by descending score, ties by ascending ChunkRef, keeps the first k
// (all when k exceeds the input) and assigns ranks 1..n.
std::vector<SearchHit> rank_top_k(std::vector<ScoredRef> scored, std::size_t k);

}  // namespace askdesk

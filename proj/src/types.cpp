#include "askdesk/types.hpp"

#include <algorithm>
#include <functional>

namespace askdesk {

std::string to_string(const ChunkRef& ref) {
    return ref.origin_id + "#" + std::to_string(ref.local_id);
}

std::size_t ChunkRefHash::operator()(const ChunkRef& ref) const noexcept {
    std::size_t h = std::hash<std::string>{}(ref.origin_id);
    return h ^ (std::hash<std::uint32_t>{}(ref.local_id) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2));
}

std::vector<SearchHit> rank_top_k(std::vector<ScoredRef> scored, std::size_t k) {
    auto better = [](const ScoredRef& a, const ScoredRef& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.ref < b.ref;
    };
    const std::size_t n = std::min(k, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n), scored.end(),
                      better);
    std::vector<SearchHit> hits;
    hits.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        hits.push_back(SearchHit{std::move(scored[i].ref), scored[i].score, static_cast<int>(i + 1)});
    }
    return hits;
}

}  // namespace askdesk

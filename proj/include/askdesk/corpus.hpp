#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "askdesk/types.hpp"

namespace askdesk::corpus {

using RoleSet = std::set<std::string>;

struct RawDocument {
    std::string origin_id;
    std::string title;
    std::string body;
    std::string source_uri;
    RoleSet allowed_roles;
    std::map<std::string, std::string> metadata;
};

enum class SplitBy { word };

/// Preprocessing and windowing parameters. Defaults are setting A.
struct ChunkingConfig {
    bool clean_empty_lines = true;
    bool clean_whitespace = true;
    bool clean_header_footer = true;
    SplitBy split_by = SplitBy::word;
    std::size_t split_length = 300;
    std::size_t split_overlap = 50;
    bool split_respect_sentence_boundary = true;
    std::size_t max_chars_check = 1000;

    static ChunkingConfig setting_a();
    // Shorter windows: 100 words, 25 overlap.
    static ChunkingConfig setting_b();
    // Setting A with a 3000 character cap.
    static ChunkingConfig setting_c();

    // Throws askdesk::Error when an invariant does not hold.
    void validate() const;
};

struct Chunk {
    std::string origin_id;
    std::uint32_t local_id = 0;
    std::string title;
    std::string text;
    std::size_t char_count = 0;
    RoleSet allowed_roles;
    std::string source_uri;

    ChunkRef ref() const { return ChunkRef{origin_id, local_id}; }
};

// Character counts are UTF-8 code units (bytes).
std::string clean_text(std::string_view body, const ChunkingConfig& config);

// Expects a cleaned body. An empty body yields no chunks.
std::vector<Chunk> split_into_chunks(const RawDocument& doc, const ChunkingConfig& config);

std::vector<std::string> enforce_max_chars(std::string_view chunk_text, std::size_t max_chars);

std::vector<Chunk> filter_by_role(const std::vector<Chunk>& chunks, std::string_view role);

// Cleans every document and splits it.
std::vector<Chunk> chunk_documents(const std::vector<RawDocument>& docs, const ChunkingConfig& config);

std::vector<RawDocument> load_corpus(const std::filesystem::path& path);
std::vector<RawDocument> parse_corpus(std::istream& in);
void write_corpus(std::ostream& out, const std::vector<RawDocument>& docs);

nlohmann::json chunk_to_json(const Chunk& chunk);
Chunk chunk_from_json(const nlohmann::json& j);
void write_chunks(std::ostream& out, const std::vector<Chunk>& chunks);
std::vector<Chunk> read_chunks(std::istream& in);

}  // namespace askdesk::corpus

#include "askdesk/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>
#include <unordered_map>
#include <unordered_set>

#include "askdesk/jsonl.hpp"
#include "askdesk/text.hpp"

namespace askdesk::corpus {
namespace {

constexpr std::size_t kHeaderFooterMinPages = 3;

std::vector<std::string> split_on(std::string_view s, char sep) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (true) {
        auto pos = s.find(sep, start);
        if (pos == std::string_view::npos) {
            parts.emplace_back(s.substr(start));
            break;
        }
        parts.emplace_back(s.substr(start, pos - start));
        start = pos + 1;
    }
    return parts;
}

std::string join(const std::vector<std::string>& parts, char sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i > 0) out.push_back(sep);
        out += parts[i];
    }
    return out;
}

bool is_blank(std::string_view line) {
    return text::trim(line).empty();
}

std::string squeeze_line(std::string_view line) {
    std::string out;
    bool pending_space = false;
    for (char c : line) {
        if (c == ' ' || c == '\t' || c == '\r' || c == '\v') {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out.push_back(' ');
        pending_space = false;
        out.push_back(c);
    }
    return out;
}

// Index of the first / last non-blank line, or npos.
std::size_t first_content_line(const std::vector<std::string>& lines) {
    for (std::size_t i = 0; i < lines.size(); ++i)
        if (!is_blank(lines[i])) return i;
    return std::string::npos;
}

std::size_t last_content_line(const std::vector<std::string>& lines) {
    for (std::size_t i = lines.size(); i-- > 0;)
        if (!is_blank(lines[i])) return i;
    return std::string::npos;
}

void strip_headers_and_footers(std::vector<std::vector<std::string>>& pages) {
    if (pages.size() < kHeaderFooterMinPages) return;
    std::unordered_map<std::string, std::size_t> header_counts;
    std::unordered_map<std::string, std::size_t> footer_counts;
    for (const auto& lines : pages) {
        if (auto i = first_content_line(lines); i != std::string::npos) ++header_counts[lines[i]];
        if (auto i = last_content_line(lines); i != std::string::npos) ++footer_counts[lines[i]];
    }
    for (auto& lines : pages) {
        auto first = first_content_line(lines);
        auto last = last_content_line(lines);
        if (first == std::string::npos) continue;
        bool drop_last = footer_counts[lines[last]] >= kHeaderFooterMinPages;
        bool drop_first = header_counts[lines[first]] >= kHeaderFooterMinPages;
        // Erase back to front so indices stay valid.
        if (drop_last) lines.erase(lines.begin() + static_cast<std::ptrdiff_t>(last));
        if (drop_first && !(drop_last && first == last))
            lines.erase(lines.begin() + static_cast<std::ptrdiff_t>(first));
    }
}

std::vector<std::string> collapse_blank_runs(const std::vector<std::string>& lines) {
    std::vector<std::string> out;
    bool previous_blank = false;
    for (const auto& line : lines) {
        bool blank = is_blank(line);
        if (blank && (previous_blank || out.empty())) continue;
        out.push_back(blank ? std::string() : line);
        previous_blank = blank;
    }
    while (!out.empty() && out.back().empty()) out.pop_back();
    return out;
}

bool ends_sentence(std::string_view word) {
    while (!word.empty() && (word.back() == '"' || word.back() == '\'' || word.back() == ')' ||
                             word.back() == ']' || word.back() == '}')) {
        word.remove_suffix(1);
    }
    return !word.empty() && (word.back() == '.' || word.back() == '!' || word.back() == '?');
}

std::string join_words(const std::vector<std::string_view>& words, std::size_t begin, std::size_t end) {
    std::string out;
    for (std::size_t i = begin; i < end; ++i) {
        if (i > begin) out.push_back(' ');
        out.append(words[i]);
    }
    return out;
}

// Keeps a hard split from landing inside a multi-byte UTF-8 sequence.
std::size_t utf8_boundary_at_or_before(std::string_view s, std::size_t pos) {
    std::size_t cut = pos;
    while (cut > 0 && cut < s.size() && (static_cast<unsigned char>(s[cut]) & 0xC0) == 0x80) --cut;
    return cut == 0 ? pos : cut;
}

RawDocument document_from_json(const jsonl::json& j) {
    RawDocument doc;
    doc.origin_id = j.at("origin_id").get<std::string>();
    if (doc.origin_id.empty()) throw Error("origin_id must be non-empty");
    doc.title = j.value("title", "");
    doc.body = j.at("body").get<std::string>();
    doc.source_uri = j.value("source_uri", "");
    if (j.contains("allowed_roles")) {
        for (const auto& role : j.at("allowed_roles")) doc.allowed_roles.insert(role.get<std::string>());
    }
    if (j.contains("metadata")) {
        for (const auto& [key, value] : j.at("metadata").items())
            doc.metadata[key] = value.is_string() ? value.get<std::string>() : value.dump();
    }
    return doc;
}

}  // namespace

ChunkingConfig ChunkingConfig::setting_a() {
    return ChunkingConfig{};
}

ChunkingConfig ChunkingConfig::setting_b() {
    ChunkingConfig config;
    config.split_length = 100;
    config.split_overlap = 25;
    return config;
}

ChunkingConfig ChunkingConfig::setting_c() {
    ChunkingConfig config;
    config.max_chars_check = 3000;
    return config;
}

void ChunkingConfig::validate() const {
    if (split_length == 0) throw Error("split_length must be positive");
    if (split_overlap >= split_length) throw Error("split_overlap must be smaller than split_length");
    if (max_chars_check == 0) throw Error("max_chars_check must be at least 1");
}

std::string clean_text(std::string_view body, const ChunkingConfig& config) {
    std::string normalized;
    normalized.reserve(body.size());
    for (std::size_t i = 0; i < body.size(); ++i) {
        if (body[i] == '\r' && i + 1 < body.size() && body[i + 1] == '\n') continue;
        normalized.push_back(body[i]);
    }

    std::vector<std::vector<std::string>> pages;
    for (auto& page : split_on(normalized, '\f')) pages.push_back(split_on(page, '\n'));

    if (config.clean_whitespace) {
        for (auto& lines : pages)
            for (auto& line : lines) line = squeeze_line(line);
    }
    if (config.clean_header_footer) strip_headers_and_footers(pages);
    if (config.clean_empty_lines) {
        for (auto& lines : pages) lines = collapse_blank_runs(lines);
    }

    std::vector<std::string> rendered;
    rendered.reserve(pages.size());
    for (const auto& lines : pages) rendered.push_back(join(lines, '\n'));
    return join(rendered, '\f');
}

std::vector<std::string> enforce_max_chars(std::string_view chunk_text, std::size_t max_chars) {
    if (max_chars == 0) throw Error("max_chars must be at least 1");
    if (chunk_text.size() <= max_chars) return {std::string(chunk_text)};

    std::vector<std::string> pieces;
    std::string_view rest = chunk_text;
    while (rest.size() > max_chars) {
        std::size_t cut = std::string_view::npos;
        for (std::size_t i = max_chars; i >= 1; --i) {
            if (text::is_space(rest[i])) {
                cut = i;
                break;
            }
        }
        std::string_view piece;
        if (cut != std::string_view::npos) piece = text::trim(rest.substr(0, cut));
        if (piece.empty()) {
            cut = utf8_boundary_at_or_before(rest, max_chars);
            piece = rest.substr(0, cut);
        }
        pieces.emplace_back(piece);
        rest.remove_prefix(cut);
        while (!rest.empty() && text::is_space(rest.front())) rest.remove_prefix(1);
    }
    if (!rest.empty()) pieces.emplace_back(rest);
    return pieces;
}

std::vector<Chunk> split_into_chunks(const RawDocument& doc, const ChunkingConfig& config) {
    config.validate();
    const auto words = text::split_words(doc.body);
    const std::size_t n = words.size();
    std::vector<Chunk> chunks;
    if (n == 0) return chunks;

    const std::size_t window = config.split_length;
    std::size_t start = 0;
    while (true) {
        std::size_t end = std::min(start + window, n);
        if (config.split_respect_sentence_boundary && end < n) {
            for (std::size_t e = end; 2 * (e - start) > window; --e) {
                if (ends_sentence(words[e - 1])) {
                    end = e;
                    break;
                }
            }
        }
        for (auto& piece : enforce_max_chars(join_words(words, start, end), config.max_chars_check)) {
            Chunk chunk;
            chunk.origin_id = doc.origin_id;
            chunk.local_id = static_cast<std::uint32_t>(chunks.size());
            chunk.title = doc.title;
            chunk.char_count = piece.size();
            chunk.text = std::move(piece);
            chunk.allowed_roles = doc.allowed_roles;
            chunk.source_uri = doc.source_uri;
            chunks.push_back(std::move(chunk));
        }
        if (end == n) break;
        start = std::max(end > config.split_overlap ? end - config.split_overlap : 0, start + 1);
    }
    return chunks;
}

std::vector<Chunk> filter_by_role(const std::vector<Chunk>& chunks, std::string_view role) {
    std::vector<Chunk> visible;
    for (const auto& chunk : chunks) {
        if (chunk.allowed_roles.count(std::string(role))) visible.push_back(chunk);
    }
    return visible;
}

std::vector<Chunk> chunk_documents(const std::vector<RawDocument>& docs, const ChunkingConfig& config) {
    std::vector<Chunk> chunks;
    for (const auto& doc : docs) {
        RawDocument cleaned = doc;
        cleaned.body = clean_text(doc.body, config);
        auto pieces = split_into_chunks(cleaned, config);
        std::move(pieces.begin(), pieces.end(), std::back_inserter(chunks));
    }
    return chunks;
}

std::vector<RawDocument> parse_corpus(std::istream& in) {
    std::vector<RawDocument> docs;
    std::unordered_set<std::string> seen;
    jsonl::for_each_record(in, [&](const jsonl::json& record, std::size_t) {
        auto doc = document_from_json(record);
        if (!seen.insert(doc.origin_id).second) throw Error("duplicate origin_id: " + doc.origin_id);
        docs.push_back(std::move(doc));
    });
    return docs;
}

std::vector<RawDocument> load_corpus(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open corpus " + path.string());
    return parse_corpus(in);
}

jsonl::json chunk_to_json(const Chunk& c) {
    return {{"origin_id", c.origin_id},   {"local_id", c.local_id},
            {"title", c.title},           {"text", c.text},
            {"char_count", c.char_count}, {"allowed_roles", c.allowed_roles},
            {"source_uri", c.source_uri}};
}

Chunk chunk_from_json(const jsonl::json& j) {
    Chunk c;
    c.origin_id = j.at("origin_id").get<std::string>();
    c.local_id = j.at("local_id").get<std::uint32_t>();
    c.title = j.value("title", "");
    c.text = j.at("text").get<std::string>();
    c.char_count = j.value("char_count", c.text.size());
    for (const auto& role : j.value("allowed_roles", jsonl::json::array())) c.allowed_roles.insert(role.get<std::string>());
    c.source_uri = j.value("source_uri", "");
    return c;
}

void write_chunks(std::ostream& out, const std::vector<Chunk>& chunks) {
    for (const auto& chunk : chunks) jsonl::write_record(out, chunk_to_json(chunk));
}

std::vector<Chunk> read_chunks(std::istream& in) {
    std::vector<Chunk> chunks;
    jsonl::for_each_record(in, [&](const jsonl::json& j, std::size_t) { chunks.push_back(chunk_from_json(j)); });
    return chunks;
}

void write_corpus(std::ostream& out, const std::vector<RawDocument>& docs) {
    for (const auto& doc : docs) {
        jsonl::write_record(out, {{"origin_id", doc.origin_id},
                                  {"title", doc.title},
                                  {"body", doc.body},
                                  {"source_uri", doc.source_uri},
                                  {"allowed_roles", doc.allowed_roles},
                                  {"metadata", doc.metadata}});
    }
}

}  // namespace askdesk::corpus

#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <mutex>
#include <string>

#include <nlohmann/json.hpp>

#include "askdesk/types.hpp"

namespace askdesk::jsonl {

using json = nlohmann::json;

/// Raised for a record that does not parse or validate. Carries the 1-based line.
class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& what);
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

// Calls fn(record, line_number) for every non-blank line. Malformed JSON and
// exceptions thrown by fn are rethrown as ParseError with the line number.
void for_each_record(std::istream& in, const std::function<void(const json&, std::size_t)>& fn);
void for_each_record(const std::filesystem::path& path,
                     const std::function<void(const json&, std::size_t)>& fn);

void write_record(std::ostream& out, const json& record);

json ref_to_json(const ChunkRef& ref);
ChunkRef ref_from_json(const json& j);

/// Append-only record log. Writes are serialized and flushed per line.
class AppendLog {
public:
    explicit AppendLog(std::filesystem::path path);

    void append(const json& record);
    const std::filesystem::path& path() const noexcept { return path_; }

private:
    std::filesystem::path path_;
    std::mutex mutex_;
};

}  // namespace askdesk::jsonl

#include "askdesk/jsonl.hpp"

#include <fstream>
#include <istream>
#include <ostream>

#include "askdesk/text.hpp"

namespace askdesk::jsonl {

ParseError::ParseError(std::size_t line, const std::string& what)
    : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

void for_each_record(std::istream& in, const std::function<void(const json&, std::size_t)>& fn) {
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (text::trim(line).empty()) continue;
        json record;
        try {
            record = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError(number, std::string("malformed record: ") + e.what());
        }
        try {
            fn(record, number);
        } catch (const ParseError&) {
            throw;
        } catch (const std::exception& e) {
            throw ParseError(number, e.what());
        }
    }
}

void for_each_record(const std::filesystem::path& path,
                     const std::function<void(const json&, std::size_t)>& fn) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    for_each_record(in, fn);
}

void write_record(std::ostream& out, const json& record) {
    out << record.dump() << '\n';
}

json ref_to_json(const ChunkRef& ref) {
    return json{{"origin_id", ref.origin_id}, {"local_id", ref.local_id}};
}

ChunkRef ref_from_json(const json& j) {
    return ChunkRef{j.at("origin_id").get<std::string>(), j.at("local_id").get<std::uint32_t>()};
}

AppendLog::AppendLog(std::filesystem::path path) : path_(std::move(path)) {
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
}

void AppendLog::append(const json& record) {
    const std::string line = record.dump() + "\n";
    std::lock_guard lock(mutex_);
    std::ofstream out(path_, std::ios::app);
    if (!out) throw Error("cannot append to " + path_.string());
    out << line;
    out.flush();
}

}  // namespace askdesk::jsonl

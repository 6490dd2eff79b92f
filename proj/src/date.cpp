#include "askdesk/date.hpp"

#include <charconv>
#include <cstdio>

#include "askdesk/types.hpp"

namespace askdesk {
namespace {

int parse_field(std::string_view text, std::size_t pos, std::size_t len) {
    int value = 0;
    const char* first = text.data() + pos;
    const char* last = first + len;
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc{} || ptr != last) throw Error("invalid date: " + std::string(text));
    return value;
}

}  // namespace

Date::Date(int year, unsigned month, unsigned day)
    : ymd_{std::chrono::year{year}, std::chrono::month{month}, std::chrono::day{day}} {
    if (!ymd_.ok()) throw Error("invalid date: " + std::to_string(year) + "-" + std::to_string(month) + "-" +
                                std::to_string(day));
}

Date Date::parse(std::string_view text) {
    if (text.size() != 10 || text[4] != '-' || text[7] != '-') throw Error("invalid date: " + std::string(text));
    for (std::size_t i : {0u, 1u, 2u, 3u, 5u, 6u, 8u, 9u}) {
        if (text[i] < '0' || text[i] > '9') throw Error("invalid date: " + std::string(text));
    }
    return Date(parse_field(text, 0, 4), static_cast<unsigned>(parse_field(text, 5, 2)),
                static_cast<unsigned>(parse_field(text, 8, 2)));
}

Date Date::today_utc() {
    const auto days = std::chrono::floor<std::chrono::days>(std::chrono::system_clock::now());
    const std::chrono::year_month_day ymd{days};
    return Date(static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
}

Date Date::next() const {
    const std::chrono::year_month_day ymd{std::chrono::sys_days{ymd_} + std::chrono::days{1}};
    return Date(static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
}

std::string Date::to_string() const {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", year(), month(), day());
    return buf;
}

}  // namespace askdesk

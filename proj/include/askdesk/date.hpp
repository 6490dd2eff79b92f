#pragma once

#include <chrono>
#include <string>
#include <string_view>

namespace askdesk {

/// Calendar date, always valid once constructed.
class Date {
public:
    Date() = default;
    Date(int year, unsigned month, unsigned day);

    // Parses "YYYY-MM-DD". Throws askdesk::Error on bad syntax or an impossible date.
    static Date parse(std::string_view text);
    static Date today_utc();

    int year() const noexcept { return static_cast<int>(ymd_.year()); }
    unsigned month() const noexcept { return static_cast<unsigned>(ymd_.month()); }
    unsigned day() const noexcept { return static_cast<unsigned>(ymd_.day()); }

    Date next() const;
    std::string to_string() const;

    auto operator<=>(const Date&) const = default;
    bool operator==(const Date&) const = default;

private:
    std::chrono::year_month_day ymd_{std::chrono::year{1970}, std::chrono::month{1}, std::chrono::day{1}};
};

}  // namespace askdesk

#pragma once

#include <accessguard/error.hpp>

#include <chrono>
#include <cstdio>
#include <string>
#include <string_view>

namespace accessguard {

using Instant = std::chrono::sys_time<std::chrono::milliseconds>;
using Duration = std::chrono::milliseconds;

inline Instant now_utc()
{
    return std::chrono::floor<std::chrono::milliseconds>(std::chrono::system_clock::now());
}

inline Instant from_seconds(long long s)
{
    return Instant{std::chrono::seconds{s}};
}

// YYYY-MM-DDTHH:MM:SS[.mmm]Z; milliseconds only printed when non-zero.
inline std::string format_rfc3339(Instant t)
{
    using namespace std::chrono;
    auto day = floor<days>(t);
    year_month_day ymd{day};
    hh_mm_ss<milliseconds> tod{t - day};
    char buf[40];
    int n = std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02lld", static_cast<int>(ymd.year()),
                          static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                          static_cast<int>(tod.hours().count()), static_cast<int>(tod.minutes().count()),
                          static_cast<long long>(tod.seconds().count()));
    std::string out(buf, static_cast<std::size_t>(n));
    if (auto ms = tod.subseconds().count(); ms != 0) {
        std::snprintf(buf, sizeof buf, ".%03lld", static_cast<long long>(ms));
        out += buf;
    }
    out += 'Z';
    return out;
}

// Accepts the UTC form produced by format_rfc3339 (fraction optional,
// trailing 'Z' required).
inline Instant parse_rfc3339(std::string_view s)
{
    using namespace std::chrono;
    int y, mo, d, h, mi, sec;
    int consumed = 0;
    std::string str(s);
    if (std::sscanf(str.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d%n", &y, &mo, &d, &h, &mi, &sec, &consumed) != 6)
        throw InvalidArgument("bad timestamp '" + str + "'");
    long long ms = 0;
    std::size_t i = static_cast<std::size_t>(consumed);
    if (i < str.size() && str[i] == '.') {
        ++i;
        int digits = 0;
        while (i < str.size() && str[i] >= '0' && str[i] <= '9') {
            if (digits < 3) {
                ms = ms * 10 + (str[i] - '0');
                ++digits;
            }
            ++i;
        }
        while (digits++ < 3)
            ms *= 10;
    }
    if (i + 1 != str.size() || str[i] != 'Z')
        throw InvalidArgument("timestamp must be UTC with trailing Z: '" + str + "'");
    year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
    if (!ymd.ok() || h > 23 || mi > 59 || sec > 59)
        throw InvalidArgument("timestamp out of range '" + str + "'");
    return Instant{sys_days{ymd}.time_since_epoch() + hours{h} + minutes{mi} + seconds{sec} + milliseconds{ms}};
}

} // namespace accessguard

#include "ttcw/util.h"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "ttcw/errors.h"

namespace ttcw {

namespace chr = std::chrono;

Timestamp now_utc() {
    return chr::time_point_cast<chr::milliseconds>(chr::system_clock::now());
}

std::string format_timestamp(Timestamp t) {
    const auto day = chr::floor<chr::days>(t);
    const chr::year_month_day ymd{day};
    const chr::hh_mm_ss hms{t - day};
    return fmt::format("{:04d}-{:02d}-{:02d}T{:02d}:{:02d}:{:02d}.{:03d}Z", static_cast<int>(ymd.year()),
                       static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                       hms.hours().count(), hms.minutes().count(), hms.seconds().count(),
                       hms.subseconds().count());
}

Timestamp parse_timestamp(std::string_view s) {
    int y = 0;
    unsigned mo = 0, d = 0, h = 0, mi = 0, sec = 0, ms = 0;
    const std::string str(s);
    int consumed = 0;
    if (std::sscanf(str.c_str(), "%4d-%2u-%2uT%2u:%2u:%2u%n", &y, &mo, &d, &h, &mi, &sec, &consumed) != 6) {
        throw ValidationError("malformed timestamp: '" + str + "'");
    }
    std::string_view rest = s.substr(static_cast<std::size_t>(consumed));
    if (!rest.empty() && rest.front() == '.') {
        rest.remove_prefix(1);
        unsigned digits = 0;
        unsigned value = 0;
        while (!rest.empty() && std::isdigit(static_cast<unsigned char>(rest.front()))) {
            if (digits < 3) {
                value = value * 10 + static_cast<unsigned>(rest.front() - '0');
                ++digits;
            }
            rest.remove_prefix(1);
        }
        while (digits < 3) {
            value *= 10;
            ++digits;
        }
        ms = value;
    }
    if (rest != "Z" || h > 23 || mi > 59 || sec > 60) {
        throw ValidationError("malformed timestamp: '" + str + "'");
    }
    const chr::year_month_day ymd{chr::year{y}, chr::month{mo}, chr::day{d}};
    if (!ymd.ok()) {
        throw ValidationError("malformed timestamp: '" + str + "'");
    }
    return chr::sys_days{ymd} + chr::hours{h} + chr::minutes{mi} + chr::seconds{sec} + chr::milliseconds{ms};
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw IoError("cannot write " + path.string());
        }
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) {
            throw IoError("write failed for " + path.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw IoError("cannot write " + path.string());
    }
}

std::vector<std::string_view> split_lines(std::string_view text) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) {
            end = text.size();
        }
        auto line = text.substr(start, end - start);
        if (!line.empty() && line.back() == '\r') {
            line.remove_suffix(1);
        }
        out.push_back(line);
        start = end + 1;
    }
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) {
        s.remove_prefix(1);
    }
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) {
        s.remove_suffix(1);
    }
    return s;
}

}  // namespace ttcw

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace dfb {

// Shortest representation that parses back to the same double.
std::string format_double(double v);

double parse_double(std::string_view s);
std::uint64_t parse_u64(std::string_view s);

std::string_view trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);

template <typename T, typename F>
std::string join(const std::vector<T>& items, std::string_view sep, F&& fmt) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += sep;
        out += fmt(items[i]);
    }
    return out;
}

}  // namespace dfb

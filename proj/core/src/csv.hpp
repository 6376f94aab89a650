#pragma once

#include <istream>
#include <string>
#include <string_view>
#include <vector>

namespace instopt::detail {

// RFC 4180 field splitting for a single physical line (no embedded newlines).
std::vector<std::string> split_csv_line(std::string_view line);
std::string csv_field(std::string_view value);
std::string format_double(double value);  // shortest round-trip form

// Reads the next line that is neither blank nor a '#' comment. Strips '\r'.
bool next_data_line(std::istream& in, std::string& line, std::size_t& line_no);

std::string trim(std::string_view s);
std::string to_lower_ascii(std::string_view s);

}  // namespace instopt::detail

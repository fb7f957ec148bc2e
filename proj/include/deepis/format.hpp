#pragma once

#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <string>

#include "deepis/errors.hpp"

namespace deepis {

// 17 significant digits: enough to round-trip any double.
inline std::string format_real(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

inline std::string csv_row(std::initializer_list<double> values) {
    std::string row;
    bool first = true;
    for (double v : values) {
        if (!first) row += ',';
        row += format_real(v);
        first = false;
    }
    row += '\n';
    return row;
}

inline void write_text_file(const std::string& path, const std::string& contents) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot open '" + path + "' for writing");
    out << contents;
    if (!out) throw ValidationError("failed writing '" + path + "'");
}

} // namespace deepis

#include "wsseg/ribbon.hpp"

#include "wsseg/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>

namespace wsseg {

namespace {

constexpr std::array<const char*, 10> kPalette = {"#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f",
                                                  "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac"};

std::string escape(const std::string& s) {
    std::string out;
    for (char ch : s) {
        switch (ch) {
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '&': out += "&amp;"; break;
        case '"': out += "&quot;"; break;
        default: out += ch;
        }
    }
    return out;
}

} // namespace

std::string class_color(int c) {
    if (c < 0) return "#000000";
    if (c < static_cast<int>(kPalette.size())) return kPalette[static_cast<std::size_t>(c)];
    // Golden-angle hues beyond the fixed palette.
    const int hue = static_cast<int>(std::fmod(c * 137.508, 360.0));
    char buf[32];
    std::snprintf(buf, sizeof buf, "hsl(%d,55%%,55%%)", hue);
    return buf;
}

void write_ribbon_svg(std::ostream& out, const std::vector<RibbonRow>& rows, int num_classes, int width, int row_height) {
    if (width < 1 || row_height < 1) throw Error(ErrorKind::Parameter, "ribbon dimensions must be positive");
    const int label_w = 120;
    const int gap = 6;
    const int legend_h = 20;
    const int height = static_cast<int>(rows.size()) * (row_height + gap) + legend_h + gap;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << label_w + width << "\" height=\"" << height
        << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto& row = rows[r];
        const int y = static_cast<int>(r) * (row_height + gap);
        out << "<text x=\"4\" y=\"" << y + row_height * 2 / 3 << "\">" << escape(row.title) << "</text>\n";
        const auto n = row.labels.size();
        if (n == 0) continue;
        const double step = static_cast<double>(width) / static_cast<double>(n);
        for (std::size_t t = 0; t < n;) {
            std::size_t e = t;
            while (e < n && row.labels[e] == row.labels[t]) ++e;
            const double x0 = label_w + step * static_cast<double>(t);
            const double w = step * static_cast<double>(e - t);
            char buf[160];
            std::snprintf(buf, sizeof buf, "<rect x=\"%.3f\" y=\"%d\" width=\"%.3f\" height=\"%d\" fill=\"", x0, y, w,
                          row_height);
            out << buf << class_color(row.labels[t]) << "\"/>\n";
            t = e;
        }
    }
    const int ly = static_cast<int>(rows.size()) * (row_height + gap);
    for (int c = 0; c < num_classes; ++c) {
        const int x = label_w + c * 70;
        out << "<rect x=\"" << x << "\" y=\"" << ly << "\" width=\"14\" height=\"14\" fill=\"" << class_color(c)
            << "\"/>\n<text x=\"" << x + 18 << "\" y=\"" << ly + 12 << "\">class " << c << "</text>\n";
    }
    out << "</svg>\n";
}

} // namespace wsseg

#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace wsseg {

struct RibbonRow {
    std::string title;
    std::vector<int> labels;
};

// Stacked colour bands, one row per label sequence, one colour per class.
void write_ribbon_svg(std::ostream& out, const std::vector<RibbonRow>& rows, int num_classes, int width = 1000,
                      int row_height = 24);

// Fill colour used for class c.
std::string class_color(int c);

} // namespace wsseg

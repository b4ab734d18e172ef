#pragma once

// Minimal static SVG line charts.

#include <filesystem>
#include <string>
#include <vector>

namespace wmb::harness {

struct Series {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
    bool dashed = false;
};

struct Chart {
    std::string title;
    std::string xlabel;
    std::string ylabel;
    std::vector<Series> series;
};

/// Throws std::invalid_argument if a series has mismatched x / y lengths.
std::string render_svg(const Chart& chart);
void write_svg(const Chart& chart, const std::filesystem::path& path);

}  // namespace wmb::harness

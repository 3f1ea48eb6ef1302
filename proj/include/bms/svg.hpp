#pragma once

// Minimal self-contained SVG emitter for trajectory plots, training curves
// and frame grids. Fixed-precision coordinates keep output reproducible.

#include <array>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "bms/errors.hpp"

namespace bms {

inline const std::vector<std::string>& svg_palette() {
    static const std::vector<std::string> colors{"#e41a1c", "#377eb8", "#4daf4a", "#984ea3",
                                                 "#ff7f00", "#a65628", "#f781bf", "#17becf"};
    return colors;
}

class SvgCanvas {
  public:
    SvgCanvas(double width, double height) : w_(width), h_(height) {
        body_ += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(w_) + "\" height=\"" +
                 num(h_) + "\" viewBox=\"0 0 " + num(w_) + " " + num(h_) + "\">\n";
        body_ += "<rect width=\"" + num(w_) + "\" height=\"" + num(h_) + "\" fill=\"white\"/>\n";
    }

    void polyline(const std::vector<std::array<double, 2>>& pts, const std::string& color,
                  double width = 1.0, double opacity = 1.0) {
        if (pts.empty()) return;
        body_ += "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"" + num(width) +
                 "\" stroke-opacity=\"" + num(opacity) + "\" points=\"";
        for (const auto& p : pts) body_ += num(p[0]) + "," + num(p[1]) + " ";
        body_ += "\"/>\n";
    }

    void circle(double x, double y, double r, const std::string& color) {
        body_ += "<circle cx=\"" + num(x) + "\" cy=\"" + num(y) + "\" r=\"" + num(r) +
                 "\" fill=\"" + color + "\"/>\n";
    }

    void rect(double x, double y, double w, double h, const std::string& fill) {
        body_ += "<rect x=\"" + num(x) + "\" y=\"" + num(y) + "\" width=\"" + num(w) +
                 "\" height=\"" + num(h) + "\" fill=\"" + fill + "\"/>\n";
    }

    void line(double x1, double y1, double x2, double y2, const std::string& color,
              double width = 1.0) {
        body_ += "<line x1=\"" + num(x1) + "\" y1=\"" + num(y1) + "\" x2=\"" + num(x2) +
                 "\" y2=\"" + num(y2) + "\" stroke=\"" + color + "\" stroke-width=\"" + num(width) +
                 "\"/>\n";
    }

    void text(double x, double y, const std::string& s, int size = 12,
              const std::string& color = "#333333") {
        body_ += "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" font-size=\"" +
                 std::to_string(size) + "\" font-family=\"sans-serif\" fill=\"" + color + "\">" +
                 s + "</text>\n";
    }

    // Grayscale pixel grid for image frames; values clamped to [0,1].
    void frame(const std::vector<double>& pixels, int grid, double x0, double y0, double cell) {
        for (int y = 0; y < grid; ++y)
            for (int x = 0; x < grid; ++x) {
                double v = pixels[static_cast<std::size_t>(y) * grid + x];
                v = v < 0 ? 0 : (v > 1 ? 1 : v);
                const int g = static_cast<int>(255.0 * (1.0 - v) + 0.5);
                char hex[8];
                std::snprintf(hex, sizeof(hex), "#%02x%02x%02x", g, g, g);
                rect(x0 + x * cell, y0 + y * cell, cell, cell, hex);
            }
    }

    std::string str() const { return body_ + "</svg>\n"; }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot write " + path);
        out << str();
    }

  private:
    static std::string num(double v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.3f", v);
        std::string s(buf);
        while (s.find('.') != std::string::npos && (s.back() == '0' || s.back() == '.')) {
            const bool dot = s.back() == '.';
            s.pop_back();
            if (dot) break;
        }
        return s;
    }

    double w_, h_;
    std::string body_;
};

}  // namespace bms

#include "fcve/pgm.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>

#include "fcve/errors.hpp"

namespace fcve {

static constexpr int kGutter = 2;
static constexpr uint8_t kWhite = 255;

std::vector<uint8_t> render_image_grid(const std::vector<std::vector<Image>>& rows) {
    size_t ncols = 0;
    size_t ncells = 0;
    for (const auto& row : rows) {
        ncols = std::max(ncols, row.size());
        ncells += row.size();
    }
    if (rows.empty() || ncols == 0 || ncells == 0)
        throw EmptyGrid("image grid: no cells");

    const Image* first = nullptr;
    for (const auto& row : rows)
        if (!row.empty()) { first = &row[0]; break; }
    if (first->dims.size() != 3 || first->dims[0] != 1)
        throw ShapeMismatch("image grid: cells must be single-channel");
    const int ch = first->dims[1], cw = first->dims[2];
    for (const auto& row : rows)
        for (const auto& img : row)
            if (img.dims != first->dims)
                throw ShapeMismatch("image grid: cell shapes differ");

    const int width = static_cast<int>(ncols) * cw +
                      (static_cast<int>(ncols) - 1) * kGutter;
    const int height = static_cast<int>(rows.size()) * ch +
                       (static_cast<int>(rows.size()) - 1) * kGutter;

    std::string header = "P5\n" + std::to_string(width) + " " +
                         std::to_string(height) + "\n255\n";
    std::vector<uint8_t> out(header.begin(), header.end());
    const size_t pix0 = out.size();
    out.resize(pix0 + static_cast<size_t>(width) * height, kWhite);

    for (size_t r = 0; r < rows.size(); ++r) {
        for (size_t c = 0; c < rows[r].size(); ++c) {
            const Image& img = rows[r][c];
            const int oy = static_cast<int>(r) * (ch + kGutter);
            const int ox = static_cast<int>(c) * (cw + kGutter);
            for (int y = 0; y < ch; ++y)
                for (int x = 0; x < cw; ++x) {
                    const float v = img.v[static_cast<size_t>(y) * cw + x];
                    const long b = std::lround(static_cast<double>(v) * 255.0);
                    out[pix0 + static_cast<size_t>(oy + y) * width + ox + x] =
                        static_cast<uint8_t>(b < 0 ? 0 : (b > 255 ? 255 : b));
                }
        }
    }
    return out;
}

void write_image_grid(const std::vector<std::vector<Image>>& rows,
                      const std::string& path) {
    auto bytes = render_image_grid(rows);
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw Error("cannot write image grid: " + path);
    const size_t written = std::fwrite(bytes.data(), 1, bytes.size(), f);
    std::fclose(f);
    if (written != bytes.size()) throw Error("short write: " + path);
}

} // namespace fcve

#ifndef FCVE_PGM_HPP
#define FCVE_PGM_HPP

#include <string>
#include <vector>

#include "fcve/tensor.hpp"

namespace fcve {

// Binary PGM (P5) montage: cells separated by a 2-pixel white gutter,
// pixel byte = round(value * 255). Ragged rows are padded with white cells.
std::vector<uint8_t> render_image_grid(const std::vector<std::vector<Image>>& rows);

void write_image_grid(const std::vector<std::vector<Image>>& rows,
                      const std::string& path);

} // namespace fcve

#endif

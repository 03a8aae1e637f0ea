#ifndef FCVE_IDX_HPP
#define FCVE_IDX_HPP

#include <cstdint>
#include <string>
#include <vector>

namespace fcve {

// IDX tensor as stored on disk: big-endian header, unsigned-byte payload.
struct RawIdxTensor {
    std::vector<int> dims;
    std::vector<uint8_t> payload;

    int64_t numel() const {
        int64_t p = 1;
        for (int d : dims) p *= d;
        return p;
    }
};

// Parse IDX bytes. Header: 0x00 0x00 <type> <rank>, type must be 0x08
// (unsigned byte), followed by rank big-endian u32 extents, then payload.
RawIdxTensor load_idx(const std::vector<uint8_t>& bytes);

// Inverse of load_idx; load_idx(save_idx(t)) reproduces t exactly.
std::vector<uint8_t> save_idx(const RawIdxTensor& t);

// Read a whole file; transparently inflates gzip (magic 0x1F 0x8B).
std::vector<uint8_t> read_file_auto(const std::string& path);

} // namespace fcve

#endif

#include "fcve/idx.hpp"

#include <cstdio>
#include <cstring>
#include <zlib.h>

#include "fcve/errors.hpp"

namespace fcve {

static uint32_t read_u32_be(const uint8_t* p) {
    return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) |
           (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

RawIdxTensor load_idx(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < 4) throw BadMagic("idx: file shorter than magic");
    if (bytes[0] != 0 || bytes[1] != 0)
        throw BadMagic("idx: first two magic bytes must be zero");
    if (bytes[2] != 0x08)
        throw BadMagic("idx: element type byte must be 0x08 (unsigned byte)");
    const int rank = bytes[3];
    const size_t header = 4 + 4 * static_cast<size_t>(rank);
    if (bytes.size() < header) throw TruncatedPayload("idx: truncated dim list");

    RawIdxTensor t;
    t.dims.resize(rank);
    for (int i = 0; i < rank; ++i)
        t.dims[i] = static_cast<int>(read_u32_be(bytes.data() + 4 + 4 * i));

    const int64_t count = t.numel();
    if (static_cast<int64_t>(bytes.size()) - static_cast<int64_t>(header) < count)
        throw TruncatedPayload("idx: payload shorter than header-implied size");
    t.payload.assign(bytes.begin() + header, bytes.begin() + header + count);
    return t;
}

std::vector<uint8_t> save_idx(const RawIdxTensor& t) {
    std::vector<uint8_t> out;
    out.reserve(4 + 4 * t.dims.size() + t.payload.size());
    out.push_back(0);
    out.push_back(0);
    out.push_back(0x08);
    out.push_back(static_cast<uint8_t>(t.dims.size()));
    for (int d : t.dims) {
        out.push_back(uint8_t(d >> 24));
        out.push_back(uint8_t(d >> 16));
        out.push_back(uint8_t(d >> 8));
        out.push_back(uint8_t(d));
    }
    out.insert(out.end(), t.payload.begin(), t.payload.end());
    return out;
}

static std::vector<uint8_t> inflate_gzip(const std::vector<uint8_t>& in) {
    z_stream zs;
    std::memset(&zs, 0, sizeof(zs));
    if (inflateInit2(&zs, 15 + 16) != Z_OK)
        throw Error("gzip: inflateInit2 failed");

    std::vector<uint8_t> out;
    out.reserve(in.size() * 4);
    uint8_t buf[1 << 16];
    zs.next_in = const_cast<uint8_t*>(in.data());
    zs.avail_in = static_cast<uInt>(in.size());
    int ret = Z_OK;
    do {
        zs.next_out = buf;
        zs.avail_out = sizeof(buf);
        ret = inflate(&zs, Z_NO_FLUSH);
        if (ret != Z_OK && ret != Z_STREAM_END) {
            inflateEnd(&zs);
            throw Error("gzip: corrupt stream");
        }
        out.insert(out.end(), buf, buf + (sizeof(buf) - zs.avail_out));
    } while (ret != Z_STREAM_END);
    inflateEnd(&zs);
    return out;
}

std::vector<uint8_t> read_file_auto(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw Error("cannot open file: " + path);
    std::fseek(f, 0, SEEK_END);
    long len = std::ftell(f);
    std::fseek(f, 0, SEEK_SET);
    std::vector<uint8_t> bytes(static_cast<size_t>(len));
    if (len > 0 && std::fread(bytes.data(), 1, bytes.size(), f) != bytes.size()) {
        std::fclose(f);
        throw Error("short read: " + path);
    }
    std::fclose(f);
    if (bytes.size() >= 2 && bytes[0] == 0x1F && bytes[1] == 0x8B)
        return inflate_gzip(bytes);
    return bytes;
}

} // namespace fcve

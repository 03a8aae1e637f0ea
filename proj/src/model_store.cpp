#include "fcve/model_store.hpp"

#include <cstdio>
#include <cstring>

#include "fcve/errors.hpp"

namespace fcve {

static const char kMagic[4] = {'F', 'C', 'V', 'W'};
static constexpr uint32_t kVersion = 1;

void ModelStore::put(const std::string& name, std::vector<int> dims,
                     std::vector<float> data) {
    int64_t count = 1;
    for (int d : dims) count *= d;
    if (count != static_cast<int64_t>(data.size()))
        throw ShapeMismatch("model store: dims product != data length");
    if (tensors.count(name))
        throw BadValue("model store: duplicate tensor name " + name);
    tensors[name] = {std::move(dims), std::move(data)};
}

const StoredTensor& ModelStore::get(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end())
        throw MissingWeights("model store: tensor not found: " + name);
    return it->second;
}

static void put_u16le(std::vector<uint8_t>& out, uint16_t v) {
    out.push_back(uint8_t(v));
    out.push_back(uint8_t(v >> 8));
}

static void put_u32le(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(uint8_t(v));
    out.push_back(uint8_t(v >> 8));
    out.push_back(uint8_t(v >> 16));
    out.push_back(uint8_t(v >> 24));
}

std::vector<uint8_t> store_to_bytes(const ModelStore& store) {
    std::vector<uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 4);
    put_u32le(out, kVersion);
    put_u32le(out, static_cast<uint32_t>(store.tensors.size()));
    for (const auto& [name, t] : store.tensors) {
        put_u16le(out, static_cast<uint16_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        out.push_back(static_cast<uint8_t>(t.dims.size()));
        for (int d : t.dims) put_u32le(out, static_cast<uint32_t>(d));
        for (float f : t.data) {
            uint32_t bits;
            std::memcpy(&bits, &f, 4);
            put_u32le(out, bits);
        }
    }
    return out;
}

namespace {
struct Reader {
    const std::vector<uint8_t>& b;
    size_t pos = 0;

    void need(size_t n) const {
        if (pos + n > b.size()) throw Truncated("model store: truncated file");
    }
    uint8_t u8() { need(1); return b[pos++]; }
    uint16_t u16le() {
        need(2);
        uint16_t v = uint16_t(b[pos]) | uint16_t(b[pos + 1]) << 8;
        pos += 2;
        return v;
    }
    uint32_t u32le() {
        need(4);
        uint32_t v = uint32_t(b[pos]) | uint32_t(b[pos + 1]) << 8 |
                     uint32_t(b[pos + 2]) << 16 | uint32_t(b[pos + 3]) << 24;
        pos += 4;
        return v;
    }
};
} // namespace

ModelStore store_from_bytes(const std::vector<uint8_t>& bytes) {
    Reader r{bytes};
    r.need(4);
    if (std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw BadMagic("model store: bad magic");
    r.pos = 4;
    const uint32_t version = r.u32le();
    if (version != kVersion)
        throw VersionUnsupported("model store: unsupported version");
    const uint32_t count = r.u32le();
    ModelStore store;
    for (uint32_t i = 0; i < count; ++i) {
        const uint16_t name_len = r.u16le();
        r.need(name_len);
        std::string name(bytes.begin() + r.pos, bytes.begin() + r.pos + name_len);
        r.pos += name_len;
        const uint8_t rank = r.u8();
        std::vector<int> dims(rank);
        int64_t numel = 1;
        for (int j = 0; j < rank; ++j) {
            dims[j] = static_cast<int>(r.u32le());
            numel *= dims[j];
        }
        std::vector<float> data(numel);
        for (int64_t j = 0; j < numel; ++j) {
            uint32_t bits = r.u32le();
            std::memcpy(&data[j], &bits, 4);
        }
        store.put(name, std::move(dims), std::move(data));
    }
    return store;
}

void save_weights(const ModelStore& store, const std::string& path) {
    auto bytes = store_to_bytes(store);
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw Error("cannot write weights file: " + path);
    const size_t written = std::fwrite(bytes.data(), 1, bytes.size(), f);
    std::fclose(f);
    if (written != bytes.size()) throw Error("short write: " + path);
}

ModelStore load_weights(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw MissingWeights("weights file not found: " + path);
    std::fseek(f, 0, SEEK_END);
    long len = std::ftell(f);
    std::fseek(f, 0, SEEK_SET);
    std::vector<uint8_t> bytes(static_cast<size_t>(len));
    if (len > 0 && std::fread(bytes.data(), 1, bytes.size(), f) != bytes.size()) {
        std::fclose(f);
        throw Truncated("short read: " + path);
    }
    std::fclose(f);
    return store_from_bytes(bytes);
}

} // namespace fcve

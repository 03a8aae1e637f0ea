#ifndef FCVE_UTIL_HPP
#define FCVE_UTIL_HPP

#include <cstdint>
#include <cstring>
#include <vector>

namespace fcve {

// splitmix64 step; used to derive independent stream seeds from one master seed
inline uint64_t mix_seed(uint64_t seed, uint64_t stream) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// FNV-1a over raw bytes; used to assert frozen-model contracts
inline uint64_t fnv1a(const void* data, size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = 0xcbf29ce484222325ULL;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

template <typename T>
uint64_t fnv1a_vec(const std::vector<T>& v) {
    return fnv1a(v.data(), v.size() * sizeof(T));
}

} // namespace fcve

#endif

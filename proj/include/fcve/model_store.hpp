#ifndef FCVE_MODEL_STORE_HPP
#define FCVE_MODEL_STORE_HPP

#include <map>
#include <string>
#include <vector>

namespace fcve {

// Named-tensor container behind the .fcvw weight files.
// Layout: magic "FCVW", u32le version (=1), u32le tensor count; per tensor:
// u16le name length, UTF-8 name, u8 rank, rank x u32le dims, raw f32le data.
struct StoredTensor {
    std::vector<int> dims;
    std::vector<float> data;
};

struct ModelStore {
    std::map<std::string, StoredTensor> tensors;

    void put(const std::string& name, std::vector<int> dims, std::vector<float> data);
    const StoredTensor& get(const std::string& name) const;
    bool has(const std::string& name) const { return tensors.count(name) != 0; }
};

std::vector<uint8_t> store_to_bytes(const ModelStore& store);
ModelStore store_from_bytes(const std::vector<uint8_t>& bytes);

void save_weights(const ModelStore& store, const std::string& path);
ModelStore load_weights(const std::string& path);

} // namespace fcve

#endif

#pragma once

// BMS1 container: 4-byte magic, little-endian u32 header length, JSON
// header (version, kind, profile, dtype, step, config snapshot, parameter
// table with shapes and byte offsets), then a payload of little-endian
// IEEE-754 values in table order. save -> load -> save is byte-identical.
// The same container carries model checkpoints and image datasets.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "bms/errors.hpp"
#include "bms/params.hpp"

namespace bms {

struct NamedTensor {
    std::string name;
    std::vector<int> shape;
    std::vector<double> values;
};

struct CheckpointFile {
    int version = 1;
    std::string kind;     // trajectory | visual_trajectory | image_seq | dataset/<...>
    std::string profile;  // desk | paper
    std::string dtype = "f64";
    std::int64_t step = 0;
    nlohmann::json config = nlohmann::json::object();
    std::vector<NamedTensor> tensors;

    const NamedTensor* find(const std::string& name) const {
        for (const auto& t : tensors)
            if (t.name == name) return &t;
        return nullptr;
    }
};

void save_checkpoint(const std::string& path, const CheckpointFile& file);
CheckpointFile load_checkpoint(const std::string& path);

std::vector<std::uint8_t> encode_checkpoint(const CheckpointFile& file);
CheckpointFile decode_checkpoint(const std::vector<std::uint8_t>& bytes);

template <typename Real>
CheckpointFile checkpoint_from_store(const ParamStore<Real>& store) {
    CheckpointFile f;
    f.dtype = sizeof(Real) == 8 ? "f64" : "f32";
    for (const auto& p : store.items()) {
        NamedTensor t;
        t.name = p.name;
        t.shape = p.shape;
        t.values.assign(p.value->begin(), p.value->end());
        f.tensors.push_back(std::move(t));
    }
    return f;
}

// Names and shapes must match the store exactly.
template <typename Real>
void checkpoint_into_store(const CheckpointFile& f, ParamStore<Real>& store) {
    if (f.tensors.size() != store.items().size())
        throw CorruptPayload("checkpoint: parameter count differs from the model");
    for (std::size_t i = 0; i < f.tensors.size(); ++i) {
        auto& p = store.items()[i];
        const auto& t = f.tensors[i];
        if (t.name != p.name || t.shape != p.shape)
            throw CorruptPayload("checkpoint: parameter table mismatch at " + t.name);
        for (std::size_t j = 0; j < t.values.size(); ++j)
            (*p.value)[j] = static_cast<Real>(t.values[j]);
    }
}

}  // namespace bms

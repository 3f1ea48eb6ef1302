#include "bms/checkpoint.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace bms {

namespace {

constexpr char kMagic[4] = {'B', 'M', 'S', '1'};

void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

std::uint32_t read_u32(const std::vector<std::uint8_t>& in, std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[off + static_cast<std::size_t>(i)]) << (8 * i);
    return v;
}

std::size_t value_bytes(const std::string& dtype) {
    if (dtype == "f64") return 8;
    if (dtype == "f32") return 4;
    throw CorruptPayload("checkpoint: unknown dtype " + dtype);
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const CheckpointFile& file) {
    const std::size_t vb = value_bytes(file.dtype);
    nlohmann::json header;
    header["version"] = file.version;
    header["kind"] = file.kind;
    header["profile"] = file.profile;
    header["dtype"] = file.dtype;
    header["step"] = file.step;
    header["config"] = file.config;
    nlohmann::json table = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& t : file.tensors) {
        std::size_t n = 1;
        for (int d : t.shape) n *= static_cast<std::size_t>(d);
        if (n != t.values.size())
            throw CorruptPayload("checkpoint: shape of " + t.name + " does not match values");
        nlohmann::json row;
        row["name"] = t.name;
        row["shape"] = t.shape;
        row["offset"] = offset;
        table.push_back(row);
        offset += n * vb;
    }
    header["params"] = table;
    const std::string hs = header.dump();

    std::vector<std::uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 4);
    append_u32(out, static_cast<std::uint32_t>(hs.size()));
    out.insert(out.end(), hs.begin(), hs.end());
    for (const auto& t : file.tensors) {
        for (double v : t.values) {
            if (!std::isfinite(v))
                throw NumericalError("checkpoint: refusing to write non-finite value in " + t.name);
            if (vb == 8) {
                std::uint64_t bits;
                std::memcpy(&bits, &v, 8);
                for (int i = 0; i < 8; ++i)
                    out.push_back(static_cast<std::uint8_t>((bits >> (8 * i)) & 0xff));
            } else {
                const float f = static_cast<float>(v);
                std::uint32_t bits;
                std::memcpy(&bits, &f, 4);
                for (int i = 0; i < 4; ++i)
                    out.push_back(static_cast<std::uint8_t>((bits >> (8 * i)) & 0xff));
            }
        }
    }
    return out;
}

CheckpointFile decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw VersionMismatch("not a BMS1 container");
    const std::uint32_t hlen = read_u32(bytes, 4);
    if (bytes.size() < 8 + static_cast<std::size_t>(hlen)) throw CorruptPayload("truncated header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + hlen);
    } catch (const nlohmann::json::parse_error& e) {
        throw CorruptPayload(std::string("bad header json: ") + e.what());
    }
    CheckpointFile f;
    f.version = header.at("version").get<int>();
    if (f.version != 1) throw VersionMismatch("unsupported container version " +
                                              std::to_string(f.version));
    f.kind = header.at("kind").get<std::string>();
    f.profile = header.at("profile").get<std::string>();
    f.dtype = header.at("dtype").get<std::string>();
    f.step = header.at("step").get<std::int64_t>();
    f.config = header.at("config");
    const std::size_t vb = value_bytes(f.dtype);
    const std::size_t payload_start = 8 + hlen;
    const std::size_t payload_len = bytes.size() - payload_start;

    for (const auto& row : header.at("params")) {
        NamedTensor t;
        t.name = row.at("name").get<std::string>();
        t.shape = row.at("shape").get<std::vector<int>>();
        const std::uint64_t offset = row.at("offset").get<std::uint64_t>();
        std::size_t n = 1;
        for (int d : t.shape) n *= static_cast<std::size_t>(d);
        if (offset + n * vb > payload_len)
            throw CorruptPayload("payload too short for " + t.name);
        t.values.resize(n);
        const std::uint8_t* src = bytes.data() + payload_start + offset;
        for (std::size_t i = 0; i < n; ++i) {
            if (vb == 8) {
                std::uint64_t bits = 0;
                for (int b = 0; b < 8; ++b)
                    bits |= static_cast<std::uint64_t>(src[i * 8 + static_cast<std::size_t>(b)]) << (8 * b);
                double v;
                std::memcpy(&v, &bits, 8);
                t.values[i] = v;
            } else {
                std::uint32_t bits = 0;
                for (int b = 0; b < 4; ++b)
                    bits |= static_cast<std::uint32_t>(src[i * 4 + static_cast<std::size_t>(b)]) << (8 * b);
                float v;
                std::memcpy(&v, &bits, 4);
                t.values[i] = static_cast<double>(v);
            }
        }
        f.tensors.push_back(std::move(t));
    }
    // total payload length must match the table exactly
    std::size_t expect = 0;
    for (const auto& t : f.tensors) expect += t.values.size() * vb;
    if (expect != payload_len) throw CorruptPayload("payload length disagrees with the table");
    return f;
}

void save_checkpoint(const std::string& path, const CheckpointFile& file) {
    const auto bytes = encode_checkpoint(file);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + path);
}

CheckpointFile load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

}  // namespace bms

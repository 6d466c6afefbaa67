#include "loopscope/safetensors.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace loopscope {

namespace {

using json = nlohmann::json;

float f16_to_f32(std::uint16_t h) {
    const std::uint32_t sign = (h & 0x8000u) << 16;
    std::uint32_t exp = (h >> 10) & 0x1f;
    std::uint32_t mant = h & 0x3ff;
    std::uint32_t bits;
    if (exp == 0) {
        if (mant == 0) {
            bits = sign;
        } else {
            // subnormal: renormalize
            exp = 127 - 15 + 1;
            while ((mant & 0x400u) == 0) {
                mant <<= 1;
                --exp;
            }
            mant &= 0x3ffu;
            bits = sign | (exp << 23) | (mant << 13);
        }
    } else if (exp == 0x1f) {
        bits = sign | 0x7f800000u | (mant << 13);
    } else {
        bits = sign | ((exp - 15 + 127) << 23) | (mant << 13);
    }
    return std::bit_cast<float>(bits);
}

float bf16_to_f32(std::uint16_t h) {
    return std::bit_cast<float>(static_cast<std::uint32_t>(h) << 16);
}

std::int64_t element_count(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (const auto d : shape) n *= d;
    return n;
}

}  // namespace

std::string shape_to_string(const std::vector<std::int64_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

TensorArchive TensorArchive::read(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw std::runtime_error("cannot open tensor archive: " + path);

    std::uint64_t header_size = 0;
    std::uint8_t raw[8];
    if (!file.read(reinterpret_cast<char*>(raw), 8)) {
        throw std::runtime_error("tensor archive too short (no header length): " + path);
    }
    for (int i = 7; i >= 0; --i) header_size = (header_size << 8) | raw[i];
    if (header_size == 0 || header_size > (1ull << 31)) {
        throw std::runtime_error("implausible header length in tensor archive: " + path);
    }

    std::string header_text(header_size, '\0');
    if (!file.read(header_text.data(), static_cast<std::streamsize>(header_size))) {
        throw std::runtime_error("tensor archive truncated inside header: " + path);
    }
    json header;
    try {
        header = json::parse(header_text);
    } catch (const json::parse_error& e) {
        throw std::runtime_error("tensor archive header is not valid JSON: " + path + ": " + e.what());
    }

    const std::streampos data_begin = file.tellg();
    TensorArchive archive;
    for (const auto& [name, info] : header.items()) {
        if (name == "__metadata__") continue;
        const std::string dtype = info.at("dtype").get<std::string>();
        TensorData t;
        t.shape = info.at("shape").get<std::vector<std::int64_t>>();
        const auto offsets = info.at("data_offsets").get<std::vector<std::uint64_t>>();
        if (offsets.size() != 2 || offsets[1] < offsets[0]) {
            throw std::runtime_error("bad data_offsets for tensor " + name + " in " + path);
        }
        const std::uint64_t byte_len = offsets[1] - offsets[0];
        const std::int64_t n = element_count(t.shape);

        std::size_t elem_size;
        if (dtype == "F32") {
            elem_size = 4;
        } else if (dtype == "F16" || dtype == "BF16") {
            elem_size = 2;
        } else {
            throw std::runtime_error("unsupported dtype " + dtype + " for tensor " + name);
        }
        if (byte_len != static_cast<std::uint64_t>(n) * elem_size) {
            throw std::runtime_error("tensor " + name + " byte length does not match shape " +
                                     shape_to_string(t.shape));
        }

        std::vector<std::uint8_t> bytes(byte_len);
        file.seekg(data_begin + static_cast<std::streamoff>(offsets[0]));
        if (!file.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(byte_len))) {
            throw std::runtime_error("tensor archive truncated inside tensor " + name);
        }

        t.values.resize(static_cast<std::size_t>(n));
        if (dtype == "F32") {
            std::memcpy(t.values.data(), bytes.data(), byte_len);
        } else {
            for (std::int64_t i = 0; i < n; ++i) {
                std::uint16_t h;
                std::memcpy(&h, bytes.data() + 2 * i, 2);
                t.values[static_cast<std::size_t>(i)] = dtype == "F16" ? f16_to_f32(h) : bf16_to_f32(h);
            }
        }
        archive.tensors_.emplace(name, std::move(t));
    }
    return archive;
}

void TensorArchive::write(const std::string& path, const std::map<std::string, TensorData>& tensors) {
    json header = json::object();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : tensors) {
        const std::uint64_t byte_len = t.values.size() * 4;
        header[name] = {
            {"dtype", "F32"},
            {"shape", t.shape},
            {"data_offsets", {offset, offset + byte_len}},
        };
        offset += byte_len;
    }
    const std::string header_text = header.dump();

    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw std::runtime_error("cannot write tensor archive: " + path);
    const std::uint64_t header_size = header_text.size();
    std::uint8_t raw[8];
    for (int i = 0; i < 8; ++i) raw[i] = static_cast<std::uint8_t>((header_size >> (8 * i)) & 0xff);
    file.write(reinterpret_cast<const char*>(raw), 8);
    file.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    for (const auto& [name, t] : tensors) {
        file.write(reinterpret_cast<const char*>(t.values.data()),
                   static_cast<std::streamsize>(t.values.size() * 4));
    }
    if (!file) throw std::runtime_error("write failed for tensor archive: " + path);
}

const TensorData& TensorArchive::get(const std::string& name) const {
    const auto it = tensors_.find(name);
    if (it == tensors_.end()) throw std::runtime_error("missing tensor " + name);
    return it->second;
}

const TensorData& TensorArchive::get(const std::string& name,
                                     const std::vector<std::int64_t>& expected_shape) const {
    const TensorData& t = get(name);
    if (t.shape != expected_shape) {
        throw std::runtime_error("tensor " + name + " has shape " + shape_to_string(t.shape) +
                                 ", expected " + shape_to_string(expected_shape));
    }
    return t;
}

}  // namespace loopscope

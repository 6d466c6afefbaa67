#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace loopscope {

// Flat named-tensor archive in the safetensors layout:
//   - 8 bytes: little-endian u64, length N of the JSON header
//   - N bytes: JSON header mapping tensor name -> {dtype, shape, data_offsets}
//   - raw tensor data, row-major, offsets relative to the end of the header
//
// Reading converts F16/BF16 payloads to F32. Writing always emits F32 with
// names sorted, so identical tensors produce byte-identical files.

struct TensorData {
    std::vector<std::int64_t> shape;
    std::vector<float> values;  // row-major

    std::int64_t rows() const { return shape.empty() ? 0 : shape[0]; }
    std::int64_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }
};

class TensorArchive {
public:
    static TensorArchive read(const std::string& path);
    static void write(const std::string& path, const std::map<std::string, TensorData>& tensors);

    bool contains(const std::string& name) const { return tensors_.count(name) != 0; }

    // Throws std::runtime_error("missing tensor ...") when absent.
    const TensorData& get(const std::string& name) const;

    // Same, plus a shape check with expected/actual in the message.
    const TensorData& get(const std::string& name, const std::vector<std::int64_t>& expected_shape) const;

    const std::map<std::string, TensorData>& tensors() const { return tensors_; }

private:
    std::map<std::string, TensorData> tensors_;
};

std::string shape_to_string(const std::vector<std::int64_t>& shape);

}  // namespace loopscope

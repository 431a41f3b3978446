#pragma once

// Reader/writer for the safetensors layout:
//   [u64 little-endian header length][JSON header][raw little-endian payload]
// The header maps tensor names to {dtype, shape, data_offsets} and may carry a
// "__metadata__" string map. F32, F16 and BF16 payloads are read and upcast to
// f32; archives are always written as F32.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace steerbench {

struct Tensor {
    std::vector<std::int64_t> shape;
    std::vector<float> data;

    std::size_t numel() const;
    std::int64_t dim(std::size_t i) const { return shape.at(i); }
};

class TensorArchive {
public:
    static TensorArchive load(const std::filesystem::path &path);
    static TensorArchive parse(const std::vector<std::uint8_t> &bytes, const std::string &origin);

    bool contains(const std::string &name) const { return tensors_.count(name) != 0; }
    // Throws LoadError naming the tensor when absent.
    const Tensor &get(const std::string &name) const;
    // get() plus a shape check; the error names the tensor and both shapes.
    const Tensor &get(const std::string &name, const std::vector<std::int64_t> &expected_shape) const;

    void put(const std::string &name, Tensor t);
    std::vector<std::string> names() const;

    std::map<std::string, std::string> &metadata() { return metadata_; }
    const std::map<std::string, std::string> &metadata() const { return metadata_; }

    std::vector<std::uint8_t> serialize() const;
    void save(const std::filesystem::path &path) const;

private:
    std::string origin_;
    std::map<std::string, Tensor> tensors_;
    std::map<std::string, std::string> metadata_;
};

std::string shape_to_string(const std::vector<std::int64_t> &shape);

float bf16_to_f32(std::uint16_t bits);
float f16_to_f32(std::uint16_t bits);

} // namespace steerbench

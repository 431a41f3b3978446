#include "steerbench/tensor_archive.hpp"

#include "steerbench/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace steerbench {

using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little, "tensor archives assume a little-endian host");

std::size_t Tensor::numel() const {
    std::size_t n = 1;
    for (auto d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

std::string shape_to_string(const std::vector<std::int64_t> &shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
    os << "]";
    return os.str();
}

float bf16_to_f32(std::uint16_t bits) {
    const std::uint32_t w = static_cast<std::uint32_t>(bits) << 16;
    float f;
    std::memcpy(&f, &w, sizeof f);
    return f;
}

float f16_to_f32(std::uint16_t h) {
    const std::uint32_t sign = (h & 0x8000u) << 16;
    std::uint32_t exp = (h >> 10) & 0x1Fu;
    std::uint32_t mant = h & 0x3FFu;
    std::uint32_t w;
    if (exp == 0) {
        if (mant == 0) {
            w = sign;
        } else {
            // subnormal: renormalize
            exp = 127 - 15 + 1;
            while ((mant & 0x400u) == 0) {
                mant <<= 1;
                --exp;
            }
            mant &= 0x3FFu;
            w = sign | (exp << 23) | (mant << 13);
        }
    } else if (exp == 0x1F) {
        w = sign | 0x7F800000u | (mant << 13);
    } else {
        w = sign | ((exp + 127 - 15) << 23) | (mant << 13);
    }
    float f;
    std::memcpy(&f, &w, sizeof f);
    return f;
}

TensorArchive TensorArchive::load(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open tensor archive " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse(bytes, path.string());
}

TensorArchive TensorArchive::parse(const std::vector<std::uint8_t> &bytes, const std::string &origin) {
    if (bytes.size() < 8) throw LoadError(origin + ": truncated archive (no header length)");
    std::uint64_t header_len = 0;
    std::memcpy(&header_len, bytes.data(), 8);
    if (header_len > bytes.size() - 8) throw LoadError(origin + ": header length exceeds file size");

    json header;
    try {
        header = json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(header_len));
    } catch (const json::exception &e) {
        throw LoadError(origin + ": malformed JSON header: " + e.what());
    }
    if (!header.is_object()) throw LoadError(origin + ": header is not a JSON object");

    const std::uint8_t *payload = bytes.data() + 8 + header_len;
    const std::size_t payload_len = bytes.size() - 8 - header_len;

    TensorArchive ar;
    ar.origin_ = origin;
    for (auto it = header.begin(); it != header.end(); ++it) {
        if (it.key() == "__metadata__") {
            for (auto m = it.value().begin(); m != it.value().end(); ++m)
                ar.metadata_[m.key()] = m.value().is_string() ? m.value().get<std::string>() : m.value().dump();
            continue;
        }
        const auto &desc = it.value();
        Tensor t;
        std::string dtype;
        std::uint64_t begin = 0, end = 0;
        try {
            dtype = desc.at("dtype").get<std::string>();
            t.shape = desc.at("shape").get<std::vector<std::int64_t>>();
            const auto offs = desc.at("data_offsets").get<std::vector<std::uint64_t>>();
            if (offs.size() != 2) throw LoadError("data_offsets must have two entries");
            begin = offs[0];
            end = offs[1];
        } catch (const json::exception &e) {
            throw LoadError(origin + ": bad descriptor for tensor '" + it.key() + "': " + e.what());
        }
        if (end < begin || end > payload_len)
            throw LoadError(origin + ": tensor '" + it.key() + "' offsets out of range");
        for (auto d : t.shape)
            if (d < 0) throw LoadError(origin + ": tensor '" + it.key() + "' has negative dimension");

        const std::size_t n = t.numel();
        const std::uint8_t *src = payload + begin;
        const std::size_t nbytes = end - begin;
        t.data.resize(n);
        if (dtype == "F32") {
            if (nbytes != n * 4) throw LoadError(origin + ": tensor '" + it.key() + "' byte size mismatch");
            std::memcpy(t.data.data(), src, nbytes);
        } else if (dtype == "BF16" || dtype == "F16") {
            if (nbytes != n * 2) throw LoadError(origin + ": tensor '" + it.key() + "' byte size mismatch");
            for (std::size_t i = 0; i < n; ++i) {
                std::uint16_t h;
                std::memcpy(&h, src + 2 * i, 2);
                t.data[i] = dtype == "BF16" ? bf16_to_f32(h) : f16_to_f32(h);
            }
        } else {
            throw LoadError(origin + ": tensor '" + it.key() + "' has unsupported dtype " + dtype);
        }
        ar.tensors_.emplace(it.key(), std::move(t));
    }
    return ar;
}

const Tensor &TensorArchive::get(const std::string &name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw LoadError("missing tensor '" + name + "' in " + (origin_.empty() ? "archive" : origin_));
    return it->second;
}

const Tensor &TensorArchive::get(const std::string &name, const std::vector<std::int64_t> &expected_shape) const {
    const Tensor &t = get(name);
    if (t.shape != expected_shape)
        throw LoadError("tensor '" + name + "' has shape " + shape_to_string(t.shape) + ", expected " +
                        shape_to_string(expected_shape));
    return t;
}

void TensorArchive::put(const std::string &name, Tensor t) {
    if (t.numel() != t.data.size())
        throw ContractError("tensor '" + name + "' data length does not match shape " + shape_to_string(t.shape));
    tensors_[name] = std::move(t);
}

std::vector<std::string> TensorArchive::names() const {
    std::vector<std::string> out;
    for (const auto &[k, _] : tensors_) out.push_back(k);
    return out;
}

std::vector<std::uint8_t> TensorArchive::serialize() const {
    json header = json::object();
    std::uint64_t offset = 0;
    for (const auto &[name, t] : tensors_) {
        const std::uint64_t nbytes = t.data.size() * 4;
        header[name] = {{"dtype", "F32"}, {"shape", t.shape}, {"data_offsets", {offset, offset + nbytes}}};
        offset += nbytes;
    }
    if (!metadata_.empty()) header["__metadata__"] = metadata_;

    std::string h = header.dump();
    // Pad so the payload starts 8-byte aligned.
    while ((8 + h.size()) % 8 != 0) h.push_back(' ');

    std::vector<std::uint8_t> out(8 + h.size() + offset);
    const std::uint64_t hl = h.size();
    std::memcpy(out.data(), &hl, 8);
    std::memcpy(out.data() + 8, h.data(), h.size());
    std::uint8_t *dst = out.data() + 8 + h.size();
    for (const auto &[name, t] : tensors_) {
        std::memcpy(dst, t.data.data(), t.data.size() * 4);
        dst += t.data.size() * 4;
    }
    return out;
}

void TensorArchive::save(const std::filesystem::path &path) const {
    const auto bytes = serialize();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw LoadError("cannot write tensor archive " + path.string());
    out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

} // namespace steerbench

#include "cellbloom/nn/safetensors.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <stdexcept>

namespace cellbloom::nn {

static_assert(std::endian::native == std::endian::little, "safetensors payloads are little-endian");

namespace {

using json = nlohmann::json;

struct RawFile {
    json header;
    std::vector<char> payload;
};

RawFile read_raw(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open tensor file " + path.string());
    std::uint64_t header_len = 0;
    in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
    if (!in || header_len > (1ull << 31)) throw std::runtime_error("corrupt tensor file header in " + path.string());
    std::string header(header_len, '\0');
    in.read(header.data(), static_cast<std::streamsize>(header_len));
    RawFile raw;
    raw.header = json::parse(header);
    raw.payload.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    return raw;
}

}  // namespace

void save_safetensors(const std::filesystem::path& path, const TensorMap& tensors,
                      const std::map<std::string, std::string>& metadata) {
    json header = json::object();
    std::size_t offset = 0;
    for (const auto& [name, t] : tensors) {
        const std::size_t bytes = t.size() * sizeof(float);
        header[name] = {{"dtype", "F32"}, {"shape", t.shape()}, {"data_offsets", {offset, offset + bytes}}};
        offset += bytes;
    }
    if (!metadata.empty()) header["__metadata__"] = metadata;
    std::string text = header.dump();
    // Pad so the payload starts 8-byte aligned.
    while ((text.size() % 8) != 0) text.push_back(' ');

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write tensor file " + path.string());
    const std::uint64_t header_len = text.size();
    out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [_, t] : tensors) {
        out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
    }
    if (!out) throw std::runtime_error("failed writing tensor file " + path.string());
}

TensorMap load_safetensors(const std::filesystem::path& path) {
    RawFile raw = read_raw(path);
    TensorMap out;
    for (const auto& [name, entry] : raw.header.items()) {
        if (name == "__metadata__") continue;
        const auto dtype = entry.at("dtype").get<std::string>();
        const auto shape = entry.at("shape").get<Shape>();
        const auto begin = entry.at("data_offsets").at(0).get<std::size_t>();
        const auto end = entry.at("data_offsets").at(1).get<std::size_t>();
        if (end > raw.payload.size() || begin > end) {
            throw std::runtime_error("tensor " + name + " exceeds payload in " + path.string());
        }
        const std::size_t count = shape_numel(shape);
        std::vector<float> values(count);
        if (dtype == "F32") {
            if (end - begin != count * sizeof(float)) throw std::runtime_error("size mismatch for tensor " + name);
            std::memcpy(values.data(), raw.payload.data() + begin, end - begin);
        } else if (dtype == "F64") {
            if (end - begin != count * sizeof(double)) throw std::runtime_error("size mismatch for tensor " + name);
            std::vector<double> wide(count);
            std::memcpy(wide.data(), raw.payload.data() + begin, end - begin);
            for (std::size_t i = 0; i < count; ++i) values[i] = static_cast<float>(wide[i]);
        } else {
            throw std::runtime_error("unsupported dtype " + dtype + " for tensor " + name);
        }
        out.emplace(name, Tensor<float>(shape, std::move(values)));
    }
    return out;
}

std::map<std::string, std::string> load_safetensors_metadata(const std::filesystem::path& path) {
    RawFile raw = read_raw(path);
    if (!raw.header.contains("__metadata__")) return {};
    return raw.header.at("__metadata__").get<std::map<std::string, std::string>>();
}

}  // namespace cellbloom::nn

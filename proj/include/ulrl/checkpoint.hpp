#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "ulrl/errors.hpp"
#include "ulrl/model.hpp"

// Checkpoint format (version 1), little-endian throughout:
//   magic "ULRL" | u32 version | u32 record count | records...
// Each record: u8 kind tag | extents (u32 each) | parameters (f32, row-major).
// Record 0 is always an input record (tag 0, extents C,H,W, no parameters);
// the remaining records are the executable layers in order. Extent counts are
// fixed per kind: input 3, dense 2 (out,in), conv2d 2 (out_ch,in_ch), others 0.
// Dense parameters: out*in weights then out biases; conv2d: out*in*9 then out.

namespace ulrl {

namespace detail {

inline void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_f32(std::ostream& out, float v) { write_u32(out, std::bit_cast<std::uint32_t>(v)); }

inline float read_f32(std::istream& in) { return std::bit_cast<float>(read_u32(in)); }

inline void write_f32_block(std::ostream& out, const Tensor<float>& t) {
    for (float v : t.data) write_f32(out, v);
}

inline void read_f32_block(std::istream& in, Tensor<float>& t) {
    for (float& v : t.data) v = read_f32(in);
}

}  // namespace detail

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_model(const Model<float>& model, std::ostream& out) {
    out.write("ULRL", 4);
    detail::write_u32(out, kCheckpointVersion);
    detail::write_u32(out, static_cast<std::uint32_t>(model.layers.size() + 1));
    out.put(static_cast<char>(LayerKind::Input));
    detail::write_u32(out, static_cast<std::uint32_t>(model.channels));
    detail::write_u32(out, static_cast<std::uint32_t>(model.height));
    detail::write_u32(out, static_cast<std::uint32_t>(model.width));
    for (const auto& layer : model.layers) {
        out.put(static_cast<char>(layer.spec.kind));
        if (layer.spec.kind == LayerKind::Dense || layer.spec.kind == LayerKind::Conv2d) {
            detail::write_u32(out, static_cast<std::uint32_t>(layer.spec.out));
            detail::write_u32(out, static_cast<std::uint32_t>(layer.spec.in));
            detail::write_f32_block(out, layer.weight);
            detail::write_f32_block(out, layer.bias);
        }
    }
}

inline void save_model(const Model<float>& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("save_model: cannot open " + path);
    save_model(model, out);
    if (!out) throw IoError("save_model: write failed for " + path);
}

inline Model<float> load_model(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "ULRL", 4) != 0) throw IoError("load_model: bad magic");
    const std::uint32_t version = detail::read_u32(in);
    if (version != kCheckpointVersion)
        throw IoError("load_model: unsupported version " + std::to_string(version));
    const std::uint32_t records = detail::read_u32(in);
    if (records < 2) throw IoError("load_model: record count too small");

    Model<float> model;
    if (in.get() != static_cast<int>(LayerKind::Input)) throw IoError("load_model: missing input record");
    model.channels = detail::read_u32(in);
    model.height = detail::read_u32(in);
    model.width = detail::read_u32(in);

    std::vector<LayerSpec> specs;
    for (std::uint32_t r = 1; r < records; ++r) {
        const int tag = in.get();
        if (tag < 0) throw IoError("load_model: truncated file");
        Layer<float> layer;
        switch (static_cast<LayerKind>(tag)) {
            case LayerKind::Dense:
            case LayerKind::Conv2d: {
                const std::size_t out = detail::read_u32(in);
                const std::size_t fin = detail::read_u32(in);
                layer.spec = static_cast<LayerKind>(tag) == LayerKind::Dense
                                 ? LayerSpec::dense(fin, out)
                                 : LayerSpec::conv2d(fin, out);
                layer.weight = static_cast<LayerKind>(tag) == LayerKind::Dense
                                   ? Tensor<float>({out, fin})
                                   : Tensor<float>({out, fin, 3, 3});
                layer.bias = Tensor<float>({out});
                detail::read_f32_block(in, layer.weight);
                detail::read_f32_block(in, layer.bias);
                break;
            }
            case LayerKind::Relu:
                layer.spec = LayerSpec::relu();
                break;
            case LayerKind::MaxPool2d:
                layer.spec = LayerSpec::maxpool2();
                break;
            case LayerKind::Flatten:
                layer.spec = LayerSpec::flatten();
                break;
            default:
                throw IoError("load_model: unknown layer tag " + std::to_string(tag));
        }
        specs.push_back(layer.spec);
        model.layers.push_back(std::move(layer));
    }
    if (!in) throw IoError("load_model: truncated file");
    validate_stack(model.channels, model.height, model.width, specs);
    return model;
}

inline Model<float> load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_model: cannot open " + path);
    return load_model(in);
}

}  // namespace ulrl

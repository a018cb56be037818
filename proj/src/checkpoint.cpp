// Copyright (C) 2026 the lmlab authors
// SPDX-License-Identifier: Apache-2.0
//
#include "lmlab/io/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace lmlab {

namespace {

constexpr char kMagic[4] = {'A', 'F', 'M', 'T'};

template <class T>
void put(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <class T>
T get(std::ifstream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}

bool flat_dtype(DType d) { return d == DType::F32 || d == DType::F64 || d == DType::F16; }

uint64_t flat_bytes(DType d, int64_t n) {
    switch (d) {
        case DType::F32: return static_cast<uint64_t>(n) * 4;
        case DType::F64: return static_cast<uint64_t>(n) * 8;
        case DType::F16: return static_cast<uint64_t>(n) * 2;
        default: return 0;
    }
}

}  // namespace

void write_checkpoint(const std::string& path, std::span<const RawTensor> tensors) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + path);
    out.write(kMagic, 4);
    put<uint32_t>(out, kCheckpointVersion);
    put<uint64_t>(out, tensors.size());
    for (const auto& t : tensors) {
        put<uint32_t>(out, static_cast<uint32_t>(t.name.size()));
        out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        put<uint8_t>(out, static_cast<uint8_t>(t.dtype));
        put<uint8_t>(out, static_cast<uint8_t>(t.shape.size()));
        for (int64_t e : t.shape) put<uint64_t>(out, static_cast<uint64_t>(e));
    }
    for (const auto& t : tensors) {
        if (flat_dtype(t.dtype)) {
            if (t.payload.size() != flat_bytes(t.dtype, numel_of(t.shape)))
                throw CheckpointError("payload size mismatch for tensor " + t.name);
        } else {
            // quantized payloads are self-sized
            put<uint64_t>(out, t.payload.size());
        }
        out.write(reinterpret_cast<const char*>(t.payload.data()),
                  static_cast<std::streamsize>(t.payload.size()));
    }
    if (!out) throw CheckpointError("short write to checkpoint " + path);
}

std::vector<RawTensor> read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw CheckpointError("bad magic in checkpoint " + path);
    const auto version = get<uint32_t>(in);
    if (version != kCheckpointVersion)
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version) +
                              " in " + path);
    const auto count = get<uint64_t>(in);
    std::vector<RawTensor> tensors(count);
    for (auto& t : tensors) {
        const auto name_len = get<uint32_t>(in);
        t.name.resize(name_len);
        in.read(t.name.data(), name_len);
        const auto code = get<uint8_t>(in);
        if (code > static_cast<uint8_t>(DType::Int8PC))
            throw CheckpointError("unknown dtype code in checkpoint " + path);
        t.dtype = static_cast<DType>(code);
        const auto rank = get<uint8_t>(in);
        t.shape.resize(rank);
        for (auto& e : t.shape) e = static_cast<int64_t>(get<uint64_t>(in));
        if (!in) throw CheckpointError("truncated header in checkpoint " + path);
    }
    for (auto& t : tensors) {
        const uint64_t bytes =
            flat_dtype(t.dtype) ? flat_bytes(t.dtype, numel_of(t.shape)) : get<uint64_t>(in);
        t.payload.resize(bytes);
        in.read(reinterpret_cast<char*>(t.payload.data()),
                static_cast<std::streamsize>(bytes));
        if (!in) throw CheckpointError("truncated payload in checkpoint " + path);
    }
    return tensors;
}

}  // namespace lmlab

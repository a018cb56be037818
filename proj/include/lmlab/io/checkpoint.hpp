// Copyright (C) 2026 the lmlab authors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint container: magic "AFMT", format version, tensor count, then one
// header record per tensor (name, dtype code, rank, extents) followed by the
// payloads in header order. All integers and floats are little-endian.
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lmlab/core/error.hpp"
#include "lmlab/tensor/tensor.hpp"

namespace lmlab {

inline constexpr uint32_t kCheckpointVersion = 1;

enum class DType : uint8_t {
    F32 = 0,
    F64 = 1,
    F16 = 2,
    Pal2 = 3,
    Pal4 = 4,
    Int8PC = 5,
};

struct RawTensor {
    std::string name;
    DType dtype = DType::F32;
    Shape shape;
    std::vector<uint8_t> payload;
};

void write_checkpoint(const std::string& path, std::span<const RawTensor> tensors);
std::vector<RawTensor> read_checkpoint(const std::string& path);

}  // namespace lmlab

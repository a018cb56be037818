// Copyright (C) 2026 the lmlab authors
// SPDX-License-Identifier: Apache-2.0
//
// Typed encode/decode between in-memory objects and checkpoint records:
// models and optimizer state as flat float records, adapters at 16-bit
// storage width, quantized models with group metadata + LUTs ahead of the
// packed index payload.
#pragma once

#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "lmlab/compress/lora.hpp"
#include "lmlab/compress/quant.hpp"
#include "lmlab/core/half.hpp"
#include "lmlab/io/checkpoint.hpp"
#include "lmlab/model/model.hpp"
#include "lmlab/optim/optimizer.hpp"

namespace lmlab {

namespace detail {

template <class T>
void append_bytes(std::vector<uint8_t>& out, const T& v) {
    const auto* p = reinterpret_cast<const uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
}

template <class T>
T take_bytes(const std::vector<uint8_t>& in, size_t& off) {
    if (off + sizeof(T) > in.size()) throw CheckpointError("truncated tensor payload");
    T v{};
    std::memcpy(&v, in.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}

}  // namespace detail

template <class S>
RawTensor to_raw(const std::string& name, const Tensor<S>& t) {
    RawTensor r;
    r.name = name;
    r.shape = t.shape();
    if constexpr (std::is_same_v<S, double>) {
        r.dtype = DType::F64;
        r.payload.resize(static_cast<size_t>(t.numel()) * 8);
        std::memcpy(r.payload.data(), t.value().data(), r.payload.size());
    } else {
        r.dtype = DType::F32;
        r.payload.resize(static_cast<size_t>(t.numel()) * 4);
        std::vector<float> tmp(static_cast<size_t>(t.numel()));
        for (int64_t i = 0; i < t.numel(); ++i) tmp[static_cast<size_t>(i)] =
            static_cast<float>(t.value()[i]);
        std::memcpy(r.payload.data(), tmp.data(), r.payload.size());
    }
    return r;
}

template <class S>
RawTensor to_raw_f16(const std::string& name, const Tensor<S>& t) {
    RawTensor r;
    r.name = name;
    r.dtype = DType::F16;
    r.shape = t.shape();
    r.payload.resize(static_cast<size_t>(t.numel()) * 2);
    auto* h = reinterpret_cast<uint16_t*>(r.payload.data());
    for (int64_t i = 0; i < t.numel(); ++i)
        h[i] = float_to_half(static_cast<float>(t.value()[i]));
    return r;
}

template <class S>
void load_raw_into(const RawTensor& r, Tensor<S>& dst) {
    if (r.shape != dst.shape())
        throw CheckpointError("tensor " + r.name + ": checkpoint shape " + shape_str(r.shape) +
                              " does not match model shape " + shape_str(dst.shape()));
    auto& v = dst.value_mut();
    switch (r.dtype) {
        case DType::F32: {
            const auto* f = reinterpret_cast<const float*>(r.payload.data());
            for (int64_t i = 0; i < dst.numel(); ++i) v[i] = static_cast<S>(f[i]);
            break;
        }
        case DType::F64: {
            const auto* d = reinterpret_cast<const double*>(r.payload.data());
            for (int64_t i = 0; i < dst.numel(); ++i) v[i] = static_cast<S>(d[i]);
            break;
        }
        case DType::F16: {
            const auto* h = reinterpret_cast<const uint16_t*>(r.payload.data());
            for (int64_t i = 0; i < dst.numel(); ++i)
                v[i] = static_cast<S>(half_to_float(h[i]));
            break;
        }
        default:
            throw CheckpointError("tensor " + r.name + ": expected a flat float dtype");
    }
}

// --- model + optimizer state -----------------------------------------------

template <class S>
void save_model(const std::string& path, const Model<S>& m) {
    std::vector<RawTensor> recs;
    for (const auto& [name, p] : m.named_params()) recs.push_back(to_raw(name, p));
    write_checkpoint(path, recs);
}

template <class S>
void load_model_into(const std::string& path, Model<S>& m) {
    auto recs = read_checkpoint(path);
    std::map<std::string, const RawTensor*> by_name;
    for (const auto& r : recs) by_name[r.name] = &r;
    for (auto& [name, p] : m.named_params()) {
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw CheckpointError("checkpoint " + path + " is missing tensor " + name);
        auto t = p;
        load_raw_into(*it->second, t);
    }
}

template <class S>
void save_training_checkpoint(const std::string& path, const Model<S>& m,
                              Optimizer<S>& opt) {
    std::vector<RawTensor> recs;
    for (const auto& [name, p] : m.named_params()) recs.push_back(to_raw(name, p));
    for (auto& [name, t] : opt.state_tensors()) recs.push_back(to_raw(name, t));
    write_checkpoint(path, recs);
}

template <class S>
int64_t load_training_checkpoint(const std::string& path, Model<S>& m, Optimizer<S>& opt) {
    auto recs = read_checkpoint(path);
    std::map<std::string, const RawTensor*> by_name;
    for (const auto& r : recs) by_name[r.name] = &r;
    for (auto& [name, p] : m.named_params()) {
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw CheckpointError("checkpoint " + path + " is missing tensor " + name);
        auto t = p;
        load_raw_into(*it->second, t);
    }
    int64_t step = -1;
    for (auto& [name, t] : opt.state_tensors()) {
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw CheckpointError("checkpoint " + path + " is missing optimizer state " + name);
        if (name == "opt.t") {
            Tensor<S> tmp = Tensor<S>::zeros(it->second->shape);
            load_raw_into(*it->second, tmp);
            step = static_cast<int64_t>(tmp.value()[0]);
            continue;
        }
        load_raw_into(*it->second, t);
    }
    if (step < 0) throw CheckpointError("checkpoint " + path + " has no step counter");
    opt.set_step_count(step);
    return step;
}

// --- adapters (16-bit storage) ----------------------------------------------

template <class S>
void save_adapter(const std::string& path, LoraAdapter<S>& adapter) {
    std::vector<RawTensor> recs;
    auto alpha = Tensor<S>::scalar(adapter.alpha);
    recs.push_back(to_raw("lora.alpha", alpha));
    for (auto& [name, t] : adapter.named_params()) recs.push_back(to_raw_f16(name, t));
    write_checkpoint(path, recs);
}

template <class S>
LoraAdapter<S> load_adapter(const std::string& path, const ModelConfig& cfg) {
    auto recs = read_checkpoint(path);
    std::map<std::string, const RawTensor*> by_name;
    for (const auto& r : recs) by_name[r.name] = &r;
    auto alpha_it = by_name.find("lora.alpha");
    if (alpha_it == by_name.end())
        throw CheckpointError("adapter " + path + " has no lora.alpha record");
    int64_t rank = -1;
    for (const auto& r : recs)
        if (r.name.size() > 2 && r.name.substr(r.name.size() - 2) == ".A") rank = r.shape[1];
    if (rank <= 0) throw CheckpointError("adapter " + path + " has no A factors");
    RngStream dummy(0);
    auto adapter = LoraAdapter<S>::init(cfg, rank, S(0), dummy);
    {
        Tensor<S> tmp = Tensor<S>::zeros({});
        load_raw_into(*alpha_it->second, tmp);
        adapter.alpha = tmp.value()[0];
    }
    for (auto& [name, t] : adapter.named_params()) {
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw CheckpointError("adapter " + path + " is missing tensor " + name);
        load_raw_into(*it->second, t);
    }
    return adapter;
}

// --- quantized checkpoints ---------------------------------------------------

namespace detail {

template <class S>
RawTensor pal_to_raw(const std::string& name, const PalettizedTensor<S>& pt) {
    RawTensor r;
    r.name = name;
    r.dtype = pt.bits == 2 ? DType::Pal2 : DType::Pal4;
    r.shape = pt.shape;
    append_bytes<uint8_t>(r.payload, static_cast<uint8_t>(pt.axis));
    append_bytes<uint8_t>(r.payload, static_cast<uint8_t>(pt.bits));
    append_bytes<uint64_t>(r.payload, static_cast<uint64_t>(pt.group_size));
    append_bytes<uint64_t>(r.payload, static_cast<uint64_t>(pt.n_groups()));
    for (const auto& lut : pt.luts)
        for (S v : lut) append_bytes<float>(r.payload, static_cast<float>(v));
    const int per_byte = pt.bits == 2 ? 4 : 2;
    const size_t n = pt.indices.size();
    std::vector<uint8_t> packed((n + static_cast<size_t>(per_byte) - 1) /
                                static_cast<size_t>(per_byte));
    for (size_t i = 0; i < n; ++i) {
        const size_t byte = i / static_cast<size_t>(per_byte);
        const int slot = static_cast<int>(i % static_cast<size_t>(per_byte));
        packed[byte] |= static_cast<uint8_t>(pt.indices[i] << (slot * pt.bits));
    }
    r.payload.insert(r.payload.end(), packed.begin(), packed.end());
    return r;
}

template <class S>
PalettizedTensor<S> pal_from_raw(const RawTensor& r) {
    PalettizedTensor<S> pt;
    pt.shape = r.shape;
    size_t off = 0;
    pt.axis = static_cast<GroupAxis>(take_bytes<uint8_t>(r.payload, off));
    pt.bits = take_bytes<uint8_t>(r.payload, off);
    pt.group_size = static_cast<int64_t>(take_bytes<uint64_t>(r.payload, off));
    const auto n_groups = take_bytes<uint64_t>(r.payload, off);
    const int k = 1 << pt.bits;
    for (uint64_t g = 0; g < n_groups; ++g) {
        std::vector<S> lut(static_cast<size_t>(k));
        for (auto& v : lut) v = static_cast<S>(take_bytes<float>(r.payload, off));
        pt.luts.push_back(std::move(lut));
    }
    const size_t n = static_cast<size_t>(numel_of(r.shape));
    const int per_byte = pt.bits == 2 ? 4 : 2;
    const uint8_t mask = pt.bits == 2 ? 0x3 : 0xf;
    pt.indices.resize(n);
    for (size_t i = 0; i < n; ++i) {
        const size_t byte = i / static_cast<size_t>(per_byte);
        const int slot = static_cast<int>(i % static_cast<size_t>(per_byte));
        if (off + byte >= r.payload.size())
            throw CheckpointError("tensor " + r.name + ": truncated index payload");
        pt.indices[i] = static_cast<uint8_t>((r.payload[off + byte] >> (slot * pt.bits)) & mask);
    }
    pt.group_sse.assign(pt.luts.size(), 0.0);
    return pt;
}

template <class S>
RawTensor int8_to_raw(const std::string& name, const Int8PerChannel<S>& q) {
    RawTensor r;
    r.name = name;
    r.dtype = DType::Int8PC;
    r.shape = q.shape;
    append_bytes<uint64_t>(r.payload, static_cast<uint64_t>(q.scale.size()));
    for (S v : q.scale) append_bytes<float>(r.payload, static_cast<float>(v));
    for (S v : q.zero) append_bytes<float>(r.payload, static_cast<float>(v));
    r.payload.insert(r.payload.end(), q.q.begin(), q.q.end());
    return r;
}

template <class S>
Int8PerChannel<S> int8_from_raw(const RawTensor& r) {
    Int8PerChannel<S> q;
    q.shape = r.shape;
    size_t off = 0;
    const auto channels = take_bytes<uint64_t>(r.payload, off);
    q.scale.resize(channels);
    q.zero.resize(channels);
    for (auto& v : q.scale) v = static_cast<S>(take_bytes<float>(r.payload, off));
    for (auto& v : q.zero) v = static_cast<S>(take_bytes<float>(r.payload, off));
    const size_t n = static_cast<size_t>(numel_of(r.shape));
    if (off + n > r.payload.size())
        throw CheckpointError("tensor " + r.name + ": truncated int8 payload");
    q.q.assign(r.payload.begin() + static_cast<ptrdiff_t>(off),
               r.payload.begin() + static_cast<ptrdiff_t>(off + n));
    return q;
}

}  // namespace detail

template <class S>
void save_quantized(const std::string& path, const QuantizedModel<S>& qm) {
    std::vector<RawTensor> recs;
    for (const auto& [name, pt] : qm.palettized)
        recs.push_back(detail::pal_to_raw(name, pt));
    for (const auto& [name, q] : qm.int8) recs.push_back(detail::int8_to_raw(name, q));
    for (const auto& [name, t] : qm.floats) recs.push_back(to_raw(name, t));
    write_checkpoint(path, recs);
}

template <class S>
QuantizedModel<S> load_quantized(const std::string& path, const ModelConfig& cfg) {
    QuantizedModel<S> qm;
    qm.cfg = cfg;
    for (const auto& r : read_checkpoint(path)) {
        TensorScheme s;
        switch (r.dtype) {
            case DType::Pal2:
            case DType::Pal4: {
                auto pt = detail::pal_from_raw<S>(r);
                s.kind = r.dtype == DType::Pal2 ? TensorScheme::Kind::Pal2
                                                : TensorScheme::Kind::Pal4;
                s.axis = pt.axis;
                s.group_size = pt.group_size;
                qm.palettized[r.name] = std::move(pt);
                break;
            }
            case DType::Int8PC:
                s.kind = TensorScheme::Kind::Int8PC;
                qm.int8[r.name] = detail::int8_from_raw<S>(r);
                break;
            case DType::F32:
            case DType::F64: {
                auto t = Tensor<S>::zeros(r.shape);
                load_raw_into(r, t);
                s.kind = TensorScheme::Kind::Float32;
                qm.floats[r.name] = std::move(t);
                break;
            }
            default:
                throw CheckpointError("quantized checkpoint " + path +
                                      ": unexpected dtype for " + r.name);
        }
        qm.plan.schemes[r.name] = s;
    }
    return qm;
}

}  // namespace lmlab

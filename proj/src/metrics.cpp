// Copyright (C) 2026 the lmlab authors
// SPDX-License-Identifier: Apache-2.0
//
#include "lmlab/io/metrics.hpp"

#include <json.hpp>

#include <cstdio>

namespace lmlab {

MetricsWriter::MetricsWriter(const std::string& path) {
    file_ = std::fopen(path.c_str(), "w");
    if (!file_) throw Error("cannot open metrics file " + path);
}

MetricsWriter::~MetricsWriter() {
    if (file_) std::fclose(static_cast<FILE*>(file_));
}

void MetricsWriter::write(const MetricsRecord& rec) {
    if (!file_) return;
    if (any_ && rec.step < last_step_)
        throw Error("metrics: step " + std::to_string(rec.step) +
                    " is not monotone after " + std::to_string(last_step_));
    last_step_ = rec.step;
    any_ = true;
    nlohmann::json j{{"step", rec.step},       {"stage", rec.stage},
                     {"loss", rec.loss},       {"lr", rec.lr},
                     {"grad_norm", rec.grad_norm}, {"tokens_seen", rec.tokens_seen},
                     {"wall_ms", rec.wall_ms}};
    for (const auto& [k, v] : rec.extra) j[k] = v;
    const std::string line = j.dump();
    std::fprintf(static_cast<FILE*>(file_), "%s\n", line.c_str());
    std::fflush(static_cast<FILE*>(file_));
}

}  // namespace lmlab

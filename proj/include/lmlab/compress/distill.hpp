// Copyright (C) 2026 the lmlab authors
// SPDX-License-Identifier: Apache-2.0
//
// Distillation targets: a convex combination of the true label and the
// teacher's top-1 prediction (weight w_teacher on the teacher), summed when
// they coincide. Loss is cross-entropy against the resulting distribution.
#pragma once

#include <span>
#include <vector>

#include "lmlab/tensor/tensor.hpp"

namespace lmlab {

template <class S>
Tensor<S> distill_targets(std::span<const int32_t> true_labels,
                          const Tensor<S>& teacher_logits, S w_teacher) {
    if (w_teacher < S(0) || w_teacher > S(1))
        throw ConfigError("distill_targets: teacher weight must be in [0, 1]");
    if (teacher_logits.rank() != 2)
        throw ShapeError("distill_targets: teacher logits must be rank-2");
    const int64_t n = teacher_logits.dim(0), v = teacher_logits.dim(1);
    if (static_cast<int64_t>(true_labels.size()) != n)
        throw ShapeError("distill_targets: label count mismatch");
    auto out = Tensor<S>::zeros({n, v});
    ConstMatMap<S> tl(teacher_logits.value().data(), n, v);
    MatMap<S> p(out.value_mut().data(), n, v);
    for (int64_t r = 0; r < n; ++r) {
        Eigen::Index top;
        tl.row(r).maxCoeff(&top);
        const int32_t truth = true_labels[static_cast<size_t>(r)];
        if (truth < 0 || truth >= v)
            throw DomainError("distill_targets: label out of range");
        p(r, top) += w_teacher;
        p(r, truth) += S(1) - w_teacher;
    }
    return out;
}

// Cross-entropy of student logits against the combined targets.
template <class S>
Tensor<S> distill_loss(const Tensor<S>& student_logits, std::span<const int32_t> true_labels,
                       const Tensor<S>& teacher_logits, S w_teacher) {
    return cross_entropy_soft(student_logits,
                              distill_targets(true_labels, teacher_logits, w_teacher));
}

}  // namespace lmlab

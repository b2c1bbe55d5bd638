#pragma once

#include <cstdint>
#include <vector>

#include "fedrefine/model.hpp"

namespace fedrefine {

struct LmTrainHyper {
  uint64_t seed = 0;
  size_t steps = 0;
  size_t batch = 16;
  double lr = 1e-3;
};

// Next-token cross-entropy over every position of each sampled line, Adam
// updates in place.  Returns one mean loss per step; throws DivergenceError
// if the loss ever goes non-finite.  Zero steps is a no-op.
std::vector<double> train_lm(TransformerModel& m, const std::vector<TokenSeq>& corpus,
                             const LmTrainHyper& hp);

// Mean cross-entropy of `m` on the corpus (no updates), same per-line
// normalization as training.
double lm_loss(const TransformerModel& m, const std::vector<TokenSeq>& corpus);

}  // namespace fedrefine

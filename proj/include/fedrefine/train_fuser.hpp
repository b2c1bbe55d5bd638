#pragma once

#include <cstdint>
#include <vector>

#include "fedrefine/fuser.hpp"
#include "fedrefine/model.hpp"

namespace fedrefine {

// One supervised fusion example.  The sender and receiver see their own
// (possibly differently rephrased) inputs; `continuation` is the teacher
// sequence fed to the receiver on top of the fused context, so predictions
// at its positions 0..n-2 are scored against positions 1..n-1.
struct FuserSample {
  TokenSeq sender_input;
  TokenSeq receiver_input;
  TokenSeq continuation;
};

struct FuserTrainHyper {
  uint64_t seed = 0;
  size_t steps = 0;
  size_t batch = 8;
  double lr = 1e-3;
  FuseMode mode = FuseMode::Mix;
};

struct FuserTrainResult {
  Fuser fuser;
  std::vector<double> curve;
};

// Builds a fuser for the pair and trains projections and gates jointly;
// both models stay frozen (the receiver pass only produces gradients with
// respect to the fused past rows).  Zero steps returns the initialization
// unchanged.  Throws DivergenceError with the step index on non-finite loss.
FuserTrainResult train_fuser(const TransformerModel& sender_m, const TransformerModel& receiver_m,
                             const std::vector<FuserSample>& corpus, const FuserTrainHyper& hp);

}  // namespace fedrefine

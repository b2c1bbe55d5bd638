#include "fedrefine/train_fuser.hpp"

#include <cmath>
#include <stdexcept>

#include "fedrefine/errors.hpp"
#include "fedrefine/model_grad.hpp"
#include "fedrefine/nn_ops.hpp"
#include "fedrefine/optim.hpp"
#include "fedrefine/rng.hpp"

namespace fedrefine {

namespace {

void check_tokens_for(const ModelConfig& cfg, const TokenSeq& t, const char* what) {
  for (int x : t) {
    if (x < 0 || static_cast<size_t>(x) >= cfg.vocab_size)
      throw std::invalid_argument(std::string("train_fuser: ") + what +
                                  " token outside the model's vocabulary");
  }
}

void check_corpus(const TransformerModel& sender_m, const TransformerModel& receiver_m,
                  const std::vector<FuserSample>& corpus, FuseMode mode) {
  if (corpus.empty()) throw std::invalid_argument("train_fuser: empty corpus");
  for (const FuserSample& s : corpus) {
    if (s.sender_input.empty() || s.receiver_input.empty())
      throw std::invalid_argument("train_fuser: empty input");
    if (s.continuation.size() < 2)
      throw std::invalid_argument("train_fuser: continuation needs at least two tokens");
    check_tokens_for(sender_m.config, s.sender_input, "sender");
    check_tokens_for(receiver_m.config, s.receiver_input, "receiver");
    check_tokens_for(receiver_m.config, s.continuation, "continuation");
    if (mode == FuseMode::Mix && s.sender_input.size() != s.receiver_input.size())
      throw std::invalid_argument(
          "train_fuser: Mix fusion needs sender and receiver inputs of equal length");
    size_t prefix = mode == FuseMode::Mix
                        ? s.receiver_input.size()
                        : s.sender_input.size() + s.receiver_input.size();
    if (prefix + s.continuation.size() - 1 > receiver_m.config.max_seq)
      throw std::invalid_argument("train_fuser: sample exceeds the receiver's max_seq");
    if (s.sender_input.size() > sender_m.config.max_seq)
      throw std::invalid_argument("train_fuser: sample exceeds the sender's max_seq");
  }
}

}  // namespace

FuserTrainResult train_fuser(const TransformerModel& sender_m, const TransformerModel& receiver_m,
                             const std::vector<FuserSample>& corpus, const FuserTrainHyper& hp) {
  sender_m.validate();
  receiver_m.validate();
  check_corpus(sender_m, receiver_m, corpus, hp.mode);
  if (hp.batch == 0) throw std::invalid_argument("train_fuser: batch must be positive");

  FuserTrainResult out;
  out.fuser = make_fuser(sender_m.config, receiver_m.config, hp.mode, hp.seed);
  if (hp.steps == 0) return out;
  Fuser& f = out.fuser;

  // Both models are frozen, so every sample's sender cache and receiver own
  // cache are fixed for the whole run; compute them once.  In Concat mode
  // the own segment sits right after the projected prefix, so the receiver
  // prefills at that offset.
  std::vector<KvCache> sender_caches, own_caches;
  sender_caches.reserve(corpus.size());
  own_caches.reserve(corpus.size());
  for (const FuserSample& s : corpus) {
    sender_caches.push_back(prefill(sender_m, s.sender_input).cache);
    size_t own_base = hp.mode == FuseMode::Mix ? 0 : s.sender_input.size();
    own_caches.push_back(prefill(receiver_m, s.receiver_input, own_base).cache);
  }

  auto rng = make_rng(derive_seed(hp.seed, 1));
  std::uniform_int_distribution<size_t> pick(0, corpus.size() - 1);
  OptimizerState opt = make_adam(hp.lr);
  FuserGrads grads = zero_fuser_grads(f);
  ParamRefs pr = f.params();
  ParamRefs gr = grads.params();

  out.curve.reserve(hp.steps);
  ProjTrace ptrace;
  Trace trace;
  for (size_t step = 0; step < hp.steps; ++step) {
    zero_blocks(gr);
    double loss = 0.0;
    double scale = 1.0 / static_cast<double>(hp.batch);
    for (size_t b = 0; b < hp.batch; ++b) {
      size_t idx = pick(rng);
      const FuserSample& s = corpus[idx];
      // The corpus was validated up front, so a numeric exception inside the
      // step can only mean the parameters blew up.
      try {
        KvCache proj = project_cache_traced(f, sender_caches[idx], ptrace);
        KvCache fused = fuse(f, proj, own_caches[idx]);

        TokenSeq feed(s.continuation.begin(), s.continuation.end() - 1);
        size_t n_pred = feed.size();
        BatchResult r = forward_batch(receiver_m, feed, &fused, 0, &trace);

        std::vector<std::vector<double>> dlogits(n_pred);
        double sample_loss = 0.0;
        for (size_t t = 0; t < n_pred; ++t) {
          for (double v : r.logits[t]) {
            if (!std::isfinite(v))
              throw DivergenceError("train_fuser: non-finite logits", step);
          }
          int target = s.continuation[t + 1];
          sample_loss += cross_entropy(r.logits[t], target);
          std::vector<double> p = softmax(r.logits[t]);
          p[static_cast<size_t>(target)] -= 1.0;
          double sc = scale / static_cast<double>(n_pred);
          for (double& g : p) g *= sc;
          dlogits[t] = std::move(p);
        }
        loss += sample_loss / static_cast<double>(n_pred);

        PastKvGrads past = zero_past_grads(receiver_m.config, fused.seq_len);
        backward_batch(receiver_m, trace, r.cache, dlogits, nullptr, &past);
        FuseBackward fb = fuse_backward(f, proj, own_caches[idx], past);
        project_backward(f, ptrace, fb.dproj, grads);
        for (size_t l = 0; l < f.layers.size(); ++l)
          grads.layers[l].gate_raw += fb.dgate_raw[l];
      } catch (const std::invalid_argument& e) {
        throw DivergenceError(std::string("train_fuser: non-finite forward: ") + e.what(),
                              step);
      }
    }
    loss *= scale;
    if (!std::isfinite(loss)) throw DivergenceError("train_fuser: non-finite loss", step);
    optimizer_step(opt, pr, gr);
    out.curve.push_back(loss);
  }
  return out;
}

}  // namespace fedrefine

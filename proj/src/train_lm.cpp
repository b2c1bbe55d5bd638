#include "fedrefine/train_lm.hpp"

#include <cmath>
#include <stdexcept>

#include "fedrefine/errors.hpp"
#include "fedrefine/model_grad.hpp"
#include "fedrefine/nn_ops.hpp"
#include "fedrefine/optim.hpp"
#include "fedrefine/rng.hpp"

namespace fedrefine {

namespace {

void check_corpus(const ModelConfig& cfg, const std::vector<TokenSeq>& corpus) {
  if (corpus.empty()) throw std::invalid_argument("train_lm: empty corpus");
  for (const TokenSeq& line : corpus) {
    if (line.size() < 2)
      throw std::invalid_argument("train_lm: every line needs at least two tokens");
    if (line.size() > cfg.max_seq)
      throw std::invalid_argument("train_lm: line longer than max_seq");
    for (int t : line) {
      if (t < 0 || static_cast<size_t>(t) >= cfg.vocab_size)
        throw std::invalid_argument("train_lm: token id outside vocabulary");
    }
  }
}

// Mean next-token cross-entropy of one line; fills dlogits (scaled by
// `scale`) when non-null.
double line_loss(const TransformerModel& m, const TokenSeq& line, double scale,
                 Trace* trace, std::vector<std::vector<double>>* dlogits, KvCache* cache_out) {
  size_t n_pred = line.size() - 1;
  BatchResult r = forward_batch(m, line, nullptr, 0, trace);
  double loss = 0.0;
  if (dlogits) dlogits->assign(line.size(), {});
  for (size_t t = 0; t < n_pred; ++t) {
    for (double v : r.logits[t]) {
      if (!std::isfinite(v)) throw DivergenceError("non-finite logits", 0);
    }
    int target = line[t + 1];
    loss += cross_entropy(r.logits[t], target);
    if (dlogits) {
      std::vector<double> p = softmax(r.logits[t]);
      p[static_cast<size_t>(target)] -= 1.0;
      double s = scale / static_cast<double>(n_pred);
      for (double& g : p) g *= s;
      (*dlogits)[t] = std::move(p);
    }
  }
  if (dlogits) {
    // The final position predicts nothing; its logits get zero gradient.
    (*dlogits)[n_pred].assign(m.config.vocab_size, 0.0);
  }
  if (cache_out) *cache_out = std::move(r.cache);
  return loss / static_cast<double>(n_pred);
}

}  // namespace

std::vector<double> train_lm(TransformerModel& m, const std::vector<TokenSeq>& corpus,
                             const LmTrainHyper& hp) {
  if (hp.steps == 0) return {};
  if (hp.batch == 0) throw std::invalid_argument("train_lm: batch must be positive");
  check_corpus(m.config, corpus);

  auto rng = make_rng(hp.seed);
  std::uniform_int_distribution<size_t> pick(0, corpus.size() - 1);
  OptimizerState opt = make_adam(hp.lr);
  LmGrads grads = zero_grads(m);
  ParamRefs pr = m.params();
  ParamRefs gr = grads.params();

  std::vector<double> curve;
  curve.reserve(hp.steps);
  Trace trace;
  std::vector<std::vector<double>> dlogits;
  KvCache cache;
  for (size_t step = 0; step < hp.steps; ++step) {
    zero_blocks(gr);
    double loss = 0.0;
    double scale = 1.0 / static_cast<double>(hp.batch);
    for (size_t b = 0; b < hp.batch; ++b) {
      const TokenSeq& line = corpus[pick(rng)];
      // The corpus was validated up front, so a numeric exception inside the
      // step can only mean the parameters blew up.
      try {
        loss += line_loss(m, line, scale, &trace, &dlogits, &cache);
        backward_batch(m, trace, cache, dlogits, &grads, nullptr);
      } catch (const DivergenceError& e) {
        throw DivergenceError(e.what(), step);
      } catch (const std::invalid_argument& e) {
        throw DivergenceError(std::string("train_lm: non-finite forward: ") + e.what(), step);
      }
    }
    loss *= scale;
    if (!std::isfinite(loss)) throw DivergenceError("train_lm: non-finite loss", step);
    optimizer_step(opt, pr, gr);
    curve.push_back(loss);
  }
  return curve;
}

double lm_loss(const TransformerModel& m, const std::vector<TokenSeq>& corpus) {
  check_corpus(m.config, corpus);
  double total = 0.0;
  for (const TokenSeq& line : corpus)
    total += line_loss(m, line, 0.0, nullptr, nullptr, nullptr);
  return total / static_cast<double>(corpus.size());
}

}  // namespace fedrefine

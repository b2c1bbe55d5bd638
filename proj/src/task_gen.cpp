#include "fedrefine/task_gen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "fedrefine/rng.hpp"

namespace fedrefine {

namespace {
constexpr size_t kVariants = 6;
constexpr size_t kHintsPerVariant = 2;
}  // namespace

void TaskSpec::validate() const {
  if (n_facts == 0) throw std::invalid_argument("task needs at least one fact");
  if (!(receiver_share >= 0.0 && receiver_share <= 1.0))
    throw std::invalid_argument("receiver_share must lie in [0,1]");
  if (!(overlap >= 0.0 && overlap <= 1.0))
    throw std::invalid_argument("overlap must lie in [0,1]");
  size_t receiver_facts =
      std::min(n_facts, static_cast<size_t>(std::llround(receiver_share * n_facts)));
  if (n_senders == 0 && receiver_facts < n_facts)
    throw std::invalid_argument(
        "unsatisfiable assignment: no senders, yet receiver_share leaves facts unowned");
}

int GeneratedTask::key_token(size_t key, size_t variant) const {
  if (key >= synonym_groups.size() || variant >= synonym_groups[key].size())
    throw std::out_of_range("key or variant index out of range");
  return synonym_groups[key][variant];
}

int GeneratedTask::label_of(int token) const {
  for (size_t k = 0; k < synonym_groups.size(); ++k)
    for (int t : synonym_groups[k])
      if (t == token) return static_cast<int>(k);
  return -1;
}

std::vector<size_t> GeneratedTask::scheduled_senders(size_t fact) const {
  if (fact >= facts.size()) throw std::out_of_range("fact index out of range");
  std::vector<size_t> out;
  for (int owner : facts[fact].owners)
    if (owner >= 1) out.push_back(static_cast<size_t>(owner - 1));
  return out;
}

GeneratedTask gen_partitioned_qa(const TaskSpec& spec) {
  spec.validate();
  auto rng = make_rng(derive_seed(spec.seed, 0));

  GeneratedTask task;
  task.n_variants = kVariants;

  std::vector<std::string> words;
  task.synonym_groups.assign(spec.n_facts, {});
  for (size_t k = 0; k < spec.n_facts; ++k) {
    for (size_t v = 0; v < kVariants; ++v) {
      task.synonym_groups[k].push_back(static_cast<int>(words.size()));
      words.push_back("k" + std::to_string(k) + std::string(1, static_cast<char>('a' + v)));
    }
  }
  std::vector<int> value_tokens;
  for (size_t j = 0; j < spec.n_facts; ++j) {
    value_tokens.push_back(static_cast<int>(words.size()));
    words.push_back("v" + std::to_string(j));
  }
  int sep = static_cast<int>(words.size());
  words.push_back("?");
  int end = static_cast<int>(words.size());
  words.push_back(".");
  int rew = static_cast<int>(words.size());
  words.push_back("&");
  task.vocab = Vocab::from_words(words);
  task.sep_token = sep;
  task.end_token = end;
  task.rewrite_token = rew;

  // Facts: each key maps to a distinct value, in a shuffled correspondence.
  std::vector<size_t> value_perm(spec.n_facts);
  std::iota(value_perm.begin(), value_perm.end(), 0);
  std::shuffle(value_perm.begin(), value_perm.end(), rng);
  task.facts.resize(spec.n_facts);
  for (size_t k = 0; k < spec.n_facts; ++k) {
    task.facts[k].key = k;
    task.facts[k].value_word = task.vocab.word(value_tokens[value_perm[k]]);
  }

  // Ownership: a shuffled pool of facts; the receiver takes the first slice,
  // the senders split the rest into contiguous blocks, and `overlap` lets
  // each sender share the head of the next sender's block (cyclically).
  std::vector<size_t> pool(spec.n_facts);
  std::iota(pool.begin(), pool.end(), 0);
  std::shuffle(pool.begin(), pool.end(), rng);
  size_t receiver_facts =
      std::min(spec.n_facts, static_cast<size_t>(std::llround(spec.receiver_share * spec.n_facts)));
  for (size_t i = 0; i < receiver_facts; ++i) task.facts[pool[i]].owners.push_back(0);

  std::vector<std::vector<size_t>> blocks(spec.n_senders);
  size_t rest = spec.n_facts - receiver_facts;
  size_t cursor = receiver_facts;
  for (size_t s = 0; s < spec.n_senders; ++s) {
    size_t take = rest / spec.n_senders + (s < rest % spec.n_senders ? 1 : 0);
    for (size_t i = 0; i < take; ++i) blocks[s].push_back(pool[cursor++]);
  }
  for (size_t s = 0; s < spec.n_senders; ++s) {
    for (size_t f : blocks[s]) task.facts[f].owners.push_back(static_cast<int>(s + 1));
    if (spec.overlap > 0.0 && spec.n_senders > 1) {
      const std::vector<size_t>& next = blocks[(s + 1) % spec.n_senders];
      size_t shared = static_cast<size_t>(std::ceil(spec.overlap * next.size()));
      for (size_t i = 0; i < std::min(shared, next.size()); ++i) {
        Fact& f = task.facts[next[i]];
        int me = static_cast<int>(s + 1);
        if (std::find(f.owners.begin(), f.owners.end(), me) == f.owners.end())
          f.owners.push_back(me);
      }
    }
  }
  for (const Fact& f : task.facts)
    if (f.owners.empty()) throw std::invalid_argument("internal: fact left unowned");

  auto fact_line = [&](size_t fact, size_t variant) {
    return TokenSeq{task.key_token(fact, variant), sep,
                    task.vocab.id(task.facts[fact].value_word), end};
  };

  // Per-party fact lines cover every surface variant so rephrased queries
  // stay answerable.
  task.sender_corpora.assign(spec.n_senders, {});
  for (size_t f = 0; f < spec.n_facts; ++f) {
    for (int owner : task.facts[f].owners) {
      for (size_t v = 0; v < kVariants; ++v) {
        if (owner == 0)
          task.receiver_corpus.push_back(fact_line(f, v));
        else
          task.sender_corpora[static_cast<size_t>(owner - 1)].push_back(fact_line(f, v));
      }
    }
  }

  // Hint lines teach the receiver the copy rule used by token collaboration:
  // a value stated before the question is the answer.  Hint values are
  // random so the rule, not the fact, is what gets learned.
  std::uniform_int_distribution<size_t> pick_value(0, spec.n_facts - 1);
  for (size_t f = 0; f < spec.n_facts; ++f) {
    for (size_t v = 0; v < kVariants; ++v) {
      for (size_t h = 0; h < kHintsPerVariant; ++h) {
        int hint = value_tokens[pick_value(rng)];
        task.receiver_corpus.push_back({hint, end, task.key_token(f, v), sep, hint, end});
      }
    }
  }

  // Rewrite lines teach the receiver to emit the next surface variant of a
  // key, which is what model-based rephrasing decodes.
  for (size_t f = 0; f < spec.n_facts; ++f)
    for (size_t v = 0; v < kVariants; ++v)
      task.receiver_corpus.push_back(
          {rew, task.key_token(f, v), sep, task.key_token(f, (v + 1) % kVariants), end});

  for (size_t f = 0; f < spec.n_facts; ++f)
    task.eval_set.push_back({f, {task.key_token(f, 0)}, task.facts[f].value_word});

  return task;
}

}  // namespace fedrefine

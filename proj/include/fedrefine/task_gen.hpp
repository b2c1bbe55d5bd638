#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedrefine/tokenizer.hpp"

namespace fedrefine {

// Synthetic partitioned-knowledge QA: facts are key->value pairs, keys have
// several surface variants (synonyms), and each fact is assigned to the
// receiver or to one or more senders.
struct TaskSpec {
  size_t n_facts = 16;
  size_t n_senders = 2;
  double receiver_share = 0.25;
  double overlap = 0.0;  // fraction of each sender block shared with the next sender
  uint64_t seed = 0;

  void validate() const;
};

struct Fact {
  size_t key = 0;               // semantic key index
  std::string value_word;       // ground-truth answer word
  std::vector<int> owners;      // party indices: 0 = receiver, 1..n = senders
};

struct EvalItem {
  size_t fact = 0;
  TokenSeq query;               // canonical surface: the variant-0 key token
  std::string answer;           // detokenized ground truth
};

struct GeneratedTask {
  Vocab vocab;
  int sep_token = -1;           // "?"
  int end_token = -1;           // "."
  int rewrite_token = -1;       // "&"
  size_t n_variants = 0;
  std::vector<Fact> facts;
  std::vector<TokenSeq> receiver_corpus;
  std::vector<std::vector<TokenSeq>> sender_corpora;  // one corpus per sender
  std::vector<std::vector<int>> synonym_groups;       // per key: its variant tokens
  std::vector<EvalItem> eval_set;

  int key_token(size_t key, size_t variant) const;
  // Semantic key index of a key-variant token, -1 for every other token.
  // This is the task-label oracle: rephrasing may change the surface but
  // never the label.
  int label_of(int token) const;
  // Sender indices (0-based) that own the fact; the receiver is excluded.
  std::vector<size_t> scheduled_senders(size_t fact) const;
};

GeneratedTask gen_partitioned_qa(const TaskSpec& spec);

}  // namespace fedrefine

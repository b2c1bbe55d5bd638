#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace fedrefine {

using TokenSeq = std::vector<int>;

// Whitespace-delimited word vocabulary.  Token ids are dense indices into
// `words`; out-of-alphabet symbols are rejected rather than mapped.
struct Vocab {
  std::vector<std::string> words;
  std::unordered_map<std::string, int> index;

  static Vocab from_words(std::vector<std::string> words);
  size_t size() const { return words.size(); }
  bool contains(const std::string& w) const { return index.count(w) > 0; }
  int id(const std::string& w) const;
  const std::string& word(int id) const;

  void save(const std::string& path) const;
  static Vocab load(const std::string& path);
};

TokenSeq tokenize(const Vocab& vocab, const std::string& text);
std::string detokenize(const Vocab& vocab, const TokenSeq& ids);

}  // namespace fedrefine

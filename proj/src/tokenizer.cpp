#include "fedrefine/tokenizer.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "fedrefine/errors.hpp"

namespace fedrefine {

Vocab Vocab::from_words(std::vector<std::string> words) {
  Vocab v;
  v.words = std::move(words);
  for (size_t i = 0; i < v.words.size(); ++i) {
    if (v.words[i].empty()) throw std::invalid_argument("Vocab: empty word");
    auto [it, fresh] = v.index.emplace(v.words[i], static_cast<int>(i));
    if (!fresh) throw std::invalid_argument("Vocab: duplicate word " + v.words[i]);
  }
  return v;
}

int Vocab::id(const std::string& w) const {
  auto it = index.find(w);
  if (it == index.end()) throw std::invalid_argument("Vocab: unknown word " + w);
  return it->second;
}

const std::string& Vocab::word(int id) const {
  if (id < 0 || static_cast<size_t>(id) >= words.size())
    throw std::invalid_argument("Vocab: token id out of range");
  return words[id];
}

void Vocab::save(const std::string& path) const {
  nlohmann::json j;
  j["version"] = 1;
  j["words"] = words;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("Vocab::save: cannot open " + path);
  out << j.dump(2) << "\n";
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("Vocab::load: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
    if (!j.contains("version") || j["version"].get<int>() != 1)
      throw ConfigError("Vocab::load: unsupported version in " + path);
    return from_words(j["words"].get<std::vector<std::string>>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("Vocab::load: malformed file " + path + ": " + e.what());
  }
}

TokenSeq tokenize(const Vocab& vocab, const std::string& text) {
  TokenSeq ids;
  std::istringstream ss(text);
  std::string w;
  while (ss >> w) ids.push_back(vocab.id(w));
  return ids;
}

std::string detokenize(const Vocab& vocab, const TokenSeq& ids) {
  std::string out;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += vocab.word(ids[i]);
  }
  return out;
}

}  // namespace fedrefine

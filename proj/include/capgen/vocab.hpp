#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "capgen/error.hpp"
#include "capgen/rng.hpp"
#include "capgen/tensor.hpp"

namespace capgen {

/// Multi-word brand normalization rules ("coca cola" -> "cocacola").
/// User-extensible; loaded from a two-column text file where the last token
/// of each line is the replacement and the preceding tokens are the phrase.
class SubstitutionTable {
 public:
  void add(std::vector<std::string> phrase, std::string replacement) {
    if (phrase.empty()) throw DataError("substitution with empty phrase");
    rules_.push_back({std::move(phrase), std::move(replacement)});
    std::stable_sort(rules_.begin(), rules_.end(), [](const Rule& a, const Rule& b) {
      return a.phrase.size() > b.phrase.size();  // longest match first
    });
  }

  static SubstitutionTable defaults() {
    SubstitutionTable t;
    t.add({"coca", "cola"}, "cocacola");
    return t;
  }

  static SubstitutionTable load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open substitution table: " + path);
    SubstitutionTable t;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty() || line[0] == '#') continue;
      std::istringstream is(line);
      std::vector<std::string> toks;
      std::string tok;
      while (is >> tok) toks.push_back(tok);
      if (toks.size() < 2) {
        throw DataError(path + " line " + std::to_string(lineno) +
                        ": expected phrase tokens followed by a replacement");
      }
      std::string repl = toks.back();
      toks.pop_back();
      t.add(std::move(toks), std::move(repl));
    }
    return t;
  }

  // Applies rules to a token stream, longest phrase first at each position.
  std::vector<std::string> apply(std::vector<std::string> tokens) const {
    if (rules_.empty()) return tokens;
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < tokens.size()) {
      const Rule* hit = nullptr;
      for (const Rule& r : rules_) {
        if (i + r.phrase.size() > tokens.size()) continue;
        if (std::equal(r.phrase.begin(), r.phrase.end(), tokens.begin() + i)) {
          hit = &r;
          break;
        }
      }
      if (hit) {
        out.push_back(hit->replacement);
        i += hit->phrase.size();
      } else {
        out.push_back(std::move(tokens[i]));
        ++i;
      }
    }
    return out;
  }

 private:
  struct Rule {
    std::vector<std::string> phrase;
    std::string replacement;
  };
  std::vector<Rule> rules_;
};

/// Lowercased, punctuation-stripped, whitespace-split tokens with brand
/// phrases joined per the substitution table.
inline std::vector<std::string> tokenize(std::string_view text,
                                         const SubstitutionTable& subs) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : text) {
    const unsigned char c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return subs.apply(std::move(tokens));
}

inline std::vector<std::string> tokenize(std::string_view text) {
  return tokenize(text, SubstitutionTable::defaults());
}

inline std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

/// Token <-> index bijection with reserved start/end/unknown tokens at
/// fixed indices 0, 1, 2.
class Vocabulary {
 public:
  static constexpr std::size_t kStart = 0;
  static constexpr std::size_t kEnd = 1;
  static constexpr std::size_t kUnk = 2;
  static constexpr const char* kStartToken = "<s>";
  static constexpr const char* kEndToken = "</s>";
  static constexpr const char* kUnkToken = "<unk>";

  Vocabulary() = default;

  static Vocabulary from_tokens(std::vector<std::string> tokens) {
    if (tokens.size() < 4 || tokens[0] != kStartToken || tokens[1] != kEndToken ||
        tokens[2] != kUnkToken) {
      throw DataError("vocabulary must start with reserved tokens and hold >= 4 entries");
    }
    Vocabulary v;
    v.tokens_ = std::move(tokens);
    for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
      if (!v.index_.emplace(v.tokens_[i], i).second) {
        throw DataError("duplicate vocabulary token: " + v.tokens_[i]);
      }
    }
    return v;
  }

  std::size_t size() const { return tokens_.size(); }

  bool contains(const std::string& tok) const { return index_.count(tok) != 0; }

  /// Index of tok, or the unknown index when absent.
  std::size_t index(const std::string& tok) const {
    auto it = index_.find(tok);
    return it == index_.end() ? kUnk : it->second;
  }

  const std::string& token(std::size_t idx) const {
    if (idx >= tokens_.size()) {
      throw DataError("vocabulary index " + std::to_string(idx) + " out of range");
    }
    return tokens_[idx];
  }

  const std::vector<std::string>& tokens() const { return tokens_; }

  /// Content fingerprint used to pair checkpoints with their word space.
  std::uint64_t hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const std::string& t : tokens_) {
      h = fnv1a64(t, h);
      h = fnv1a64("\x1f", h);
    }
    return h;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Frequency-filtered vocabulary over tokenized captions. Classwords are
/// always kept regardless of frequency; ordering is frequency descending,
/// ties broken lexicographically.
inline Vocabulary build_vocab(const std::vector<std::vector<std::string>>& captions,
                              std::size_t min_count,
                              const std::vector<std::string>& classwords = {}) {
  if (min_count < 1) throw ContractError("build_vocab: min_count must be >= 1");
  if (captions.empty()) throw DataError("build_vocab: empty caption corpus");
  std::map<std::string, std::size_t> freq;
  for (const auto& cap : captions)
    for (const auto& tok : cap) ++freq[tok];
  std::vector<std::string> kept;
  for (const auto& [tok, n] : freq) {
    if (n >= min_count) kept.push_back(tok);
  }
  for (const auto& cw : classwords) {
    if (!freq.count(cw) || freq[cw] < min_count) {
      if (std::find(kept.begin(), kept.end(), cw) == kept.end()) kept.push_back(cw);
    }
  }
  std::sort(kept.begin(), kept.end(), [&](const std::string& a, const std::string& b) {
    const std::size_t fa = freq.count(a) ? freq[a] : 0;
    const std::size_t fb = freq.count(b) ? freq[b] : 0;
    if (fa != fb) return fa > fb;
    return a < b;
  });
  std::vector<std::string> tokens{Vocabulary::kStartToken, Vocabulary::kEndToken,
                                  Vocabulary::kUnkToken};
  tokens.insert(tokens.end(), kept.begin(), kept.end());
  return Vocabulary::from_tokens(std::move(tokens));
}

/// Class label -> classword token map plus the derived 0/1 mask vector k.
class ClasswordRegistry {
 public:
  ClasswordRegistry() = default;

  void add(const std::string& label, const std::string& classword) {
    auto it = map_.find(label);
    if (it != map_.end()) {
      if (it->second != classword) {
        throw DataError("conflicting classword for label '" + label + "'");
      }
      return;
    }
    for (const auto& [l, cw] : map_) {
      if (cw == classword) {
        throw DataError("classword '" + classword + "' already bound to label '" + l + "'");
      }
    }
    map_.emplace(label, classword);
  }

  /// Labels become classwords directly; each must tokenize to one token.
  static ClasswordRegistry from_labels(const std::vector<std::string>& labels,
                                       const SubstitutionTable& subs) {
    ClasswordRegistry r;
    for (const auto& label : labels) {
      auto toks = tokenize(label, subs);
      if (toks.size() != 1) {
        throw DataError("class label '" + label + "' does not normalize to a single classword");
      }
      r.add(label, toks[0]);
    }
    return r;
  }

  bool empty() const { return map_.empty(); }
  std::size_t n_classes() const { return map_.size(); }
  bool has(const std::string& label) const { return map_.count(label) != 0; }

  const std::string& classword(const std::string& label) const {
    auto it = map_.find(label);
    if (it == map_.end()) throw DataError("class '" + label + "' not in registry");
    return it->second;
  }

  /// Labels in deterministic (lexicographic) order; defines class positions.
  std::vector<std::string> labels() const {
    std::vector<std::string> out;
    out.reserve(map_.size());
    for (const auto& [l, cw] : map_) out.push_back(l);
    return out;
  }

  std::size_t class_position(const std::string& label) const {
    std::size_t pos = 0;
    for (const auto& [l, cw] : map_) {
      if (l == label) return pos;
      ++pos;
    }
    throw DataError("class '" + label + "' not in registry");
  }

  /// Vocabulary index of each class's classword, in label order.
  std::vector<std::size_t> classword_indices(const Vocabulary& vocab) const {
    std::vector<std::size_t> out;
    out.reserve(map_.size());
    for (const auto& [l, cw] : map_) {
      if (!vocab.contains(cw)) {
        throw DataError("classword '" + cw + "' missing from vocabulary");
      }
      out.push_back(vocab.index(cw));
    }
    return out;
  }

  /// Mask vector k: one at every classword index.
  Tensor mask(const Vocabulary& vocab) const {
    std::vector<double> k(vocab.size(), 0.0);
    for (std::size_t idx : classword_indices(vocab)) k[idx] = 1.0;
    return Tensor::of({vocab.size()}, std::move(k));
  }

  void merge(const ClasswordRegistry& other) {
    for (const auto& [l, cw] : other.map_) add(l, cw);
  }

 private:
  std::map<std::string, std::string> map_;  // ordered: label order is class order
};

}  // namespace capgen

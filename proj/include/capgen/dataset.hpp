#pragma once

#include <array>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "capgen/error.hpp"
#include "capgen/rng.hpp"
#include "capgen/vocab.hpp"

namespace capgen {

/// One image record: feature vector, tokenized reference captions, optional
/// class label, optional per-annotator ratings (3 kinds x annotators, each
/// value in 0..4).
struct Example {
  std::string id;
  std::vector<double> features;
  std::vector<std::vector<std::string>> captions;
  std::optional<std::string> label;
  std::optional<std::array<std::vector<int>, 3>> ratings;

  bool operator==(const Example&) const = default;
};

struct Dataset {
  std::vector<Example> examples;
  Vocabulary vocab;
  ClasswordRegistry registry;
  std::size_t feature_dim = 0;

  std::size_t size() const { return examples.size(); }
};

/// Arithmetic mean of each rating kind over the annotators.
inline std::array<double, 3> mean_ratings(const Example& ex) {
  if (!ex.ratings) throw DataError("example '" + ex.id + "' has no ratings");
  std::array<double, 3> out{};
  for (std::size_t r = 0; r < 3; ++r) {
    const auto& row = (*ex.ratings)[r];
    double acc = 0.0;
    for (int v : row) acc += v;
    out[r] = acc / static_cast<double>(row.size());
  }
  return out;
}

namespace detail {

inline void validate_example(const Example& ex) {
  if (ex.captions.empty() || ex.captions.size() > 5) {
    throw DataError("expected 1..5 captions, got " + std::to_string(ex.captions.size()));
  }
  if (ex.features.empty()) throw DataError("empty feature vector");
  if (ex.ratings) {
    const std::size_t annotators = (*ex.ratings)[0].size();
    for (const auto& row : *ex.ratings) {
      if (row.empty() || row.size() != annotators) {
        throw DataError("ratings rows must share one annotator count");
      }
      for (int v : row) {
        if (v < 0 || v > 4) throw DataError("rating value " + std::to_string(v) + " not in 0..4");
      }
    }
  }
}

}  // namespace detail

/// Rebuilds vocabulary and classword registry from the loaded examples.
inline void index_dataset(Dataset& ds, std::size_t min_count, const SubstitutionTable& subs) {
  std::vector<std::string> labels;
  std::vector<std::vector<std::string>> captions;
  for (const Example& ex : ds.examples) {
    for (const auto& c : ex.captions) captions.push_back(c);
    if (ex.label && std::find(labels.begin(), labels.end(), *ex.label) == labels.end()) {
      labels.push_back(*ex.label);
    }
  }
  ds.registry = ClasswordRegistry::from_labels(labels, subs);
  std::vector<std::string> classwords;
  for (const auto& l : ds.registry.labels()) classwords.push_back(ds.registry.classword(l));
  ds.vocab = build_vocab(captions, min_count, classwords);
}

/// Reads a JSONL dataset. Each line holds one object with fields
/// id, features, captions and optional class / ratings.
inline Dataset load_dataset(const std::string& path, std::size_t min_count = 1,
                            const SubstitutionTable& subs = SubstitutionTable::defaults(),
                            std::ostream* warnings = &std::cerr) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset: " + path);
  Dataset ds;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path + " line " + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + ": invalid JSON: " + e.what());
    }
    try {
      Example ex;
      ex.id = j.at("id").get<std::string>();
      ex.features = j.at("features").get<std::vector<double>>();
      for (const auto& cap : j.at("captions")) {
        ex.captions.push_back(tokenize(cap.get<std::string>(), subs));
      }
      if (j.contains("class") && !j["class"].is_null()) {
        ex.label = j["class"].get<std::string>();
      }
      if (j.contains("ratings") && !j["ratings"].is_null()) {
        auto rows = j["ratings"].get<std::vector<std::vector<int>>>();
        if (rows.size() != 3) throw DataError("ratings must have exactly 3 rows");
        std::array<std::vector<int>, 3> r;
        for (std::size_t i = 0; i < 3; ++i) r[i] = std::move(rows[i]);
        ex.ratings = std::move(r);
      }
      detail::validate_example(ex);
      if (ds.examples.empty()) {
        ds.feature_dim = ex.features.size();
      } else if (ex.features.size() != ds.feature_dim) {
        throw DataError("feature length " + std::to_string(ex.features.size()) +
                        " differs from dataset dimension " + std::to_string(ds.feature_dim));
      }
      ds.examples.push_back(std::move(ex));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    }
  }
  if (ds.examples.empty()) throw DataError(path + ": dataset is empty");
  index_dataset(ds, min_count, subs);

  if (warnings && !ds.registry.empty()) {
    for (const Example& ex : ds.examples) {
      if (!ex.label) continue;
      const std::string& cw = ds.registry.classword(*ex.label);
      bool found = false;
      for (const auto& cap : ex.captions) {
        if (std::find(cap.begin(), cap.end(), cw) != cap.end()) found = true;
      }
      if (!found) {
        *warnings << "warning: " << path << ": example '" << ex.id << "' has class '"
                  << *ex.label << "' but no caption mentions its classword\n";
      }
    }
  }
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write dataset: " + path);
  for (const Example& ex : ds.examples) {
    nlohmann::ordered_json j;
    j["id"] = ex.id;
    if (ex.label) j["class"] = *ex.label;
    j["features"] = ex.features;
    nlohmann::ordered_json caps = nlohmann::ordered_json::array();
    for (const auto& c : ex.captions) caps.push_back(join_tokens(c));
    j["captions"] = std::move(caps);
    if (ex.ratings) {
      nlohmann::ordered_json rows = nlohmann::ordered_json::array();
      for (const auto& row : *ex.ratings) rows.push_back(row);
      j["ratings"] = std::move(rows);
    }
    out << j.dump() << '\n';
  }
  if (!out) throw DataError("write failed: " + path);
}

/// Union of two vocabularies: tokens of `a` keep their indices, unseen
/// tokens of `b` are appended in their `b` order.
inline Vocabulary merge_vocab(const Vocabulary& a, const Vocabulary& b) {
  std::vector<std::string> tokens = a.tokens();
  for (const auto& t : b.tokens()) {
    if (!a.contains(t)) tokens.push_back(t);
  }
  return Vocabulary::from_tokens(std::move(tokens));
}

/// Oversampled concatenation: every `specific` example `repeat` times plus
/// every `general` example once, deterministically interleaved.
inline Dataset fuse_datasets(const Dataset& specific, const Dataset& general,
                             std::size_t repeat, std::uint64_t seed = 0x5eedf00d) {
  if (repeat < 1) throw ContractError("fuse_datasets: repeat must be >= 1");
  if (specific.feature_dim != general.feature_dim) {
    throw DimensionError("fuse_datasets: feature dimensions differ: " +
                         std::to_string(specific.feature_dim) + " vs " +
                         std::to_string(general.feature_dim));
  }
  Dataset fused;
  fused.feature_dim = specific.feature_dim;
  fused.vocab = merge_vocab(specific.vocab, general.vocab);
  fused.registry = specific.registry;
  fused.registry.merge(general.registry);
  fused.examples.reserve(repeat * specific.size() + general.size());
  for (std::size_t r = 0; r < repeat; ++r) {
    for (const Example& ex : specific.examples) fused.examples.push_back(ex);
  }
  for (const Example& ex : general.examples) fused.examples.push_back(ex);
  Rng rng(seed);
  rng.shuffle(fused.examples);
  return fused;
}

/// Seeded train/test split; both halves share the parent's vocabulary.
inline std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double test_fraction,
                                                 std::uint64_t seed) {
  if (test_fraction <= 0.0 || test_fraction >= 1.0) {
    throw ContractError("split_dataset: test fraction must be in (0, 1)");
  }
  std::vector<std::size_t> order(ds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  std::size_t n_test = static_cast<std::size_t>(ds.size() * test_fraction);
  n_test = std::max<std::size_t>(1, std::min(n_test, ds.size() - 1));
  Dataset train, test;
  train.vocab = test.vocab = ds.vocab;
  train.registry = test.registry = ds.registry;
  train.feature_dim = test.feature_dim = ds.feature_dim;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_test ? test : train).examples.push_back(ds.examples[order[i]]);
  }
  return {std::move(train), std::move(test)};
}

/// k-fold partition utility (cross-validation splits).
inline std::vector<std::pair<Dataset, Dataset>> kfold_splits(const Dataset& ds, std::size_t k,
                                                             std::uint64_t seed) {
  if (k < 2 || k > ds.size()) throw ContractError("kfold_splits: need 2 <= k <= dataset size");
  std::vector<std::size_t> order(ds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<std::pair<Dataset, Dataset>> folds;
  for (std::size_t f = 0; f < k; ++f) {
    Dataset train, test;
    train.vocab = test.vocab = ds.vocab;
    train.registry = test.registry = ds.registry;
    train.feature_dim = test.feature_dim = ds.feature_dim;
    for (std::size_t i = 0; i < order.size(); ++i) {
      (i % k == f ? test : train).examples.push_back(ds.examples[order[i]]);
    }
    folds.emplace_back(std::move(train), std::move(test));
  }
  return folds;
}

}  // namespace capgen

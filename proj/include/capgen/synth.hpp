#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "capgen/dataset.hpp"
#include "capgen/rng.hpp"

namespace capgen {

/// Synthetic branded-product dataset configuration. `generic` switches to a
/// class-free caption corpus (the large generic dataset used for fusion).
struct SynthConfig {
  std::size_t n_classes = 8;
  std::size_t n_examples = 100;
  std::size_t feature_dim = 64;
  double rating_noise = 0.2;
  double feature_noise = 0.5;
  double imbalance = 1.0;  // sampling weight ratio largest:smallest class
  bool generic = false;
  std::uint64_t seed = 1;
};

namespace synth_detail {

inline const std::vector<std::string>& verbs() {
  static const std::vector<std::string> v{"holds",   "drinks", "opens", "carries",
                                          "shows",   "buys",   "lifts", "enjoys"};
  return v;
}

inline const std::vector<std::string>& nouns() {
  static const std::vector<std::string> v{"bottle", "can",  "box",   "cup",
                                          "bag",    "pack", "drink", "snack"};
  return v;
}

inline const std::vector<std::string>& places() {
  static const std::vector<std::string> v{"outside", "indoors", "nearby", "upstairs"};
  return v;
}

// Class means and rating directions depend only on (class index, D), never
// on the sampling seed, so datasets drawn with different seeds live in the
// same feature world and can serve as train/test splits for each other.
inline std::vector<double> class_mean(std::size_t cls, std::size_t dim) {
  Rng rng(fnv1a64("class-mean") ^ (0x9e3779b97f4a7c15ull * (cls + 1)) ^ dim);
  std::vector<double> mu(dim);
  for (double& v : mu) v = rng.normal();
  return mu;
}

inline std::vector<double> rating_direction(std::size_t kind, std::size_t dim) {
  Rng rng(fnv1a64("rating-direction") ^ (0xbf58476d1ce4e5b9ull * (kind + 1)) ^ dim);
  std::vector<double> w(dim);
  double norm = 0.0;
  for (double& v : w) {
    v = rng.normal();
    norm += v * v;
  }
  norm = std::sqrt(norm);
  for (double& v : w) v /= norm;
  return w;
}

inline std::string classword(std::size_t cls) { return "brand" + std::to_string(cls); }

}  // namespace synth_detail

/// Affine feature-to-rating latent used by the generator; the mean annotator
/// rating is a noisy observation of this value, so a linear head can
/// recover it.
inline double synth_rating_latent(const std::vector<double>& features, std::size_t kind) {
  const auto dir = synth_detail::rating_direction(kind, features.size());
  double dot = 0.0;
  for (std::size_t i = 0; i < features.size(); ++i) dot += dir[i] * features[i];
  return 2.0 + 0.7 * dot;
}

/// Deterministic synthetic dataset mimicking the branded-product corpus:
/// per class, features are class mean + Gaussian noise; every caption names
/// the classword; ratings are five integer observations of an affine latent.
inline Dataset synth_generate(const SynthConfig& cfg) {
  if (!cfg.generic && cfg.n_classes < 2) {
    throw ContractError("synth_generate: need at least 2 classes");
  }
  if (cfg.feature_dim < 4) throw ContractError("synth_generate: feature_dim must be >= 4");
  if (cfg.n_examples < 1) throw ContractError("synth_generate: need at least 1 example");
  if (cfg.rating_noise < 0 || cfg.feature_noise < 0 || cfg.imbalance < 1.0) {
    throw ContractError("synth_generate: noise levels must be >= 0 and imbalance >= 1");
  }

  using namespace synth_detail;
  Rng rng(cfg.seed);
  Dataset ds;
  ds.feature_dim = cfg.feature_dim;

  std::vector<std::vector<double>> means;
  std::vector<double> weights;
  if (!cfg.generic) {
    for (std::size_t c = 0; c < cfg.n_classes; ++c) {
      means.push_back(class_mean(c, cfg.feature_dim));
      const double t = cfg.n_classes == 1 ? 0.0
                                          : static_cast<double>(c) /
                                                static_cast<double>(cfg.n_classes - 1);
      weights.push_back(1.0 + (cfg.imbalance - 1.0) * t);
    }
  }

  for (std::size_t i = 0; i < cfg.n_examples; ++i) {
    Example ex;
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "%s-%06zu", cfg.generic ? "gen" : "synth", i);
    ex.id = idbuf;

    std::size_t cls = 0;
    ex.features.resize(cfg.feature_dim);
    if (cfg.generic) {
      for (double& v : ex.features) v = rng.normal();
    } else {
      cls = rng.discrete(weights);
      ex.label = classword(cls);
      for (std::size_t d = 0; d < cfg.feature_dim; ++d) {
        ex.features[d] = means[cls][d] + cfg.feature_noise * rng.normal();
      }
    }

    for (int cap = 0; cap < 5; ++cap) {
      const std::string& verb = verbs()[rng.index(verbs().size())];
      const std::string& noun = nouns()[rng.index(nouns().size())];
      const std::size_t form = rng.index(3);
      std::vector<std::string> words;
      if (cfg.generic) {
        if (form == 0) {
          words = {"a", "person", verb, "a", noun};
        } else if (form == 1) {
          words = {"someone", verb, "a", noun, places()[rng.index(places().size())]};
        } else {
          words = {"a", "person", verb, "a", noun, places()[rng.index(places().size())]};
        }
      } else {
        const std::string cw = classword(cls);
        if (form == 0) {
          words = {"a", "person", verb, "a", cw, noun};
        } else if (form == 1) {
          words = {"someone", verb, "a", cw, noun, places()[rng.index(places().size())]};
        } else {
          words = {"a", "person", verb, "a", noun, "from", cw};
        }
      }
      ex.captions.push_back(std::move(words));
    }

    if (!cfg.generic) {
      std::array<std::vector<int>, 3> ratings;
      for (std::size_t kind = 0; kind < 3; ++kind) {
        const double latent = synth_rating_latent(ex.features, kind);
        ratings[kind].resize(5);
        for (int a = 0; a < 5; ++a) {
          const double noisy = latent + cfg.rating_noise * rng.normal();
          const double rounded = std::nearbyint(noisy);
          ratings[kind][a] = static_cast<int>(std::min(4.0, std::max(0.0, rounded)));
        }
      }
      ex.ratings = std::move(ratings);
    }
    ds.examples.push_back(std::move(ex));
  }

  index_dataset(ds, 1, SubstitutionTable::defaults());
  return ds;
}

}  // namespace capgen

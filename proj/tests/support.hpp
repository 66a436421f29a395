#pragma once

// Shared fixtures for the unit tests.

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "metalic/core.hpp"
#include "metalic/embed.hpp"
#include "metalic/landscapes.hpp"
#include "metalic/model.hpp"

namespace testing {

inline metalic::FitnessTask random_task(std::size_t n, int length, std::uint64_t seed, const std::string& name = "t") {
  metalic::LandscapeSpec spec;
  spec.n_sites = length;
  spec.alphabet_size = 6;
  spec.kind = metalic::LandscapeKind::nk;
  spec.k_neighbors = 1;
  spec.rng_seed = seed;
  metalic::Rng rng(seed + 1);
  return metalic::make_synthetic_task(spec, n, 2, rng, name);
}

inline metalic::ModelConfig tiny_config(int d = 8, int heads = 2) {
  metalic::ModelConfig c;
  c.embed_dim = d;
  c.n_layers = 2;
  c.n_heads = heads;
  c.axial_ffn_dim = 2 * d;
  c.mlp_layers = {d};
  c.attention_dropout = 0.0;
  c.max_length = 16;
  return c;
}

inline metalic::EmbeddingProvider tiny_provider() {
  return metalic::EmbeddingProvider::onehot(metalic::Alphabet::synthetic(6));
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("metalic_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Naive O(n^2) Spearman: ranks by counting, ties averaged, then Pearson.
inline double naive_spearman(const std::vector<double>& a, const std::vector<double>& b) {
  const auto ranks = [](const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      double less = 0, equal = 0;
      for (double w : v) {
        if (w < v[i]) less += 1;
        if (w == v[i]) equal += 1;
      }
      r[i] = less + (equal + 1) / 2;
    }
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += ra[i] / n, mb += rb[i] / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace testing

#pragma once

#include <unistd.h>

#include <filesystem>
#include <string>

#include "mmtlab/corpus.hpp"
#include "mmtlab/model.hpp"
#include "mmtlab/synthetic.hpp"

namespace mmtlab::test {

// Fresh per-process scratch directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& name) {
  const auto dir =
      std::filesystem::temp_directory_path() / ("mmtlab_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline SyntheticCorpusSpec small_spec(std::uint64_t seed = 1) {
  SyntheticCorpusSpec s;
  s.train_sizes = {200, 80, 20, 8};
  s.mono_sizes = {200, 200, 200, 200};
  s.dev_size = 12;
  s.latent_vocab = 16;
  s.max_length = 8;
  s.seed = seed;
  return s;
}

inline TrainingCorpus small_corpus(const std::string& name, Direction dir = Direction::to_pivot) {
  const auto d = scratch(name);
  const auto manifest = write_synthetic_corpus(small_spec(), d);
  return load_corpus(Manifest::load(manifest), d, dir);
}

inline ModelConfig tiny_model(std::size_t vocab, std::size_t d = 16, std::size_t layers = 1) {
  ModelConfig c;
  c.layers = layers;
  c.heads = 2;
  c.model_dim = d;
  c.ffn_dim = 2 * d;
  c.vocab_size = vocab;
  c.max_positions = 24;
  c.dropout_rate = 0.1;
  return c;
}

}  // namespace mmtlab::test

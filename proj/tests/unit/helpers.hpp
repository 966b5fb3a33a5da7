#pragma once

#include <memory>

#include "hlmbo/tnp.hpp"

namespace testing {

inline hlmbo::TnpConfig small_tnp(int steps) {
  hlmbo::TnpConfig c;
  c.model_dim = 16;
  c.heads = 2;
  c.ff_dim = 32;
  c.embed_layers = 2;
  c.transformer_layers = 2;
  c.max_sequence = 16;
  c.dataset_points = 64;
  c.batch_tasks = 8;
  c.learning_rate = 1e-3;
  c.warmup_steps = 20;
  c.train_steps = steps;
  return c;
}

inline hlmbo::TaskFamily small_family(std::size_t dims = 2, std::uint64_t seed = 1) {
  hlmbo::FamilyConfig fc;
  fc.dims = dims;
  fc.n_train = 8;
  fc.n_val = 2;
  fc.n_test = 3;
  return hlmbo::make_synthetic_family(fc, seed);
}

/// A briefly trained model shared by the tests of one binary.
inline std::shared_ptr<const hlmbo::TnpModel> shared_model(std::size_t dims = 2) {
  static std::shared_ptr<const hlmbo::TnpModel> cache[4];
  if (!cache[dims])
    cache[dims] = std::make_shared<const hlmbo::TnpModel>(
        hlmbo::meta_train(small_family(dims), small_tnp(150), 3));
  return cache[dims];
}

}  // namespace testing

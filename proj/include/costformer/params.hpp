#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "costformer/ops.hpp"

namespace costformer {

enum class Init {
  zeros,
  ones,
  fan_in_uniform,  // U(-1/sqrt(fan_in), 1/sqrt(fan_in)), fan_in = first extent
  he_uniform,      // U(-sqrt(6/fan_in), sqrt(6/fan_in))
  trunc_normal,    // N(0, 0.02^2) truncated at two standard deviations
};

std::uint64_t fnv1a(const std::string& text);

// Named trainable tensors in registration order. Each parameter draws its initial values from a
// generator seeded by (seed, name), so two models that share a parameter name share its init.
template <typename T>
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}

  Var<T> add(const std::string& name, const Shape& shape, Init init);
  Var<T> add(const std::string& name, Tensor<T> value);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Var<T>& get(const std::string& name) const;
  Var<T>& get(const std::string& name);

  const std::vector<std::pair<std::string, Var<T>>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Var<T>>>& entries() { return entries_; }
  std::size_t total_elements() const;
  std::uint64_t seed() const { return seed_; }

  void zero_grad();

 private:
  std::uint64_t seed_;
  std::vector<std::pair<std::string, Var<T>>> entries_;
  std::map<std::string, std::size_t> index_;
};

template <typename T>
LinearParams<T> make_linear(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
                            Init weight_init = Init::fan_in_uniform, bool bias = true);

template <typename T>
LayerNormParams<T> make_layer_norm(ParamStore<T>& store, const std::string& name, std::size_t dim);

}  // namespace costformer

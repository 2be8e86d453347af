#include "costformer/params.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace costformer {

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

template <typename T>
Var<T> ParamStore<T>::add(const std::string& name, const Shape& shape, Init init) {
  Tensor<T> value(shape);
  std::mt19937_64 rng(seed_ ^ fnv1a(name));
  const double fan_in = static_cast<double>(shape.front());
  switch (init) {
    case Init::zeros:
      break;
    case Init::ones:
      value.fill(T(1));
      break;
    case Init::fan_in_uniform:
    case Init::he_uniform: {
      const double bound = init == Init::fan_in_uniform ? 1.0 / std::sqrt(fan_in) : std::sqrt(6.0 / fan_in);
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (T& v : value.data()) v = static_cast<T>(dist(rng));
      break;
    }
    case Init::trunc_normal: {
      std::normal_distribution<double> dist(0.0, 0.02);
      for (T& v : value.data()) {
        double x = dist(rng);
        while (std::abs(x) > 0.04) x = dist(rng);
        v = static_cast<T>(x);
      }
      break;
    }
  }
  return add(name, std::move(value));
}

template <typename T>
Var<T> ParamStore<T>::add(const std::string& name, Tensor<T> value) {
  if (contains(name)) throw std::invalid_argument("param store: duplicate parameter '" + name + "'");
  Var<T> var(std::move(value), true);
  index_.emplace(name, entries_.size());
  entries_.emplace_back(name, var);
  return var;
}

template <typename T>
const Var<T>& ParamStore<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("param store: no parameter '" + name + "'");
  return entries_[it->second].second;
}

template <typename T>
Var<T>& ParamStore<T>::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("param store: no parameter '" + name + "'");
  return entries_[it->second].second;
}

template <typename T>
std::size_t ParamStore<T>::total_elements() const {
  std::size_t n = 0;
  for (const auto& [name, var] : entries_) n += var.numel();
  return n;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& [name, var] : entries_) var.zero_grad();
}

template <typename T>
LinearParams<T> make_linear(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
                            Init weight_init, bool bias) {
  LinearParams<T> p;
  p.weight = store.add(name + ".weight", {in, out}, weight_init);
  if (bias) p.bias = store.add(name + ".bias", {out}, Init::zeros);
  return p;
}

template <typename T>
LayerNormParams<T> make_layer_norm(ParamStore<T>& store, const std::string& name, std::size_t dim) {
  return {store.add(name + ".gamma", {dim}, Init::ones), store.add(name + ".beta", {dim}, Init::zeros)};
}

template class ParamStore<float>;
template class ParamStore<double>;
template LinearParams<float> make_linear(ParamStore<float>&, const std::string&, std::size_t, std::size_t, Init, bool);
template LinearParams<double> make_linear(ParamStore<double>&, const std::string&, std::size_t, std::size_t, Init,
                                          bool);
template LayerNormParams<float> make_layer_norm(ParamStore<float>&, const std::string&, std::size_t);
template LayerNormParams<double> make_layer_norm(ParamStore<double>&, const std::string&, std::size_t);

}  // namespace costformer

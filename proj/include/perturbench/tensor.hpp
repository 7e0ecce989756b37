#pragma once

#include <cstdint>
#include <initializer_list>
#include <map>
#include <string>
#include <vector>

#include "perturbench/errors.hpp"

namespace pb {

using Shape = std::vector<long>;

long shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major array of scalars. Plain value type; gradients and graph
// bookkeeping live in Graph. Scalar is double in test/oracle mode and float
// in training mode.
template <class S>
struct Tensor {
  Shape shape;
  std::vector<S> data;

  Tensor() = default;
  Tensor(Shape s, std::vector<S> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape_numel(shape) != static_cast<long>(data.size()))
      throw ConfigError("tensor: shape " + shape_str(shape) + " does not match buffer of " +
                        std::to_string(data.size()) + " scalars");
  }

  static Tensor zeros(Shape s) {
    Tensor t;
    t.shape = std::move(s);
    t.data.assign(shape_numel(t.shape), S(0));
    return t;
  }
  static Tensor full(Shape s, S v) {
    Tensor t = zeros(std::move(s));
    t.data.assign(t.data.size(), v);
    return t;
  }

  long numel() const { return static_cast<long>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  long dim(int i) const { return shape[static_cast<size_t>(i)]; }

  S* ptr() { return data.data(); }
  const S* ptr() const { return data.data(); }

  S& operator[](size_t i) { return data[i]; }
  const S& operator[](size_t i) const { return data[i]; }

  template <class T>
  Tensor<T> cast() const {
    Tensor<T> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<T>(data[i]);
    return out;
  }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

// Parameter checkpoint container: little-endian, magic "PBTC", version u32,
// tensor count u32, then per tensor: name length u32 + UTF-8 name, rank u32,
// dims u32[], raw 32-bit floats.
struct Checkpoint {
  // Insertion-ordered name -> tensor map.
  std::vector<std::pair<std::string, TensorF>> entries;

  void add(const std::string& name, TensorF t);
  const TensorF& get(const std::string& name) const;
  bool has(const std::string& name) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Serializes in the checkpoint wire layout to a memory buffer (used by the
// cache containers that embed a tensor block after a JSON header).
std::vector<uint8_t> checkpoint_bytes(const Checkpoint& ckpt);
Checkpoint checkpoint_from_bytes(const uint8_t* data, size_t size);

}  // namespace pb

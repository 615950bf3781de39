#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "catdet/numerics/tensor.hpp"

namespace catdet::num {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Ordered, named parameter list. The same storage may be registered under
// several names (tied weights); it is then counted and updated once.
class ParamRegistry {
 public:
  const Tensor& add(std::string name, Tensor t);
  void extend(const ParamRegistry& other, const std::string& prefix = "");

  const std::vector<NamedTensor>& entries() const { return entries_; }
  std::vector<Tensor> unique_tensors() const;
  std::size_t count_params() const;
  const Tensor& get(const std::string& name) const;
  void zero_grads() const;

 private:
  std::vector<NamedTensor> entries_;
};

// Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}
  Tensor uniform_fan_in(Shape shape, std::size_t fan_in);
  Tensor constant(Shape shape, double value);

 private:
  std::mt19937_64 rng_;
};

// "CATCKPT1", u64 count, then per tensor: u64 name length, name bytes,
// u64 rank, u64 dims, f64 values; all little-endian.
void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);
std::string encode_checkpoint(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> decode_checkpoint(const std::string& bytes);

// Copies values by name into the registry; every registry entry must be present
// with a matching shape.
void load_into(const ParamRegistry& reg, const std::vector<NamedTensor>& values);

}  // namespace catdet::num

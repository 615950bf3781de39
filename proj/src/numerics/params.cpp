#include "catdet/numerics/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <unordered_map>
#include <unordered_set>

#include "catdet/common/errors.hpp"

namespace catdet::num {

const Tensor& ParamRegistry::add(std::string name, Tensor t) {
  for (const auto& e : entries_) {
    if (e.name == name) throw ConfigError("duplicate parameter name " + name);
  }
  t.set_requires_grad(true);
  entries_.push_back({std::move(name), std::move(t)});
  return entries_.back().tensor;
}

void ParamRegistry::extend(const ParamRegistry& other, const std::string& prefix) {
  for (const auto& e : other.entries_) add(prefix + e.name, e.tensor);
}

std::vector<Tensor> ParamRegistry::unique_tensors() const {
  std::vector<Tensor> out;
  std::unordered_set<const void*> seen;
  for (const auto& e : entries_) {
    if (seen.insert(e.tensor.identity()).second) out.push_back(e.tensor);
  }
  return out;
}

std::size_t ParamRegistry::count_params() const {
  std::size_t n = 0;
  for (const auto& t : unique_tensors()) n += t.numel();
  return n;
}

const Tensor& ParamRegistry::get(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e.tensor;
  }
  throw ConfigError("no parameter named " + name);
}

void ParamRegistry::zero_grads() const {
  for (auto t : unique_tensors()) t.zero_grad();
}

Tensor Initializer::uniform_fan_in(Shape shape, std::size_t fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng_);
  return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor Initializer::constant(Shape shape, double value) { return Tensor::full(std::move(shape), value, true); }

namespace {

constexpr char kMagic[8] = {'C', 'A', 'T', 'C', 'K', 'P', 'T', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes little-endian host");

void put_u64(std::string& out, std::uint64_t v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.append(buf, 8);
}

void put_f64(std::string& out, double v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.append(buf, 8);
}

class Reader {
 public:
  explicit Reader(const std::string& s) : s_(s) {}
  std::uint64_t u64() {
    need(8);
    std::uint64_t v;
    std::memcpy(&v, s_.data() + pos_, 8);
    pos_ += 8;
    return v;
  }
  double f64() {
    need(8);
    double v;
    std::memcpy(&v, s_.data() + pos_, 8);
    pos_ += 8;
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string out = s_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  bool done() const { return pos_ == s_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > s_.size()) throw DataError("checkpoint truncated");
  }
  const std::string& s_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const std::vector<NamedTensor>& tensors) {
  std::string out(kMagic, 8);
  put_u64(out, tensors.size());
  for (const auto& [name, t] : tensors) {
    put_u64(out, name.size());
    out += name;
    put_u64(out, t.rank());
    for (auto d : t.shape()) put_u64(out, d);
    for (double v : t.data()) put_f64(out, v);
  }
  return out;
}

std::vector<NamedTensor> decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw DataError("not a CATCKPT1 checkpoint");
  }
  Reader r(bytes);
  r.bytes(8);
  const auto count = r.u64();
  std::vector<NamedTensor> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = r.u64();
    std::string name = r.bytes(len);
    const auto rank = r.u64();
    if (rank == 0 || rank > 8) throw DataError("checkpoint: bad rank for " + name);
    Shape shape(rank);
    for (auto& d : shape) d = r.u64();
    std::vector<double> values(shape_numel(shape));
    for (auto& v : values) v = r.f64();
    out.push_back({std::move(name), Tensor::from(std::move(shape), std::move(values))});
  }
  if (!r.done()) throw DataError("checkpoint has trailing bytes");
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  const auto blob = encode_checkpoint(tensors);
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  const std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(blob);
}

void load_into(const ParamRegistry& reg, const std::vector<NamedTensor>& values) {
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const auto& v : values) by_name[v.name] = &v.tensor;
  for (const auto& e : reg.entries()) {
    auto it = by_name.find(e.name);
    if (it == by_name.end()) throw DataError("checkpoint lacks parameter " + e.name);
    if (it->second->shape() != e.tensor.shape()) {
      throw DimensionError("checkpoint shape " + shape_str(it->second->shape()) + " for " + e.name +
                           ", model expects " + shape_str(e.tensor.shape()));
    }
    Tensor dst = e.tensor;
    std::copy(it->second->data().begin(), it->second->data().end(), dst.mutable_data().begin());
  }
}

}  // namespace catdet::num

#pragma once

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "cyclesafe/core/autograd.hpp"
#include "cyclesafe/core/rng.hpp"

namespace cyclesafe::model {

/// Ordered, named collection of trainable leaves.
template <class T>
class ParameterSet {
 public:
  Var<T> add(const std::string& name, Tensor<T> init) {
    if (index_.count(name)) throw std::logic_error("duplicate parameter name: " + name);
    index_[name] = entries_.size();
    entries_.push_back({name, Var<T>(std::move(init), true)});
    return entries_.back().var;
  }

  struct Entry {
    std::string name;
    Var<T> var;
  };

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  const Var<T>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return entries_[it->second].var;
  }
  Var<T>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return entries_[it->second].var;
  }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::int64_t scalar_count() const {
    std::int64_t n = 0;
    for (const auto& e : entries_) n += e.var.value().numel();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.var.zero_grad();
  }

  /// Deep copy of all values, keyed by name.
  std::map<std::string, Tensor<T>> snapshot() const {
    std::map<std::string, Tensor<T>> out;
    for (const auto& e : entries_) out.emplace(e.name, e.var.value().clone());
    return out;
  }

  /// Copies values in by name; every parameter must be present with a matching shape.
  void load(const std::map<std::string, Tensor<T>>& values) {
    for (auto& e : entries_) {
      auto it = values.find(e.name);
      if (it == values.end()) throw std::runtime_error("missing parameter in archive: " + e.name);
      if (it->second.shape() != e.var.shape())
        throw std::runtime_error("shape mismatch for " + e.name + ": " + shape_str(it->second.shape()) + " vs " +
                                 shape_str(e.var.shape()));
      std::copy_n(it->second.data(), it->second.numel(), e.var.mutable_value().data());
    }
  }

  /// Imports a subset of parameters (pretrained-weight hook); returns the number imported.
  std::size_t import_matching(const std::map<std::string, Tensor<T>>& values, const std::string& prefix = "") {
    std::size_t n = 0;
    for (auto& e : entries_) {
      if (e.name.rfind(prefix, 0) != 0) continue;
      auto it = values.find(e.name);
      if (it == values.end() || it->second.shape() != e.var.shape()) continue;
      std::copy_n(it->second.data(), it->second.numel(), e.var.mutable_value().data());
      ++n;
    }
    return n;
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Initializers

template <class T>
Tensor<T> init_normal(Shape shape, double stddev, Rng& rng) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

/// Normal truncated at two standard deviations (resampled).
template <class T>
Tensor<T> init_trunc_normal(Shape shape, double stddev, Rng& rng) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, 1.0);
  for (auto& v : t.values()) {
    double z;
    do z = dist(rng);
    while (std::abs(z) > 2.0);
    v = static_cast<T>(z * stddev);
  }
  return t;
}

template <class T>
Tensor<T> init_uniform(Shape shape, double bound, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(uniform(rng, -bound, bound));
  return t;
}

// ---------------------------------------------------------------------------
// Binary named-parameter archive:
//   magic "CSPA", u32 version, u32 scalar bytes, u64 count,
//   then per entry: u32 name length, name bytes, u32 rank, i64 dims[rank], raw values.

namespace archive_detail {
template <class V>
void put(std::ostream& os, const V& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}
template <class V>
V get(std::istream& is) {
  V v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!is) throw std::runtime_error("parameter archive truncated");
  return v;
}
}  // namespace archive_detail

template <class T>
void write_archive(const std::string& path, const std::vector<std::pair<std::string, Tensor<T>>>& items) {
  using namespace archive_detail;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os.write("CSPA", 4);
  put<std::uint32_t>(os, 1);
  put<std::uint32_t>(os, sizeof(T));
  put<std::uint64_t>(os, items.size());
  for (const auto& [name, t] : items) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put<std::int64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(sizeof(T) * t.numel()));
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

template <class T>
std::vector<std::pair<std::string, Tensor<T>>> read_archive(const std::string& path) {
  using namespace archive_detail;
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "CSPA", 4) != 0) throw std::runtime_error("not a parameter archive: " + path);
  if (get<std::uint32_t>(is) != 1) throw std::runtime_error("unsupported archive version");
  if (get<std::uint32_t>(is) != sizeof(T)) throw std::runtime_error("archive scalar width mismatch");
  const auto count = get<std::uint64_t>(is);
  std::vector<std::pair<std::string, Tensor<T>>> items;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name(get<std::uint32_t>(is), '\0');
    is.read(name.data(), static_cast<std::streamsize>(name.size()));
    Shape shape(get<std::uint32_t>(is));
    for (auto& d : shape) d = get<std::int64_t>(is);
    Tensor<T> t(shape);
    is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(sizeof(T) * t.numel()));
    if (!is) throw std::runtime_error("parameter archive truncated");
    items.emplace_back(std::move(name), std::move(t));
  }
  return items;
}

template <class T>
void save_parameters(const ParameterSet<T>& ps, const std::string& path) {
  std::vector<std::pair<std::string, Tensor<T>>> items;
  for (const auto& e : ps.entries()) items.emplace_back(e.name, e.var.value());
  write_archive(path, items);
}

template <class T>
void load_parameters(ParameterSet<T>& ps, const std::string& path) {
  std::map<std::string, Tensor<T>> values;
  for (auto& [name, t] : read_archive<T>(path)) values.emplace(std::move(name), std::move(t));
  ps.load(values);
}

}  // namespace cyclesafe::model

#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "coherent_ed/tensor.hpp"

namespace coherent_ed {

/// Named, ordered collection of trainable leaves.
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
  };

  /// Registers `init` under `name` and marks it requires_grad.
  Tensor add(const std::string& name, Tensor init) {
    if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
    init.set_requires_grad(true);
    index_[name] = entries_.size();
    entries_.push_back({name, init});
    return init;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  const Tensor& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ReferenceError("unknown parameter: " + name);
    return entries_[it->second].tensor;
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.numel();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
  }

  /// Freezes every parameter for which `trainable` returns false.
  void set_trainable(const std::function<bool(const std::string&)>& trainable) {
    for (auto& e : entries_) {
      const bool on = trainable(e.name);
      e.tensor.node().requires_grad = on;
      if (on && e.tensor.grad().size() != e.tensor.numel()) e.tensor.set_requires_grad(true);
    }
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Tensor container
//
//   COHERENTED-TENSORS 1
//   count <n>
//   tensor <name> <dtype> <rank> <dim>... <offset> <bytes>
//   ...
//   end
//   <payload>
//
// dtype is f64 or f32; offsets are relative to the first payload byte, which
// follows the newline after "end". Values are little-endian IEEE-754.
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
void append_le(std::string& out, T v) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T read_le(const char* p) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T v;
  std::memcpy(&v, bytes, sizeof(T));
  return v;
}

inline const char* scalar_dtype() { return sizeof(Scalar) == 8 ? "f64" : "f32"; }

}  // namespace detail

inline void write_tensors(const std::string& path, const std::vector<ParameterStore::Entry>& entries) {
  std::ostringstream header;
  header << "COHERENTED-TENSORS 1\n";
  header << "count " << entries.size() << "\n";
  std::string payload;
  for (const auto& e : entries) {
    if (e.name.find_first_of(" \t\n") != std::string::npos) {
      throw ContractError("parameter names may not contain whitespace: " + e.name);
    }
    header << "tensor " << e.name << ' ' << detail::scalar_dtype() << ' ' << e.tensor.rank();
    for (std::size_t d : e.tensor.shape()) header << ' ' << d;
    header << ' ' << payload.size() << ' ' << e.tensor.numel() * sizeof(Scalar) << "\n";
    for (Scalar v : e.tensor.values()) detail::append_le(payload, v);
  }
  header << "end\n";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot open for writing: " + path);
  const std::string h = header.str();
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw LoadError("write failed: " + path);
}

inline void write_tensors(const std::string& path, const ParameterStore& store) {
  write_tensors(path, store.entries());
}

inline std::vector<ParameterStore::Entry> read_tensors(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open tensor container: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  std::size_t pos = 0;
  std::size_t line_no = 0;
  auto next_line = [&]() {
    const std::size_t nl = bytes.find('\n', pos);
    if (nl == std::string::npos) {
      throw ParseError("tensor container header truncated at byte " + std::to_string(pos), line_no + 1);
    }
    std::string line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    return line;
  };

  if (next_line() != "COHERENTED-TENSORS 1") throw ParseError("bad container magic", 1);
  std::istringstream count_line(next_line());
  std::string kw;
  std::size_t count = 0;
  if (!(count_line >> kw >> count) || kw != "count") throw ParseError("expected 'count <n>'", line_no);

  struct Meta {
    std::string name;
    Shape shape;
    std::size_t offset = 0, nbytes = 0, width = 8;
  };
  std::vector<Meta> metas;
  for (std::size_t i = 0; i < count; ++i) {
    std::istringstream ls(next_line());
    Meta m;
    std::string dtype;
    std::size_t rank = 0;
    if (!(ls >> kw >> m.name >> dtype >> rank) || kw != "tensor") {
      throw ParseError("expected 'tensor <name> <dtype> <rank> ...'", line_no);
    }
    if (dtype == "f64") m.width = 8;
    else if (dtype == "f32") m.width = 4;
    else throw ParseError("unknown dtype " + dtype, line_no);
    m.shape.resize(rank);
    for (auto& d : m.shape) {
      if (!(ls >> d)) throw ParseError("missing dimension", line_no);
    }
    if (!(ls >> m.offset >> m.nbytes)) throw ParseError("missing offset/size", line_no);
    if (m.nbytes != shape_numel(m.shape) * m.width) throw ParseError("size does not match shape", line_no);
    metas.push_back(std::move(m));
  }
  if (next_line() != "end") throw ParseError("expected 'end'", line_no);

  const std::size_t base = pos;
  std::vector<ParameterStore::Entry> out;
  for (const auto& m : metas) {
    if (base + m.offset + m.nbytes > bytes.size()) {
      throw LoadError("tensor container truncated: '" + m.name + "' needs bytes up to offset " +
                      std::to_string(base + m.offset + m.nbytes) + ", file has " +
                      std::to_string(bytes.size()));
    }
    std::vector<Scalar> values(shape_numel(m.shape));
    const char* p = bytes.data() + base + m.offset;
    for (std::size_t i = 0; i < values.size(); ++i) {
      values[i] = m.width == 8 ? static_cast<Scalar>(detail::read_le<double>(p + i * 8))
                               : static_cast<Scalar>(detail::read_le<float>(p + i * 4));
    }
    out.push_back({m.name, Tensor(m.shape, std::move(values))});
  }
  return out;
}

/// Copies container values into already-registered parameters of `store`.
/// Every parameter must be present with a matching shape.
inline void load_into(const std::string& path, ParameterStore& store) {
  std::map<std::string, Tensor> loaded;
  for (auto& e : read_tensors(path)) loaded.emplace(e.name, e.tensor);
  for (const auto& e : store.entries()) {
    auto it = loaded.find(e.name);
    if (it == loaded.end()) throw LoadError("checkpoint lacks parameter " + e.name);
    if (it->second.shape() != e.tensor.shape()) {
      throw LoadError("parameter " + e.name + " has shape " + shape_str(it->second.shape()) +
                      " in checkpoint, expected " + shape_str(e.tensor.shape()));
    }
    Tensor dst = e.tensor;
    std::copy(it->second.values().begin(), it->second.values().end(), dst.values().begin());
  }
}

}  // namespace coherent_ed

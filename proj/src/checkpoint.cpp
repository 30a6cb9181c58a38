#include "cravl/checkpoint.hpp"

#include <fstream>

namespace cravl {

namespace {

constexpr char kMagic[5] = {'C', 'R', 'V', 'L', '1'};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw DataError("truncated checkpoint: " + path);
  return v;
}

}  // namespace

const Checkpoint::Entry& Checkpoint::at(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw DataError("checkpoint entry missing: " + name);
  return entries_[it->second];
}

void Checkpoint::push(Entry e) {
  if (index_.count(e.name)) throw DataError("duplicate checkpoint entry: " + e.name);
  index_.emplace(e.name, entries_.size());
  entries_.push_back(std::move(e));
}

void Checkpoint::add_i64(const std::string& name, int64_t value) {
  Entry e;
  e.name = name;
  e.dtype = Dtype::i64;
  e.shape = {1};
  e.raw.resize(sizeof(int64_t));
  std::memcpy(e.raw.data(), &value, sizeof(int64_t));
  push(std::move(e));
}

void Checkpoint::add_f64(const std::string& name, double value) {
  Entry e;
  e.name = name;
  e.dtype = Dtype::f64;
  e.shape = {1};
  e.raw.resize(sizeof(double));
  std::memcpy(e.raw.data(), &value, sizeof(double));
  push(std::move(e));
}

int64_t Checkpoint::i64(const std::string& name) const {
  const Entry& e = at(name);
  if (e.dtype != Dtype::i64 || e.raw.size() != sizeof(int64_t)) {
    throw DataError("checkpoint entry is not a scalar i64: " + name);
  }
  int64_t v;
  std::memcpy(&v, e.raw.data(), sizeof(v));
  return v;
}

double Checkpoint::f64(const std::string& name) const {
  const Entry& e = at(name);
  if (e.dtype != Dtype::f64 || e.raw.size() != sizeof(double)) {
    throw DataError("checkpoint entry is not a scalar f64: " + name);
  }
  double v;
  std::memcpy(&v, e.raw.data(), sizeof(v));
  return v;
}

void Checkpoint::write(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out.write(kMagic, sizeof(kMagic));
  put<uint32_t>(out, kVersion);
  put<uint32_t>(out, static_cast<uint32_t>(entries_.size()));
  for (const auto& e : entries_) {
    put<uint32_t>(out, static_cast<uint32_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put<uint8_t>(out, static_cast<uint8_t>(e.dtype));
    put<uint32_t>(out, static_cast<uint32_t>(e.shape.size()));
    for (uint32_t d : e.shape) put<uint32_t>(out, d);
    put<uint64_t>(out, static_cast<uint64_t>(e.raw.size()));
    out.write(reinterpret_cast<const char*>(e.raw.data()),
              static_cast<std::streamsize>(e.raw.size()));
  }
  if (!out) throw DataError("short write on checkpoint: " + path);
}

Checkpoint Checkpoint::read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  char magic[5];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError("not a checkpoint file: " + path);
  }
  const auto version = get<uint32_t>(in, path);
  if (version != kVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version) + ": " + path);
  }
  Checkpoint ckpt;
  const auto count = get<uint32_t>(in, path);
  for (uint32_t i = 0; i < count; ++i) {
    Entry e;
    const auto name_len = get<uint32_t>(in, path);
    e.name.resize(name_len);
    in.read(e.name.data(), name_len);
    e.dtype = static_cast<Dtype>(get<uint8_t>(in, path));
    const auto ndim = get<uint32_t>(in, path);
    e.shape.resize(ndim);
    for (auto& d : e.shape) d = get<uint32_t>(in, path);
    const auto bytes = get<uint64_t>(in, path);
    e.raw.resize(bytes);
    in.read(reinterpret_cast<char*>(e.raw.data()), static_cast<std::streamsize>(bytes));
    if (!in) throw DataError("truncated checkpoint: " + path);
    ckpt.push(std::move(e));
  }
  return ckpt;
}

}  // namespace cravl

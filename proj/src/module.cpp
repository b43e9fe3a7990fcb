#include "ae/module.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <unordered_map>
#include <unordered_set>

static_assert(std::endian::native == std::endian::little,
              "weight files assume a little-endian host");

namespace ae {

void ModuleGraph::add(std::vector<Entry>& dst, const std::string& name, const Tensor& t) {
  if (name.empty()) throw ValueError("registered tensor needs a name");
  if (!t.defined()) throw ValueError("cannot register undefined tensor '" + name + "'");
  if (find(name)) throw ValueError("duplicate tensor name '" + name + "'");
  dst.push_back({name, t});
}

void ModuleGraph::add_param(const std::string& name, const Tensor& t) {
  add(params_, name, t);
}

void ModuleGraph::add_buffer(const std::string& name, const Tensor& t) {
  add(buffers_, name, t);
}

int64_t ModuleGraph::count_params(const std::string& prefix) const {
  int64_t n = 0;
  for (const Entry& e : params_) {
    if (e.name.rfind(prefix, 0) == 0) n += e.tensor.numel();
  }
  return n;
}

const Tensor* ModuleGraph::find(const std::string& name) const {
  for (const Entry& e : params_) {
    if (e.name == name) return &e.tensor;
  }
  for (const Entry& e : buffers_) {
    if (e.name == name) return &e.tensor;
  }
  return nullptr;
}

namespace {

constexpr char kMagic[4] = {'A', 'E', 'W', '1'};

void write_u64(std::ostream& os, uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint64_t read_u64(std::istream& is, const std::string& path) {
  uint64_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(v))) {
    throw IoError("truncated weight file: " + path);
  }
  return v;
}

void write_entry(std::ostream& os, const ModuleGraph::Entry& e) {
  write_u64(os, e.name.size());
  os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
  const Shape& s = e.tensor.shape();
  write_u64(os, s.size());
  for (int64_t ext : s) write_u64(os, static_cast<uint64_t>(ext));
  os.write(reinterpret_cast<const char*>(e.tensor.data()),
           static_cast<std::streamsize>(e.tensor.numel() * sizeof(double)));
}

struct FileEntry {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

std::vector<FileEntry> read_all(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open weight file: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError("not a weight file (bad magic): " + path);
  }
  const uint64_t count = read_u64(is, path);
  std::vector<FileEntry> entries;
  entries.reserve(count);
  for (uint64_t i = 0; i < count; ++i) {
    FileEntry e;
    const uint64_t name_len = read_u64(is, path);
    e.name.resize(name_len);
    if (!is.read(e.name.data(), static_cast<std::streamsize>(name_len))) {
      throw IoError("truncated weight file: " + path);
    }
    const uint64_t rank = read_u64(is, path);
    e.shape.resize(rank);
    int64_t numel = 1;
    for (uint64_t r = 0; r < rank; ++r) {
      e.shape[r] = static_cast<int64_t>(read_u64(is, path));
      if (e.shape[r] <= 0) throw IoError("bad extent in weight file: " + path);
      numel *= e.shape[r];
    }
    e.data.resize(static_cast<size_t>(numel));
    if (!is.read(reinterpret_cast<char*>(e.data.data()),
                 static_cast<std::streamsize>(numel * sizeof(double)))) {
      throw IoError("truncated weight file: " + path);
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

void copy_into(const Tensor& dst, const FileEntry& src, const std::string& path) {
  if (dst.shape() != src.shape) {
    throw ShapeError("weight '" + src.name + "' in " + path + " has shape " +
                     shape_str(src.shape) + ", model expects " + shape_str(dst.shape()));
  }
  Tensor alias = dst;  // handles share storage
  std::copy(src.data.begin(), src.data.end(), alias.mutable_data());
}

}  // namespace

void save_weights(const ModuleGraph& g, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write weight file: " + path);
  os.write(kMagic, 4);
  write_u64(os, g.params().size() + g.buffers().size());
  for (const auto& e : g.params()) write_entry(os, e);
  for (const auto& e : g.buffers()) write_entry(os, e);
  if (!os) throw IoError("write failed: " + path);
}

void load_weights(ModuleGraph& g, const std::string& path) {
  const std::vector<FileEntry> entries = read_all(path);
  std::unordered_map<std::string, const FileEntry*> by_name;
  for (const FileEntry& e : entries) {
    if (!by_name.emplace(e.name, &e).second) {
      throw IoError("duplicate entry '" + e.name + "' in " + path);
    }
  }
  auto load_list = [&](const std::vector<ModuleGraph::Entry>& list) {
    for (const auto& e : list) {
      auto it = by_name.find(e.name);
      if (it == by_name.end()) {
        throw IoError("weight file " + path + " is missing '" + e.name + "'");
      }
      copy_into(e.tensor, *it->second, path);
      by_name.erase(it);
    }
  };
  load_list(g.params());
  load_list(g.buffers());
  if (!by_name.empty()) {
    throw IoError("weight file " + path + " has unknown entry '" +
                  by_name.begin()->first + "'");
  }
}

std::vector<std::string> load_weights_partial(ModuleGraph& g, const std::string& path) {
  const std::vector<FileEntry> entries = read_all(path);
  std::vector<std::string> unmatched;
  for (const FileEntry& e : entries) {
    const Tensor* dst = g.find(e.name);
    if (dst && dst->shape() == e.shape) {
      copy_into(*dst, e, path);
    } else {
      unmatched.push_back(e.name);
    }
  }
  return unmatched;
}

}  // namespace ae

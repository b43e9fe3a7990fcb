#pragma once

#include <string>
#include <vector>

#include "ae/tensor.hpp"

namespace ae {

// Flat, ordered registry of named tensors. Layers register their parameters
// (trainable) and buffers (state such as running statistics) under
// dot-separated prefixes; the registration order is the serialization order.
class ModuleGraph {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
  };

  void add_param(const std::string& name, const Tensor& t);
  void add_buffer(const std::string& name, const Tensor& t);

  const std::vector<Entry>& params() const { return params_; }
  const std::vector<Entry>& buffers() const { return buffers_; }

  // Total trainable element count; with a prefix, only entries whose name
  // starts with it (buffers never count).
  int64_t count_params(const std::string& prefix = "") const;

  const Tensor* find(const std::string& name) const;

 private:
  void add(std::vector<Entry>& dst, const std::string& name, const Tensor& t);
  std::vector<Entry> params_;
  std::vector<Entry> buffers_;
};

// Weight file layout (all integers little-endian):
//   "AEW1"
//   u64 entry count
//   per entry: u64 name length, name bytes (UTF-8),
//              u64 rank, u64 extents[rank], f64 data[numel]
// Parameters come first, then buffers, both in registration order.
void save_weights(const ModuleGraph& g, const std::string& path);

// Strict load: every file entry must match a registered name and shape, and
// every registered tensor must be present. Throws IoError / ShapeError.
void load_weights(ModuleGraph& g, const std::string& path);

// Partial load: copies entries whose name and shape match, returns the names
// present in the file but not in the graph (callers usually warn on these).
std::vector<std::string> load_weights_partial(ModuleGraph& g, const std::string& path);

}  // namespace ae

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "rndiff/tensor.hpp"

namespace rndiff {

/// A model snapshot: named parameter tensors plus the bookkeeping needed to
/// reproduce or resume the run that produced it.
struct Checkpoint {
  std::uint64_t master_seed = 0;
  std::int64_t step = 0;
  std::string config_json;  // verbatim config blob stored by the writer
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& find(const std::string& name) const;
};

/// Writes <stem>.bin (all values as little-endian 64-bit reals, concatenated
/// in listed order) and <stem>.json (per-tensor name/shape/byte offset plus
/// master seed and step count). Byte-stable for identical inputs.
void save_checkpoint(const std::string& stem,
                     const std::vector<std::pair<std::string, Tensor>>& tensors,
                     std::uint64_t master_seed, std::int64_t step,
                     const std::string& config_json = "{}");

/// Loads a checkpoint saved by save_checkpoint. Tensors are created with
/// requires_grad = true (they are parameters by definition).
Checkpoint load_checkpoint(const std::string& stem);

}  // namespace rndiff

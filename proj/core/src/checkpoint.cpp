#include "rndiff/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace rndiff {
namespace {

bool host_little_endian() {
  const std::uint16_t probe = 1;
  unsigned char b;
  std::memcpy(&b, &probe, 1);
  return b == 1;
}

}  // namespace

const Tensor& Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw std::runtime_error("checkpoint: no tensor named '" + name + "'");
}

void save_checkpoint(const std::string& stem,
                     const std::vector<std::pair<std::string, Tensor>>& tensors,
                     std::uint64_t master_seed, std::int64_t step,
                     const std::string& config_json) {
  if (!host_little_endian())
    throw std::runtime_error("checkpoint: only little-endian hosts are supported");

  nlohmann::ordered_json manifest;
  manifest["format"] = "flat-f64";
  manifest["byte_order"] = "little";
  manifest["master_seed"] = master_seed;
  manifest["step"] = step;
  manifest["config"] = nlohmann::ordered_json::parse(config_json);
  manifest["tensors"] = nlohmann::ordered_json::array();

  std::ofstream bin(stem + ".bin", std::ios::binary);
  if (!bin) throw std::runtime_error("checkpoint: cannot write " + stem + ".bin");
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    nlohmann::ordered_json entry;
    entry["name"] = name;
    entry["shape"] = t->shape;
    entry["offset"] = offset;
    manifest["tensors"].push_back(std::move(entry));
    bin.write(reinterpret_cast<const char*>(t->values.data()),
              static_cast<std::streamsize>(t->values.size() * sizeof(double)));
    offset += t->values.size() * sizeof(double);
  }
  bin.close();
  if (!bin) throw std::runtime_error("checkpoint: write failed for " + stem + ".bin");

  std::ofstream mf(stem + ".json");
  if (!mf) throw std::runtime_error("checkpoint: cannot write " + stem + ".json");
  mf << manifest.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::string& stem) {
  if (!host_little_endian())
    throw std::runtime_error("checkpoint: only little-endian hosts are supported");

  std::ifstream mf(stem + ".json");
  if (!mf) throw std::runtime_error("checkpoint: cannot open " + stem + ".json");
  nlohmann::json manifest = nlohmann::json::parse(mf);
  if (manifest.at("format").get<std::string>() != "flat-f64")
    throw std::runtime_error("checkpoint: unsupported format in " + stem + ".json");

  std::ifstream bin(stem + ".bin", std::ios::binary);
  if (!bin) throw std::runtime_error("checkpoint: cannot open " + stem + ".bin");
  bin.seekg(0, std::ios::end);
  const std::uint64_t file_size = static_cast<std::uint64_t>(bin.tellg());

  Checkpoint ck;
  ck.master_seed = manifest.at("master_seed").get<std::uint64_t>();
  ck.step = manifest.at("step").get<std::int64_t>();
  ck.config_json = manifest.at("config").dump();
  for (const auto& entry : manifest.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const Shape shape = entry.at("shape").get<Shape>();
    const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
    const std::uint64_t bytes = numel(shape) * sizeof(double);
    if (offset + bytes > file_size)
      throw std::runtime_error("checkpoint: " + stem + ".bin truncated, tensor '" + name +
                               "' needs bytes [" + std::to_string(offset) + "," +
                               std::to_string(offset + bytes) + ") of " +
                               std::to_string(file_size));
    std::vector<double> values(numel(shape));
    bin.seekg(static_cast<std::streamoff>(offset));
    bin.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(bytes));
    if (!bin) throw std::runtime_error("checkpoint: read failed for tensor '" + name + "'");
    ck.tensors.emplace_back(name, make_tensor(shape, std::move(values), true));
  }
  return ck;
}

}  // namespace rndiff

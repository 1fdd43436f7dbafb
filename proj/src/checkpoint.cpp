#include "contrack/checkpoint.hpp"

#include <cstdint>
#include <fstream>

namespace contrack {

namespace {

constexpr char kMagic[] = "CONTRACK-CKPT-v1\n";

void write_u64(std::ofstream& f, std::uint64_t v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint64_t read_u64(std::ifstream& f) {
  std::uint64_t v = 0;
  f.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!f) throw TensorError("checkpoint: truncated file");
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::string& config_json,
                     const nn::ParamMap& params) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw TensorError("checkpoint: cannot open " + path + " for writing");
  f.write(kMagic, sizeof(kMagic) - 1);
  write_u64(f, config_json.size());
  f.write(config_json.data(), static_cast<std::streamsize>(config_json.size()));
  write_u64(f, params.items.size());
  for (const auto& [name, t] : params.items) {
    write_u64(f, name.size());
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u64(f, t.shape().size());
    for (int d : t.shape()) write_u64(f, static_cast<std::uint64_t>(d));
    f.write(reinterpret_cast<const char*>(t.data().data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!f) throw TensorError("checkpoint: write failed for " + path);
}

namespace {

std::string open_and_read_config(std::ifstream& f, const std::string& path) {
  if (!f) throw TensorError("checkpoint: cannot open " + path);
  std::string magic(sizeof(kMagic) - 1, '\0');
  f.read(magic.data(), static_cast<std::streamsize>(magic.size()));
  if (!f || magic != kMagic)
    throw TensorError("checkpoint: bad magic in " + path);
  const std::uint64_t clen = read_u64(f);
  std::string config(clen, '\0');
  f.read(config.data(), static_cast<std::streamsize>(clen));
  if (!f) throw TensorError("checkpoint: truncated config in " + path);
  return config;
}

}  // namespace

std::string load_checkpoint(const std::string& path, nn::ParamMap& params) {
  std::ifstream f(path, std::ios::binary);
  std::string config = open_and_read_config(f, path);
  const std::uint64_t count = read_u64(f);
  if (count != params.items.size())
    throw TensorError("checkpoint: " + path + " stores " + std::to_string(count) +
                      " tensors, model has " + std::to_string(params.items.size()));
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t nlen = read_u64(f);
    std::string name(nlen, '\0');
    f.read(name.data(), static_cast<std::streamsize>(nlen));
    const std::uint64_t nd = read_u64(f);
    std::vector<int> shape(nd);
    std::size_t sz = 1;
    for (auto& d : shape) {
      d = static_cast<int>(read_u64(f));
      sz *= static_cast<std::size_t>(d);
    }
    Tensor* dst = params.find(name);
    if (!dst) throw TensorError("checkpoint: unknown tensor '" + name + "' in " + path);
    if (dst->shape() != shape)
      throw TensorError("checkpoint: shape mismatch for '" + name + "'");
    f.read(reinterpret_cast<char*>(dst->data().data()),
           static_cast<std::streamsize>(sz * sizeof(double)));
    if (!f) throw TensorError("checkpoint: truncated data for '" + name + "'");
  }
  return config;
}

std::string read_checkpoint_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return open_and_read_config(f, path);
}

}  // namespace contrack

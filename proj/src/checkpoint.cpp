#include "retinexdual/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>

#include "retinexdual/errors.hpp"

namespace retinexdual {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'R', 'D', 'X', 'C', 'K', 'P', 'T', '1'};

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& path) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) throw DataError(path + ": truncated checkpoint");
  return value;
}

std::string get_bytes(std::istream& in, std::uint64_t size, const std::string& path) {
  if (size > (std::uint64_t{1} << 34)) throw DataError(path + ": corrupt length field");
  std::string bytes(size, '\0');
  if (size > 0 && !in.read(bytes.data(), static_cast<std::streamsize>(size))) {
    throw DataError(path + ": truncated checkpoint");
  }
  return bytes;
}

}  // namespace

void write_archive(const std::string& path, const Archive& archive) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint '" + path + "'");
  out.write(kMagic, sizeof(kMagic));
  const auto header = archive.header.dump();
  put<std::uint64_t>(out, header.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  put<std::uint64_t>(out, archive.arrays.size());
  for (const auto& [name, tensor] : archive.arrays) {
    const auto data = tensor.detach().to(torch::kCPU, torch::kFloat32).contiguous();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(data.dim()));
    for (auto d : data.sizes()) put<std::int64_t>(out, d);
    out.write(reinterpret_cast<const char*>(data.data_ptr<float>()),
              static_cast<std::streamsize>(data.numel() * sizeof(float)));
  }
  if (!out) throw DataError("failed writing checkpoint '" + path + "'");
}

Archive read_archive(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError(path + ": not a checkpoint archive");
  }
  Archive archive;
  const auto header_size = get<std::uint64_t>(in, path);
  try {
    archive.header = nlohmann::json::parse(get_bytes(in, header_size, path));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path + ": malformed header: " + e.what());
  }
  const auto count = get<std::uint64_t>(in, path);
  for (std::uint64_t i = 0; i < count; ++i) {
    auto name = get_bytes(in, get<std::uint32_t>(in, path), path);
    const auto ndim = get<std::uint32_t>(in, path);
    if (ndim > 8) throw DataError(path + ": corrupt rank for '" + name + "'");
    std::vector<std::int64_t> dims(ndim);
    for (auto& d : dims) {
      d = get<std::int64_t>(in, path);
      if (d < 0) throw DataError(path + ": negative dimension for '" + name + "'");
    }
    auto tensor = torch::empty(dims, torch::kFloat32);
    const auto bytes = static_cast<std::streamsize>(tensor.numel() * sizeof(float));
    if (bytes > 0 && !in.read(reinterpret_cast<char*>(tensor.data_ptr<float>()), bytes)) {
      throw DataError(path + ": truncated data for '" + name + "'");
    }
    archive.arrays.emplace_back(std::move(name), std::move(tensor));
  }
  return archive;
}

void save_checkpoint(const std::string& path, RetinexDualImpl& model, const nlohmann::json& meta) {
  Archive archive;
  archive.header = {{"format", "retinexdual-checkpoint"},
                    {"version", 1},
                    {"config", model.config().to_json()},
                    {"meta", meta.is_null() ? nlohmann::json::object() : meta}};
  for (const auto& item : model.named_parameters(/*recurse=*/true)) {
    archive.arrays.emplace_back(item.key(), item.value());
  }
  write_archive(path, archive);
}

void load_parameters(torch::nn::Module& module, const Archive& archive) {
  auto params = module.named_parameters(/*recurse=*/true);
  std::set<std::string> seen;
  torch::NoGradGuard no_grad;
  for (const auto& [name, tensor] : archive.arrays) {
    auto* target = params.find(name);
    if (target == nullptr) throw ConfigError("checkpoint/config mismatch: unexpected parameter '" + name + "'");
    if (target->sizes() != tensor.sizes()) {
      throw ConfigError("checkpoint/config mismatch: '" + name + "' has shape " + shape_string(tensor) +
                        ", model expects " + shape_string(*target));
    }
    target->copy_(tensor);
    seen.insert(name);
  }
  for (const auto& item : params) {
    if (!seen.count(item.key())) {
      throw ConfigError("checkpoint/config mismatch: parameter '" + item.key() + "' missing from checkpoint");
    }
  }
}

RetinexDual load_checkpoint(const std::string& path) {
  const auto archive = read_archive(path);
  if (!archive.header.contains("config")) throw ConfigError(path + ": checkpoint header has no config");
  RetinexDual model(Config::from_json(archive.header.at("config")));
  load_parameters(*model, archive);
  model->eval();
  return model;
}

}  // namespace retinexdual

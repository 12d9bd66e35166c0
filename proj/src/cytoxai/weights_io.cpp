#include "cytoxai/weights_io.hpp"

#include <cstdint>
#include <cstring>

#include "cytoxai/error.hpp"
#include "cytoxai/persistence.hpp"

namespace cytoxai {

namespace {
constexpr char kMagic[4] = {'C', 'X', 'W', 'B'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <class T>
T get(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw IoError("weight bundle truncated");
  T value;
  std::memcpy(&value, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}
}  // namespace

void write_weight_bundle(const std::filesystem::path& path, const nlohmann::json& manifest, const nn::Network& net) {
  nlohmann::json header;
  header["manifest"] = manifest;
  header["tensors"] = nlohmann::json::array();
  std::string payload;
  std::size_t offset = 0;
  for (std::size_t n = 0; n < net.size(); ++n) {
    const nn::Layer& layer = net.layer(static_cast<int>(n));
    for (const auto& w : layer.weights()) {
      header["tensors"].push_back(
          {{"layer", layer.name()}, {"weight", w.name}, {"shape", w.value.shape()}, {"offset", offset}});
      payload.append(reinterpret_cast<const char*>(w.value.data()), w.value.size() * sizeof(float));
      offset += w.value.size();
    }
  }
  const std::string text = header.dump();
  std::string out(kMagic, 4);
  put(out, kVersion);
  put(out, static_cast<std::uint64_t>(text.size()));
  out += text;
  out += payload;
  write_file_atomic(path, out);
}

WeightBundle read_weight_bundle(const std::filesystem::path& path) {
  const std::string data = read_file(path);
  if (data.size() < 16 || std::memcmp(data.data(), kMagic, 4) != 0) {
    throw IoError(path.string() + " is not a weight bundle");
  }
  std::size_t pos = 4;
  const auto version = get<std::uint32_t>(data, pos);
  if (version != kVersion) throw IoError("unsupported weight bundle version " + std::to_string(version));
  const auto header_len = get<std::uint64_t>(data, pos);
  if (pos + header_len > data.size()) throw IoError("weight bundle header truncated");
  const auto header = nlohmann::json::parse(data.substr(pos, header_len));
  pos += header_len;
  const std::size_t payload_floats = (data.size() - pos) / sizeof(float);
  WeightBundle bundle;
  bundle.manifest = header.value("manifest", nlohmann::json::object());
  for (const auto& t : header.at("tensors")) {
    nn::Tensor tensor(t.at("shape").get<nn::Shape>());
    const std::size_t offset = t.at("offset").get<std::size_t>();
    if (offset + tensor.size() > payload_floats) throw IoError("weight bundle payload truncated");
    std::memcpy(tensor.data(), data.data() + pos + offset * sizeof(float), tensor.size() * sizeof(float));
    bundle.tensors[{t.at("layer").get<std::string>(), t.at("weight").get<std::string>()}] = std::move(tensor);
  }
  return bundle;
}

std::size_t assign_weights(nn::Network& net, const WeightBundle& bundle, bool require_all) {
  std::size_t assigned = 0;
  for (std::size_t n = 0; n < net.size(); ++n) {
    nn::Layer& layer = net.layer(static_cast<int>(n));
    for (auto& w : layer.weights()) {
      const auto it = bundle.tensors.find({layer.name(), w.name});
      if (it == bundle.tensors.end()) {
        if (require_all) throw IoError("weight bundle lacks " + layer.name() + "/" + w.name);
        continue;
      }
      if (it->second.shape() != w.value.shape()) {
        throw IoError("shape mismatch for " + layer.name() + "/" + w.name + ": bundle " +
                      nn::to_string(it->second.shape()) + ", model " + nn::to_string(w.value.shape()));
      }
      w.value = it->second;
      ++assigned;
    }
  }
  return assigned;
}

}  // namespace cytoxai

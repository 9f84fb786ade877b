#include "chaintree/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "chaintree/config.hpp"

namespace chaintree {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'C', 'T', 'C', 'K'};

template <typename T>
constexpr const char* dtype_name() {
  return sizeof(T) == 4 ? "float32" : "float64";
}

template <typename V>
void write_pod(std::ostream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V read_pod(std::istream& in, const std::filesystem::path& path) {
  V v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(V)))
    throw std::runtime_error("checkpoint " + path.string() + ": truncated");
  return v;
}

CheckpointHeader read_header(std::istream& in, const std::filesystem::path& path) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("checkpoint " + path.string() + ": bad magic");
  const auto version = read_pod<std::uint32_t>(in, path);
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint " + path.string() + ": unsupported version " + std::to_string(version));
  const auto len = read_pod<std::uint64_t>(in, path);
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len)))
    throw std::runtime_error("checkpoint " + path.string() + ": truncated header");
  const auto j = nlohmann::json::parse(text);
  CheckpointHeader h;
  h.kind = j.at("kind").get<std::string>();
  h.dtype = j.at("dtype").get<std::string>();
  h.config = j.at("config");
  for (const auto& t : j.at("tensors"))
    h.tensors.push_back({t.at("name").get<std::string>(), t.at("offset").get<std::size_t>(),
                         t.at("rows").get<std::size_t>(), t.at("cols").get<std::size_t>()});
  if (h.dtype != "float32" && h.dtype != "float64")
    throw std::runtime_error("checkpoint " + path.string() + ": unknown dtype '" + h.dtype + "'");
  return h;
}

template <typename S, typename T>
void read_values(std::istream& in, std::vector<T>& out, const std::filesystem::path& path) {
  std::vector<S> raw(out.size());
  if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * sizeof(S))))
    throw std::runtime_error("checkpoint " + path.string() + ": truncated data");
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = static_cast<T>(raw[i]);
}

}  // namespace

template <typename T>
void write_checkpoint(const std::filesystem::path& path, const std::string& kind, const nlohmann::json& config,
                      const ParamSet<T>& params) {
  nlohmann::json j;
  j["kind"] = kind;
  j["dtype"] = dtype_name<T>();
  j["config"] = config;
  j["tensors"] = nlohmann::json::array();
  for (const auto& b : params.blocks())
    j["tensors"].push_back({{"name", b.name}, {"rows", b.rows}, {"cols", b.cols}, {"offset", b.offset}});
  const std::string text = j.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kMagic, 4);
  write_pod(out, kCheckpointVersion);
  write_pod(out, static_cast<std::uint64_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(reinterpret_cast<const char*>(params.values().data()),
            static_cast<std::streamsize>(params.size() * sizeof(T)));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_header(in, path);
}

template <typename T>
CheckpointHeader read_checkpoint(const std::filesystem::path& path, ParamSet<T>& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  auto h = read_header(in, path);
  const auto& blocks = params.blocks();
  if (h.tensors.size() != blocks.size())
    throw std::runtime_error("checkpoint " + path.string() + ": tensor count does not match the model");
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& a = h.tensors[i];
    const auto& b = blocks[i];
    if (a.name != b.name || a.rows != b.rows || a.cols != b.cols || a.offset != b.offset)
      throw std::runtime_error("checkpoint " + path.string() + ": tensor '" + a.name + "' does not match the model");
  }
  if (h.dtype == "float32")
    read_values<float>(in, params.values(), path);
  else
    read_values<double>(in, params.values(), path);
  return h;
}

template <typename T>
void save_encoder(const std::filesystem::path& path, const EncoderModel<T>& model, const SequenceConfig& seq) {
  nlohmann::json config;
  config["encoder"] = model.config();
  config["sequence"] = seq;
  write_checkpoint(path, "encoder", config, model.params());
}

template <typename T>
EncoderModel<T> load_encoder(const std::filesystem::path& path, SequenceConfig* seq) {
  const auto h = read_checkpoint_header(path);
  if (h.kind != "encoder") throw std::runtime_error("checkpoint " + path.string() + ": not an encoder");
  EncoderConfig cfg;
  from_json(h.config.at("encoder"), cfg);
  EncoderModel<T> model(cfg, 0);
  read_checkpoint(path, model.params());
  if (seq) from_json(h.config.at("sequence"), *seq);
  return model;
}

#define CHAINTREE_INSTANTIATE(T)                                                                            \
  template void write_checkpoint<T>(const std::filesystem::path&, const std::string&, const nlohmann::json&, \
                                    const ParamSet<T>&);                                                    \
  template CheckpointHeader read_checkpoint<T>(const std::filesystem::path&, ParamSet<T>&);                  \
  template void save_encoder<T>(const std::filesystem::path&, const EncoderModel<T>&, const SequenceConfig&); \
  template EncoderModel<T> load_encoder<T>(const std::filesystem::path&, SequenceConfig*);

CHAINTREE_INSTANTIATE(float)
CHAINTREE_INSTANTIATE(double)
#undef CHAINTREE_INSTANTIATE

}  // namespace chaintree

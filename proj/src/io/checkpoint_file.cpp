#include "jft/io/checkpoint_file.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "jft/encoders/checkpoint.hpp"
#include "jft/io/config.hpp"
#include "json.hpp"

namespace jft::io {
namespace {

constexpr char kMagic[4] = {'J', 'F', 'T', 'M'};

template <class U>
void put(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  template <class U>
  U take(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return v;
  }

  std::string_view take_bytes(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError("checkpoint truncated while reading " + std::string(what) + " at byte " +
                            std::to_string(pos_));
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

NamedTensor named(const std::string& name, const Tensor& t) {
  NamedTensor n;
  n.name = name;
  for (auto d : t.shape()) n.dims.push_back(static_cast<std::uint32_t>(d));
  n.values.reserve(t.size());
  for (double v : t.values()) n.values.push_back(static_cast<float>(v));
  return n;
}

template <class P, class F>
void each(P&& p, F&& f) {
  if constexpr (std::is_same_v<std::remove_cvref_t<P>, fusion::FusionModel>) {
    fusion::visit(p, f);
  } else {
    encoders::visit(p, "", f);
  }
}

template <class Params>
std::vector<NamedTensor> collect(const Params& p) {
  std::vector<NamedTensor> out;
  each(p, [&](const std::string& name, const Tensor& t) { out.push_back(named(name, t)); });
  return out;
}

// Overwrites every tensor of a freshly built skeleton with the stored values.
template <class Params>
void fill(Params& p, const std::vector<NamedTensor>& tensors) {
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& t : tensors) {
    if (!by_name.emplace(t.name, &t).second) throw CheckpointError("duplicate tensor '" + t.name + "'");
  }
  std::size_t used = 0;
  each(p, [&](const std::string& name, Tensor& t) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointError("checkpoint lacks tensor '" + name + "'");
    Shape shape(it->second->dims.begin(), it->second->dims.end());
    if (shape != t.shape()) {
      throw CheckpointError("tensor '" + name + "' has shape " + shape_str(shape) + ", expected " +
                            shape_str(t.shape()));
    }
    t = Tensor(shape, std::vector<double>(it->second->values.begin(), it->second->values.end()));
    ++used;
  });
  if (used != by_name.size()) throw CheckpointError("checkpoint holds tensors the configuration does not use");
}

nlohmann::json parse_config(const CheckpointFile& file) {
  try {
    auto j = nlohmann::json::parse(file.config);
    if (!j.is_object()) throw CheckpointError("checkpoint config block is not a JSON object");
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint config block: ") + e.what());
  }
}

const nlohmann::json& field(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw CheckpointError(std::string("checkpoint config lacks \"") + key + "\"");
  return j[key];
}

}  // namespace

std::string serialize(const CheckpointFile& file) {
  std::string out(kMagic, sizeof kMagic);
  put<std::uint16_t>(out, file.version);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(file.config.size()));
  out += file.config;
  for (const auto& t : file.tensors) {
    std::size_t expected = 1;
    for (auto d : t.dims) expected *= d;
    if (expected != t.values.size()) throw CheckpointError("tensor '" + t.name + "' has inconsistent size");
    if (t.dims.size() > 255) throw CheckpointError("tensor '" + t.name + "' rank too large");
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    out.push_back(static_cast<char>(t.dims.size()));
    for (auto d : t.dims) put<std::uint32_t>(out, d);
    for (float v : t.values) put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

CheckpointFile parse(std::string_view bytes) {
  ByteReader r(bytes);
  auto magic = r.take_bytes(4, "magic");
  if (magic != std::string_view(kMagic, 4)) throw CheckpointError("not a checkpoint file (bad magic)");
  CheckpointFile f;
  f.version = r.take<std::uint16_t>("version");
  if (f.version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(f.version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  auto len = r.take<std::uint32_t>("config length");
  f.config = std::string(r.take_bytes(len, "config block"));
  while (!r.done()) {
    NamedTensor t;
    auto name_len = r.take<std::uint32_t>("tensor name length");
    t.name = std::string(r.take_bytes(name_len, "tensor name"));
    auto rank = r.take<std::uint8_t>("tensor rank");
    std::size_t count = 1;
    for (std::uint8_t i = 0; i < rank; ++i) {
      t.dims.push_back(r.take<std::uint32_t>("tensor dims"));
      count *= t.dims.back();
    }
    if (count > bytes.size()) throw CheckpointError("tensor '" + t.name + "' larger than the file");
    t.values.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      t.values.push_back(std::bit_cast<float>(r.take<std::uint32_t>("tensor values")));
    }
    f.tensors.push_back(std::move(t));
  }
  return f;
}

std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_bytes(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

CheckpointFile to_file(const encoders::EncoderCheckpoint& ckpt) {
  nlohmann::ordered_json cfg{{"kind", "encoder"}, {"modality", encoders::to_string(ckpt.modality)}};
  CheckpointFile f;
  if (ckpt.modality == encoders::Modality::text) {
    if (!ckpt.text) throw CheckpointError("text checkpoint without parameters");
    cfg["text_encoder"] = text_encoder_json(ckpt.text_config);
    f.tensors = collect(*ckpt.text);
  } else {
    if (!ckpt.image) throw CheckpointError("image checkpoint without parameters");
    cfg["image_encoder"] = image_encoder_json(ckpt.image_config);
    f.tensors = collect(*ckpt.image);
  }
  cfg["metadata"] = {{"task", ckpt.metadata.task},
                     {"corpus_seed", ckpt.metadata.corpus_seed},
                     {"epochs", ckpt.metadata.epochs},
                     {"final_loss", ckpt.metadata.final_loss}};
  f.config = cfg.dump();
  return f;
}

encoders::EncoderCheckpoint encoder_from_file(const CheckpointFile& file) {
  auto cfg = parse_config(file);
  if (field(cfg, "kind") != "encoder") throw CheckpointError("checkpoint does not hold an encoder");
  encoders::EncoderCheckpoint c;
  try {
    c.modality = encoders::modality_from_string(field(cfg, "modality").get<std::string>());
    const auto& m = field(cfg, "metadata");
    c.metadata.task = field(m, "task").get<std::string>();
    c.metadata.corpus_seed = field(m, "corpus_seed").get<std::uint64_t>();
    c.metadata.epochs = field(m, "epochs").get<std::size_t>();
    c.metadata.final_loss = field(m, "final_loss").get<double>();
    Rng rng(0);
    if (c.modality == encoders::Modality::text) {
      c.text_config = text_encoder_from_json(field(cfg, "text_encoder"), "text_encoder");
      c.text = encoders::init_text_encoder(c.text_config, rng);
      fill(*c.text, file.tensors);
    } else {
      c.image_config = image_encoder_from_json(field(cfg, "image_encoder"), "image_encoder");
      c.image = encoders::init_image_encoder(c.image_config, rng);
      fill(*c.image, file.tensors);
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint config: ") + e.what());
  }
  return c;
}

CheckpointFile to_file(const fusion::FusionModel& model) {
  nlohmann::ordered_json cfg{{"kind", "model"},
                             {"architecture", fusion::to_string(model.arch)},
                             {"fusion", fusion_json(model.config)},
                             {"text_encoder", text_encoder_json(model.text_config)},
                             {"image_encoder", image_encoder_json(model.image_config)}};
  CheckpointFile f;
  f.config = cfg.dump();
  f.tensors = collect(model);
  return f;
}

fusion::FusionModel model_from_file(const CheckpointFile& file) {
  auto cfg = parse_config(file);
  if (field(cfg, "kind") != "model") throw CheckpointError("checkpoint does not hold a classifier model");
  try {
    auto arch = fusion::architecture_from_string(field(cfg, "architecture").get<std::string>());
    auto fc = fusion_from_json(field(cfg, "fusion"), "fusion");
    auto tc = text_encoder_from_json(field(cfg, "text_encoder"), "text_encoder");
    auto ic = image_encoder_from_json(field(cfg, "image_encoder"), "image_encoder");
    Rng rng(0);
    auto text = encoders::init_text_encoder(tc, rng);
    auto image = encoders::init_image_encoder(ic, rng);
    auto m = fusion::build_model(arch, fc, tc, ic, std::move(text), std::move(image), rng);
    if (!m.uses_text()) m.text.reset();
    if (!m.uses_image()) m.image.reset();
    fill(m, file.tensors);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint config: ") + e.what());
  }
}

void save_encoder(const std::filesystem::path& path, const encoders::EncoderCheckpoint& ckpt) {
  write_bytes(path, serialize(to_file(ckpt)));
}

encoders::EncoderCheckpoint load_encoder(const std::filesystem::path& path) {
  try {
    return encoder_from_file(parse(read_bytes(path)));
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

void save_model(const std::filesystem::path& path, const fusion::FusionModel& model) {
  write_bytes(path, serialize(to_file(model)));
}

fusion::FusionModel load_model(const std::filesystem::path& path) {
  try {
    return model_from_file(parse(read_bytes(path)));
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

}  // namespace jft::io

#include "jenkins/nn/weights.hpp"

#include <bit>
#include <fstream>
#include <iterator>

namespace jenkins::nn {

static_assert(std::endian::native == std::endian::little, "JNKW payloads are written in host order");

namespace {

constexpr char kMagic[4] = {'J', 'N', 'K', 'W'};
constexpr const char* kManifestSection = "manifest";

std::size_t dtype_size(WeightArchive::DType dtype) {
  switch (dtype) {
    case WeightArchive::DType::f32: return 4;
    case WeightArchive::DType::f64: return 8;
    case WeightArchive::DType::i32: return 4;
    case WeightArchive::DType::bytes: return 1;
  }
  throw Error("weights: unknown dtype");
}

template <typename Int>
void write_int(std::vector<std::uint8_t>& out, Int value) {
  for (std::size_t i = 0; i < sizeof(Int); ++i) out.push_back(std::uint8_t((std::uint64_t(value) >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}

  template <typename Int>
  Int read_int() {
    need(sizeof(Int));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(Int); ++i) v |= std::uint64_t(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(Int);
    return Int(v);
  }

  std::vector<std::uint8_t> read_bytes(std::size_t n) {
    need(n);
    std::vector<std::uint8_t> out(bytes_.begin() + std::ptrdiff_t(pos_), bytes_.begin() + std::ptrdiff_t(pos_ + n));
    pos_ += n;
    return out;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw Error(source_ + ": truncated weight file");
  }

  const std::vector<std::uint8_t>& bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace

void WeightArchive::set_manifest(const nlohmann::json& manifest) {
  if (!manifest.is_object() || !manifest.contains("kind")) throw Error("weights: manifest needs a 'kind' key");
  manifest_ = manifest;
}

std::string WeightArchive::kind() const {
  return manifest_.contains("kind") ? manifest_["kind"].get<std::string>() : std::string();
}

const WeightArchive::Section& WeightArchive::section(const std::string& name) const {
  const auto it = sections_.find(name);
  if (it == sections_.end()) throw Error("weights: missing section '" + name + "'");
  return it->second;
}

void WeightArchive::put_raw(const std::string& name, DType dtype, std::vector<std::uint64_t> shape, const void* data,
                            std::size_t count) {
  if (name == kManifestSection) throw Error("weights: section name 'manifest' is reserved");
  Section s;
  s.dtype = dtype;
  s.shape = std::move(shape);
  s.payload.resize(count * dtype_size(dtype));
  if (count > 0) std::memcpy(s.payload.data(), data, s.payload.size());
  sections_[name] = std::move(s);
}

std::vector<std::uint8_t> WeightArchive::serialize() const {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  write_int<std::uint32_t>(out, kVersion);
  write_int<std::uint32_t>(out, std::uint32_t(sections_.size() + 1));

  auto write_section = [&](const std::string& name, const Section& s) {
    write_int<std::uint32_t>(out, std::uint32_t(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    out.push_back(std::uint8_t(s.dtype));
    write_int<std::uint32_t>(out, std::uint32_t(s.shape.size()));
    for (auto d : s.shape) write_int<std::uint64_t>(out, d);
    out.insert(out.end(), s.payload.begin(), s.payload.end());
  };

  const std::string text = manifest_.dump();
  Section manifest;
  manifest.dtype = DType::bytes;
  manifest.shape = {text.size()};
  manifest.payload.assign(text.begin(), text.end());
  write_section(kManifestSection, manifest);
  for (const auto& [name, s] : sections_) write_section(name, s);
  return out;
}

WeightArchive WeightArchive::deserialize(const std::vector<std::uint8_t>& bytes, const std::string& source) {
  Reader reader(bytes, source);
  const auto magic = reader.read_bytes(4);
  if (!std::equal(magic.begin(), magic.end(), std::begin(kMagic))) throw Error(source + ": not a JNKW weight file");
  const auto version = reader.read_int<std::uint32_t>();
  if (version != kVersion) throw Error(source + ": unsupported JNKW version " + std::to_string(version));
  const auto count = reader.read_int<std::uint32_t>();

  WeightArchive archive;
  bool have_manifest = false;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = reader.read_int<std::uint32_t>();
    const auto name_bytes = reader.read_bytes(name_len);
    std::string name(name_bytes.begin(), name_bytes.end());
    Section s;
    const auto dtype = reader.read_int<std::uint8_t>();
    if (dtype < 1 || dtype > 4) throw Error(source + ": section '" + name + "' has unknown dtype");
    s.dtype = DType(dtype);
    const auto rank = reader.read_int<std::uint32_t>();
    std::uint64_t elements = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      s.shape.push_back(reader.read_int<std::uint64_t>());
      elements *= s.shape.back();
    }
    s.payload = reader.read_bytes(std::size_t(elements * dtype_size(s.dtype)));
    if (name == kManifestSection) {
      try {
        archive.manifest_ = nlohmann::json::parse(s.payload.begin(), s.payload.end());
      } catch (const nlohmann::json::exception& e) {
        throw Error(source + ": corrupt manifest: " + e.what());
      }
      have_manifest = true;
    } else {
      archive.sections_[name] = std::move(s);
    }
  }
  if (!reader.done()) throw Error(source + ": trailing bytes after last section");
  if (!have_manifest) throw Error(source + ": missing manifest section");
  return archive;
}

void WeightArchive::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw Error("failed writing " + path.string());
}

WeightArchive WeightArchive::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes, path.string());
}

}  // namespace jenkins::nn

#include "vidqa/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "vidqa/errors.hpp"

namespace vidqa {

namespace {

constexpr char kMagic[4] = {'V', 'C', 'K', 'P'};

std::uint64_t fnv1a_extend(std::uint64_t h, const void* bytes, std::size_t n) {
  const unsigned char* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

constexpr std::uint64_t kFnvOffset = 14695981039346656037ull;

void write_u32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::ifstream& in, const std::string& path, const char* what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw FormatError(path + ": truncated " + what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_f64(std::ofstream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i)
    b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

double read_f64(std::ifstream& in, const std::string& path) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8))
    throw FormatError(path + ": truncated parameter payload");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

std::uint64_t checksum_extend(std::uint64_t h, const std::string& name,
                              const std::vector<double>& vals) {
  h = fnv1a_extend(h, name.data(), name.size());
  for (double v : vals) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i)
      b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
    h = fnv1a_extend(h, b, 8);
  }
  return h;
}

}  // namespace

std::uint64_t params_checksum(const ParamMap& params) {
  std::uint64_t h = kFnvOffset;
  for (const auto& [name, t] : params.items()) h = checksum_extend(h, name, t.value());
  return h;
}

void save_checkpoint(const std::string& path, const std::string& kind, bool frozen,
                     const nlohmann::json& config, const ParamMap& params) {
  nlohmann::json header;
  header["kind"] = kind;
  header["frozen"] = frozen;
  header["config"] = config;
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& [name, t] : params.items()) {
    nlohmann::json entry;
    entry["name"] = name;
    entry["shape"] = t.shape();
    manifest.push_back(entry);
  }
  header["params"] = manifest;
  header["checksum"] = params_checksum(params);
  std::string htext = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out.write(kMagic, 4);
  write_u32(out, static_cast<std::uint32_t>(htext.size()));
  out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  for (const auto& [name, t] : params.items())
    for (double v : t.value()) write_f64(out, v);
  out.flush();
  if (!out) throw DataError("short write to " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  char magic[4];
  if (!in.read(magic, 4)) throw FormatError(path + ": truncated header at byte 0");
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError(path + ": bad magic at byte 0");
  std::uint32_t hlen = read_u32(in, path, "header length at byte 4");
  std::string htext(hlen, '\0');
  if (!in.read(htext.data(), hlen))
    throw FormatError(path + ": truncated header at byte 8");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(htext);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path + ": malformed header json: " + e.what());
  }

  LoadedCheckpoint ckpt;
  try {
    ckpt.kind = header.at("kind").get<std::string>();
    ckpt.frozen = header.at("frozen").get<bool>();
    ckpt.config = header.at("config");
    ckpt.checksum = header.at("checksum").get<std::uint64_t>();
    for (const auto& entry : header.at("params")) {
      std::string name = entry.at("name").get<std::string>();
      Shape shape = entry.at("shape").get<Shape>();
      ckpt.manifest.emplace_back(std::move(name), std::move(shape));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": header missing fields: " + e.what());
  }

  std::uint64_t h = kFnvOffset;
  for (const auto& [name, shape] : ckpt.manifest) {
    std::size_t n = shape_numel(shape);
    std::vector<double> vals(n);
    for (std::size_t i = 0; i < n; ++i) vals[i] = read_f64(in, path);
    h = checksum_extend(h, name, vals);
    ckpt.values.push_back(std::move(vals));
  }
  if (h != ckpt.checksum)
    throw FormatError(path + ": parameter checksum mismatch");
  return ckpt;
}

void restore_params(const LoadedCheckpoint& ckpt, ParamMap& params) {
  const auto& items = params.items();
  if (items.size() != ckpt.manifest.size())
    throw DataError("checkpoint holds " + std::to_string(ckpt.manifest.size()) +
                    " parameters, model expects " + std::to_string(items.size()));
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& [name, t] = items[i];
    const auto& [ck_name, ck_shape] = ckpt.manifest[i];
    if (name != ck_name)
      throw DataError("checkpoint parameter " + ck_name + " where model expects " +
                      name);
    if (t.shape() != ck_shape)
      throw DataError("checkpoint shape " + shape_str(ck_shape) + " for " + name +
                      ", model expects " + shape_str(t.shape()));
    Tensor mutable_t = t;
    mutable_t.raw_value() = ckpt.values[i];
  }
}

}  // namespace vidqa

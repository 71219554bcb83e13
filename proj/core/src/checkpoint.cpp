#include "dmeta/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <vector>

#include "dmeta/errors.hpp"

namespace dmeta {

namespace {

constexpr char kMagic[6] = {'D', 'M', 'E', 'T', 'A', '1'};

void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw IoError("checkpoint truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_entry(std::ostream& out, const std::string& key, long long value) {
  const std::string entry = key + "=" + std::to_string(value);
  write_u32(out, static_cast<std::uint32_t>(entry.size()));
  out.write(entry.data(), static_cast<std::streamsize>(entry.size()));
}

}  // namespace

void save_checkpoint(const std::string& path, const NetworkSpec& spec,
                     const ParameterSet& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  out.write(kMagic, sizeof(kMagic));
  write_u32(out, 7);
  write_entry(out, "input_h", spec.input_h);
  write_entry(out, "input_w", spec.input_w);
  write_entry(out, "input_c", spec.input_c);
  write_entry(out, "channels", spec.channels);
  write_entry(out, "use_maxpool", spec.use_maxpool ? 1 : 0);
  write_entry(out, "num_logits", spec.num_logits);
  write_entry(out, "values", params.total_values());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& t = params.item(i).tensor;
    // Raw dump; this code targets little-endian hosts.
    out.write(reinterpret_cast<const char*>(t.ptr()),
              static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  }
  if (!out) throw IoError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[6];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError("not a DMETA1 checkpoint: " + path);
  }
  const std::uint32_t n_entries = read_u32(in);
  if (n_entries > 64) throw IoError("checkpoint header too large: " + path);
  std::map<std::string, long long> header;
  for (std::uint32_t i = 0; i < n_entries; ++i) {
    const std::uint32_t len = read_u32(in);
    if (len > 256) throw IoError("checkpoint header entry too large: " + path);
    std::string entry(len, '\0');
    in.read(entry.data(), len);
    if (!in) throw IoError("checkpoint truncated: " + path);
    const std::size_t eq = entry.find('=');
    if (eq == std::string::npos) throw IoError("malformed checkpoint header: " + path);
    try {
      header[entry.substr(0, eq)] = std::stoll(entry.substr(eq + 1));
    } catch (const std::exception&) {
      throw IoError("malformed checkpoint header value: " + path);
    }
  }
  auto need = [&](const char* key) {
    auto it = header.find(key);
    if (it == header.end()) {
      throw IoError("checkpoint header missing " + std::string(key) + ": " + path);
    }
    return it->second;
  };

  NetworkSpec spec;
  spec.input_h = static_cast<int>(need("input_h"));
  spec.input_w = static_cast<int>(need("input_w"));
  spec.input_c = static_cast<int>(need("input_c"));
  spec.channels = static_cast<int>(need("channels"));
  spec.use_maxpool = need("use_maxpool") != 0;
  spec.num_logits = static_cast<int>(need("num_logits"));
  try {
    spec.validate();
  } catch (const std::exception& e) {
    throw IoError("checkpoint carries an invalid network spec: " + std::string(e.what()));
  }

  Model model(spec);
  RngStream scratch(0);
  ParameterSet params = model.init_params(scratch);
  if (need("values") != params.total_values()) {
    throw IoError("checkpoint value count does not match its network spec: " + path);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& t = params.item(i).tensor;
    in.read(reinterpret_cast<char*>(t.ptr()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!in) throw IoError("checkpoint truncated: " + path);
  }
  char extra;
  if (in.read(&extra, 1)) throw IoError("trailing bytes in checkpoint: " + path);
  return Checkpoint{spec, std::move(params)};
}

}  // namespace dmeta

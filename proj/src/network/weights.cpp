#include "wmseg/weights.hpp"

#include <zlib.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "wmseg/error.hpp"

namespace wmseg::nn {

namespace {

constexpr size_t kMagicLen = 6;

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

uint32_t payload_crc(const std::vector<unsigned char>& bytes) {
  uLong c = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  size_t off = 0;
  while (off < bytes.size()) {
    const size_t n = std::min<size_t>(bytes.size() - off, 1u << 30);
    c = crc32(c, bytes.data() + off, static_cast<uInt>(n));
    off += n;
  }
  return static_cast<uint32_t>(c);
}

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

struct Parsed {
  WeightsManifest manifest;
  size_t payload_offset = 0;
};

int64_t to_int(const std::string& s, const std::string& key) {
  try {
    size_t pos = 0;
    const long long v = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError("weights manifest: bad integer for " + key);
  }
}

Parsed parse(const std::vector<unsigned char>& bytes, const std::filesystem::path& path) {
  if (bytes.size() < kMagicLen + 4 || std::memcmp(bytes.data(), kWeightsMagic, kMagicLen) != 0) {
    throw FormatError(path.string() + " is not a weights file");
  }
  uint32_t len = 0;
  for (int i = 0; i < 4; ++i) len |= static_cast<uint32_t>(bytes[kMagicLen + i]) << (8 * i);
  if (bytes.size() < kMagicLen + 4 + len) throw FormatError("weights manifest is truncated");
  const std::string text(bytes.begin() + kMagicLen + 4, bytes.begin() + kMagicLen + 4 + len);

  Parsed out;
  auto& m = out.manifest;
  std::map<std::string, bool> seen;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    std::string rest;
    std::getline(ls >> std::ws, rest);
    if (key == "tensor") {
      std::istringstream ts(rest);
      std::string name;
      ts >> name;
      Shape shape;
      std::string d;
      while (ts >> d) shape.push_back(to_int(d, "tensor " + name));
      m.tensors.emplace_back(name, shape);
    } else if (key == "tract") {
      m.tracts.push_back(rest);
    } else {
      seen[key] = true;
      if (key == "in_channels") m.config.in_channels = to_int(rest, key);
      else if (key == "out_channels") m.config.out_channels = to_int(rest, key);
      else if (key == "depth") m.config.depth = to_int(rest, key);
      else if (key == "base_channels") m.config.base_channels = to_int(rest, key);
      else if (key == "filter_size") m.config.filter_size = to_int(rest, key);
      else if (key == "input_size") m.config.input_size = to_int(rest, key);
      else if (key == "parameter_count") m.parameter_count = to_int(rest, key);
      else if (key == "dropout_p") {
        try {
          m.config.dropout_p = std::stod(rest);
        } catch (const std::exception&) {
          throw FormatError("weights manifest: bad dropout_p");
        }
      } else if (key == "crc32") {
        m.crc32 = static_cast<uint32_t>(to_int(rest, key));
      } else {
        throw FormatError("weights manifest: unknown key " + key);
      }
    }
  }
  for (const char* k : {"in_channels", "out_channels", "depth", "base_channels", "filter_size", "dropout_p",
                        "input_size", "parameter_count", "crc32"}) {
    if (!seen.count(k)) throw FormatError(std::string("weights manifest: missing ") + k);
  }
  out.payload_offset = kMagicLen + 4 + len;
  return out;
}

void check_config(const UNetConfig& stored, const UNetConfig& expected) {
  auto field = [](const char* name, auto a, auto b) {
    if (a != b) {
      std::ostringstream os;
      os << "weights were saved with " << name << "=" << a << " but " << b << " was requested";
      throw ConfigMismatchError(os.str());
    }
  };
  field("in_channels", stored.in_channels, expected.in_channels);
  field("out_channels", stored.out_channels, expected.out_channels);
  field("depth", stored.depth, expected.depth);
  field("base_channels", stored.base_channels, expected.base_channels);
  field("filter_size", stored.filter_size, expected.filter_size);
  field("dropout_p", stored.dropout_p, expected.dropout_p);
  field("input_size", stored.input_size, expected.input_size);
}

UNet<float> load_impl(const std::filesystem::path& path, const UNetConfig* expected,
                      std::vector<std::string>* tracts) {
  const auto bytes = read_file(path);
  const Parsed parsed = parse(bytes, path);
  const auto& m = parsed.manifest;
  if (expected) check_config(m.config, *expected);
  try {
    m.config.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("weights file holds an invalid config: ") + e.what());
  }

  Rng rng(0);
  UNet<float> model(m.config, rng);
  auto& params = model.parameters();
  if (m.parameter_count != model.parameter_count() || m.tensors.size() != params.size()) {
    throw FormatError("weights file parameter list does not match its config");
  }
  const size_t payload_bytes = static_cast<size_t>(model.parameter_count()) * sizeof(float);
  if (bytes.size() - parsed.payload_offset != payload_bytes) throw FormatError("weights payload has the wrong size");
  const std::vector<unsigned char> payload(bytes.begin() + static_cast<std::ptrdiff_t>(parsed.payload_offset),
                                           bytes.end());
  if (payload_crc(payload) != m.crc32) throw FormatError("weights checksum mismatch");

  size_t off = 0;
  for (size_t i = 0; i < params.size(); ++i) {
    if (m.tensors[i].first != params[i].name || m.tensors[i].second != params[i].tensor.shape()) {
      throw FormatError("weights tensor " + m.tensors[i].first + " does not match the model layout");
    }
    auto v = params[i].tensor.values();
    std::memcpy(v.data(), payload.data() + off, v.size() * sizeof(float));
    off += v.size() * sizeof(float);
  }
  if (tracts) *tracts = m.tracts;
  return model;
}

}  // namespace

void save_weights(const UNet<float>& model, const std::filesystem::path& path, const std::vector<std::string>& tracts) {
  std::vector<unsigned char> payload;
  payload.reserve(static_cast<size_t>(model.parameter_count()) * sizeof(float));
  for (const auto& p : model.parameters()) {
    const auto v = p.tensor.values();
    const auto* raw = reinterpret_cast<const unsigned char*>(v.data());
    payload.insert(payload.end(), raw, raw + v.size() * sizeof(float));
  }

  const auto& c = model.config();
  std::ostringstream os;
  os << "in_channels " << c.in_channels << '\n'
     << "out_channels " << c.out_channels << '\n'
     << "depth " << c.depth << '\n'
     << "base_channels " << c.base_channels << '\n'
     << "filter_size " << c.filter_size << '\n'
     << "dropout_p " << format_double(c.dropout_p) << '\n'
     << "input_size " << c.input_size << '\n'
     << "parameter_count " << model.parameter_count() << '\n';
  for (const auto& t : tracts) {
    if (t.find('\n') != std::string::npos) throw InputError("tract names must not contain newlines");
    os << "tract " << t << '\n';
  }
  for (const auto& p : model.parameters()) {
    os << "tensor " << p.name;
    for (auto d : p.tensor.shape()) os << ' ' << d;
    os << '\n';
  }
  os << "crc32 " << payload_crc(payload) << '\n';
  const std::string manifest = os.str();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(kWeightsMagic, kMagicLen);
  const auto len = static_cast<uint32_t>(manifest.size());
  unsigned char lb[4];
  for (int i = 0; i < 4; ++i) lb[i] = static_cast<unsigned char>((len >> (8 * i)) & 0xff);
  f.write(reinterpret_cast<const char*>(lb), 4);
  f.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
  f.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

WeightsManifest read_weights_manifest(const std::filesystem::path& path) {
  return parse(read_file(path), path).manifest;
}

UNet<float> load_weights(const std::filesystem::path& path, const UNetConfig& cfg, std::vector<std::string>* tracts) {
  return load_impl(path, &cfg, tracts);
}

UNet<float> load_weights(const std::filesystem::path& path, std::vector<std::string>* tracts) {
  return load_impl(path, nullptr, tracts);
}

}  // namespace wmseg::nn

#include "wmseg/nifti.hpp"

#include <zlib.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>

#include "wmseg/error.hpp"

namespace wmseg {

static_assert(std::endian::native == std::endian::little, "NIfTI I/O assumes a little-endian host");

namespace {

constexpr int kHeaderSize = 348;
constexpr int kVoxOffset = 352;

// Byte offsets of the NIfTI-1 header fields.
constexpr int kOffSizeofHdr = 0;
constexpr int kOffDim = 40;
constexpr int kOffDatatype = 70;
constexpr int kOffBitpix = 72;
constexpr int kOffPixdim = 76;
constexpr int kOffVoxOffset = 108;
constexpr int kOffSclSlope = 112;
constexpr int kOffSclInter = 116;
constexpr int kOffXyztUnits = 123;
constexpr int kOffQformCode = 252;
constexpr int kOffSformCode = 254;
constexpr int kOffQuatern = 256;  // quatern_b, c, d, qoffset_x, y, z
constexpr int kOffSrow = 280;     // srow_x, srow_y, srow_z (4 floats each)
constexpr int kOffMagic = 344;

enum Datatype : int16_t { kUint8 = 2, kInt16 = 4, kFloat32 = 16, kFloat64 = 64 };

template <class T>
T load(const unsigned char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

template <class T>
void store(unsigned char* p, T v) {
  std::memcpy(p, &v, sizeof(T));
}

std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (!f) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> bytes;
  unsigned char buf[1 << 16];
  for (;;) {
    int n = gzread(f, buf, sizeof(buf));
    if (n < 0) {
      gzclose(f);
      throw FormatError("corrupt compressed stream in " + path.string());
    }
    if (n == 0) break;
    bytes.insert(bytes.end(), buf, buf + n);
  }
  gzclose(f);
  return bytes;
}

Affine affine_from_qform(const unsigned char* h, const std::array<double, 3>& spacing, double qfac) {
  double b = load<float>(h + kOffQuatern);
  double c = load<float>(h + kOffQuatern + 4);
  double d = load<float>(h + kOffQuatern + 8);
  double a = 1.0 - (b * b + c * c + d * d);
  if (a < 1e-7) {
    a = 1.0 / std::sqrt(b * b + c * c + d * d);
    b *= a;
    c *= a;
    d *= a;
    a = 0.0;
  } else {
    a = std::sqrt(a);
  }
  const double r[3][3] = {{a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)},
                          {2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)},
                          {2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b}};
  Affine m = identity_affine();
  const double scale[3] = {spacing[0], spacing[1], spacing[2] * qfac};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) m[i][j] = r[i][j] * scale[j];
    m[i][3] = load<float>(h + kOffQuatern + 12 + 4 * i);
  }
  return m;
}

}  // namespace

Volume read_nifti(const std::filesystem::path& path) {
  const std::vector<unsigned char> bytes = slurp(path);
  if (bytes.size() < kHeaderSize) throw FormatError(path.string() + ": truncated NIfTI header");
  const unsigned char* h = bytes.data();
  const int32_t sizeof_hdr = load<int32_t>(h + kOffSizeofHdr);
  if (sizeof_hdr != kHeaderSize) {
    if (sizeof_hdr == 0x5C010000) throw UnsupportedError(path.string() + ": big-endian NIfTI is not supported");
    throw FormatError(path.string() + ": not a NIfTI-1 file (sizeof_hdr)");
  }
  if (std::memcmp(h + kOffMagic, "n+1\0", 4) != 0) {
    if (std::memcmp(h + kOffMagic, "ni1\0", 4) == 0) {
      throw UnsupportedError(path.string() + ": header/image pair NIfTI is not supported");
    }
    throw FormatError(path.string() + ": bad NIfTI magic");
  }

  int16_t dim[8];
  for (int i = 0; i < 8; ++i) dim[i] = load<int16_t>(h + kOffDim + 2 * i);
  if (dim[0] < 1 || dim[0] > 7) throw FormatError(path.string() + ": invalid dim[0]");
  for (int i = 5; i <= dim[0]; ++i) {
    if (dim[i] > 1) throw UnsupportedError(path.string() + ": more than four dimensions");
  }
  VolumeHeader header;
  for (int i = 0; i < 3; ++i) header.dims[i] = (i + 1 <= dim[0]) ? dim[i + 1] : 1;
  header.channels = dim[0] >= 4 ? dim[4] : 1;
  float pixdim[8];
  for (int i = 0; i < 8; ++i) pixdim[i] = load<float>(h + kOffPixdim + 4 * i);
  for (int i = 0; i < 3; ++i) header.spacing[i] = pixdim[i + 1] > 0.0f ? pixdim[i + 1] : 1.0;

  const int16_t sform_code = load<int16_t>(h + kOffSformCode);
  const int16_t qform_code = load<int16_t>(h + kOffQformCode);
  if (sform_code > 0) {
    header.affine = identity_affine();
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 4; ++c) header.affine[r][c] = load<float>(h + kOffSrow + 16 * r + 4 * c);
    }
  } else if (qform_code > 0) {
    header.affine = affine_from_qform(h, header.spacing, pixdim[0] < 0.0f ? -1.0 : 1.0);
  } else {
    header.affine = scaling_affine(header.spacing);
  }
  try {
    header.validate();
  } catch (const ShapeError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }

  const int16_t datatype = load<int16_t>(h + kOffDatatype);
  size_t elem = 0;
  switch (datatype) {
    case kUint8:
      elem = 1;
      break;
    case kInt16:
      elem = 2;
      break;
    case kFloat32:
      elem = 4;
      break;
    case kFloat64:
      elem = 8;
      break;
    default:
      throw UnsupportedError(path.string() + ": unsupported NIfTI datatype " + std::to_string(datatype));
  }
  const float vox_offset = load<float>(h + kOffVoxOffset);
  const auto offset = static_cast<size_t>(vox_offset);
  if (offset < kHeaderSize) throw FormatError(path.string() + ": invalid vox_offset");
  const auto count = static_cast<size_t>(header.value_count());
  if (bytes.size() < offset + count * elem) throw FormatError(path.string() + ": truncated NIfTI payload");

  float slope = load<float>(h + kOffSclSlope);
  float inter = load<float>(h + kOffSclInter);
  const bool scaled = std::isfinite(slope) && slope != 0.0f && !(slope == 1.0f && inter == 0.0f);

  std::vector<float> data(count);
  const unsigned char* p = bytes.data() + offset;
  for (size_t i = 0; i < count; ++i) {
    double v = 0.0;
    switch (datatype) {
      case kUint8:
        v = p[i];
        break;
      case kInt16:
        v = load<int16_t>(p + 2 * i);
        break;
      case kFloat32:
        v = load<float>(p + 4 * i);
        break;
      case kFloat64:
        v = load<double>(p + 8 * i);
        break;
    }
    data[i] = static_cast<float>(scaled ? v * slope + inter : v);
  }
  return Volume(header, std::move(data));
}

std::vector<unsigned char> encode_nifti_header(const VolumeHeader& header) {
  header.validate();
  for (int i = 0; i < 3; ++i) {
    if (header.dims[i] > 32767) throw UnsupportedError("dimension exceeds NIfTI-1 limit");
  }
  if (header.channels > 32767) throw UnsupportedError("channel count exceeds NIfTI-1 limit");

  std::vector<unsigned char> h(kVoxOffset, 0);
  store<int32_t>(h.data() + kOffSizeofHdr, kHeaderSize);
  const int16_t ndim = header.channels > 1 ? 4 : 3;
  int16_t dim[8] = {ndim, static_cast<int16_t>(header.dims[0]), static_cast<int16_t>(header.dims[1]),
                    static_cast<int16_t>(header.dims[2]), static_cast<int16_t>(header.channels > 1 ? header.channels : 1),
                    1, 1, 1};
  for (int i = 0; i < 8; ++i) store<int16_t>(h.data() + kOffDim + 2 * i, dim[i]);
  store<int16_t>(h.data() + kOffDatatype, kFloat32);
  store<int16_t>(h.data() + kOffBitpix, 32);
  float pixdim[8] = {1.0f, static_cast<float>(header.spacing[0]), static_cast<float>(header.spacing[1]),
                     static_cast<float>(header.spacing[2]), 1.0f, 1.0f, 1.0f, 1.0f};
  for (int i = 0; i < 8; ++i) store<float>(h.data() + kOffPixdim + 4 * i, pixdim[i]);
  store<float>(h.data() + kOffVoxOffset, static_cast<float>(kVoxOffset));
  store<float>(h.data() + kOffSclSlope, 1.0f);
  store<float>(h.data() + kOffSclInter, 0.0f);
  h[kOffXyztUnits] = 2;  // millimetres
  store<int16_t>(h.data() + kOffQformCode, 0);
  store<int16_t>(h.data() + kOffSformCode, 1);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) store<float>(h.data() + kOffSrow + 16 * r + 4 * c, static_cast<float>(header.affine[r][c]));
  }
  std::memcpy(h.data() + kOffMagic, "n+1\0", 4);
  return h;
}

void write_nifti(const Volume& vol, const std::filesystem::path& path) {
  std::vector<unsigned char> bytes = encode_nifti_header(vol.header());
  const auto data = vol.data();
  const size_t payload = data.size() * sizeof(float);
  bytes.resize(kVoxOffset + payload);
  std::memcpy(bytes.data() + kVoxOffset, data.data(), payload);

  const std::string name = path.string();
  const bool gz = name.size() >= 3 && name.compare(name.size() - 3, 3, ".gz") == 0;
  if (gz) {
    gzFile f = gzopen(name.c_str(), "wb6");
    if (!f) throw IoError("cannot write " + name);
    size_t done = 0;
    while (done < bytes.size()) {
      const auto chunk = static_cast<unsigned>(std::min<size_t>(bytes.size() - done, 1u << 30));
      if (gzwrite(f, bytes.data() + done, chunk) != static_cast<int>(chunk)) {
        gzclose(f);
        throw IoError("write failed for " + name);
      }
      done += chunk;
    }
    if (gzclose(f) != Z_OK) throw IoError("write failed for " + name);
  } else {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + name);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + name);
  }
}

}  // namespace wmseg

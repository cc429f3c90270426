#include "mdn/field_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include "mdn/errors.hpp"

namespace mdn {

namespace {

constexpr unsigned char kMagic[4] = {'M', 'D', 'N', 'F'};
constexpr std::size_t kHeaderBytes = 16;

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

std::vector<unsigned char> encode_mdnf(const ScalarField& f) {
  std::vector<unsigned char> out;
  out.reserve(kHeaderBytes + 8 * f.size());
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_u32(out, static_cast<std::uint32_t>(f.height()));
  put_u32(out, static_cast<std::uint32_t>(f.width()));
  put_u32(out, static_cast<std::uint32_t>(f.channels()));
  for (double v : f.data()) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(bits >> (8 * i)));
  }
  return out;
}

ScalarField decode_mdnf(std::span<const unsigned char> bytes) {
  if (bytes.size() < kHeaderBytes) throw FormatError("MDNF: truncated header");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("MDNF: bad magic");
  const std::uint32_t h = get_u32(bytes.data() + 4);
  const std::uint32_t w = get_u32(bytes.data() + 8);
  const std::uint32_t c = get_u32(bytes.data() + 12);
  constexpr auto kMaxDim = static_cast<std::uint64_t>(std::numeric_limits<int>::max());
  if (h == 0 || w == 0 || c == 0 || h > kMaxDim || w > kMaxDim || c > kMaxDim) {
    throw FormatError("MDNF: invalid dimensions");
  }
  const std::uint64_t count = static_cast<std::uint64_t>(h) * w * c;
  if (count > (std::numeric_limits<std::uint64_t>::max() - kHeaderBytes) / 8 ||
      count > kMaxDim) {
    throw FormatError("MDNF: dimension overflow");
  }
  if (bytes.size() != kHeaderBytes + 8 * count) {
    throw FormatError("MDNF: payload holds " + std::to_string((bytes.size() - kHeaderBytes) / 8) +
                      " values, header declares " + std::to_string(count));
  }
  std::vector<double> data(count);
  const unsigned char* p = bytes.data() + kHeaderBytes;
  for (std::uint64_t i = 0; i < count; ++i, p += 8) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[b]) << (8 * b);
    data[i] = std::bit_cast<double>(bits);
  }
  try {
    return ScalarField({static_cast<int>(h), static_cast<int>(w), static_cast<int>(c)},
                       std::move(data));
  } catch (const DomainError& e) {
    throw FormatError(std::string("MDNF: ") + e.what());
  }
}

void save_mdnf(const ScalarField& f, const std::filesystem::path& path) {
  const auto bytes = encode_mdnf(f);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw Error("write failed: " + path.string());
}

ScalarField load_mdnf(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());
  return decode_mdnf(bytes);
}

std::vector<unsigned char> pgm_pixels(const ScalarField& f, int channel) {
  const auto plane = f.channel(channel);
  double lo = plane[0], hi = plane[0];
  for (double v : plane) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  std::vector<unsigned char> px(plane.size(), 0);
  if (hi > lo) {
    const double scale = 255.0 / (hi - lo);
    for (std::size_t i = 0; i < plane.size(); ++i) {
      px[i] = static_cast<unsigned char>(std::lround((plane[i] - lo) * scale));
    }
  }
  return px;
}

void export_pgm(const ScalarField& f, int channel, const std::filesystem::path& path) {
  const auto px = pgm_pixels(f, channel);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  os << "P5\n" << f.width() << " " << f.height() << "\n255\n";
  os.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (!os) throw Error("write failed: " + path.string());
}

}  // namespace mdn

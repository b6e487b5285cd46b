#ifndef STLPLAN_IMAGE_HPP
#define STLPLAN_IMAGE_HPP

#include "stlplan/errors.hpp"

#include <zlib.h>

#include <cctype>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace stlplan::img {

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, row 0 = top
};

namespace detail {

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open image: " + path.string());
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return data;
}

inline int pgm_token(const std::vector<std::uint8_t>& d, std::size_t& p) {
  // skip whitespace and '#' comments
  while (p < d.size()) {
    if (std::isspace(d[p])) {
      ++p;
    } else if (d[p] == '#') {
      while (p < d.size() && d[p] != '\n') ++p;
    } else {
      break;
    }
  }
  if (p >= d.size() || !std::isdigit(d[p])) throw IoError("malformed PGM header");
  int v = 0;
  while (p < d.size() && std::isdigit(d[p])) {
    v = v * 10 + (d[p] - '0');
    ++p;
  }
  return v;
}

inline std::uint32_t be32(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
         std::uint32_t(p[3]);
}

inline std::vector<std::uint8_t> zlib_inflate(const std::vector<std::uint8_t>& in,
                                              std::size_t expected) {
  std::vector<std::uint8_t> out(expected);
  z_stream zs;
  std::memset(&zs, 0, sizeof(zs));
  if (inflateInit(&zs) != Z_OK) throw IoError("zlib init failed");
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  int rc = inflate(&zs, Z_FINISH);
  inflateEnd(&zs);
  if (rc != Z_STREAM_END || zs.total_out != expected) throw IoError("PNG: inflate failed");
  return out;
}

inline std::uint8_t paeth(int a, int b, int c) {
  int p = a + b - c;
  int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return static_cast<std::uint8_t>(a);
  if (pb <= pc) return static_cast<std::uint8_t>(b);
  return static_cast<std::uint8_t>(c);
}

}  // namespace detail

inline GrayImage read_pgm(const std::vector<std::uint8_t>& data, const std::string& what) {
  if (data.size() < 2 || data[0] != 'P' || data[1] != '5') throw IoError("not a P5 PGM: " + what);
  std::size_t p = 2;
  int w = detail::pgm_token(data, p);
  int h = detail::pgm_token(data, p);
  int maxval = detail::pgm_token(data, p);
  if (w <= 0 || h <= 0) throw IoError("zero-size PGM: " + what);
  if (maxval <= 0 || maxval > 255) throw IoError("unsupported PGM maxval: " + what);
  ++p;  // single whitespace after maxval
  std::size_t n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  if (data.size() < p + n) throw IoError("truncated PGM payload: " + what);
  GrayImage im;
  im.width = w;
  im.height = h;
  im.pixels.assign(data.begin() + static_cast<std::ptrdiff_t>(p),
                   data.begin() + static_cast<std::ptrdiff_t>(p + n));
  return im;
}

// Minimal PNG reader: 8-bit grayscale (color type 0), no interlace.
inline GrayImage read_png_gray8(const std::vector<std::uint8_t>& data, const std::string& what) {
  static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (data.size() < 8 || std::memcmp(data.data(), sig, 8) != 0)
    throw IoError("not a PNG: " + what);
  std::size_t p = 8;
  int w = 0, h = 0;
  bool have_ihdr = false;
  std::vector<std::uint8_t> idat;
  while (p + 8 <= data.size()) {
    std::uint32_t len = detail::be32(&data[p]);
    if (p + 12 + len > data.size()) throw IoError("truncated PNG chunk: " + what);
    std::string type(reinterpret_cast<const char*>(&data[p + 4]), 4);
    const std::uint8_t* body = &data[p + 8];
    if (type == "IHDR") {
      if (len != 13) throw IoError("bad IHDR: " + what);
      w = static_cast<int>(detail::be32(body));
      h = static_cast<int>(detail::be32(body + 4));
      int bit_depth = body[8], color_type = body[9], interlace = body[12];
      if (bit_depth != 8 || color_type != 0)
        throw IoError("unsupported PNG format (need 8-bit grayscale): " + what);
      if (interlace != 0) throw IoError("interlaced PNG unsupported: " + what);
      have_ihdr = true;
    } else if (type == "IDAT") {
      idat.insert(idat.end(), body, body + len);
    } else if (type == "IEND") {
      break;
    }
    p += 12 + len;
  }
  if (!have_ihdr || w <= 0 || h <= 0) throw IoError("PNG missing IHDR: " + what);

  std::size_t stride = static_cast<std::size_t>(w);
  std::vector<std::uint8_t> raw =
      detail::zlib_inflate(idat, (stride + 1) * static_cast<std::size_t>(h));

  GrayImage im;
  im.width = w;
  im.height = h;
  im.pixels.resize(stride * static_cast<std::size_t>(h));
  std::vector<std::uint8_t> prev(stride, 0);
  for (int y = 0; y < h; ++y) {
    const std::uint8_t* src = &raw[static_cast<std::size_t>(y) * (stride + 1)];
    std::uint8_t filter = src[0];
    std::uint8_t* dst = &im.pixels[static_cast<std::size_t>(y) * stride];
    for (std::size_t x = 0; x < stride; ++x) {
      int a = x > 0 ? dst[x - 1] : 0;
      int b = prev[x];
      int c = x > 0 ? prev[x - 1] : 0;
      int v = src[1 + x];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += detail::paeth(a, b, c); break;
        default: throw IoError("bad PNG filter byte: " + what);
      }
      dst[x] = static_cast<std::uint8_t>(v & 0xff);
    }
    std::memcpy(prev.data(), dst, stride);
  }
  return im;
}

// Dispatch on magic bytes; threshold decisions belong to the caller.
inline GrayImage read_gray_image(const std::filesystem::path& path) {
  std::vector<std::uint8_t> data = detail::read_file(path);
  if (data.size() >= 2 && data[0] == 'P' && data[1] == '5') return read_pgm(data, path.string());
  if (data.size() >= 8 && data[0] == 0x89 && data[1] == 'P')
    return read_png_gray8(data, path.string());
  throw IoError("unsupported image format (need PGM P5 or 8-bit grayscale PNG): " + path.string());
}

inline void write_pgm(const std::filesystem::path& path, const GrayImage& im) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for write: " + tmp.string());
    os << "P5\n" << im.width << " " << im.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(im.pixels.data()),
             static_cast<std::streamsize>(im.pixels.size()));
    if (!os) throw IoError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace stlplan::img

#endif

#include "semflow/scene/png_io.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace sf {

namespace {

void put_u32(std::vector<std::uint8_t>& buf, std::uint32_t v) {
  buf.push_back(static_cast<std::uint8_t>(v >> 24));
  buf.push_back(static_cast<std::uint8_t>(v >> 16));
  buf.push_back(static_cast<std::uint8_t>(v >> 8));
  buf.push_back(static_cast<std::uint8_t>(v));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
         (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

void append_chunk(std::vector<std::uint8_t>& out, const char type[4],
                  const std::vector<std::uint8_t>& data) {
  put_u32(out, static_cast<std::uint32_t>(data.size()));
  size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  std::uint32_t crc = crc32(0, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start));
  put_u32(out, crc);
}

}  // namespace

void write_png(const std::string& path, const std::uint8_t* pixels, int width,
               int height, int channels) {
  if (channels != 1 && channels != 3)
    throw std::invalid_argument("write_png: channels must be 1 or 3");

  // scanlines with filter byte 0
  std::vector<std::uint8_t> raw;
  raw.reserve(static_cast<size_t>(height) * (width * channels + 1));
  for (int y = 0; y < height; ++y) {
    raw.push_back(0);
    const std::uint8_t* row = pixels + static_cast<size_t>(y) * width * channels;
    raw.insert(raw.end(), row, row + width * channels);
  }
  uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> comp(comp_len);
  if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw std::runtime_error("write_png: deflate failed for " + path);
  comp.resize(comp_len);

  std::vector<std::uint8_t> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  std::vector<std::uint8_t> ihdr;
  put_u32(ihdr, static_cast<std::uint32_t>(width));
  put_u32(ihdr, static_cast<std::uint32_t>(height));
  ihdr.push_back(8);                                   // bit depth
  ihdr.push_back(channels == 3 ? 2 : 0);               // color type
  ihdr.push_back(0);                                   // compression
  ihdr.push_back(0);                                   // filter
  ihdr.push_back(0);                                   // no interlace
  append_chunk(out, "IHDR", ihdr);
  append_chunk(out, "IDAT", comp);
  append_chunk(out, "IEND", {});

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_png: cannot open " + path);
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("write_png: write failed for " + path);
}

PngImage read_png(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_png: cannot open " + path);
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());
  static const std::uint8_t magic[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (data.size() < 8 || std::memcmp(data.data(), magic, 8) != 0)
    throw std::runtime_error("read_png: bad magic in " + path);

  PngImage img;
  std::vector<std::uint8_t> idat;
  size_t pos = 8;
  bool saw_ihdr = false;
  while (pos + 8 <= data.size()) {
    std::uint32_t len = get_u32(&data[pos]);
    if (pos + 12 + len > data.size())
      throw std::runtime_error("read_png: truncated chunk in " + path);
    std::string type(reinterpret_cast<const char*>(&data[pos + 4]), 4);
    const std::uint8_t* payload = &data[pos + 8];
    if (type == "IHDR") {
      if (len != 13) throw std::runtime_error("read_png: bad IHDR in " + path);
      img.width = static_cast<int>(get_u32(payload));
      img.height = static_cast<int>(get_u32(payload + 4));
      int depth = payload[8], color = payload[9], interlace = payload[12];
      if (depth != 8 || (color != 0 && color != 2) || interlace != 0)
        throw std::runtime_error("read_png: unsupported format in " + path);
      img.channels = color == 2 ? 3 : 1;
      saw_ihdr = true;
    } else if (type == "IDAT") {
      idat.insert(idat.end(), payload, payload + len);
    } else if (type == "IEND") {
      break;
    }
    pos += 12 + len;
  }
  if (!saw_ihdr || idat.empty())
    throw std::runtime_error("read_png: missing IHDR/IDAT in " + path);

  size_t stride = static_cast<size_t>(img.width) * img.channels;
  std::vector<std::uint8_t> raw(static_cast<size_t>(img.height) * (stride + 1));
  uLongf raw_len = static_cast<uLongf>(raw.size());
  if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
      raw_len != raw.size())
    throw std::runtime_error("read_png: inflate failed for " + path);

  // undo per-scanline filters
  int bpp = img.channels;
  img.pixels.assign(static_cast<size_t>(img.height) * stride, 0);
  for (int y = 0; y < img.height; ++y) {
    int filter = raw[static_cast<size_t>(y) * (stride + 1)];
    const std::uint8_t* src = &raw[static_cast<size_t>(y) * (stride + 1) + 1];
    std::uint8_t* dst = &img.pixels[static_cast<size_t>(y) * stride];
    const std::uint8_t* up = y > 0 ? dst - stride : nullptr;
    for (size_t x = 0; x < stride; ++x) {
      int a = x >= static_cast<size_t>(bpp) ? dst[x - bpp] : 0;
      int b = up ? up[x] : 0;
      int c = (up && x >= static_cast<size_t>(bpp)) ? up[x - bpp] : 0;
      int v = src[x];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: {
          int p = a + b - c;
          int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
          v += (pa <= pb && pa <= pc) ? a : (pb <= pc ? b : c);
          break;
        }
        default:
          throw std::runtime_error("read_png: unknown filter in " + path);
      }
      dst[x] = static_cast<std::uint8_t>(v & 0xff);
    }
  }
  return img;
}

}  // namespace sf

#include "leafcam/image.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdlib>
#include <cstring>
#include <string>

#include "leafcam/error.hpp"
#include "leafcam/fileio.hpp"

namespace leafcam {

namespace {

constexpr std::array<std::uint8_t, 8> kPngSignature = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

class PpmReader {
 public:
  explicit PpmReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  int next_int() {
    skip_space_and_comments();
    if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) throw data_error("PPM header is malformed");
    long v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_++] - '0');
      if (v > 1 << 20) throw data_error("PPM header value too large");
    }
    return static_cast<int>(v);
  }

  // Exactly one whitespace byte separates the header from the raster.
  void skip_single_space() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) throw data_error("PPM header is malformed");
    ++pos_;
  }

  std::size_t pos() const { return pos_; }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 2;
};

std::uint32_t read_be32(const std::uint8_t* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3];
}

void write_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  return pb <= pc ? b : c;
}

void write_chunk(std::vector<std::uint8_t>& out, const char type[4], std::span<const std::uint8_t> data) {
  write_be32(out, static_cast<std::uint32_t>(data.size()));
  const std::size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const uLong crc = crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
  write_be32(out, static_cast<std::uint32_t>(crc));
}

}  // namespace

RgbImage decode_ppm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw data_error("not a binary PPM (P6) file");
  PpmReader reader(bytes);
  const int width = reader.next_int();
  const int height = reader.next_int();
  const int maxval = reader.next_int();
  reader.skip_single_space();
  if (width < 1 || height < 1) throw data_error("PPM has empty dimensions");
  if (maxval != 255) throw data_error("PPM maxval must be 255, got " + std::to_string(maxval));
  RgbImage img(width, height);
  if (bytes.size() - reader.pos() < img.pixels.size()) throw data_error("PPM raster is truncated");
  std::memcpy(img.pixels.data(), bytes.data() + reader.pos(), img.pixels.size());
  return img;
}

std::vector<std::uint8_t> encode_ppm(const RgbImage& image) {
  const std::string header =
      "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.pixels.begin(), image.pixels.end());
  return out;
}

RgbImage decode_png(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || !std::equal(kPngSignature.begin(), kPngSignature.end(), bytes.begin())) {
    throw data_error("not a PNG file");
  }
  std::size_t pos = 8;
  int width = 0, height = 0, color_type = -1;
  std::vector<std::uint8_t> compressed;
  bool seen_header = false, seen_end = false;
  while (!seen_end) {
    if (bytes.size() - pos < 12) throw data_error("PNG chunk stream is truncated");
    const std::uint32_t length = read_be32(bytes.data() + pos);
    if (length > bytes.size() - pos - 12) throw data_error("PNG chunk is truncated");
    const std::uint8_t* type = bytes.data() + pos + 4;
    const std::uint8_t* data = type + 4;
    const std::uint32_t stored_crc = read_be32(data + length);
    if (crc32(0L, type, length + 4) != stored_crc) throw data_error("PNG chunk CRC mismatch");
    const std::string kind(reinterpret_cast<const char*>(type), 4);
    if (kind == "IHDR") {
      if (length != 13) throw data_error("PNG IHDR has the wrong length");
      width = static_cast<int>(read_be32(data));
      height = static_cast<int>(read_be32(data + 4));
      const int depth = data[8];
      color_type = data[9];
      const int interlace = data[12];
      if (depth != 8) throw data_error("PNG bit depth " + std::to_string(depth) + " is not supported");
      if (color_type != 0 && color_type != 2 && color_type != 6) {
        throw data_error("PNG color type " + std::to_string(color_type) + " is not supported");
      }
      if (interlace != 0) throw data_error("interlaced PNG is not supported");
      if (width < 1 || height < 1 || width > (1 << 14) || height > (1 << 14)) {
        throw data_error("PNG dimensions are out of range");
      }
      seen_header = true;
    } else if (kind == "IDAT") {
      compressed.insert(compressed.end(), data, data + length);
    } else if (kind == "IEND") {
      seen_end = true;
    }
    pos += 12 + length;
  }
  if (!seen_header) throw data_error("PNG has no IHDR chunk");

  const int channels = color_type == 0 ? 1 : (color_type == 2 ? 3 : 4);
  const std::size_t stride = static_cast<std::size_t>(width) * channels;
  std::vector<std::uint8_t> raw((stride + 1) * height);
  uLongf raw_len = static_cast<uLongf>(raw.size());
  if (uncompress(raw.data(), &raw_len, compressed.data(), static_cast<uLong>(compressed.size())) != Z_OK ||
      raw_len != raw.size()) {
    throw data_error("PNG image data failed to inflate");
  }

  std::vector<std::uint8_t> rows(stride * height);
  for (int y = 0; y < height; ++y) {
    const std::uint8_t filter = raw[y * (stride + 1)];
    const std::uint8_t* src = raw.data() + y * (stride + 1) + 1;
    std::uint8_t* cur = rows.data() + y * stride;
    const std::uint8_t* prev = y > 0 ? cur - stride : nullptr;
    for (std::size_t i = 0; i < stride; ++i) {
      const int a = i >= static_cast<std::size_t>(channels) ? cur[i - channels] : 0;
      const int b = prev ? prev[i] : 0;
      const int c = (prev && i >= static_cast<std::size_t>(channels)) ? prev[i - channels] : 0;
      int v = src[i];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default: throw data_error("PNG row filter " + std::to_string(filter) + " is invalid");
      }
      cur[i] = static_cast<std::uint8_t>(v);
    }
  }

  RgbImage img(width, height);
  for (std::size_t p = 0; p < static_cast<std::size_t>(width) * height; ++p) {
    for (int ch = 0; ch < 3; ++ch) img.pixels[p * 3 + ch] = rows[p * channels + (channels == 1 ? 0 : ch)];
  }
  return img;
}

std::vector<std::uint8_t> encode_png(const RgbImage& image) {
  const std::size_t stride = static_cast<std::size_t>(image.width) * 3;
  std::vector<std::uint8_t> raw;
  raw.reserve((stride + 1) * image.height);
  for (int y = 0; y < image.height; ++y) {
    raw.push_back(0);
    raw.insert(raw.end(), image.pixels.begin() + y * stride, image.pixels.begin() + (y + 1) * stride);
  }
  uLongf packed_len = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> packed(packed_len);
  if (compress2(packed.data(), &packed_len, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK) {
    throw internal_error("PNG deflate failed");
  }
  packed.resize(packed_len);

  std::vector<std::uint8_t> out(kPngSignature.begin(), kPngSignature.end());
  std::vector<std::uint8_t> ihdr;
  write_be32(ihdr, static_cast<std::uint32_t>(image.width));
  write_be32(ihdr, static_cast<std::uint32_t>(image.height));
  ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});
  write_chunk(out, "IHDR", ihdr);
  write_chunk(out, "IDAT", packed);
  write_chunk(out, "IEND", {});
  return out;
}

RgbImage decode_image(std::span<const std::uint8_t> bytes) {
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return decode_ppm(bytes);
  if (bytes.size() >= 8 && std::equal(kPngSignature.begin(), kPngSignature.end(), bytes.begin())) {
    return decode_png(bytes);
  }
  throw data_error("unrecognized image format (expected PPM P6 or PNG)");
}

RgbImage read_image(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  try {
    return decode_image(bytes);
  } catch (const Error& e) {
    throw data_error(path.string() + ": " + e.what());
  }
}

}  // namespace leafcam

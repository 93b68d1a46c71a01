#include "occseg/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>

namespace occseg {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw DataError("cannot open " + path.string());
  return f;
}

struct RawGray {
  int width = 0, height = 0;
  double full_scale = 255.0;
  std::vector<double> values;  // raw sample values
};

void png_error_handler(png_structp png, png_const_charp msg) {
  auto* what = static_cast<std::string*>(png_get_error_ptr(png));
  if (what) *what = msg;
  png_longjmp(png, 1);
}

void png_warning_handler(png_structp, png_const_charp) {}

RawGray read_png_raw(const std::filesystem::path& path) {
  FilePtr f = open_file(path, "rb");
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8))
    throw DataError("not a PNG file: " + path.string());

  std::string error;
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, &error, png_error_handler, png_warning_handler);
  if (!png) throw DataError("libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  RawGray raw;
  std::vector<png_bytep> rows;
  std::vector<std::uint8_t> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("cannot decode " + path.string() + ": " + error);
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png), png_set_strip_alpha(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA ||
      color == PNG_COLOR_TYPE_PALETTE)
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  if (depth == 16) png_set_swap(png);
  png_read_update_info(png, info);

  raw.width = static_cast<int>(png_get_image_width(png, info));
  raw.height = static_cast<int>(png_get_image_height(png, info));
  const int out_depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buffer.resize(rowbytes * raw.height);
  rows.resize(raw.height);
  for (int y = 0; y < raw.height; ++y) rows[y] = buffer.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  raw.full_scale = out_depth == 16 ? 65535.0 : 255.0;
  raw.values.resize(static_cast<std::size_t>(raw.width) * raw.height);
  for (int y = 0; y < raw.height; ++y)
    for (int x = 0; x < raw.width; ++x) {
      double v;
      if (out_depth == 16) {
        std::uint16_t s;
        std::memcpy(&s, rows[y] + 2 * x, 2);
        v = s;
      } else {
        v = rows[y][x];
      }
      raw.values[static_cast<std::size_t>(y) * raw.width + x] = v;
    }
  return raw;
}

// Reads the next whitespace-separated header token, skipping # comments.
std::string pnm_token(std::istream& in) {
  std::string tok;
  while (in) {
    const int c = in.get();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      if (!tok.empty()) return tok;
    } else if (c != EOF) {
      tok.push_back(static_cast<char>(c));
    }
  }
  return tok;
}

RawGray read_pnm_raw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  const std::string magic = pnm_token(in);
  if (magic != "P5" && magic != "P4") throw DataError("unsupported PNM type in " + path.string());
  RawGray raw;
  try {
    raw.width = std::stoi(pnm_token(in));
    raw.height = std::stoi(pnm_token(in));
    raw.full_scale = magic == "P5" ? std::stoi(pnm_token(in)) : 1.0;
  } catch (const std::exception&) {
    throw DataError("malformed PNM header in " + path.string());
  }
  if (raw.width < 1 || raw.height < 1 || raw.full_scale < 1 || raw.full_scale > 65535)
    throw DataError("malformed PNM header in " + path.string());
  const std::size_t n = static_cast<std::size_t>(raw.width) * raw.height;
  raw.values.resize(n);
  if (magic == "P4") {
    const std::size_t rowbytes = (raw.width + 7) / 8;
    std::vector<unsigned char> row(rowbytes);
    for (int y = 0; y < raw.height; ++y) {
      if (!in.read(reinterpret_cast<char*>(row.data()), rowbytes))
        throw DataError("truncated PBM data in " + path.string());
      for (int x = 0; x < raw.width; ++x)
        raw.values[y * raw.width + x] = (row[x / 8] >> (7 - x % 8)) & 1;
    }
  } else {
    const int bytes = raw.full_scale > 255 ? 2 : 1;
    std::vector<unsigned char> data(n * bytes);
    if (!in.read(reinterpret_cast<char*>(data.data()), data.size()))
      throw DataError("truncated PGM data in " + path.string());
    for (std::size_t i = 0; i < n; ++i)
      raw.values[i] = bytes == 2 ? (data[2 * i] << 8 | data[2 * i + 1]) : data[i];
  }
  return raw;
}

RawGray read_raw(const std::filesystem::path& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw DataError("cannot open " + path.string());
  char head[2] = {};
  probe.read(head, 2);
  if (head[0] == 'P' && (head[1] == '5' || head[1] == '4')) return read_pnm_raw(path);
  return read_png_raw(path);
}

void write_png(const std::filesystem::path& path, int width, int height, int depth, int color,
               const std::vector<std::uint8_t>& bytes) {
  FilePtr f = open_file(path, "wb");
  std::string error;
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, &error, png_error_handler, png_warning_handler);
  if (!png) throw DataError("libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("cannot write " + path.string() + ": " + error);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, width, height, depth, color, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t rowbytes = bytes.size() / height;
  for (int y = 0; y < height; ++y)
    png_write_row(png, const_cast<png_bytep>(bytes.data() + y * rowbytes));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::uint8_t to_u8(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
  const RawGray raw = read_raw(path);
  Image img(raw.width, raw.height);
  const bool pbm = raw.full_scale == 1.0;
  for (std::size_t i = 0; i < img.size(); ++i)
    img[i] = pbm ? raw.values[i] : raw.values[i] / raw.full_scale;
  return img;
}

BinaryMask read_mask(const std::filesystem::path& path) {
  const RawGray raw = read_raw(path);
  BinaryMask m(raw.width, raw.height);
  const bool pbm = raw.full_scale == 1.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double v = raw.values[i];
    if (v != 0.0 && v != raw.full_scale) throw DataError("non-binary mask file: " + path.string());
    m[i] = pbm ? static_cast<std::uint8_t>(v) : static_cast<std::uint8_t>(v == raw.full_scale);
  }
  return m;
}

MembershipField read_membership_png(const std::filesystem::path& path) {
  const RawGray raw = read_raw(path);
  MembershipField q(raw.width, raw.height);
  for (std::size_t i = 0; i < q.size(); ++i) q[i] = raw.values[i] / raw.full_scale;
  return q;
}

void write_png8(const std::filesystem::path& path, const Image& image) {
  std::vector<std::uint8_t> bytes(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) bytes[i] = to_u8(image[i]);
  write_png(path, image.width(), image.height(), 8, PNG_COLOR_TYPE_GRAY, bytes);
}

void write_png16(const std::filesystem::path& path, const MembershipField& q) {
  std::vector<std::uint8_t> bytes(q.size() * 2);
  for (std::size_t i = 0; i < q.size(); ++i) {
    const auto s = static_cast<std::uint16_t>(std::lround(std::clamp(q[i], 0.0, 1.0) * 65535.0));
    bytes[2 * i] = static_cast<std::uint8_t>(s >> 8);
    bytes[2 * i + 1] = static_cast<std::uint8_t>(s & 0xff);
  }
  write_png(path, q.width(), q.height(), 16, PNG_COLOR_TYPE_GRAY, bytes);
}

void write_mask_png(const std::filesystem::path& path, const BinaryMask& mask) {
  std::vector<std::uint8_t> bytes(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) bytes[i] = mask[i] ? 255 : 0;
  write_png(path, mask.width(), mask.height(), 8, PNG_COLOR_TYPE_GRAY, bytes);
}

void write_rgb_png(const std::filesystem::path& path, int width, int height,
                   const std::vector<std::uint8_t>& rgb) {
  if (width < 1 || height < 1 || rgb.size() != static_cast<std::size_t>(width) * height * 3)
    throw DataError("RGB buffer does not match image dimensions");
  write_png(path, width, height, 8, PNG_COLOR_TYPE_RGB, rgb);
}

}  // namespace occseg

#include "core/image.hpp"

#include <png.h>

#include <cstdio>
#include <memory>

#include "core/error.hpp"

namespace stainkit {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

ImageTile load_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.string().c_str(), "rb"));
  if (!file) fail(ErrorCode::Io, "cannot open " + path.string());

  png_byte header[8];
  if (std::fread(header, 1, 8, file.get()) != 8 || png_sig_cmp(header, 0, 8) != 0) {
    fail(ErrorCode::BadFormat, "not a PNG file: " + path.string());
  }

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail(ErrorCode::Io, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail(ErrorCode::Io, "png_create_info_struct failed");
  }

  std::vector<png_byte> data;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorCode::BadFormat, "corrupt PNG: " + path.string());
  }

  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  // Normalize every source variant to 8-bit RGB.
  png_byte color_type = png_get_color_type(png, info);
  png_byte bit_depth = png_get_bit_depth(png, info);
  if (bit_depth == 16) png_set_strip_16(png);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA) {
    png_set_gray_to_rgb(png);
  }
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  int width = static_cast<int>(png_get_image_width(png, info));
  int height = static_cast<int>(png_get_image_height(png, info));
  std::size_t rowbytes = png_get_rowbytes(png, info);

  data.resize(rowbytes * height);
  rows.resize(height);
  for (int y = 0; y < height; ++y) rows[y] = data.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  ImageTile tile(width, height);
  for (int y = 0; y < height; ++y) {
    const png_byte* row = data.data() + static_cast<std::size_t>(y) * rowbytes;
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < 3; ++c) {
        tile.at(y, x, c) = row[x * 3 + c] / 255.0;
      }
    }
  }
  return tile;
}

void save_png(const ImageTile& tile, const std::filesystem::path& path) {
  if (tile.width < 1 || tile.height < 1) {
    fail(ErrorCode::InvalidArgument, "cannot save empty image");
  }
  FilePtr file(std::fopen(path.string().c_str(), "wb"));
  if (!file) fail(ErrorCode::Io, "cannot write " + path.string());

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail(ErrorCode::Io, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail(ErrorCode::Io, "png_create_info_struct failed");
  }

  std::vector<png_byte> data(static_cast<std::size_t>(tile.width) * tile.height * 3);
  std::vector<png_bytep> rows(tile.height);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::Io, "PNG write failed: " + path.string());
  }

  for (int y = 0; y < tile.height; ++y) {
    png_byte* row = data.data() + static_cast<std::size_t>(y) * tile.width * 3;
    for (int x = 0; x < tile.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        row[x * 3 + c] = encode_byte(tile.at(y, x, c));
      }
    }
    rows[y] = row;
  }

  png_init_io(png, file.get());
  png_set_IHDR(png, info, tile.width, tile.height, 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::Io: return "IoError";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::BadFormat: return "BadFormat";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::WindowTooLarge: return "WindowTooLarge";
    case ErrorCode::DegenerateTemplate: return "DegenerateTemplate";
    case ErrorCode::DegenerateInput: return "DegenerateInput";
    case ErrorCode::InsufficientTissue: return "InsufficientTissue";
    case ErrorCode::NumericalFailure: return "NumericalFailure";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::BadWeights: return "BadWeights";
    case ErrorCode::EpochOutOfRange: return "EpochOutOfRange";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::SourceTooSmall: return "SourceTooSmall";
  }
  return "UnknownError";
}

}  // namespace stainkit

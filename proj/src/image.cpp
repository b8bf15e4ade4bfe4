#include "urpca/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <iostream>
#include <memory>

namespace urpca {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

}  // namespace

GrayImage read_png_gray(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) throw IoError("read_png_gray: cannot open " + path.string());

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("read_png_gray: libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("read_png_gray: libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("read_png_gray: decode error in " + path.string());
  }

  png_init_io(png, fp.get());
  png_read_info(png, info);

  const png_byte color_type = png_get_color_type(png, info);
  if (color_type & PNG_COLOR_MASK_COLOR)
    std::cerr << "warning: " << path.string() << " is not grayscale, converting\n";

  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8)
    png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color_type & PNG_COLOR_MASK_COLOR) png_set_rgb_to_gray(png, 1, -1.0, -1.0);
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_set_interlace_handling(png);
  png_read_update_info(png, info);

  GrayImage img;
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.pixels.resize(static_cast<size_t>(img.width) * img.height);

  std::vector<png_bytep> rows(img.height);
  for (int y = 0; y < img.height; ++y) rows[y] = img.pixels.data() + static_cast<size_t>(y) * img.width;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_png_gray(const std::filesystem::path& path, const GrayImage& img) {
  if (img.width < 1 || img.height < 1 ||
      img.pixels.size() != static_cast<size_t>(img.width) * img.height)
    throw ShapeError("write_png_gray: inconsistent image dims");
  FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw IoError("write_png_gray: cannot open " + path.string());

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("write_png_gray: libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("write_png_gray: libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("write_png_gray: encode error on " + path.string());
  }

  png_init_io(png, fp.get());
  png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(img.height);
  for (int y = 0; y < img.height; ++y)
    rows[y] = const_cast<png_bytep>(img.pixels.data() + static_cast<size_t>(y) * img.width);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Matrix image_to_matrix(const GrayImage& img) {
  Matrix m(img.height, img.width);
  for (int i = 0; i < img.height; ++i)
    for (int j = 0; j < img.width; ++j)
      m(i, j) = img.pixels[static_cast<size_t>(i) * img.width + j] / 255.0;
  return m;
}

GrayImage matrix_to_image(const Matrix& m) {
  GrayImage img;
  img.height = static_cast<int>(m.rows());
  img.width = static_cast<int>(m.cols());
  img.pixels.resize(static_cast<size_t>(img.height) * img.width);
  for (int i = 0; i < img.height; ++i)
    for (int j = 0; j < img.width; ++j) {
      const double v = std::clamp(m(i, j), 0.0, 1.0) * 255.0;
      img.pixels[static_cast<size_t>(i) * img.width + j] = static_cast<uint8_t>(std::lround(v));
    }
  return img;
}

void write_png_heatmap(const std::filesystem::path& path, const Matrix& map) {
  const double lo = map.minCoeff(), hi = map.maxCoeff();
  Matrix scaled;
  if (hi > lo)
    scaled = (map.array() - lo) / (hi - lo);
  else
    scaled = Matrix::Constant(map.rows(), map.cols(), 0.5);
  write_png_gray(path, matrix_to_image(scaled));
}

Matrix resize_bilinear(const Matrix& src, int out_rows, int out_cols) {
  if (src.rows() < 1 || src.cols() < 1 || out_rows < 1 || out_cols < 1)
    throw ShapeError("resize_bilinear: empty source or target");
  Matrix out(out_rows, out_cols);
  const double sr = static_cast<double>(src.rows()) / out_rows;
  const double sc = static_cast<double>(src.cols()) / out_cols;
  for (int i = 0; i < out_rows; ++i) {
    const double y = std::max((i + 0.5) * sr - 0.5, 0.0);
    const int64_t y0 = std::min<int64_t>(static_cast<int64_t>(y), src.rows() - 1);
    const int64_t y1 = std::min<int64_t>(y0 + 1, src.rows() - 1);
    const double fy = y - static_cast<double>(y0);
    for (int j = 0; j < out_cols; ++j) {
      const double x = std::max((j + 0.5) * sc - 0.5, 0.0);
      const int64_t x0 = std::min<int64_t>(static_cast<int64_t>(x), src.cols() - 1);
      const int64_t x1 = std::min<int64_t>(x0 + 1, src.cols() - 1);
      const double fx = x - static_cast<double>(x0);
      out(i, j) = (1 - fy) * ((1 - fx) * src(y0, x0) + fx * src(y0, x1)) +
                  fy * ((1 - fx) * src(y1, x0) + fx * src(y1, x1));
    }
  }
  return out;
}

Matrix resize_nearest(const Matrix& src, int out_rows, int out_cols) {
  if (src.rows() < 1 || src.cols() < 1 || out_rows < 1 || out_cols < 1)
    throw ShapeError("resize_nearest: empty source or target");
  Matrix out(out_rows, out_cols);
  const double sr = static_cast<double>(src.rows()) / out_rows;
  const double sc = static_cast<double>(src.cols()) / out_cols;
  for (int i = 0; i < out_rows; ++i) {
    const int64_t y = std::min<int64_t>(static_cast<int64_t>((i + 0.5) * sr), src.rows() - 1);
    for (int j = 0; j < out_cols; ++j) {
      const int64_t x = std::min<int64_t>(static_cast<int64_t>((j + 0.5) * sc), src.cols() - 1);
      out(i, j) = src(y, x);
    }
  }
  return out;
}

}  // namespace urpca

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "urpca/matrix.hpp"

namespace urpca {

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> pixels;  // row-major, height * width
};

// Decodes any PNG to 8-bit grayscale; color inputs are converted with a
// warning on stderr (the datasets are nominally grayscale already).
GrayImage read_png_gray(const std::filesystem::path& path);
void write_png_gray(const std::filesystem::path& path, const GrayImage& img);

Matrix image_to_matrix(const GrayImage& img);  // scaled by 1/255 into [0,1]
GrayImage matrix_to_image(const Matrix& m);    // clamps to [0,1], rounds to 8 bits

// Min-max normalizes the map to the full 8-bit range (constant maps render
// mid-gray) and writes it as a grayscale PNG.
void write_png_heatmap(const std::filesystem::path& path, const Matrix& map);

// Half-pixel-center sampling; bilinear for images, nearest for masks.
Matrix resize_bilinear(const Matrix& src, int out_rows, int out_cols);
Matrix resize_nearest(const Matrix& src, int out_rows, int out_cols);

}  // namespace urpca

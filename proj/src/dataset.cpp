#include "urpca/dataset.hpp"

#include <algorithm>
#include <cmath>

#include "urpca/image.hpp"
#include "urpca/matrix.hpp"

namespace urpca {

std::string split_name(Split s) {
  return s == Split::train ? "train" : "test";
}

std::vector<DatasetSample> load_dataset(const std::filesystem::path& root, Split split,
                                        int resize_to) {
  const auto images_dir = root / split_name(split) / "images";
  const auto masks_dir = root / split_name(split) / "masks";
  if (!std::filesystem::is_directory(images_dir))
    throw IoError("load_dataset: missing directory " + images_dir.string());

  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(images_dir))
    if (entry.is_regular_file() && entry.path().extension() == ".png")
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());

  std::vector<DatasetSample> samples;
  samples.reserve(files.size());
  for (const auto& file : files) {
    const std::string stem = file.stem().string();
    const auto mask_path = masks_dir / (stem + ".png");
    if (!std::filesystem::exists(mask_path))
      throw IoError("load_dataset: no mask for image stem '" + stem + "' under " +
                    masks_dir.string());
    Matrix image = image_to_matrix(read_png_gray(file));
    Matrix mask = image_to_matrix(read_png_gray(mask_path));
    if (resize_to > 0 && (image.rows() != resize_to || image.cols() != resize_to)) {
      image = resize_bilinear(image, resize_to, resize_to);
      mask = resize_nearest(mask, resize_to, resize_to);
    }
    DatasetSample s;
    s.name = stem;
    s.image = matrix_to_tensor(image);
    s.mask = matrix_to_tensor(mask.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; }));
    samples.push_back(std::move(s));
  }
  return samples;
}

void write_dataset(const std::vector<DatasetSample>& samples, const std::filesystem::path& root,
                   Split split) {
  const auto images_dir = root / split_name(split) / "images";
  const auto masks_dir = root / split_name(split) / "masks";
  std::error_code ec;
  std::filesystem::create_directories(images_dir, ec);
  std::filesystem::create_directories(masks_dir, ec);
  if (!std::filesystem::is_directory(images_dir) || !std::filesystem::is_directory(masks_dir))
    throw IoError("write_dataset: cannot create directories under " + root.string());
  for (const auto& s : samples) {
    write_png_gray(images_dir / (s.name + ".png"), matrix_to_image(tensor_to_matrix(s.image)));
    write_png_gray(masks_dir / (s.name + ".png"), matrix_to_image(tensor_to_matrix(s.mask)));
  }
}

void SynthSceneSpec::validate() const {
  if (height < 1 || width < 1) throw ConfigError("synth_scene: empty dimensions");
  if (background_rank < 1 || background_rank > std::min(height, width))
    throw ConfigError("synth_scene: background_rank must be in [1, min(height,width)]");
  if (num_targets < 0) throw ConfigError("synth_scene: negative target count");
  if (amp_lo <= 0 || amp_hi < amp_lo) throw ConfigError("synth_scene: bad amplitude range");
  if (sigma_lo <= 0 || sigma_hi < sigma_lo) throw ConfigError("synth_scene: bad sigma range");
  if (noise_std < 0) throw ConfigError("synth_scene: negative noise level");
}

namespace {

constexpr int kBorderMargin = 8;
constexpr int kPlacementAttempts = 1000;

// Smooth 1-D profile: a few low-frequency sinusoids with random amplitude
// and phase.
std::vector<double> smooth_factor(int len, Rng& rng) {
  std::vector<double> f(len, 0.0);
  for (int h = 1; h <= 3; ++h) {
    const double amp = rng.uniform(0.5, 1.5) / h;
    const double phase = rng.uniform(0.0, 2.0 * M_PI);
    for (int i = 0; i < len; ++i)
      f[i] += amp * std::sin(2.0 * M_PI * h * (i + 0.5) / len + phase);
  }
  return f;
}

// Background of numerical rank <= rank, values in [0, 0.7]. The affine
// normalization itself contributes a rank-1 constant term, so only rank-1
// outer products are drawn for rank >= 2; for rank 1 the factors are made
// non-negative with zero minimum and only a pure scaling is applied.
Matrix synth_background(int h, int w, int rank, Rng& rng) {
  constexpr double kPeak = 0.7;
  if (rank == 1) {
    std::vector<double> u = smooth_factor(h, rng), v = smooth_factor(w, rng);
    const double umin = *std::min_element(u.begin(), u.end());
    const double vmin = *std::min_element(v.begin(), v.end());
    for (double& x : u) x -= umin;
    for (double& x : v) x -= vmin;
    const double umax = *std::max_element(u.begin(), u.end());
    const double vmax = *std::max_element(v.begin(), v.end());
    Matrix b(h, w);
    if (umax == 0.0 || vmax == 0.0) return Matrix::Zero(h, w);
    const double scale = kPeak / (umax * vmax);
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) b(i, j) = scale * u[i] * v[j];
    return b;
  }
  Matrix b0 = Matrix::Zero(h, w);
  for (int r = 0; r < rank - 1; ++r) {
    std::vector<double> u = smooth_factor(h, rng), v = smooth_factor(w, rng);
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) b0(i, j) += u[i] * v[j];
  }
  const double lo = b0.minCoeff(), hi = b0.maxCoeff();
  if (hi == lo) return Matrix::Constant(h, w, kPeak / 2.0);
  const double scale = kPeak / (hi - lo);
  const double offset = -(lo * scale);
  return (b0.array() * scale + offset).matrix();
}

struct TargetDraw {
  int cy = 0, cx = 0;
  double amp = 0.0, sigma = 0.0;
};

}  // namespace

DatasetSample synth_scene(const SynthSceneSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const int h = spec.height, w = spec.width;

  Matrix image = synth_background(h, w, spec.background_rank, rng);
  Matrix mask = Matrix::Zero(h, w);

  std::vector<TargetDraw> targets;
  const double min_sep = 6.0 * spec.sigma_hi;  // 2 * (3 sigma_max)
  for (int t = 0; t < spec.num_targets; ++t) {
    TargetDraw d;
    d.amp = rng.uniform(spec.amp_lo, spec.amp_hi);
    d.sigma = rng.uniform(spec.sigma_lo, spec.sigma_hi);
    const int ylo = kBorderMargin, yhi = h - 1 - kBorderMargin;
    const int xlo = kBorderMargin, xhi = w - 1 - kBorderMargin;
    if (yhi < ylo || xhi < xlo)
      throw ConfigError("synth_scene: image too small for the border margin");
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt) {
      d.cy = ylo + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(yhi - ylo + 1)));
      d.cx = xlo + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(xhi - xlo + 1)));
      placed = true;
      for (const auto& other : targets) {
        const double dy = d.cy - other.cy, dx = d.cx - other.cx;
        if (std::sqrt(dy * dy + dx * dx) < min_sep) {
          placed = false;
          break;
        }
      }
    }
    if (!placed)
      throw ConfigError("synth_scene: could not place " + std::to_string(spec.num_targets) +
                        " targets with separation " + std::to_string(min_sep) + " after " +
                        std::to_string(kPlacementAttempts) + " attempts");
    targets.push_back(d);
  }

  for (const auto& t : targets) {
    const double inv = 1.0 / (2.0 * t.sigma * t.sigma);
    // Evaluate only a window; beyond 5 sigma the blob is numerically nil.
    const int rad = static_cast<int>(std::ceil(5.0 * t.sigma));
    const int y0 = std::max(0, t.cy - rad), y1 = std::min(h - 1, t.cy + rad);
    const int x0 = std::max(0, t.cx - rad), x1 = std::min(w - 1, t.cx + rad);
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double r2 = static_cast<double>(y - t.cy) * (y - t.cy) +
                          static_cast<double>(x - t.cx) * (x - t.cx);
        const double v = t.amp * std::exp(-r2 * inv);
        image(y, x) += v;
        if (v >= 0.5 * t.amp) mask(y, x) = 1.0;
      }
  }

  if (spec.noise_std > 0)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) image(i, j) += rng.normal(0.0, spec.noise_std);

  image = image.cwiseMax(0.0).cwiseMin(1.0);

  DatasetSample s;
  s.name = spec.name;
  s.image = matrix_to_tensor(image);
  s.mask = matrix_to_tensor(mask);
  return s;
}

}  // namespace urpca

#pragma once

// Shared helpers for the unit and acceptance suites: independent naive
// oracles (direct-loop convolution, per-pixel metrics), the central
// finite-difference harness, and small process/tempdir utilities.

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "urpca/metrics.hpp"
#include "urpca/nn.hpp"
#include "urpca/rng.hpp"
#include "urpca/tensor.hpp"

namespace testsupport {

using namespace urpca;

// ------------------------------------------------------------ naive conv ---

// Direct summation over every loop index; the oracle conv2d must match.
inline Tensor conv2d_naive(const Tensor& x, const ConvLayerParams& p) {
  const int64_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int64_t cout = p.weight.dim(0);
  Tensor out = Tensor::zeros({n, cout, h, w});
  auto ov = out.data();
  const auto xv = x.data();
  const auto wv = p.weight.data();
  const auto bv = p.bias.data();
  for (int64_t in = 0; in < n; ++in)
    for (int64_t co = 0; co < cout; ++co)
      for (int64_t oy = 0; oy < h; ++oy)
        for (int64_t ox = 0; ox < w; ++ox) {
          double acc = bv[co];
          for (int64_t ci = 0; ci < cin; ++ci)
            for (int64_t ky = 0; ky < 3; ++ky)
              for (int64_t kx = 0; kx < 3; ++kx) {
                const int64_t iy = oy + ky - 1, ix = ox + kx - 1;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                acc += xv[((in * cin + ci) * h + iy) * w + ix] *
                       wv[((co * cin + ci) * 3 + ky) * 3 + kx];
              }
          ov[((in * cout + co) * h + oy) * w + ox] = acc;
        }
  return out;
}

// -------------------------------------------------- finite-difference fd ---

struct FdOptions {
  double h = 1e-6;
  double rel_tol = 1e-6;
  double abs_tol = 1e-9;  // FD noise floor for near-zero gradients
};

struct FdReport {
  int checked = 0;
  int failures = 0;
  double max_rel = 0.0;  // over coords that exceed the absolute floor
};

// Central finite differences against the recorded gradients. `buffers` are
// tensors the loss mutates as a side effect (batch-norm running statistics);
// they are restored around every evaluation so each probe sees the same
// state.
inline FdReport fd_check(const std::function<Tensor()>& loss_fn, std::vector<Tensor> params,
                         std::vector<Tensor> buffers, int coords_per_tensor, Rng& rng,
                         FdOptions opt = {}) {
  std::vector<std::vector<double>> saved;
  for (const Tensor& b : buffers) saved.emplace_back(b.data().begin(), b.data().end());
  auto restore = [&] {
    for (size_t i = 0; i < buffers.size(); ++i)
      std::copy(saved[i].begin(), saved[i].end(), buffers[i].data().begin());
  };

  for (Tensor& p : params) p.zero_grad();
  restore();
  Tensor loss = loss_fn();
  loss.backward();
  std::vector<std::vector<double>> grads;
  for (Tensor& p : params) {
    if (!p.has_grad()) throw Error("fd_check: parameter missing gradient");
    grads.emplace_back(p.grad().begin(), p.grad().end());
  }

  FdReport report;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params[pi];
    const int64_t n = p.numel();
    for (int c = 0; c < coords_per_tensor; ++c) {
      const int64_t j = n <= coords_per_tensor
                            ? c
                            : static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(n)));
      if (j >= n) break;
      const double orig = p.data()[j];
      restore();
      p.data()[j] = orig + opt.h;
      const double fp = loss_fn().item();
      restore();
      p.data()[j] = orig - opt.h;
      const double fm = loss_fn().item();
      p.data()[j] = orig;
      const double num = (fp - fm) / (2.0 * opt.h);
      const double ana = grads[pi][j];
      const double diff = std::abs(ana - num);
      ++report.checked;
      if (diff <= opt.abs_tol) continue;
      const double rel = diff / std::max(std::abs(ana), std::abs(num));
      report.max_rel = std::max(report.max_rel, rel);
      if (rel > opt.rel_tol) ++report.failures;
    }
  }
  restore();
  for (Tensor& p : params) p.zero_grad();
  return report;
}

// --------------------------------------------------------- naive metrics ---

struct NaiveEval {
  long long tp = 0, fp = 0, fn = 0, tn = 0;
  long long detected = 0, total_gt = 0, fa_pixels = 0, pixels = 0;
  double miou = 0, f1 = 0, pd = 0, fa = 0;
  bool zero_gt = false;
};

namespace detail {

struct NaiveComp {
  std::vector<std::pair<int, int>> px;
  double cy = 0, cx = 0;
};

inline std::vector<NaiveComp> naive_components(const std::vector<std::vector<int>>& grid) {
  const int h = static_cast<int>(grid.size());
  const int w = h ? static_cast<int>(grid[0].size()) : 0;
  std::vector<std::vector<int>> label(h, std::vector<int>(w, -1));
  std::vector<NaiveComp> comps;
  for (int sy = 0; sy < h; ++sy)
    for (int sx = 0; sx < w; ++sx) {
      if (!grid[sy][sx] || label[sy][sx] >= 0) continue;
      NaiveComp comp;
      std::vector<std::pair<int, int>> queue{{sy, sx}};
      label[sy][sx] = static_cast<int>(comps.size());
      size_t head = 0;
      while (head < queue.size()) {
        auto [y, x] = queue[head++];
        comp.px.push_back({y, x});
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int ny = y + dy, nx = x + dx;
            if ((dy || dx) && ny >= 0 && ny < h && nx >= 0 && nx < w && grid[ny][nx] &&
                label[ny][nx] < 0) {
              label[ny][nx] = static_cast<int>(comps.size());
              queue.push_back({ny, nx});
            }
          }
      }
      for (auto [y, x] : comp.px) {
        comp.cy += y;
        comp.cx += x;
      }
      comp.cy /= comp.px.size();
      comp.cx /= comp.px.size();
      comps.push_back(comp);
    }
  return comps;
}

}  // namespace detail

// Fully independent re-derivation of evaluate(): exhaustive global-minimum
// pair matching instead of a sorted candidate list.
inline NaiveEval naive_evaluate(const std::vector<Tensor>& scores, const std::vector<Tensor>& gts,
                                double thresh, double dist_thresh = 3.0) {
  NaiveEval e;
  for (size_t s = 0; s < scores.size(); ++s) {
    const auto& sc = scores[s];
    const int h = static_cast<int>(sc.dim(sc.rank() - 2));
    const int w = static_cast<int>(sc.dim(sc.rank() - 1));
    std::vector<std::vector<int>> pg(h, std::vector<int>(w)), gg(h, std::vector<int>(w));
    const auto sv = sc.data();
    const auto gv = gts[s].data();
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        pg[y][x] = sv[y * w + x] > thresh ? 1 : 0;
        gg[y][x] = gv[y * w + x] > 0.5 ? 1 : 0;
        if (pg[y][x] && gg[y][x])
          ++e.tp;
        else if (pg[y][x])
          ++e.fp;
        else if (gg[y][x])
          ++e.fn;
        else
          ++e.tn;
      }
    e.pixels += static_cast<long long>(h) * w;

    auto pc = detail::naive_components(pg);
    auto gc = detail::naive_components(gg);
    e.total_gt += static_cast<long long>(gc.size());
    std::vector<int> p_used(pc.size(), 0), g_used(gc.size(), 0);
    while (true) {
      double best = dist_thresh;
      int bi = -1, bj = -1;
      double bg_cy = 0, bg_cx = 0, bp_cy = 0, bp_cx = 0;
      for (size_t i = 0; i < gc.size(); ++i) {
        if (g_used[i]) continue;
        for (size_t j = 0; j < pc.size(); ++j) {
          if (p_used[j]) continue;
          const double d = std::hypot(gc[i].cy - pc[j].cy, gc[i].cx - pc[j].cx);
          const bool better =
              d < best ||
              (d == best && bi >= 0 &&
               std::make_tuple(gc[i].cy, gc[i].cx, pc[j].cy, pc[j].cx) <
                   std::make_tuple(bg_cy, bg_cx, bp_cy, bp_cx)) ||
              (d <= best && bi < 0);
          if (better) {
            best = d;
            bi = static_cast<int>(i);
            bj = static_cast<int>(j);
            bg_cy = gc[i].cy;
            bg_cx = gc[i].cx;
            bp_cy = pc[j].cy;
            bp_cx = pc[j].cx;
          }
        }
      }
      if (bi < 0) break;
      g_used[bi] = 1;
      p_used[bj] = 1;
      ++e.detected;
    }
    for (size_t j = 0; j < pc.size(); ++j)
      if (!p_used[j]) e.fa_pixels += static_cast<long long>(pc[j].px.size());
  }

  const long long md = e.tp + e.fp + e.fn;
  e.miou = md == 0 ? 1.0 : static_cast<double>(e.tp) / md;
  const long long fd = 2 * e.tp + e.fp + e.fn;
  e.f1 = fd == 0 ? 1.0 : static_cast<double>(2 * e.tp) / fd;
  e.zero_gt = e.total_gt == 0;
  e.pd = e.zero_gt ? 1.0 : static_cast<double>(e.detected) / e.total_gt;
  e.fa = static_cast<double>(e.fa_pixels) / e.pixels;
  return e;
}

inline double naive_auc(const std::vector<Tensor>& scores, const std::vector<Tensor>& gts,
                        int n_thresh) {
  std::vector<std::pair<double, double>> pts;  // (fa, pd), high threshold first
  double pd_lowest = 0;
  for (int i = n_thresh; i >= 1; --i) {
    const NaiveEval e = naive_evaluate(scores, gts, static_cast<double>(i) / (n_thresh + 1));
    pts.push_back({e.fa, e.pd});
    pd_lowest = e.pd;
  }
  std::stable_sort(pts.begin(), pts.end());
  const double max_fa = pts.back().first;
  if (max_fa == 0.0) return pd_lowest;
  double area = 0, pfa = 0, ppd = 0;
  for (auto [fa, pd] : pts) {
    area += (fa - pfa) * (pd + ppd) / 2.0;
    pfa = fa;
    ppd = pd;
  }
  return area / max_fa;
}

// -------------------------------------------------------------- process ----

struct CmdResult {
  int exit_code = -1;
  std::string output;  // stdout + stderr
};

inline CmdResult run_cmd(const std::string& cmd) {
  static int counter = 0;
  const auto capture = std::filesystem::temp_directory_path() /
                       ("urpca_cmd_" + std::to_string(getpid()) + "_" + std::to_string(counter++));
  const int status = std::system((cmd + " >" + capture.string() + " 2>&1").c_str());
  CmdResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream is(capture);
  std::stringstream ss;
  ss << is.rdbuf();
  r.output = ss.str();
  std::filesystem::remove(capture);
  return r;
}

inline std::filesystem::path fresh_dir(const std::string& tag) {
  static int counter = 0;
  const auto dir = std::filesystem::temp_directory_path() /
                   ("urpca_test_" + std::to_string(getpid()) + "_" + tag + "_" +
                    std::to_string(counter++));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline bool same_bytes(const std::filesystem::path& a, const std::filesystem::path& b) {
  return read_file(a) == read_file(b);
}

}  // namespace testsupport

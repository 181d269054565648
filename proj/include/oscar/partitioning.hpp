#pragma once

// Region partitions of pixel (or voxel) space: regular grids, SLIC
// superpixels on an averaged Sobel edge image, and atlas label maps.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <queue>
#include <span>
#include <string>
#include <vector>

#include "oscar/error.hpp"
#include "oscar/tensor.hpp"

namespace oscar {

inline constexpr std::int32_t kBackground = -1;

/// Labels in [0, n_regions) for every foreground pixel; kBackground marks
/// pixels excluded from all region statistics (atlas background only).
struct Partition {
  Shape shape;
  std::vector<std::int32_t> labels;
  std::size_t n_regions = 0;
  std::vector<std::size_t> region_sizes;

  std::size_t pixel_count() const { return labels.size(); }
  LabelArray as_array() const { return LabelArray(shape, labels); }
};

using EdgeImage = RealArray;

/// Builds a Partition from a label array whose foreground labels are already
/// 0..n-1; recounts sizes and rejects empty regions.
inline Partition partition_from_labels(Shape shape, std::vector<std::int32_t> labels) {
  if (labels.size() != shape_size(shape))
    throw Error(ErrorCode::ShapeMismatch, "partitioning", "label count does not match shape");
  std::int32_t max_label = -1;
  for (auto l : labels) {
    if (l < kBackground) throw Error(ErrorCode::InvalidArgument, "partitioning", "negative region label");
    max_label = std::max(max_label, l);
  }
  if (max_label < 0) throw Error(ErrorCode::NoForeground, "partitioning", "partition has no foreground");
  Partition p;
  p.shape = std::move(shape);
  p.labels = std::move(labels);
  p.n_regions = static_cast<std::size_t>(max_label) + 1;
  p.region_sizes.assign(p.n_regions, 0);
  for (auto l : p.labels)
    if (l >= 0) ++p.region_sizes[static_cast<std::size_t>(l)];
  for (std::size_t r = 0; r < p.n_regions; ++r)
    if (p.region_sizes[r] == 0)
      throw Error(ErrorCode::InvalidArgument, "partitioning", "region " + std::to_string(r) + " is empty");
  return p;
}

inline Partition partition_from_array(const LabelArray& a) { return partition_from_labels(a.shape, a.data); }

/// Fixed-size blocks, labelled in raster order of blocks (last axis fastest).
inline Partition grid_partition(const Shape& shape, const Shape& block) {
  if (shape.empty() || shape.size() != block.size())
    throw Error(ErrorCode::ShapeMismatch, "partitioning", "block rank must match shape rank");
  Shape nblocks(shape.size());
  for (std::size_t d = 0; d < shape.size(); ++d) {
    if (block[d] == 0 || shape[d] % block[d] != 0)
      throw Error(ErrorCode::NotDivisible, "partitioning",
                  "axis " + std::to_string(d) + " of length " + std::to_string(shape[d]) +
                      " is not divisible by block " + std::to_string(block[d]));
    nblocks[d] = shape[d] / block[d];
  }
  std::vector<std::int32_t> labels(shape_size(shape));
  std::vector<std::size_t> idx(shape.size(), 0);
  for (std::size_t flat = 0; flat < labels.size(); ++flat) {
    std::size_t label = 0;
    for (std::size_t d = 0; d < shape.size(); ++d) label = label * nblocks[d] + idx[d] / block[d];
    labels[flat] = static_cast<std::int32_t>(label);
    for (std::size_t d = shape.size(); d-- > 0;) {
      if (++idx[d] < shape[d]) break;
      idx[d] = 0;
    }
  }
  return partition_from_labels(shape, std::move(labels));
}

/// Mean over images of the 3x3 Sobel gradient magnitude sqrt(gx^2 + gy^2).
/// Borders use replicated edge pixels.
inline EdgeImage average_sobel(std::span<const RealArray> images) {
  if (images.empty()) throw Error(ErrorCode::EmptyInput, "partitioning", "no images to average");
  const Shape& shape = images.front().shape;
  if (shape.size() != 2) throw Error(ErrorCode::Not2D, "partitioning", "Sobel edges need 2D images");
  const std::size_t h = shape[0], w = shape[1];
  EdgeImage acc(shape, 0.0);
  for (const auto& img : images) {
    if (img.shape.size() != 2) throw Error(ErrorCode::Not2D, "partitioning", "Sobel edges need 2D images");
    if (img.shape != shape) throw Error(ErrorCode::ShapeMismatch, "partitioning", "images differ in shape");
    auto px = [&](std::ptrdiff_t r, std::ptrdiff_t c) {
      r = std::clamp<std::ptrdiff_t>(r, 0, static_cast<std::ptrdiff_t>(h) - 1);
      c = std::clamp<std::ptrdiff_t>(c, 0, static_cast<std::ptrdiff_t>(w) - 1);
      return img.data[static_cast<std::size_t>(r) * w + static_cast<std::size_t>(c)];
    };
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        const auto y = static_cast<std::ptrdiff_t>(r), x = static_cast<std::ptrdiff_t>(c);
        const double gx = (px(y - 1, x + 1) + 2 * px(y, x + 1) + px(y + 1, x + 1)) -
                          (px(y - 1, x - 1) + 2 * px(y, x - 1) + px(y + 1, x - 1));
        const double gy = (px(y + 1, x - 1) + 2 * px(y + 1, x) + px(y + 1, x + 1)) -
                          (px(y - 1, x - 1) + 2 * px(y - 1, x) + px(y - 1, x + 1));
        acc.data[r * w + c] += std::sqrt(gx * gx + gy * gy);
      }
    }
  }
  for (double& v : acc.data) v /= static_cast<double>(images.size());
  return acc;
}

namespace detail {

// Neighbour offsets for 4-connectivity (2D) or 6-connectivity (3D).
inline std::vector<std::size_t> neighbours(const Shape& shape, std::size_t flat) {
  std::vector<std::size_t> out;
  std::size_t stride = 1;
  for (std::size_t d = shape.size(); d-- > 0;) {
    const std::size_t coord = (flat / stride) % shape[d];
    if (coord > 0) out.push_back(flat - stride);
    if (coord + 1 < shape[d]) out.push_back(flat + stride);
    stride *= shape[d];
  }
  return out;
}

/// Connected components of equal-label pixels. Returns the component id per
/// pixel (background pixels get -1) and the component count.
inline std::pair<std::vector<std::int32_t>, std::size_t> components(const Shape& shape,
                                                                   const std::vector<std::int32_t>& labels) {
  std::vector<std::int32_t> comp(labels.size(), -1);
  std::size_t count = 0;
  std::vector<std::size_t> stack;
  for (std::size_t s = 0; s < labels.size(); ++s) {
    if (comp[s] != -1 || labels[s] == kBackground) continue;
    const auto id = static_cast<std::int32_t>(count++);
    comp[s] = id;
    stack.assign(1, s);
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      for (std::size_t q : neighbours(shape, p)) {
        if (comp[q] == -1 && labels[q] == labels[p]) {
          comp[q] = id;
          stack.push_back(q);
        }
      }
    }
  }
  return {std::move(comp), count};
}

}  // namespace detail

/// True when every region forms a single 4- (2D) or 6- (3D) connected piece.
inline bool regions_connected(const Partition& p) {
  auto [comp, count] = detail::components(p.shape, p.labels);
  return count == p.n_regions;
}

/// Checks the cover invariants: labels in range, sizes consistent with the
/// labels, no empty region. Returns an empty string when valid.
inline std::string partition_violation(const Partition& p) {
  if (p.labels.size() != shape_size(p.shape)) return "label count differs from shape";
  if (p.region_sizes.size() != p.n_regions) return "region_sizes length differs from n_regions";
  std::vector<std::size_t> counts(p.n_regions, 0);
  for (auto l : p.labels) {
    if (l == kBackground) continue;
    if (l < 0 || static_cast<std::size_t>(l) >= p.n_regions) return "label out of range";
    ++counts[static_cast<std::size_t>(l)];
  }
  for (std::size_t r = 0; r < p.n_regions; ++r) {
    if (counts[r] == 0) return "region " + std::to_string(r) + " is empty";
    if (counts[r] != p.region_sizes[r]) return "region " + std::to_string(r) + " size mismatch";
  }
  return {};
}

struct SlicOptions {
  double compactness = 10.0;
  int iterations = 10;
};

/// SLIC superpixels on a single-channel edge image.
///
/// Centres start on a regular grid with spacing S = sqrt(N/k) (in continuous
/// pixel coordinates, pixel centres at +0.5) and move to the lowest-gradient
/// pixel of their 3x3 neighbourhood only if strictly lower. Assignment uses
/// D = sqrt(d_edge^2 + (compactness * d_xy / S)^2) over a 2S window. After
/// the iterations every label keeps its largest 4-connected piece; other
/// pieces are merged into the largest adjacent region. Labels are then
/// renumbered in raster order of first occurrence.
inline Partition slic_partition(const EdgeImage& edge, std::size_t k, const SlicOptions& opt = {}) {
  if (edge.shape.size() != 2) throw Error(ErrorCode::Not2D, "partitioning", "SLIC requires a 2D edge image");
  const std::size_t h = edge.shape[0], w = edge.shape[1], npx = h * w;
  if (k < 1 || k > npx)
    throw Error(ErrorCode::BadK, "partitioning", "k must lie in [1, " + std::to_string(npx) + "]");
  if (opt.iterations < 0) throw Error(ErrorCode::InvalidArgument, "partitioning", "negative SLIC iterations");

  const double step = std::sqrt(static_cast<double>(npx) / static_cast<double>(k));
  std::size_t ky = 1, kx = 1;
  if (k > 1) {
    ky = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(h) / step)));
    kx = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(w) / step)));
    ky = std::min(ky, h);
    kx = std::min(kx, w);
    while (ky * kx > k) {
      if (ky >= kx) --ky;
      else --kx;
    }
  }

  auto val = [&](std::size_t r, std::size_t c) { return edge.data[r * w + c]; };
  auto grad = [&](std::size_t r, std::size_t c) {
    const std::size_t r0 = r > 0 ? r - 1 : r, r1 = r + 1 < h ? r + 1 : r;
    const std::size_t c0 = c > 0 ? c - 1 : c, c1 = c + 1 < w ? c + 1 : c;
    const double dy = val(r1, c) - val(r0, c), dx = val(r, c1) - val(r, c0);
    return dx * dx + dy * dy;
  };

  struct Centre {
    double y, x, v;
  };
  std::vector<Centre> centres;
  const double sy = static_cast<double>(h) / static_cast<double>(ky);
  const double sx = static_cast<double>(w) / static_cast<double>(kx);
  for (std::size_t i = 0; i < ky; ++i) {
    for (std::size_t j = 0; j < kx; ++j) {
      double cy = (static_cast<double>(i) + 0.5) * sy, cx = (static_cast<double>(j) + 0.5) * sx;
      auto pr = std::min(h - 1, static_cast<std::size_t>(cy));
      auto pc = std::min(w - 1, static_cast<std::size_t>(cx));
      double best = grad(pr, pc);
      std::size_t br = pr, bc = pc;
      for (std::size_t r = pr > 0 ? pr - 1 : 0; r <= std::min(h - 1, pr + 1); ++r)
        for (std::size_t c = pc > 0 ? pc - 1 : 0; c <= std::min(w - 1, pc + 1); ++c)
          if (grad(r, c) < best) {
            best = grad(r, c);
            br = r;
            bc = c;
          }
      if (br != pr || bc != pc) {
        cy = static_cast<double>(br) + 0.5;
        cx = static_cast<double>(bc) + 0.5;
      }
      centres.push_back({cy, cx, val(br, bc)});
    }
  }

  const double spatial = opt.compactness / step;
  const auto window = static_cast<std::ptrdiff_t>(std::ceil(step));
  std::vector<std::int32_t> labels(npx, kBackground);
  std::vector<double> dist(npx);
  for (int it = 0; it < std::max(1, opt.iterations); ++it) {
    std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
    std::fill(labels.begin(), labels.end(), kBackground);
    for (std::size_t ci = 0; ci < centres.size(); ++ci) {
      const auto& ce = centres[ci];
      const auto r0 = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(std::floor(ce.y)) - window);
      const auto r1 = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(h) - 1,
                                               static_cast<std::ptrdiff_t>(std::floor(ce.y)) + window);
      const auto c0 = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(std::floor(ce.x)) - window);
      const auto c1 = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(w) - 1,
                                               static_cast<std::ptrdiff_t>(std::floor(ce.x)) + window);
      for (auto r = r0; r <= r1; ++r) {
        for (auto c = c0; c <= c1; ++c) {
          const std::size_t p = static_cast<std::size_t>(r) * w + static_cast<std::size_t>(c);
          const double de = edge.data[p] - ce.v;
          const double dy = static_cast<double>(r) + 0.5 - ce.y, dx = static_cast<double>(c) + 0.5 - ce.x;
          const double d = de * de + spatial * spatial * (dy * dy + dx * dx);
          if (d < dist[p]) {
            dist[p] = d;
            labels[p] = static_cast<std::int32_t>(ci);
          }
        }
      }
    }
    if (it + 1 >= opt.iterations) break;
    std::vector<double> sy_acc(centres.size(), 0.0), sx_acc(centres.size(), 0.0), sv(centres.size(), 0.0);
    std::vector<std::size_t> cnt(centres.size(), 0);
    for (std::size_t p = 0; p < npx; ++p) {
      if (labels[p] < 0) continue;
      const auto ci = static_cast<std::size_t>(labels[p]);
      sy_acc[ci] += static_cast<double>(p / w) + 0.5;
      sx_acc[ci] += static_cast<double>(p % w) + 0.5;
      sv[ci] += edge.data[p];
      ++cnt[ci];
    }
    for (std::size_t ci = 0; ci < centres.size(); ++ci) {
      if (cnt[ci] == 0) continue;
      const double n = static_cast<double>(cnt[ci]);
      centres[ci] = {sy_acc[ci] / n, sx_acc[ci] / n, sv[ci] / n};
    }
  }

  // Unreached pixels get a unique provisional label so they become orphans.
  std::int32_t next = static_cast<std::int32_t>(centres.size());
  for (auto& l : labels)
    if (l < 0) l = next++;

  // Connectivity enforcement.
  const Shape shape{h, w};
  auto [comp, ncomp] = detail::components(shape, labels);
  std::vector<std::size_t> comp_size(ncomp, 0);
  std::vector<std::int32_t> comp_label(ncomp, 0);
  for (std::size_t p = 0; p < npx; ++p) {
    ++comp_size[static_cast<std::size_t>(comp[p])];
    comp_label[static_cast<std::size_t>(comp[p])] = labels[p];
  }
  std::map<std::int32_t, std::size_t> largest;  // label -> component
  for (std::size_t c = 0; c < ncomp; ++c) {
    auto it = largest.find(comp_label[c]);
    if (it == largest.end() || comp_size[c] > comp_size[it->second]) largest[comp_label[c]] = c;
  }
  // owner[c]: the kept component that component c is merged into (-1 = pending)
  std::vector<std::int64_t> owner(ncomp, -1);
  std::vector<std::size_t> region_size(ncomp, 0);
  for (const auto& [lab, c] : largest) {
    owner[c] = static_cast<std::int64_t>(c);
    region_size[c] = comp_size[c];
  }
  std::vector<std::vector<std::size_t>> adjacency(ncomp);
  for (std::size_t p = 0; p < npx; ++p) {
    for (std::size_t q : detail::neighbours(shape, p)) {
      if (comp[q] != comp[p]) adjacency[static_cast<std::size_t>(comp[p])].push_back(static_cast<std::size_t>(comp[q]));
    }
  }
  for (auto& adj : adjacency) {
    std::sort(adj.begin(), adj.end());
    adj.erase(std::unique(adj.begin(), adj.end()), adj.end());
  }
  bool pending = true;
  while (pending) {
    pending = false;
    for (std::size_t c = 0; c < ncomp; ++c) {
      if (owner[c] >= 0) continue;
      std::int64_t best = -1;
      for (std::size_t nb : adjacency[c]) {
        if (owner[nb] < 0) continue;
        const auto root = static_cast<std::size_t>(owner[nb]);
        if (best < 0 || region_size[root] > region_size[static_cast<std::size_t>(best)] ||
            (region_size[root] == region_size[static_cast<std::size_t>(best)] && root < static_cast<std::size_t>(best)))
          best = static_cast<std::int64_t>(root);
      }
      if (best < 0) {
        pending = true;
        continue;
      }
      owner[c] = best;
      region_size[static_cast<std::size_t>(best)] += comp_size[c];
    }
  }

  std::vector<std::int32_t> remap(ncomp, -1);
  std::vector<std::int32_t> out(npx);
  std::int32_t n = 0;
  for (std::size_t p = 0; p < npx; ++p) {
    const auto root = static_cast<std::size_t>(owner[static_cast<std::size_t>(comp[p])]);
    if (remap[root] < 0) remap[root] = n++;
    out[p] = remap[root];
  }
  return partition_from_labels(shape, std::move(out));
}

/// Each distinct non-background label becomes one region, re-indexed in
/// ascending order of the original label value.
inline Partition atlas_partition(const LabelArray& atlas, std::int32_t background = 0) {
  std::vector<std::int32_t> distinct;
  for (auto l : atlas.data)
    if (l != background) distinct.push_back(l);
  if (distinct.empty()) throw Error(ErrorCode::NoForeground, "partitioning", "atlas has only background labels");
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  std::vector<std::int32_t> labels(atlas.size());
  for (std::size_t i = 0; i < atlas.size(); ++i) {
    const auto l = atlas.data[i];
    labels[i] = l == background
                    ? kBackground
                    : static_cast<std::int32_t>(std::lower_bound(distinct.begin(), distinct.end(), l) - distinct.begin());
  }
  return partition_from_labels(atlas.shape, std::move(labels));
}

}  // namespace oscar

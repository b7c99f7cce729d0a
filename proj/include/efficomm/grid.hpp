#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "efficomm/errors.hpp"

namespace efficomm {

// Dense algebra types. Everything in memory is 64-bit unless a caller asks
// for another scalar explicitly.
using Real = double;
using Index = Eigen::Index;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowMajorMatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using MatrixXr = MatrixX<Real>;
using VectorXr = VectorX<Real>;

/// Channel count and planar extent of a BEV grid. Cells are addressed
/// row-major from the top-left corner: cell = row * width + col.
struct GridShape {
  int channels = 1;
  int height = 1;
  int width = 1;

  Index cells() const { return Index(height) * width; }
  Index size() const { return cells() * channels; }
  bool valid() const { return channels >= 1 && height >= 1 && width >= 1; }
  bool same_plane(const GridShape& other) const {
    return height == other.height && width == other.width;
  }
  bool operator==(const GridShape&) const = default;
};

inline std::string to_string(const GridShape& s) {
  return std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" + std::to_string(s.width);
}

/// L x H x W grid stored as a (channels x cells) matrix so that the feature
/// column of one cell is contiguous. `Tag` separates feature tensors from
/// confidence logits at the type level.
template <typename Scalar_, typename Tag>
class BasicGrid {
 public:
  using Scalar = Scalar_;
  using Storage = MatrixX<Scalar>;

  BasicGrid() = default;

  explicit BasicGrid(GridShape shape) : shape_(shape) {
    check_shape(shape);
    values_ = Storage::Zero(shape.channels, shape.cells());
  }

  BasicGrid(GridShape shape, Storage values) : shape_(shape), values_(std::move(values)) {
    check_shape(shape);
    if (values_.rows() != shape.channels || values_.cols() != shape.cells())
      throw ConfigError("values", "storage is " + std::to_string(values_.rows()) + "x" +
                                      std::to_string(values_.cols()) + ", shape wants " +
                                      to_string(shape));
  }

  const GridShape& shape() const { return shape_; }
  int channels() const { return shape_.channels; }
  int height() const { return shape_.height; }
  int width() const { return shape_.width; }

  Index cell_index(int row, int col) const { return Index(row) * shape_.width + col; }

  Scalar operator()(int channel, int row, int col) const {
    return values_(channel, cell_index(row, col));
  }
  Scalar& operator()(int channel, int row, int col) { return values_(channel, cell_index(row, col)); }

  auto column(Index cell) const { return values_.col(cell); }
  auto column(Index cell) { return values_.col(cell); }

  const Storage& values() const { return values_; }
  Storage& values() { return values_; }

  bool all_finite() const { return values_.allFinite(); }

  template <typename NewScalar>
  BasicGrid<NewScalar, Tag> cast() const {
    return BasicGrid<NewScalar, Tag>(shape_, values_.template cast<NewScalar>());
  }

  bool operator==(const BasicGrid& other) const {
    return shape_ == other.shape_ && values_ == other.values_;
  }

 private:
  static void check_shape(const GridShape& s) {
    if (!s.valid()) throw ConfigError("shape", "every dimension must be >= 1, got " + to_string(s));
  }

  GridShape shape_{};
  Storage values_;
};

struct FeatureTag {};
struct ConfidenceTag {};

template <typename Scalar>
using FeatureTensorT = BasicGrid<Scalar, FeatureTag>;
template <typename Scalar>
using ConfidenceMapT = BasicGrid<Scalar, ConfidenceTag>;

using FeatureTensor = FeatureTensorT<Real>;
using ConfidenceMap = ConfidenceMapT<Real>;

/// Single-channel H x W plane; row-major storage so flat index == cell index.
template <typename Scalar_>
struct Plane {
  using Scalar = Scalar_;
  RowMajorMatrixX<Scalar> values;

  Plane() = default;
  Plane(int height, int width) : values(RowMajorMatrixX<Scalar>::Zero(height, width)) {}
  explicit Plane(RowMajorMatrixX<Scalar> v) : values(std::move(v)) {}

  int height() const { return int(values.rows()); }
  int width() const { return int(values.cols()); }
  Index cells() const { return values.size(); }
  Scalar operator()(int row, int col) const { return values(row, col); }
  Scalar& operator()(int row, int col) { return values(row, col); }
  Scalar at(Index cell) const { return values.data()[cell]; }

  bool operator==(const Plane& o) const { return values == o.values; }
};

template <typename Scalar>
using ImportanceImageT = Plane<Scalar>;
using ImportanceImage = ImportanceImageT<Real>;

/// Binary keep/drop decision per cell.
class CellMask {
 public:
  using Bits = RowMajorMatrixX<std::uint8_t>;

  CellMask() = default;
  CellMask(int height, int width, bool value = false)
      : bits_(Bits::Constant(height, width, value ? 1 : 0)) {}

  static CellMask ones(int height, int width) { return CellMask(height, width, true); }
  static CellMask zeros(int height, int width) { return CellMask(height, width, false); }

  int height() const { return int(bits_.rows()); }
  int width() const { return int(bits_.cols()); }
  Index cells() const { return bits_.size(); }

  bool operator()(int row, int col) const { return bits_(row, col) != 0; }
  bool test(Index cell) const { return bits_.data()[cell] != 0; }
  void set(Index cell, bool value = true) { bits_.data()[cell] = value ? 1 : 0; }
  void set(int row, int col, bool value) { bits_(row, col) = value ? 1 : 0; }

  Index popcount() const { return bits_.template cast<Index>().sum(); }

  const Bits& bits() const { return bits_; }

  CellMask operator&(const CellMask& other) const {
    CellMask out(*this);
    out.bits_ = bits_.cwiseMin(other.bits_);
    return out;
  }

  bool operator==(const CellMask& other) const { return bits_ == other.bits_; }

 private:
  Bits bits_;
};

/// Collapses a multi-channel logit grid to its per-cell channel maximum.
template <typename Scalar, typename Tag>
ImportanceImageT<Scalar> importance_image(const BasicGrid<Scalar, Tag>& conf) {
  ImportanceImageT<Scalar> img(conf.height(), conf.width());
  Eigen::Map<Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(img.values.data(), conf.shape().cells()) =
      conf.values().colwise().maxCoeff();
  return img;
}

/// The `k` highest-scoring cells; equal scores resolve to the lower cell index.
template <typename Scalar>
CellMask top_k_cells(const Plane<Scalar>& scores, Index k) {
  const Index n = scores.cells();
  if (k < 0 || k > n)
    throw RangeError("top-k count " + std::to_string(k) + " outside [0, " + std::to_string(n) + "]");
  CellMask mask(scores.height(), scores.width());
  if (k == 0) return mask;
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  const Scalar* s = scores.values.data();
  auto before = [s](Index a, Index b) { return s[a] > s[b] || (s[a] == s[b] && a < b); };
  std::nth_element(order.begin(), order.begin() + (k - 1), order.end(), before);
  for (Index i = 0; i < k; ++i) mask.set(order[static_cast<std::size_t>(i)]);
  return mask;
}

/// Zeroes every feature column whose cell is dropped by `mask`.
template <typename Scalar, typename Tag>
BasicGrid<Scalar, Tag> apply_mask(const BasicGrid<Scalar, Tag>& grid, const CellMask& mask) {
  if (mask.height() != grid.height() || mask.width() != grid.width())
    throw FrameError("mask " + std::to_string(mask.height()) + "x" + std::to_string(mask.width()) +
                     " does not match grid " + to_string(grid.shape()));
  BasicGrid<Scalar, Tag> out(grid);
  for (Index c = 0; c < grid.shape().cells(); ++c)
    if (!mask.test(c)) out.column(c).setZero();
  return out;
}

/// Cells whose feature column has at least one nonzero entry.
template <typename Scalar, typename Tag>
CellMask support(const BasicGrid<Scalar, Tag>& grid) {
  CellMask mask(grid.height(), grid.width());
  for (Index c = 0; c < grid.shape().cells(); ++c)
    if ((grid.column(c).array() != Scalar(0)).any()) mask.set(c);
  return mask;
}

template <typename Scalar, typename Tag>
std::uint64_t count_nonzero(const BasicGrid<Scalar, Tag>& grid) {
  return static_cast<std::uint64_t>((grid.values().array() != Scalar(0)).count());
}

/// Halves the planar resolution by averaging 2x2 blocks.
template <typename Scalar, typename Tag>
BasicGrid<Scalar, Tag> downsample_mean(const BasicGrid<Scalar, Tag>& grid) {
  if (grid.height() % 2 != 0 || grid.width() % 2 != 0)
    throw ConfigError("grid", "cannot halve odd extent " + to_string(grid.shape()));
  GridShape coarse{grid.channels(), grid.height() / 2, grid.width() / 2};
  BasicGrid<Scalar, Tag> out(coarse);
  for (int r = 0; r < coarse.height; ++r)
    for (int c = 0; c < coarse.width; ++c)
      out.column(out.cell_index(r, c)) =
          Scalar(0.25) * (grid.column(grid.cell_index(2 * r, 2 * c)) +
                          grid.column(grid.cell_index(2 * r, 2 * c + 1)) +
                          grid.column(grid.cell_index(2 * r + 1, 2 * c)) +
                          grid.column(grid.cell_index(2 * r + 1, 2 * c + 1)));
  return out;
}

/// Replicates each cell into a factor x factor block.
template <typename Scalar, typename Tag>
BasicGrid<Scalar, Tag> upsample_nearest(const BasicGrid<Scalar, Tag>& grid, int factor) {
  if (factor < 1) throw ConfigError("factor", "must be >= 1");
  GridShape fine{grid.channels(), grid.height() * factor, grid.width() * factor};
  BasicGrid<Scalar, Tag> out(fine);
  for (int r = 0; r < fine.height; ++r)
    for (int c = 0; c < fine.width; ++c)
      out.column(out.cell_index(r, c)) = grid.column(grid.cell_index(r / factor, c / factor));
  return out;
}

/// A coarse cell is kept if any of its 2x2 fine cells is kept.
inline CellMask downsample_any(const CellMask& mask) {
  if (mask.height() % 2 != 0 || mask.width() % 2 != 0)
    throw ConfigError("grid", "cannot halve odd mask extent");
  CellMask out(mask.height() / 2, mask.width() / 2);
  for (int r = 0; r < out.height(); ++r)
    for (int c = 0; c < out.width(); ++c)
      out.set(r, c,
              mask(2 * r, 2 * c) || mask(2 * r, 2 * c + 1) || mask(2 * r + 1, 2 * c) ||
                  mask(2 * r + 1, 2 * c + 1));
  return out;
}

}  // namespace efficomm

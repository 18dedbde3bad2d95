#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <utility>
#include <numeric>
#include <vector>

#include <Eigen/Core>

namespace gmmloc::detail {

// Uniform bucket grid over N-D points, visited in rings of growing
// Chebyshev cell distance around a query cell.
template <int N>
class UniformGrid {
 public:
  using Point = Eigen::Matrix<double, N, 1>;
  using Cell = std::array<int, N>;

  // `per_cell` is the mean occupancy aimed for; a positive `cell` fixes the
  // cell size instead. With a core box, points outside it are kept in an
  // overflow list that every search visits, so a few far points do not
  // stretch the grid.
  explicit UniformGrid(const std::vector<Point>& pts, double per_cell = 2.0, double cell = 0.0,
                       const std::pair<Point, Point>* core = nullptr) {
    Point hi = Point::Zero();
    lo_.setZero();
    if (core) {
      lo_ = core->first;
      hi = core->second;
    } else if (!pts.empty()) {
      lo_ = pts.front();
      hi = pts.front();
      for (const auto& p : pts) {
        lo_ = lo_.cwiseMin(p);
        hi = hi.cwiseMax(p);
      }
    }
    std::vector<int> inside;
    inside.reserve(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const bool in = (pts[i].array() >= lo_.array()).all() && (pts[i].array() <= hi.array()).all();
      if (in) {
        inside.push_back(static_cast<int>(i));
      } else {
        overflow_.push_back(static_cast<int>(i));
      }
    }
    const Point ext = (hi - lo_).cwiseMax(1e-9);
    double volume = 1.0;
    for (int d = 0; d < N; ++d) volume *= ext[d];
    cell_ = cell > 0.0 ? cell : std::pow(volume * per_cell / std::max<double>(1.0, inside.size()), 1.0 / N);
    // Cap the cell count for very elongated layouts.
    for (;;) {
      long total = 1;
      for (int d = 0; d < N; ++d) total *= dims_[d] = static_cast<int>(ext[d] / cell_) + 1;
      if (total <= 4 * static_cast<long>(inside.size()) + 8) break;
      cell_ *= 1.25;
    }
    std::vector<int> key(inside.size());
    start_.assign(cell_count() + 1, 0);
    for (std::size_t k = 0; k < inside.size(); ++k) {
      key[k] = flat(locate(pts[inside[k]]));
      ++start_[key[k] + 1];
    }
    std::partial_sum(start_.begin(), start_.end(), start_.begin());
    items_.resize(inside.size());
    std::vector<int> fill(start_.begin(), start_.end() - 1);
    for (std::size_t k = 0; k < inside.size(); ++k) items_[fill[key[k]]++] = inside[k];
  }

  double cell() const { return cell_; }
  int max_ring() const { return *std::max_element(dims_.begin(), dims_.end()); }

  // Cell of q, clamped into the grid.
  Cell locate(const Point& q) const {
    Cell c{};
    for (int d = 0; d < N; ++d) {
      const double x = (q[d] - lo_[d]) / cell_;
      c[d] = x <= 0.0 ? 0 : std::min(static_cast<int>(x), dims_[d] - 1);
    }
    return c;
  }

  // Lower bound on the distance from q to any point in ring r around c.
  double ring_gap(const Point& q, const Cell& c, int r) const {
    if (r == 0) return 0.0;
    double gap = std::numeric_limits<double>::infinity();
    for (int d = 0; d < N; ++d) {
      // q against the block of cells c - (r - 1) .. c + (r - 1)
      const double below = q[d] - (lo_[d] + (c[d] - r + 1) * cell_);
      const double above = lo_[d] + (c[d] + r) * cell_ - q[d];
      if (below < 0.0 || above < 0.0) return (r - 1) * cell_;
      gap = std::min({gap, below, above});
    }
    return gap;
  }

  // Calls fn(index) for every point in ring r around c; ring 0 also covers
  // the overflow points.
  template <class Fn>
  void ring(const Cell& c, int r, Fn&& fn) const {
    if (r == 0) {
      for (int i : overflow_) fn(i);
    }
    Cell a{}, b{};
    for (int d = 0; d < N; ++d) {
      a[d] = std::max(c[d] - r, 0);
      b[d] = std::min(c[d] + r, dims_[d] - 1);
    }
    // Rows along dimension 0 are contiguous in the bucket arrays.
    auto row = [&](Cell cell, int x0, int x1) {
      if (x0 > x1) return;
      cell[0] = x0;
      const int f0 = flat(cell);
      for (int k = start_[f0]; k < start_[f0 + (x1 - x0) + 1]; ++k) fn(items_[k]);
    };
    Cell it = a;
    for (;;) {
      int cheb = 0;
      for (int d = 1; d < N; ++d) cheb = std::max(cheb, std::abs(it[d] - c[d]));
      if (cheb == r) {
        row(it, a[0], b[0]);
      } else if (r > 0) {
        if (c[0] - r >= 0) row(it, c[0] - r, c[0] - r);
        if (c[0] + r < dims_[0]) row(it, c[0] + r, c[0] + r);
      } else {
        row(it, c[0], c[0]);
      }
      int d = 1;
      while (d < N && ++it[d] > b[d]) {
        it[d] = a[d];
        ++d;
      }
      if (d >= N) break;
    }
  }

 private:
  int flat(const Cell& c) const {
    int f = 0;
    for (int d = N - 1; d >= 0; --d) f = f * dims_[d] + c[d];
    return f;
  }
  int cell_count() const {
    int n = 1;
    for (int d = 0; d < N; ++d) n *= dims_[d];
    return n;
  }

  Point lo_;
  double cell_ = 1.0;
  Cell dims_{};
  std::vector<int> start_, items_, overflow_;
};

// Points carrying a spread s >= 0 for a distance bounded below by
// |p - q|^2 / (4 (s_p + s_q)). Points are layered by powers of four of s so a
// few wide points do not weaken the ring bound for all others.
template <int N>
class SpreadIndex {
 public:
  using Point = typename UniformGrid<N>::Point;

  SpreadIndex(const std::vector<Point>& pts, const std::vector<double>& spread) {
    std::map<int, std::vector<int>> groups;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const int key = spread[i] > 0.0 ? std::clamp(std::ilogb(spread[i]) / 2, -60, 60) : -61;
      groups[key].push_back(static_cast<int>(i));
    }
    for (auto& [key, members] : groups) {
      std::vector<Point> sub;
      double max_spread = 0.0;
      for (int i : members) {
        sub.push_back(pts[i]);
        max_spread = std::max(max_spread, spread[i]);
      }
      // Each layer gets its own core box (0.1% .. 99.9% quantiles per
      // dimension) and density; the few points outside go to overflow.
      const auto core = trimmed_box(sub);
      const double density_cell = UniformGrid<N>(sub, 2.0, 0.0, &core).cell();
      // The search radius of a layer grows like sqrt(spread); so does its cell.
      const double layer_cell = std::max(density_cell, std::sqrt(max_spread));
      layers_.push_back({UniformGrid<N>(sub, 2.0, layer_cell, &core), std::move(members), max_spread});
    }
  }

  // fn(index) on candidates ring by ring in every layer; worst() is the
  // current pruning threshold (infinity while nothing qualifies).
  template <class Fn, class Worst>
  void search(const Point& q, double spread_q, Fn&& fn, Worst&& worst) const {
    struct State {
      typename UniformGrid<N>::Cell cell;
      bool open;
    };
    std::array<State, 128> state;  // at most 122 spread keys
    for (std::size_t l = 0; l < layers_.size(); ++l) state[l] = {layers_[l].grid.locate(q), true};
    // Rings are interleaved across layers so a finite threshold appears early.
    for (int r = 0;; ++r) {
      bool any = false;
      for (std::size_t l = 0; l < layers_.size(); ++l) {
        if (!state[l].open) continue;
        const Layer& layer = layers_[l];
        if (r > layer.grid.max_ring()) {
          state[l].open = false;
          continue;
        }
        if (r > 0) {
          const double gap = layer.grid.ring_gap(q, state[l].cell, r);
          const double bound = gap * gap / (4.0 * (spread_q + layer.max_spread));
          if (bound > worst() * (1.0 + 1e-9) + 1e-12) {
            state[l].open = false;
            continue;
          }
        }
        any = true;
        layer.grid.ring(state[l].cell, r, [&](int k) { fn(layer.index[k]); });
      }
      if (!any) break;
    }
  }

 private:
  static std::pair<Point, Point> trimmed_box(const std::vector<Point>& pts) {
    std::pair<Point, Point> box;
    std::vector<double> v(pts.size());
    const std::size_t lo_k = pts.size() / 1000, hi_k = pts.size() - 1 - pts.size() / 1000;
    for (int d = 0; d < N; ++d) {
      for (std::size_t i = 0; i < pts.size(); ++i) v[i] = pts[i][d];
      std::nth_element(v.begin(), v.begin() + lo_k, v.end());
      box.first[d] = v[lo_k];
      std::nth_element(v.begin(), v.begin() + hi_k, v.end());
      box.second[d] = v[hi_k];
    }
    return box;
  }

  struct Layer {
    UniformGrid<N> grid;
    std::vector<int> index;
    double max_spread;
  };
  std::vector<Layer> layers_;
};

}  // namespace gmmloc::detail

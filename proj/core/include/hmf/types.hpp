#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hmf/common.hpp"

namespace hmf {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Block layout of one point of E = R^n x R^l x R^{l x d} x R^k.
// Z is flattened row-major: z(i,j) sits at offset(2) + i*d + j.
struct ComponentDims {
  int n = 0, l = 0, d = 0, k = 0;
  int zdim() const { return l * d; }
  int total() const { return n + l + l * d + k; }
  int block_dim(int block) const;
  int offset(int block) const;  // 0:X 1:Y 2:Z 3:A
  bool operator==(const ComponentDims&) const = default;
};

constexpr unsigned kMaskX = 1u, kMaskY = 2u, kMaskZ = 4u, kMaskA = 8u, kMaskAll = 15u;

// Discretized type space: scalar labels u_1..u_M with m-weights.
struct TypeAtlas {
  std::vector<double> labels;
  std::vector<double> weights;  // positive, sum to 1
  int size() const { return static_cast<int>(labels.size()); }
  bool same_as(const TypeAtlas& other) const;
};

enum class AtlasMode { Grid, Iid };

struct AtlasSpec {
  AtlasMode mode = AtlasMode::Grid;
  int count = 1;
  double lo = 0.0;
  double hi = 1.0;
  uint64_t seed = 0;  // iid mode only
};

// Grid mode places labels at cell midpoints of [lo, hi] with uniform weights;
// iid mode samples labels U(lo, hi) from the atlas stream and sorts them.
TypeAtlas build_type_atlas(const AtlasSpec& spec);

// Weighted point cloud in R^dim.
struct WeightedCloud {
  Mat points;   // N x dim
  Vec weights;  // positive, sum to 1
  int size() const { return static_cast<int>(points.rows()); }
  int dim() const { return static_cast<int>(points.cols()); }
};

WeightedCloud uniform_cloud(const Mat& points);

// Type-indexed family of clouds on E or on a marginal slice of it.
// mask records which blocks of dims the point columns cover.
struct MeasureKernel {
  TypeAtlas atlas;
  std::vector<WeightedCloud> clouds;  // one per type, atlas order
  ComponentDims dims;
  unsigned mask = kMaskAll;
  int point_dim() const;
};

// Columns of the full layout covered by mask, in block order.
std::vector<int> mask_columns(const ComponentDims& dims, unsigned mask);

// Project a kernel onto a sub-mask of its blocks (e.g. the X marginal at T).
MeasureKernel project(const MeasureKernel& kernel, unsigned mask);

// graphon aggregate: sum_v m(v) kappa(u_label, v_label) * E_{cloud v}[phi(point)]
Vec graphon_aggregate(const MeasureKernel& kernel,
                      const std::function<double(double, double)>& kappa,
                      const std::function<Vec(const Vec&)>& phi,
                      int type_index);

// CSV is columnar: type_index, weight, component_0..component_{D-1}.
// The JSON header records n, l, d, k, M, N and the atlas.
void save_kernel(const MeasureKernel& kernel, const std::string& csv_path,
                 const std::string& json_path);
MeasureKernel load_kernel(const std::string& csv_path, const std::string& json_path);

}  // namespace hmf

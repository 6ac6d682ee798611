#include "hmf/types.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "hmf/rng.hpp"

namespace hmf {

int ComponentDims::block_dim(int block) const {
  switch (block) {
    case 0: return n;
    case 1: return l;
    case 2: return l * d;
    case 3: return k;
  }
  fail(ErrorCode::Internal, "dims", "block index out of range");
}

int ComponentDims::offset(int block) const {
  int off = 0;
  for (int b = 0; b < block; ++b) off += block_dim(b);
  return off;
}

bool TypeAtlas::same_as(const TypeAtlas& other) const {
  return labels == other.labels && weights == other.weights;
}

TypeAtlas build_type_atlas(const AtlasSpec& spec) {
  if (spec.count < 1)
    fail(ErrorCode::InvalidSpec, "atlas", "atlas count must be >= 1");
  if (!(spec.hi >= spec.lo))
    fail(ErrorCode::InvalidSpec, "atlas", "atlas interval is empty");
  TypeAtlas atlas;
  atlas.labels.resize(spec.count);
  atlas.weights.assign(spec.count, 1.0 / spec.count);
  if (spec.mode == AtlasMode::Grid) {
    // midpoint rule on [lo, hi]
    double h = (spec.hi - spec.lo) / spec.count;
    for (int i = 0; i < spec.count; ++i) atlas.labels[i] = spec.lo + h * (i + 0.5);
  } else {
    RandomStream stream(spec.seed, 0, 0, kStreamAtlas);
    for (int i = 0; i < spec.count; ++i)
      atlas.labels[i] = spec.lo + (spec.hi - spec.lo) * stream.uniform(i);
    std::sort(atlas.labels.begin(), atlas.labels.end());
  }
  return atlas;
}

WeightedCloud uniform_cloud(const Mat& points) {
  WeightedCloud c;
  c.points = points;
  c.weights = Vec::Constant(points.rows(), 1.0 / std::max<Eigen::Index>(1, points.rows()));
  return c;
}

int MeasureKernel::point_dim() const {
  int dim = 0;
  for (int b = 0; b < 4; ++b)
    if (mask & (1u << b)) dim += dims.block_dim(b);
  return dim;
}

std::vector<int> mask_columns(const ComponentDims& dims, unsigned mask) {
  std::vector<int> cols;
  for (int b = 0; b < 4; ++b) {
    if (!(mask & (1u << b))) continue;
    int off = dims.offset(b);
    for (int c = 0; c < dims.block_dim(b); ++c) cols.push_back(off + c);
  }
  return cols;
}

MeasureKernel project(const MeasureKernel& kernel, unsigned mask) {
  if ((mask & kernel.mask) != mask)
    fail(ErrorCode::InvalidInput, "project", "requested blocks not present in kernel");
  // column positions of `mask` blocks inside the kernel's own layout
  std::vector<int> keep;
  int col = 0;
  for (int b = 0; b < 4; ++b) {
    if (!(kernel.mask & (1u << b))) continue;
    int bd = kernel.dims.block_dim(b);
    if (mask & (1u << b))
      for (int c = 0; c < bd; ++c) keep.push_back(col + c);
    col += bd;
  }
  MeasureKernel out;
  out.atlas = kernel.atlas;
  out.dims = kernel.dims;
  out.mask = mask;
  out.clouds.reserve(kernel.clouds.size());
  for (const auto& cloud : kernel.clouds) {
    WeightedCloud c;
    c.weights = cloud.weights;
    c.points.resize(cloud.points.rows(), static_cast<Eigen::Index>(keep.size()));
    for (size_t j = 0; j < keep.size(); ++j) c.points.col(j) = cloud.points.col(keep[j]);
    out.clouds.push_back(std::move(c));
  }
  return out;
}

Vec graphon_aggregate(const MeasureKernel& kernel,
                      const std::function<double(double, double)>& kappa,
                      const std::function<Vec(const Vec&)>& phi,
                      int type_index) {
  if (type_index < 0 || type_index >= kernel.atlas.size())
    fail(ErrorCode::InvalidInput, "aggregate", "type index out of range");
  double u = kernel.atlas.labels[type_index];
  Vec acc;
  for (int v = 0; v < kernel.atlas.size(); ++v) {
    const auto& cloud = kernel.clouds[v];
    Vec mean;
    for (int i = 0; i < cloud.size(); ++i) {
      Vec val = phi(cloud.points.row(i).transpose());
      if (mean.size() == 0) mean = Vec::Zero(val.size());
      mean += cloud.weights(i) * val;
    }
    if (mean.size() == 0) continue;
    double w = kernel.atlas.weights[v] * kappa(u, kernel.atlas.labels[v]);
    if (acc.size() == 0) acc = Vec::Zero(mean.size());
    acc += w * mean;
  }
  return acc;
}

void save_kernel(const MeasureKernel& kernel, const std::string& csv_path,
                 const std::string& json_path) {
  std::ofstream csv(csv_path);
  if (!csv) fail(ErrorCode::InvalidInput, "io", "cannot open " + csv_path);
  int dim = kernel.clouds.empty() ? kernel.point_dim() : kernel.clouds.front().dim();
  csv << "type_index,weight";
  for (int c = 0; c < dim; ++c) csv << ",component_" << c;
  csv << "\n";
  for (int u = 0; u < static_cast<int>(kernel.clouds.size()); ++u) {
    const auto& cloud = kernel.clouds[u];
    for (int i = 0; i < cloud.size(); ++i) {
      csv << u << ',' << fmt_double(cloud.weights(i));
      for (int c = 0; c < cloud.dim(); ++c) csv << ',' << fmt_double(cloud.points(i, c));
      csv << "\n";
    }
  }

  nlohmann::json header;
  header["n"] = kernel.dims.n;
  header["l"] = kernel.dims.l;
  header["d"] = kernel.dims.d;
  header["k"] = kernel.dims.k;
  header["mask"] = kernel.mask;
  header["M"] = kernel.atlas.size();
  nlohmann::json counts = nlohmann::json::array();
  for (const auto& cloud : kernel.clouds) counts.push_back(cloud.size());
  header["N"] = counts;
  header["labels"] = kernel.atlas.labels;
  header["weights"] = kernel.atlas.weights;
  std::ofstream js(json_path);
  if (!js) fail(ErrorCode::InvalidInput, "io", "cannot open " + json_path);
  js << header.dump(2) << "\n";
}

MeasureKernel load_kernel(const std::string& csv_path, const std::string& json_path) {
  std::ifstream js(json_path);
  if (!js) fail(ErrorCode::InvalidInput, "io", "cannot open " + json_path);
  nlohmann::json header = nlohmann::json::parse(js, nullptr, true);

  MeasureKernel kernel;
  kernel.dims.n = header.at("n").get<int>();
  kernel.dims.l = header.at("l").get<int>();
  kernel.dims.d = header.at("d").get<int>();
  kernel.dims.k = header.at("k").get<int>();
  kernel.mask = header.at("mask").get<unsigned>();
  kernel.atlas.labels = header.at("labels").get<std::vector<double>>();
  kernel.atlas.weights = header.at("weights").get<std::vector<double>>();
  std::vector<int> counts = header.at("N").get<std::vector<int>>();
  if (static_cast<int>(counts.size()) != kernel.atlas.size())
    fail(ErrorCode::InvalidInput, "io", "kernel header: N list does not match M");

  int dim = kernel.point_dim();
  kernel.clouds.resize(counts.size());
  for (size_t u = 0; u < counts.size(); ++u) {
    kernel.clouds[u].points.resize(counts[u], dim);
    kernel.clouds[u].weights.resize(counts[u]);
  }

  std::ifstream csv(csv_path);
  if (!csv) fail(ErrorCode::InvalidInput, "io", "cannot open " + csv_path);
  std::string line;
  std::getline(csv, line);  // header row
  std::vector<int> cursor(counts.size(), 0);
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    int u = std::stoi(cell);
    if (u < 0 || u >= static_cast<int>(counts.size()))
      fail(ErrorCode::InvalidInput, "io", "kernel csv: type index out of range");
    int i = cursor[u]++;
    if (i >= counts[u]) fail(ErrorCode::InvalidInput, "io", "kernel csv: too many rows for type");
    std::getline(ss, cell, ',');
    kernel.clouds[u].weights(i) = std::stod(cell);
    for (int c = 0; c < dim; ++c) {
      if (!std::getline(ss, cell, ','))
        fail(ErrorCode::InvalidInput, "io", "kernel csv: short row");
      kernel.clouds[u].points(i, c) = std::stod(cell);
    }
  }
  for (size_t u = 0; u < counts.size(); ++u)
    if (cursor[u] != counts[u])
      fail(ErrorCode::InvalidInput, "io", "kernel csv: row count mismatch");
  return kernel;
}

}  // namespace hmf

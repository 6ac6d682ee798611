#include "hmf/transport.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace hmf {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_cloud(const WeightedCloud& c, const char* which) {
  if (c.size() == 0) fail(ErrorCode::InvalidInput, "wasserstein2", std::string(which) + ": empty cloud");
  if (c.weights.size() != c.size())
    fail(ErrorCode::InvalidInput, "wasserstein2", std::string(which) + ": weight count mismatch");
  double sum = 0.0;
  for (int i = 0; i < c.size(); ++i) {
    if (!(c.weights(i) > 0.0))
      fail(ErrorCode::InvalidInput, "wasserstein2", std::string(which) + ": weights must be positive");
    sum += c.weights(i);
  }
  if (std::abs(sum - 1.0) > 1e-6)
    fail(ErrorCode::InvalidInput, "wasserstein2", std::string(which) + ": weights must sum to 1");
}

Vec normalized(const Vec& w) {
  return w / w.sum();
}

WeightedCloud strided_subsample(const WeightedCloud& c, int cap) {
  WeightedCloud out;
  out.points.resize(cap, c.dim());
  out.weights.resize(cap);
  for (int t = 0; t < cap; ++t) {
    int idx = static_cast<int>((static_cast<long long>(t) * c.size()) / cap);
    out.points.row(t) = c.points.row(idx);
    out.weights(t) = c.weights(idx);
  }
  out.weights = normalized(out.weights);
  return out;
}

// Exact min-cost transport via successive shortest paths with potentials.
// Node layout: 0..na-1 supplies, na..na+nb-1 demands, then a super-source S
// and super-sink T so each round is a single-source Dijkstra (that is what
// keeps all reduced costs nonnegative once potentials accumulate).
double transport_cost(const Mat& cost, const Vec& supply, const Vec& demand) {
  const int na = static_cast<int>(supply.size());
  const int nb = static_cast<int>(demand.size());
  const int S = na + nb, T = na + nb + 1;
  const int nv = na + nb + 2;

  Mat flow = Mat::Zero(na, nb);
  Vec shipped = Vec::Zero(na), delivered = Vec::Zero(nb);
  std::vector<double> pot(nv, 0.0);
  std::vector<double> dist(nv);
  std::vector<int> parent(nv);
  std::vector<char> done(nv);

  double remaining = supply.sum();
  const double tol = 1e-12;
  // each augmentation exhausts a node or zeroes a carried arc; well past that
  int guard = 16 * nv + 512;

  auto relax = [&](int from, int to, double rc) {
    if (done[to]) return;
    if (dist[from] + rc < dist[to]) {
      dist[to] = dist[from] + rc;
      parent[to] = from;
    }
  };

  while (remaining > tol && guard-- > 0) {
    std::fill(dist.begin(), dist.end(), kInf);
    std::fill(parent.begin(), parent.end(), -1);
    std::fill(done.begin(), done.end(), 0);
    dist[S] = 0.0;

    for (int it = 0; it < nv; ++it) {
      int u = -1;
      double best = kInf;
      for (int v = 0; v < nv; ++v)
        if (!done[v] && dist[v] < best) { best = dist[v]; u = v; }
      if (u < 0 || u == T) break;
      done[u] = 1;
      if (u == S) {
        for (int i = 0; i < na; ++i)
          if (supply(i) - shipped(i) > tol) relax(S, i, pot[S] - pot[i]);
      } else if (u < na) {
        for (int j = 0; j < nb; ++j)
          relax(u, na + j, cost(u, j) + pot[u] - pot[na + j]);
        if (shipped(u) > 0.0) relax(u, S, pot[u] - pot[S]);
      } else {
        int j = u - na;
        for (int i = 0; i < na; ++i)
          if (flow(i, j) > 0.0) relax(u, i, -cost(i, j) + pot[u] - pot[i]);
        if (demand(j) - delivered(j) > tol) relax(u, T, pot[u] - pot[T]);
      }
    }
    if (!(dist[T] < kInf))
      fail(ErrorCode::Internal, "wasserstein2", "transport LP: no augmenting path");

    // cap unsettled nodes at the sink distance so reduced costs stay >= 0;
    // nodes the early exit never reached take the cap too (min(inf, reach))
    double reach = dist[T];
    for (int v = 0; v < nv; ++v)
      pot[v] += std::min(dist[v], reach);

    // bottleneck along the S..T path
    double push = kInf;
    for (int v = T; parent[v] >= 0; v = parent[v]) {
      int p = parent[v];
      if (p == S) push = std::min(push, supply(v) - shipped(v));
      else if (v == S) push = std::min(push, shipped(p));
      else if (v == T) push = std::min(push, demand(p - na) - delivered(p - na));
      else if (p < na && v >= na) { /* forward arc, unbounded */ }
      else push = std::min(push, flow(v, p - na));
    }
    if (!(push > 0.0) || !std::isfinite(push))
      fail(ErrorCode::Internal, "wasserstein2", "transport LP: degenerate augmentation");

    for (int v = T; parent[v] >= 0; v = parent[v]) {
      int p = parent[v];
      if (p == S) shipped(v) += push;
      else if (v == S) shipped(p) -= push;
      else if (v == T) delivered(p - na) += push;
      else if (p < na && v >= na) flow(p, v - na) += push;
      else flow(v, p - na) -= push;
    }
    remaining -= push;
  }
  if (remaining > tol)
    fail(ErrorCode::Internal, "wasserstein2", "transport LP: did not drain supply");

  double total = 0.0;
  for (int i = 0; i < na; ++i)
    for (int j = 0; j < nb; ++j)
      if (flow(i, j) > 0.0) total += flow(i, j) * cost(i, j);
  return total;
}

}  // namespace

double wasserstein2_quantile(const WeightedCloud& a, const WeightedCloud& b) {
  if (a.dim() != 1 || b.dim() != 1)
    fail(ErrorCode::InvalidInput, "wasserstein2", "quantile coupling needs dimension 1");
  check_cloud(a, "lhs");
  check_cloud(b, "rhs");

  auto order = [](const WeightedCloud& c) {
    std::vector<int> idx(c.size());
    std::iota(idx.begin(), idx.end(), 0);
    // ties broken by particle index (stable sort on value)
    std::stable_sort(idx.begin(), idx.end(),
                     [&](int i, int j) { return c.points(i, 0) < c.points(j, 0); });
    return idx;
  };
  std::vector<int> ia = order(a), ib = order(b);
  Vec wa = normalized(a.weights), wb = normalized(b.weights);

  double cost = 0.0;
  size_t pa = 0, pb = 0;
  double ra = wa(ia[0]), rb = wb(ib[0]);
  while (pa < ia.size() && pb < ib.size()) {
    double step = std::min(ra, rb);
    double diff = a.points(ia[pa], 0) - b.points(ib[pb], 0);
    cost += step * diff * diff;
    ra -= step;
    rb -= step;
    if (ra <= 1e-15) { ++pa; if (pa < ia.size()) ra = wa(ia[pa]); }
    if (rb <= 1e-15) { ++pb; if (pb < ib.size()) rb = wb(ib[pb]); }
  }
  return std::sqrt(std::max(0.0, cost));
}

double wasserstein2_lp(const WeightedCloud& a, const WeightedCloud& b) {
  if (a.dim() != b.dim())
    fail(ErrorCode::InvalidInput, "wasserstein2", "dimension mismatch");
  check_cloud(a, "lhs");
  check_cloud(b, "rhs");
  Mat cost(a.size(), b.size());
  for (int i = 0; i < a.size(); ++i)
    for (int j = 0; j < b.size(); ++j)
      cost(i, j) = (a.points.row(i) - b.points.row(j)).squaredNorm();
  double total = transport_cost(cost, normalized(a.weights), normalized(b.weights));
  return std::sqrt(std::max(0.0, total));
}

W2Result wasserstein2(const WeightedCloud& a, const WeightedCloud& b,
                      const W2Options& opts) {
  if (a.dim() != b.dim())
    fail(ErrorCode::InvalidInput, "wasserstein2", "dimension mismatch");
  W2Result res;
  if (a.dim() == 1) {
    res.value = wasserstein2_quantile(a, b);
    return res;
  }
  check_cloud(a, "lhs");
  check_cloud(b, "rhs");
  const WeightedCloud* pa = &a;
  const WeightedCloud* pb = &b;
  WeightedCloud sa, sb;
  if (opts.lp_cap > 0 && a.size() > opts.lp_cap) {
    sa = strided_subsample(a, opts.lp_cap);
    pa = &sa;
    res.subsampled = true;
  }
  if (opts.lp_cap > 0 && b.size() > opts.lp_cap) {
    sb = strided_subsample(b, opts.lp_cap);
    pb = &sb;
    res.subsampled = true;
  }
  res.value = wasserstein2_lp(*pa, *pb);
  return res;
}

double wasserstein2(const WeightedCloud& a, const WeightedCloud& b) {
  return wasserstein2(a, b, W2Options{}).value;
}

W2Result wasserstein2_m(const MeasureKernel& a, const MeasureKernel& b,
                        const W2Options& opts) {
  if (!a.atlas.same_as(b.atlas))
    fail(ErrorCode::InvalidInput, "wasserstein2_m", "atlases differ");
  if (a.clouds.size() != b.clouds.size())
    fail(ErrorCode::InvalidInput, "wasserstein2_m", "cloud count mismatch");
  const int M = a.atlas.size();
  std::vector<W2Result> per_type(M);
  parallel_for(M, [&](int u) { per_type[u] = wasserstein2(a.clouds[u], b.clouds[u], opts); });
  W2Result res;
  double acc = 0.0;
  for (int u = 0; u < M; ++u) {
    acc += a.atlas.weights[u] * per_type[u].value * per_type[u].value;
    res.subsampled = res.subsampled || per_type[u].subsampled;
  }
  res.value = std::sqrt(std::max(0.0, acc));
  return res;
}

double wasserstein2_m(const MeasureKernel& a, const MeasureKernel& b) {
  return wasserstein2_m(a, b, W2Options{}).value;
}

}  // namespace hmf

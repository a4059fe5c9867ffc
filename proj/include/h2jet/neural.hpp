#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "h2jet/autodiff.hpp"
#include "h2jet/errors.hpp"
#include "h2jet/rng.hpp"

namespace h2jet {

enum class Backbone { Graph, Dense };

inline const char* to_string(Backbone k) { return k == Backbone::Graph ? "graph" : "dense"; }

inline Backbone backbone_from_string(const std::string& s) {
  if (s == "graph") return Backbone::Graph;
  if (s == "dense") return Backbone::Dense;
  throw parse_error("unknown backbone '" + s + "' (expected 'graph' or 'dense')");
}

// Undirected association graph over sorted centerline positions.
struct Graph {
  std::vector<double> positions;                       // s in metres, strictly increasing
  std::vector<std::vector<std::uint32_t>> adjacency;   // symmetric neighbor lists
  std::vector<std::uint8_t> sensor_mask;               // 1 where a sensor sits

  std::size_t node_count() const { return positions.size(); }
  std::size_t sensor_count() const {
    std::size_t k = 0;
    for (auto m : sensor_mask) k += (m != 0);
    return k;
  }

  void validate() const {
    const std::size_t n = node_count();
    if (adjacency.size() != n || sensor_mask.size() != n)
      throw domain_error("Graph: adjacency/sensor mask size does not match node count");
    for (std::size_t i = 1; i < n; ++i)
      if (!(positions[i] > positions[i - 1]))
        throw domain_error("Graph: positions must be strictly increasing");
    for (std::size_t i = 0; i < n; ++i)
      for (std::uint32_t j : adjacency[i]) {
        if (j >= n) throw domain_error("Graph: neighbor index out of range");
        bool back = false;
        for (std::uint32_t b : adjacency[j]) back |= (b == i);
        if (!back) throw domain_error("Graph: adjacency is not symmetric");
      }
  }
};

// Chain adjacency: node i connects to i±1 … i±k_neighbors, clipped at the ends.
inline Graph build_chain_graph(const std::vector<double>& positions, int k_neighbors = 1) {
  if (positions.size() < 2) throw domain_error("build_chain_graph: need at least 2 nodes");
  if (k_neighbors < 0) throw domain_error("build_chain_graph: k_neighbors must be >= 0");
  const std::size_t n = positions.size();
  for (std::size_t i = 1; i < n; ++i) {
    if (positions[i] == positions[i - 1])
      throw domain_error("build_chain_graph: duplicate position " + std::to_string(positions[i]));
    if (positions[i] < positions[i - 1])
      throw domain_error("build_chain_graph: positions must be sorted ascending");
  }
  Graph g;
  g.positions = positions;
  g.adjacency.assign(n, {});
  g.sensor_mask.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (int d = -k_neighbors; d <= k_neighbors; ++d) {
      if (d == 0) continue;
      const long j = static_cast<long>(i) + d;
      if (j >= 0 && j < static_cast<long>(n))
        g.adjacency[i].push_back(static_cast<std::uint32_t>(j));
    }
  return g;
}

// Per-node inputs: normalized coordinate, normalized observed/interpolated
// centerline density, and a sensor indicator.
struct NodeFeatures {
  std::vector<double> s_hat;        // s / s_end, in [0, 1], monotone
  std::vector<double> rho_hat;      // rho_cl / rho_ref, interpolated between sensors
  std::vector<double> sensor_flag;  // 1.0 at sensor nodes, else 0.0

  void validate(std::size_t n) const {
    if (s_hat.size() != n || rho_hat.size() != n || sensor_flag.size() != n)
      throw domain_error("NodeFeatures: feature arrays do not match node count");
    for (std::size_t i = 0; i < n; ++i) {
      if (!(rho_hat[i] > 0.0 && rho_hat[i] <= 1.05))
        throw domain_error("NodeFeatures: normalized density out of (0, 1.05] at node " +
                           std::to_string(i));
      if (i > 0 && s_hat[i] < s_hat[i - 1])
        throw domain_error("NodeFeatures: normalized coordinate must be monotone");
    }
  }
};

// Flat parameter vector plus the metadata needed to slice it into layers.
struct ModelParams {
  Backbone kind = Backbone::Graph;
  int width = 30;
  int depth = 3;
  std::uint64_t seed = 0;
  bool two_matrix = false;       // separate self/neighbor matrices in the aggregation
  bool coordinate_only = false;  // drop the density/sensor features (ablation)
  std::vector<double> values;

  int feature_count() const {
    if (kind == Backbone::Dense) return 1;
    return coordinate_only ? 1 : 3;
  }

  struct Layout {
    std::size_t input_w = 0, input_b = 0;
    struct Hidden {
      std::size_t w = 0, w2 = 0, b = 0;
    };
    std::vector<Hidden> hidden;
    std::size_t out_w = 0, out_b = 0;
    std::size_t total = 0;
  };

  Layout layout() const {
    if (width < 1 || depth < 1) throw domain_error("ModelParams: width and depth must be >= 1");
    const std::size_t w = static_cast<std::size_t>(width);
    const std::size_t f = static_cast<std::size_t>(feature_count());
    const bool w2 = two_matrix && kind == Backbone::Graph;
    Layout lo;
    std::size_t at = 0;
    lo.input_w = at;
    at += w * f;
    lo.input_b = at;
    at += w;
    lo.hidden.resize(static_cast<std::size_t>(depth));
    for (auto& h : lo.hidden) {
      h.w = at;
      at += w * w;
      if (w2) {
        h.w2 = at;
        at += w * w;
      } else {
        h.w2 = npos;
      }
      h.b = at;
      at += w;
    }
    lo.out_w = at;
    at += 4 * w;
    lo.out_b = at;
    at += 4;
    lo.total = at;
    return lo;
  }

  std::size_t parameter_count() const { return layout().total; }

  void validate() const {
    if (values.size() != layout().total)
      throw domain_error("ModelParams: value vector size " + std::to_string(values.size()) +
                         " does not match layout size " + std::to_string(layout().total));
    for (double v : values)
      if (!std::isfinite(v)) throw domain_error("ModelParams: non-finite parameter");
  }

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
};

// Glorot-uniform weights, zero biases; bit-identical for identical seeds.
inline ModelParams init_params(std::uint64_t seed, int width = 30, int depth = 3,
                               Backbone kind = Backbone::Graph, bool two_matrix = false,
                               bool coordinate_only = false) {
  ModelParams p;
  p.kind = kind;
  p.width = width;
  p.depth = depth;
  p.seed = seed;
  p.two_matrix = two_matrix;
  p.coordinate_only = coordinate_only;
  const auto lo = p.layout();
  p.values.assign(lo.total, 0.0);
  Rng rng(seed);
  auto glorot = [&](std::size_t offset, std::size_t fan_out, std::size_t fan_in) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (std::size_t i = 0; i < fan_out * fan_in; ++i)
      p.values[offset + i] = rng.uniform(-bound, bound);
  };
  const auto w = static_cast<std::size_t>(width);
  glorot(lo.input_w, w, static_cast<std::size_t>(p.feature_count()));
  for (const auto& h : lo.hidden) {
    glorot(h.w, w, w);
    if (h.w2 != ModelParams::npos) glorot(h.w2, w, w);
  }
  glorot(lo.out_w, 4, w);
  return p;
}

// Multipliers applied to the softplus-positive heads so an O(1) pre-activation
// can reach the physical range of each field.
struct OutputScales {
  double u = 1.0;
  double b = 1.0;
  double rho = 1.0;
};

// The positive heads read softplus(pre / head_temperature) * scale.  A
// freshly initialized depth-3 stack produces head pre-activations of order
// +-20; without the temperature those land deep in the softplus tails, where
// a velocity underflows to zero (blowing up the 1/u entrainment term) and
// the vanishing slope strands the head there.  Dividing by the temperature
// maps the initial spread onto the responsive part of the transform.
inline constexpr double head_temperature = 4.0;

// Nondimensional per-node field predictions.
template <class S>
struct Fields {
  std::vector<S> u, b, rho, theta;
};

// Everything the tangent cones need to reuse from the primal pass: hidden
// activations per layer, the softplus slopes at every pre-activation, and the
// slopes at the three positive output heads.
template <class S>
struct ForwardTrace {
  std::vector<std::vector<S>> hidden;  // depth+1 slabs of n*width (input-layer output first)
  std::vector<std::vector<S>> sigp;    // matching softplus slopes (filled when keep_sigp)
  std::vector<S> head_pre;             // n*4 raw output pre-activations
  std::vector<S> head_sigp;            // n*3 slopes at the u, b, rho heads (keep_sigp)
  Fields<S> fields;
};

namespace detail {

inline double k_affine(const double& bias, const double* w, const double* x, std::size_t n) {
  double v = bias;
  for (std::size_t i = 0; i < n; ++i) v += w[i] * x[i];
  return v;
}
inline Var k_affine(const Var& bias, const Var* w, const double* x, std::size_t n) {
  return affine_const(bias, w, x, n, *bias.tape());
}
inline Var k_affine(const Var& bias, const Var* w, const Var* x, std::size_t n) {
  return affine(bias, w, x, n, *bias.tape());
}

inline double k_dot(const double* w, const double* x, std::size_t n) {
  double v = 0.0;
  for (std::size_t i = 0; i < n; ++i) v += w[i] * x[i];
  return v;
}
inline Var k_dot(const Var* w, const Var* x, std::size_t n) {
  return dot(w, x, n, *w[0].tape());
}

inline double k_scale(const double& x, double c) { return x * c; }
inline Var k_scale(const Var& x, double c) { return x * c; }

inline double k_const_like(const double&, double v) { return v; }
inline Var k_const_like(const Var& like, double v) { return like.tape()->constant(v); }

}  // namespace detail

// Shared forward pass for both backbones.  The graph backbone aggregates each
// hidden layer over the node itself plus its neighbors (one shared weight
// matrix, or a separate neighbor matrix when two_matrix is set); the dense
// backbone is the same stack with no neighbor term and the coordinate as its
// only feature.  Softplus keeps the u, b, rho heads strictly positive; the
// theta head is identity, pinned to pi/2 for vertical jets.
template <class S>
inline void forward_model(const ModelParams& meta, const S* p, const Graph& g,
                          const NodeFeatures& feats, const OutputScales& os, bool vertical,
                          bool keep_sigp, ForwardTrace<S>& tr) {
  const std::size_t n = g.node_count();
  const std::size_t width = static_cast<std::size_t>(meta.width);
  const std::size_t depth = static_cast<std::size_t>(meta.depth);
  const std::size_t nf = static_cast<std::size_t>(meta.feature_count());
  const auto lo = meta.layout();
  if (feats.s_hat.size() != n || feats.rho_hat.size() != n || feats.sensor_flag.size() != n)
    throw domain_error("forward_model: feature arrays do not match node count");
  const bool dense = meta.kind == Backbone::Dense;

  tr.hidden.assign(depth + 1, {});
  tr.sigp.assign(keep_sigp ? depth + 1 : 0, {});
  for (auto& h : tr.hidden) h.resize(n * width);
  for (auto& s : tr.sigp) s.resize(n * width);
  tr.head_pre.clear();
  tr.head_pre.reserve(n * 4);
  tr.head_sigp.clear();
  if (keep_sigp) tr.head_sigp.reserve(n * 3);
  tr.fields.u.clear();
  tr.fields.b.clear();
  tr.fields.rho.clear();
  tr.fields.theta.clear();

  double feat_row[3];
  std::vector<S> agg(width);

  // Input layer.
  for (std::size_t i = 0; i < n; ++i) {
    feat_row[0] = feats.s_hat[i];
    if (nf == 3) {
      feat_row[1] = feats.rho_hat[i];
      feat_row[2] = feats.sensor_flag[i];
    }
    for (std::size_t j = 0; j < width; ++j) {
      S pre = detail::k_affine(p[lo.input_b + j], &p[lo.input_w + j * nf], feat_row, nf);
      tr.hidden[0][i * width + j] = softplus(pre);
      if (keep_sigp) tr.sigp[0][i * width + j] = sigmoid(pre);
    }
  }

  // Hidden stack.
  const bool split = lo.hidden[0].w2 != ModelParams::npos;
  std::vector<S> nbv(split ? width : 0);
  for (std::size_t l = 0; l < depth; ++l) {
    const auto& prev = tr.hidden[l];
    auto& cur = tr.hidden[l + 1];
    const auto& hl = lo.hidden[l];
    for (std::size_t i = 0; i < n; ++i) {
      const S* self = &prev[i * width];
      const bool has_nb = !dense && !g.adjacency[i].empty();
      if (!split) {
        if (!has_nb) {
          for (std::size_t j = 0; j < width; ++j) agg[j] = self[j];
        } else {
          for (std::size_t j = 0; j < width; ++j) {
            S acc = self[j];
            for (std::uint32_t nb : g.adjacency[i]) acc = acc + prev[nb * width + j];
            agg[j] = acc;
          }
        }
      } else if (has_nb) {
        for (std::size_t j = 0; j < width; ++j) {
          S acc = prev[g.adjacency[i][0] * width + j];
          for (std::size_t m = 1; m < g.adjacency[i].size(); ++m)
            acc = acc + prev[g.adjacency[i][m] * width + j];
          nbv[j] = acc;
        }
      }
      for (std::size_t j = 0; j < width; ++j) {
        S pre = split ? detail::k_affine(p[hl.b + j], &p[hl.w + j * width], self, width)
                      : detail::k_affine(p[hl.b + j], &p[hl.w + j * width], agg.data(), width);
        if (split && has_nb)
          pre = pre + detail::k_dot(&p[hl.w2 + j * width], nbv.data(), width);
        cur[i * width + j] = softplus(pre);
        if (keep_sigp) tr.sigp[l + 1][i * width + j] = sigmoid(pre);
      }
    }
  }

  // Output heads.
  const auto& last = tr.hidden[depth];
  for (std::size_t i = 0; i < n; ++i) {
    S pre[4];
    for (std::size_t h = 0; h < 4; ++h)
      pre[h] = detail::k_affine(p[lo.out_b + h], &p[lo.out_w + h * width], &last[i * width], width);
    for (std::size_t h = 0; h < 4; ++h) tr.head_pre.push_back(pre[h]);
    constexpr double inv_t = 1.0 / head_temperature;
    if (keep_sigp)
      for (std::size_t h = 0; h < 3; ++h)
        tr.head_sigp.push_back(sigmoid(detail::k_scale(pre[h], inv_t)));
    tr.fields.u.push_back(detail::k_scale(softplus(detail::k_scale(pre[0], inv_t)), os.u));
    tr.fields.b.push_back(detail::k_scale(softplus(detail::k_scale(pre[1], inv_t)), os.b));
    tr.fields.rho.push_back(detail::k_scale(softplus(detail::k_scale(pre[2], inv_t)), os.rho));
    tr.fields.theta.push_back(vertical ? detail::k_const_like(pre[3], 1.5707963267948966)
                                       : pre[3]);
  }
}

inline Fields<double> forward_gnn(const ModelParams& meta, const Graph& g,
                                  const NodeFeatures& feats, const OutputScales& os,
                                  bool vertical) {
  if (meta.kind != Backbone::Graph)
    throw domain_error("forward_gnn: parameters belong to the dense backbone");
  meta.validate();
  feats.validate(g.node_count());
  ForwardTrace<double> tr;
  forward_model(meta, meta.values.data(), g, feats, os, vertical, false, tr);
  return std::move(tr.fields);
}

inline Fields<double> forward_dense(const ModelParams& meta, const Graph& g,
                                    const NodeFeatures& feats, const OutputScales& os,
                                    bool vertical) {
  if (meta.kind != Backbone::Dense)
    throw domain_error("forward_dense: parameters belong to the graph backbone");
  meta.validate();
  feats.validate(g.node_count());
  ForwardTrace<double> tr;
  forward_model(meta, meta.values.data(), g, feats, os, vertical, false, tr);
  return std::move(tr.fields);
}

// d(nondimensional fields at node i) / d(s_hat_i), with every other node's
// inputs held fixed.
struct CoordinateDerivs {
  std::vector<Var> du, db, drho, dtheta;

  struct NodeDerivs {
    Var du, db, drho, dtheta;
  };
  NodeDerivs at(std::size_t i) const {
    if (i >= du.size()) throw domain_error("CoordinateDerivs: node index out of range");
    return {du[i], db[i], drho[i], dtheta[i]};
  }
};

// Exact forward-mode tangents, one cone per node.  Seeding node q's
// coordinate with tangent 1 makes the tangent field zero outside q's
// receptive cone, so each layer only propagates the window of nodes that can
// still influence the output at q; the softplus slopes recorded by the primal
// pass are reused, and all tangent arithmetic happens on the tape so that
// parameter gradients flow through these derivatives.
inline CoordinateDerivs coordinate_derivatives(const ModelParams& meta, const Var* p,
                                               const Graph& g, const ForwardTrace<Var>& tr,
                                               const OutputScales& os, bool vertical,
                                               int k_neighbors, Tape& tape) {
  const std::size_t n = g.node_count();
  const std::size_t width = static_cast<std::size_t>(meta.width);
  const int depth = meta.depth;
  const auto lo = meta.layout();
  const std::size_t nf = static_cast<std::size_t>(meta.feature_count());
  const bool dense = meta.kind == Backbone::Dense;
  const int k = dense ? 0 : k_neighbors;
  if (tr.sigp.empty() || tr.head_sigp.empty())
    throw domain_error("coordinate_derivatives: forward trace was built without slopes");

  CoordinateDerivs out;
  out.du.reserve(n);
  out.db.reserve(n);
  out.drho.reserve(n);
  out.dtheta.reserve(n);
  const Var zero = tape.constant(0.0);

  // A layer can spread the tangent one neighborhood outward, but anything
  // farther from the seed than it can travel back by the last layer never
  // reaches the output, so the live window radius is k*floor(depth/2).
  const int radius = k * (depth / 2);
  const std::size_t slots = static_cast<std::size_t>(2 * radius + 1);
  std::vector<Var> prev(slots * width), cur(slots * width);
  std::vector<char> prev_ok(slots), cur_ok(slots);
  std::vector<std::size_t> contrib;
  std::vector<Var> terms;
  std::vector<Var> aggt(width);

  for (std::size_t q = 0; q < n; ++q) {
    // Layer 0: only node q carries a tangent; d(pre_j)/d(s_hat) is the
    // coordinate column of the input weight matrix itself.
    std::fill(prev_ok.begin(), prev_ok.end(), 0);
    const std::size_t center = static_cast<std::size_t>(radius);
    for (std::size_t j = 0; j < width; ++j)
      prev[center * width + j] = tr.sigp[0][q * width + j] * p[lo.input_w + j * nf + 0];
    prev_ok[center] = 1;

    for (int l = 1; l <= depth; ++l) {
      const int bound = k * std::min(l, depth - l);
      std::fill(cur_ok.begin(), cur_ok.end(), 0);
      const auto& hl = lo.hidden[static_cast<std::size_t>(l - 1)];
      const auto& slope = tr.sigp[static_cast<std::size_t>(l)];
      for (int off = -bound; off <= bound; ++off) {
        const long node = static_cast<long>(q) + off;
        if (node < 0 || node >= static_cast<long>(n)) continue;
        const std::size_t slot = static_cast<std::size_t>(off + radius);
        const bool self_ok = prev_ok[slot] != 0;

        // Which window slots feed this node (same set for every hidden unit).
        contrib.clear();
        for (std::uint32_t nb : g.adjacency[static_cast<std::size_t>(node)]) {
          const long noff = static_cast<long>(nb) - static_cast<long>(q);
          if (noff < -radius || noff > radius) continue;
          const std::size_t nslot = static_cast<std::size_t>(noff + radius);
          if (prev_ok[nslot]) contrib.push_back(nslot);
        }
        if (!self_ok && contrib.empty()) continue;

        if (hl.w2 == ModelParams::npos) {
          // shared matrix: aggregate self + neighbor tangents, then one dot
          for (std::size_t j = 0; j < width; ++j) {
            terms.clear();
            if (self_ok) terms.push_back(prev[slot * width + j]);
            for (std::size_t nslot : contrib) terms.push_back(prev[nslot * width + j]);
            aggt[j] = terms.size() == 1 ? terms[0] : sum(terms.data(), terms.size(), tape);
          }
          for (std::size_t j = 0; j < width; ++j)
            cur[slot * width + j] =
                slope[static_cast<std::size_t>(node) * width + j] *
                dot(&p[hl.w + j * width], aggt.data(), width, tape);
        } else {
          // two-matrix variant: self tangent through w, neighbor tangents through w2
          if (!contrib.empty())
            for (std::size_t j = 0; j < width; ++j) {
              terms.clear();
              for (std::size_t nslot : contrib) terms.push_back(prev[nslot * width + j]);
              aggt[j] = terms.size() == 1 ? terms[0] : sum(terms.data(), terms.size(), tape);
            }
          for (std::size_t j = 0; j < width; ++j) {
            Var pre_t;
            if (self_ok) {
              pre_t = dot(&p[hl.w + j * width], &prev[slot * width], width, tape);
              if (!contrib.empty())
                pre_t = pre_t + dot(&p[hl.w2 + j * width], aggt.data(), width, tape);
            } else {
              pre_t = dot(&p[hl.w2 + j * width], aggt.data(), width, tape);
            }
            cur[slot * width + j] = slope[static_cast<std::size_t>(node) * width + j] * pre_t;
          }
        }
        cur_ok[slot] = 1;
      }
      std::swap(prev, cur);
      std::swap(prev_ok, cur_ok);
    }

    if (!prev_ok[center])
      throw domain_error("coordinate_derivatives: tangent cone lost its seed node");
    Var raw[4];
    for (std::size_t h = 0; h < 4; ++h)
      raw[h] = dot(&p[lo.out_w + h * width], &prev[center * width], width, tape);
    out.du.push_back(tr.head_sigp[q * 3 + 0] * raw[0] * (os.u / head_temperature));
    out.db.push_back(tr.head_sigp[q * 3 + 1] * raw[1] * (os.b / head_temperature));
    out.drho.push_back(tr.head_sigp[q * 3 + 2] * raw[2] * (os.rho / head_temperature));
    out.dtheta.push_back(vertical ? zero : raw[3]);
  }
  return out;
}

// --- checkpoint serialization ------------------------------------------------

namespace detail {

inline std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> layer_slices(
    const ModelParams& p) {
  const auto lo = p.layout();
  const auto w = static_cast<std::size_t>(p.width);
  const auto f = static_cast<std::size_t>(p.feature_count());
  std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> out;
  out.push_back({"input.weight", {lo.input_w, w * f}});
  out.push_back({"input.bias", {lo.input_b, w}});
  for (std::size_t l = 0; l < lo.hidden.size(); ++l) {
    const std::string base = "hidden" + std::to_string(l + 1);
    out.push_back({base + ".weight", {lo.hidden[l].w, w * w}});
    if (lo.hidden[l].w2 != ModelParams::npos)
      out.push_back({base + ".weight2", {lo.hidden[l].w2, w * w}});
    out.push_back({base + ".bias", {lo.hidden[l].b, w}});
  }
  out.push_back({"output.weight", {lo.out_w, 4 * w}});
  out.push_back({"output.bias", {lo.out_b, 4}});
  return out;
}

}  // namespace detail

inline void save_checkpoint(const ModelParams& p, const std::string& path) {
  p.validate();
  nlohmann::ordered_json j;
  j["format"] = "h2jet-checkpoint-1";
  j["kind"] = to_string(p.kind);
  j["width"] = p.width;
  j["depth"] = p.depth;
  j["seed"] = p.seed;
  j["two_matrix"] = p.two_matrix;
  j["coordinate_only"] = p.coordinate_only;
  nlohmann::ordered_json layers;
  for (const auto& [name, slice] : detail::layer_slices(p)) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < slice.second; ++i) arr.push_back(p.values[slice.first + i]);
    layers[name] = std::move(arr);
  }
  j["layers"] = std::move(layers);
  std::ofstream out(path);
  if (!out) throw parse_error("save_checkpoint: cannot open '" + path + "' for writing");
  out << j.dump(2) << '\n';
}

inline ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw parse_error("load_checkpoint: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw parse_error("load_checkpoint: invalid JSON in '" + path + "': " + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != "h2jet-checkpoint-1")
      throw parse_error("load_checkpoint: unsupported format tag");
    ModelParams p;
    p.kind = backbone_from_string(j.at("kind").get<std::string>());
    p.width = j.at("width").get<int>();
    p.depth = j.at("depth").get<int>();
    p.seed = j.at("seed").get<std::uint64_t>();
    p.two_matrix = j.at("two_matrix").get<bool>();
    p.coordinate_only = j.at("coordinate_only").get<bool>();
    p.values.assign(p.layout().total, 0.0);
    const auto& layers = j.at("layers");
    for (const auto& [name, slice] : detail::layer_slices(p)) {
      const auto& arr = layers.at(name);
      if (!arr.is_array() || arr.size() != slice.second)
        throw parse_error("load_checkpoint: layer '" + name + "' has wrong size");
      for (std::size_t i = 0; i < slice.second; ++i)
        p.values[slice.first + i] = arr[i].get<double>();
    }
    p.validate();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw parse_error("load_checkpoint: missing or malformed field in '" + path + "': " +
                      e.what());
  }
}

}  // namespace h2jet

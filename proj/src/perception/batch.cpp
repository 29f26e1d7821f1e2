#include "wmmoe/perception/batch.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "wmmoe/scenes/geometry.hpp"

namespace wmmoe::perception {

using scenes::AgentTrack;
using scenes::Scene;

namespace {

void write_agent(const AgentTrack& t, Index frames, double* out) {
  for (Index f = 0; f < frames; ++f) {
    double* row = out + f * kAgentFeatures;
    if (!t.observed(static_cast<int>(f))) continue;
    const auto& s = t.states[static_cast<std::size_t>(f)];
    for (int j = 0; j < 4; ++j) row[j] = s[static_cast<std::size_t>(j)] / kPositionScale;
    row[4] = s[scenes::kAx];
    row[5] = s[scenes::kAy];
    row[6] = s[scenes::kYaw];
    row[7] = 1.0;
  }
}

// Neighbors kept for the model, nearest (by latest observed position) first
// when over the cap, otherwise all; returned in scene order.
std::vector<std::size_t> kept_neighbors(const Scene& s, int cap) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < s.neighbors.size(); ++i)
    if (s.neighbors[i].observed_count() > 0) idx.push_back(i);
  if (static_cast<int>(idx.size()) <= cap) return idx;
  auto dist = [&s](std::size_t i) {
    const auto& t = s.neighbors[i];
    const auto& st = t.states[static_cast<std::size_t>(scenes::latest_observed(t))];
    return std::hypot(st[scenes::kX], st[scenes::kY]);
  };
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return dist(a) < dist(b); });
  idx.resize(static_cast<std::size_t>(cap));
  std::sort(idx.begin(), idx.end());
  return idx;
}

Index lane_node_count(const Scene& s, int cap) {
  Index n = 0;
  for (const auto& l : s.lanes) n += static_cast<Index>(l.points.size());
  return std::min<Index>(n, cap);
}

}  // namespace

SceneBatch make_batch(const std::vector<const Scene*>& input, const BatchConfig& config) {
  const auto& sc = config.scene;
  std::vector<Scene> scenes;
  scenes.reserve(input.size());
  for (const Scene* s : input) {
    Scene r = scenes::to_reference_frame(*s, sc.bev);
    if (!r.bev) r.bev = scenes::rasterize_bev(r, sc.bev);
    const auto& b = *r.bev;
    if (b.channels != sc.bev.channels || b.height != sc.bev.height || b.width != sc.bev.width) {
      throw nd::DimensionError("scene " + s->scene_id + ": raster " + std::to_string(b.channels) + "x" +
                               std::to_string(b.height) + "x" + std::to_string(b.width) + " does not match config");
    }
    if (r.target.frames() != sc.history_frames || static_cast<int>(r.future.size()) != sc.future_steps) {
      throw nd::DimensionError("scene " + s->scene_id + ": history/future length does not match config");
    }
    scenes.push_back(std::move(r));
  }

  SceneBatch b;
  b.B = static_cast<Index>(scenes.size());
  b.T = sc.history_frames;
  b.F = sc.future_steps;
  std::vector<std::vector<std::size_t>> kept;
  b.N = 1;
  b.M = 1;
  for (const auto& s : scenes) {
    kept.push_back(kept_neighbors(s, config.max_neighbors));
    b.N = std::max<Index>(b.N, static_cast<Index>(kept.back().size()));
    b.M = std::max(b.M, lane_node_count(s, config.max_lane_nodes));
  }
  const Index B = b.B, T = b.T, N = b.N, M = b.M, F = b.F;
  const Index H = sc.bev.height, W = sc.bev.width, C = sc.bev.channels;

  std::vector<double> target(static_cast<std::size_t>(B * T * kAgentFeatures), 0.0);
  std::vector<double> nb(static_cast<std::size_t>(B * N * T * kAgentFeatures), 0.0);
  std::vector<double> nb_steps(static_cast<std::size_t>(B * N * T), 0.0);
  std::vector<double> nb_mask(static_cast<std::size_t>(B * N), 0.0);
  std::vector<double> lanes(static_cast<std::size_t>(B * M * kLaneFeatures), 0.0);
  std::vector<double> lane_mask(static_cast<std::size_t>(B * M), 0.0);
  std::vector<double> adj(static_cast<std::size_t>(B * M * M), 0.0);
  std::vector<double> bev(static_cast<std::size_t>(B * H * W * C), 0.0);
  std::vector<double> future(static_cast<std::size_t>(B * F * 2), 0.0);

  for (Index i = 0; i < B; ++i) {
    const Scene& s = scenes[static_cast<std::size_t>(i)];
    b.ids.push_back(s.scene_id);
    b.labels.push_back(s.label.value_or(""));
    write_agent(s.target, T, target.data() + i * T * kAgentFeatures);

    const auto& ks = kept[static_cast<std::size_t>(i)];
    for (std::size_t j = 0; j < ks.size(); ++j) {
      const auto& t = s.neighbors[ks[j]];
      const Index slot = i * N + static_cast<Index>(j);
      write_agent(t, T, nb.data() + slot * T * kAgentFeatures);
      for (Index f = 0; f < T; ++f) nb_steps[static_cast<std::size_t>(slot * T + f)] = t.observed(static_cast<int>(f));
      nb_mask[static_cast<std::size_t>(slot)] = 1.0;
    }

    Index node = 0;
    for (const auto& lane : s.lanes) {
      const auto& p = lane.points;
      const Index first = node;
      for (std::size_t k = 0; k < p.size() && node < M; ++k, ++node) {
        double dx = 0, dy = 0;
        if (k + 1 < p.size()) {
          dx = p[k + 1][0] - p[k][0];
          dy = p[k + 1][1] - p[k][1];
        } else if (k > 0) {
          dx = p[k][0] - p[k - 1][0];
          dy = p[k][1] - p[k - 1][1];
        }
        double* row = lanes.data() + (i * M + node) * kLaneFeatures;
        row[0] = p[k][0] / kPositionScale;
        row[1] = p[k][1] / kPositionScale;
        row[2] = dx / kPositionScale;
        row[3] = dy / kPositionScale;
        lane_mask[static_cast<std::size_t>(i * M + node)] = 1.0;
        double* a = adj.data() + (i * M + node) * M;
        a[node] = 1.0;
        if (node > first) {
          a[node - 1] = 1.0;
          adj[static_cast<std::size_t>((i * M + node - 1) * M + node)] = 1.0;
        }
      }
      if (node >= M) break;
    }

    const auto& r = *s.bev;
    for (Index c = 0; c < C; ++c)
      for (Index y = 0; y < H; ++y)
        for (Index x = 0; x < W; ++x)
          bev[static_cast<std::size_t>(((i * H + y) * W + x) * C + c)] =
              r.at(static_cast<int>(c), static_cast<int>(y), static_cast<int>(x));

    for (Index f = 0; f < F; ++f) {
      future[static_cast<std::size_t>((i * F + f) * 2)] = s.future[static_cast<std::size_t>(f)][0];
      future[static_cast<std::size_t>((i * F + f) * 2 + 1)] = s.future[static_cast<std::size_t>(f)][1];
    }
  }

  b.target = Array<double>({B, T, kAgentFeatures}, std::move(target));
  b.neighbors = Array<double>({B, N, T, kAgentFeatures}, std::move(nb));
  b.neighbor_steps = Array<double>({B, N, T}, std::move(nb_steps));
  b.neighbor_mask = Array<double>({B, N}, std::move(nb_mask));
  b.lane_nodes = Array<double>({B, M, kLaneFeatures}, std::move(lanes));
  b.lane_mask = Array<double>({B, M}, std::move(lane_mask));
  b.lane_adj = Array<double>({B, M, M}, std::move(adj));
  b.bev = Array<double>({B, H, W, C}, std::move(bev));
  b.future = Array<double>({B, F, 2}, std::move(future));
  return b;
}

SceneBatch make_batch(const std::vector<Scene>& scenes, const BatchConfig& config) {
  std::vector<const Scene*> ptrs;
  for (const auto& s : scenes) ptrs.push_back(&s);
  return make_batch(ptrs, config);
}

}  // namespace wmmoe::perception

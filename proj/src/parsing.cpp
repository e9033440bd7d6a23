#include "stnerf/parsing.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "stnerf/log.hpp"

namespace stnerf {

Box2D Box2D::recentered(const Vec2& c) const {
  const Vec2 half(0.5 * (max_x - min_x), 0.5 * (max_y - min_y));
  return {c.x() - half.x(), c.y() - half.y(), c.x() + half.x(), c.y() + half.y()};
}

std::optional<Vec2> ConstantVelocityPredictor::predict(const Tracklet2D&, const Tracklet2D& query, int frame) const {
  int last = -1;
  int before = -1;
  for (int t = std::min(frame, query.num_frames()) - 1; t >= 0; --t) {
    if (!query.boxes[t]) continue;
    if (last < 0) {
      last = t;
    } else {
      before = t;
      break;
    }
  }
  if (last < 0) return std::nullopt;
  const Vec2 c1 = query.boxes[last]->center();
  if (before < 0) return c1;
  const Vec2 c0 = query.boxes[before]->center();
  return c1 + (c1 - c0) * (static_cast<double>(frame - last) / (last - before));
}

std::optional<Vec2> GroundTruthPredictor::predict(const Tracklet2D&, const Tracklet2D& query, int frame) const {
  for (const auto& tr : truth_) {
    if (tr.camera_id != query.camera_id || tr.entity_id != query.entity_id) continue;
    if (frame < 0 || frame >= tr.num_frames() || !tr.boxes[frame]) return std::nullopt;
    return tr.boxes[frame]->center();
  }
  return std::nullopt;
}

Vec2 fuse_tracking(const Vec2& center, double confidence, const Tracklet2D& query, int frame,
                   std::span<const FusionPeer> peers, const TrajectoryPredictor& predictor, double tau) {
  if (!(confidence >= 0.0 && confidence <= 1.0)) throw InvalidInput("fuse_tracking: confidence outside [0, 1]");
  if (confidence == 1.0) return center;
  double w = 0.0;
  Vec2 sum = Vec2::Zero();
  for (const auto& peer : peers) {
    if (!(peer.confidence >= 0.0 && peer.confidence <= 1.0)) {
      throw InvalidInput("fuse_tracking: peer confidence outside [0, 1]");
    }
    if (peer.confidence < tau || peer.confidence == 0.0) continue;
    const auto p = predictor.predict(*peer.tracklet, query, frame);
    if (!p || !p->allFinite()) continue;
    w += peer.confidence;
    sum += peer.confidence * *p;
  }
  if (w == 0.0) {
    throw FusionImpossible("fuse_tracking: no peer reaches the confidence threshold for camera " +
                           std::to_string(query.camera_id) + " frame " + std::to_string(frame));
  }
  return confidence * center + ((1.0 - confidence) / w) * sum;
}

namespace {

float depth_under(const DepthMap& depth, const LabelMap& mask, int x, int y) {
  const int dx = std::min(depth.width - 1, static_cast<int>((x + 0.5) * depth.width / mask.width));
  const int dy = std::min(depth.height - 1, static_cast<int>((y + 0.5) * depth.height / mask.height));
  return depth.at(dx, dy);
}

}  // namespace

std::optional<double> median_mask_depth(const LabelMap& mask, const DepthMap& depth) {
  std::vector<double> values;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) {
      if (mask.at(x, y) == 0) continue;
      const float d = depth_under(depth, mask, x, y);
      if (d > 0.0f) values.push_back(d);
    }
  if (values.empty()) return std::nullopt;
  const auto mid = values.begin() + static_cast<std::ptrdiff_t>(values.size() / 2);
  std::nth_element(values.begin(), mid, values.end());
  return *mid;
}

RefinedMask refine_mask(const LabelMap& mask, const DepthMap& depth, double prev_mean_depth, double deviation) {
  if (depth.width < 1 || depth.height < 1) throw InvalidInput("refine_mask: empty depth map");
  RefinedMask out;
  out.mask = LabelMap(mask.width, mask.height);
  double sum = 0.0;
  std::size_t kept = 0;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) {
      if (mask.at(x, y) == 0) continue;
      const float d = depth_under(depth, mask, x, y);
      if (d > 0.0f && std::abs(d - prev_mean_depth) <= deviation) {
        out.mask.labels[static_cast<std::size_t>(y) * mask.width + x] = 1;
        sum += d;
        ++kept;
      }
    }
  if (kept == 0) {
    warn("refine_mask: every pixel discarded; carrying the previous mean depth forward");
    out.mean_depth = prev_mean_depth;
    out.empty = true;
    return out;
  }
  out.mean_depth = sum / static_cast<double>(kept);
  return out;
}

VoxelGrid::VoxelGrid(const Aabb& b, std::array<int, 3> res) : bounds(b), resolution(res) {
  for (int r : res)
    if (r < 1) throw InvalidInput("VoxelGrid: resolution must be at least 1 per axis");
  if (!b.valid()) throw InvalidInput("VoxelGrid: invalid bounds");
  occupied.assign(static_cast<std::size_t>(res[0]) * res[1] * res[2], 0);
}

Vec3 VoxelGrid::center(int i, int j, int k) const {
  const Vec3 size = voxel_size();
  return bounds.min + Vec3((i + 0.5) * size.x(), (j + 0.5) * size.y(), (k + 0.5) * size.z());
}

std::size_t VoxelGrid::count() const {
  return static_cast<std::size_t>(std::count_if(occupied.begin(), occupied.end(), [](auto v) { return v != 0; }));
}

CarveResult space_carve(std::span<const LabelMap> silhouettes, std::span<const CameraModel> cameras,
                        const VoxelGrid& grid, const std::string& context, const CarveOptions& options) {
  const auto& occluders = options.occluders;
  if (cameras.size() < 2) throw InvalidInput(context + ": space carving needs at least two cameras");
  if (silhouettes.size() != cameras.size()) throw InvalidInput(context + ": one silhouette per camera required");
  for (std::size_t c = 0; c < cameras.size(); ++c) {
    if (silhouettes[c].width != cameras[c].width || silhouettes[c].height != cameras[c].height) {
      throw InvalidInput(context + ": silhouette size does not match camera " + std::to_string(cameras[c].id));
    }
  }
  if (!occluders.empty() && occluders.size() != cameras.size()) {
    throw InvalidInput(context + ": one occluder map per camera required");
  }
  const double slack = grid.voxel_size().maxCoeff();
  CarveResult out;
  out.grid = grid;
  out.grid.occupied.assign(grid.occupied.size(), 0);
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  const auto& res = grid.resolution;
  for (int k = 0; k < res[2]; ++k)
    for (int j = 0; j < res[1]; ++j)
      for (int i = 0; i < res[0]; ++i) {
        const Vec3 p = grid.center(i, j, k);
        int seen = 0;
        int support = 0;
        bool keep = true;
        for (std::size_t c = 0; c < cameras.size() && keep; ++c) {
          const auto px = cameras[c].project(p);
          if (!px) continue;
          const double fx = std::floor(px->x() + 0.5);
          const double fy = std::floor(px->y() + 0.5);
          if (fx < 0 || fy < 0 || fx >= cameras[c].width || fy >= cameras[c].height) continue;
          ++seen;
          const int ix = static_cast<int>(fx);
          const int iy = static_cast<int>(fy);
          if (silhouettes[c].at(ix, iy) != 0) {
            ++support;
            continue;
          }
          if (!occluders.empty()) {
            const float z = occluders[c].at(ix, iy);
            if (z > 0.0f && z < cameras[c].z_depth(p) - slack) continue;
          }
          keep = false;
        }
        if (seen < std::max(1, options.min_views) || !keep) continue;
        if (!occluders.empty() && support < options.min_support_fraction * seen) continue;
        out.grid.occupied[grid.index(i, j, k)] = 1;
        ++out.kept;
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
      }
  if (out.kept == 0) throw EmptyHull(context + ": no voxel survives carving");
  const Vec3 size = grid.voxel_size();
  out.box = Aabb{(lo - size).cwiseMax(grid.bounds.min), (hi + size).cwiseMin(grid.bounds.max)};
  return out;
}

std::optional<Box2D> mask_box(const LabelMap& mask) {
  int x0 = mask.width, y0 = mask.height, x1 = -1, y1 = -1;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) {
      if (mask.at(x, y) == 0) continue;
      x0 = std::min(x0, x);
      y0 = std::min(y0, y);
      x1 = std::max(x1, x);
      y1 = std::max(y1, y);
    }
  if (x1 < 0) return std::nullopt;
  return Box2D{static_cast<double>(x0), static_cast<double>(y0), static_cast<double>(x1), static_cast<double>(y1)};
}

ParseResult parse_scene(const Dataset& dataset, const TrajectoryPredictor& predictor, const ParseConfig& config,
                        const ParseInputs& inputs) {
  dataset.validate();
  const int nc = static_cast<int>(dataset.cameras.size());
  const int nt = dataset.num_frames;
  const int ne = dataset.num_entities();
  if (dataset.labels.empty() && !inputs.raw_mask) throw InvalidInput("parse_scene: dataset has no label maps");
  const bool have_depth = !dataset.depth.empty();
  if (config.refine_masks && !have_depth) warn("parse_scene: no depth maps; masks are used unrefined");

  auto raw_mask = [&](int c, int t, int e) {
    if (inputs.raw_mask) return inputs.raw_mask(c, t, e);
    const auto& lm = dataset.labels[c][t];
    LabelMap m(lm.width, lm.height);
    for (std::size_t i = 0; i < lm.labels.size(); ++i) m.labels[i] = lm.labels[i] == e ? 1 : 0;
    return m;
  };

  ParseResult result;
  result.tracklets.resize(ne);
  // refined[e][c][t]
  std::vector<std::vector<std::vector<LabelMap>>> refined(ne);
  std::vector<std::vector<std::vector<double>>> mean_depth(ne);

  for (int ei = 0; ei < ne; ++ei) {
    const int e = dataset.entity_ids[ei];
    std::vector<std::vector<LabelMap>> masks(nc);
    auto& tracks = result.tracklets[ei];
    tracks.resize(nc);
    for (int c = 0; c < nc; ++c) {
      tracks[c].camera_id = dataset.cameras[c].id;
      tracks[c].entity_id = e;
      for (int t = 0; t < nt; ++t) {
        masks[c].push_back(raw_mask(c, t, e));
        const auto box = mask_box(masks[c].back());
        tracks[c].boxes.push_back(box);
        const double q = inputs.confidence ? inputs.confidence(c, t, e) : (box ? 1.0 : 0.0);
        tracks[c].confidence.push_back(q);
      }
    }

    // Tracking fusion: low-confidence boxes are re-centered on the fused
    // prediction and the mask is clipped to the moved box.
    const auto raw_tracks = tracks;
    for (int c = 0; c < nc; ++c)
      for (int t = 0; t < nt; ++t) {
        const double q = raw_tracks[c].confidence[t];
        if (q >= 1.0 || !raw_tracks[c].boxes[t]) continue;
        std::vector<FusionPeer> peers;
        for (int o = 0; o < nc; ++o)
          if (o != c) peers.push_back({&raw_tracks[o], raw_tracks[o].confidence[t]});
        try {
          const Vec2 g = fuse_tracking(raw_tracks[c].boxes[t]->center(), q, raw_tracks[c], t, peers, predictor,
                                       config.tau);
          const Box2D moved = raw_tracks[c].boxes[t]->recentered(g);
          tracks[c].boxes[t] = moved;
          auto& m = masks[c][t];
          for (int y = 0; y < m.height; ++y)
            for (int x = 0; x < m.width; ++x)
              if (x < moved.min_x - 1 || x > moved.max_x + 1 || y < moved.min_y - 1 || y > moved.max_y + 1) {
                m.labels[static_cast<std::size_t>(y) * m.width + x] = 0;
              }
        } catch (const FusionImpossible& err) {
          result.flagged.push_back("entity " + std::to_string(e) + ": " + err.what());
        }
      }

    refined[ei].resize(nc);
    mean_depth[ei].assign(nc, std::vector<double>(nt, std::numeric_limits<double>::infinity()));
    for (int c = 0; c < nc; ++c) {
      std::optional<double> prev;
      for (int t = 0; t < nt; ++t) {
        const auto& m = masks[c][t];
        if (!config.refine_masks || !have_depth) {
          refined[ei][c].push_back(m);
          continue;
        }
        const auto& depth = dataset.depth[c][t];
        if (!prev) prev = median_mask_depth(m, depth);
        if (!prev) {
          refined[ei][c].push_back(m);
          continue;
        }
        auto r = refine_mask(m, depth, *prev, config.deviation);
        prev = r.mean_depth;
        mean_depth[ei][c][t] = r.mean_depth;
        refined[ei][c].push_back(std::move(r.mask));
      }
    }
  }

  // Refined label maps: overlapping claims go to the nearer entity.
  result.labels.assign(nc, std::vector<LabelMap>(nt));
  for (int c = 0; c < nc; ++c)
    for (int t = 0; t < nt; ++t) {
      const auto& cam = dataset.cameras[c];
      LabelMap lm(cam.width, cam.height);
      std::vector<double> owner_depth(lm.labels.size(), std::numeric_limits<double>::infinity());
      for (int ei = 0; ei < ne; ++ei) {
        const auto& m = refined[ei][c][t];
        for (std::size_t i = 0; i < m.labels.size(); ++i) {
          if (m.labels[i] == 0) continue;
          if (lm.labels[i] == 0 || mean_depth[ei][c][t] < owner_depth[i]) {
            lm.labels[i] = static_cast<std::uint8_t>(dataset.entity_ids[ei]);
            owner_depth[i] = mean_depth[ei][c][t];
          }
        }
      }
      result.labels[c][t] = std::move(lm);
    }

  const int r = config.grid_resolution;
  // Margin so hulls touching the scene bounds are not clipped.
  const VoxelGrid scene_grid(dataset.scene_bounds.dilated(0.05 * dataset.scene_bounds.extent().maxCoeff()), {r, r, r});
  const int min_views = static_cast<int>(std::ceil(config.min_view_fraction * nc));

  // Background: one static box around every observed surface point.
  BoundingBoxTrack background;
  background.entity_id = 0;
  Aabb bg = dataset.scene_bounds;
  if (have_depth) {
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = -lo;
    for (int c = 0; c < nc; ++c) {
      const auto& cam = dataset.cameras[c];
      for (int t = 0; t < nt; ++t) {
        const auto& dm = dataset.depth[c][t];
        const auto small = cam.resized(dm.width, dm.height);
        for (int y = 0; y < dm.height; ++y)
          for (int x = 0; x < dm.width; ++x) {
            const float z = dm.at(x, y);
            if (z <= 0.0f) continue;
            const Vec3 dir = small.direction_for(x, y);
            const Vec3 p = small.position + dir * (z / dir.dot(small.rotation.col(2)));
            lo = lo.cwiseMin(p);
            hi = hi.cwiseMax(p);
          }
      }
    }
    if ((lo.array() <= hi.array()).all()) bg = Aabb{lo, hi}.dilated(scene_grid.voxel_size().maxCoeff());
  }
  background.boxes.assign(nt, bg);
  result.boxes.push_back(std::move(background));

  // Carving: pixels of other entities that lie in front of a voxel may hide
  // this entity, so they do not carve it.
  for (int ei = 0; ei < ne; ++ei) {
    BoundingBoxTrack track;
    track.entity_id = dataset.entity_ids[ei];
    for (int t = 0; t < nt; ++t) {
      std::vector<LabelMap> sil;
      std::vector<DepthMap> occ;
      for (int c = 0; c < nc; ++c) {
        sil.push_back(refined[ei][c][t]);
        if (!have_depth) continue;
        const auto& cam = dataset.cameras[c];
        DepthMap o(cam.width, cam.height);
        for (int other = 0; other < ne; ++other) {
          if (other == ei) continue;
          const auto& m = refined[other][c][t];
          for (int y = 0; y < m.height; ++y)
            for (int x = 0; x < m.width; ++x)
              if (m.at(x, y) != 0) {
                o.depth[static_cast<std::size_t>(y) * m.width + x] = depth_under(dataset.depth[c][t], m, x, y);
              }
        }
        occ.push_back(std::move(o));
      }
      const std::string ctx = "entity " + std::to_string(track.entity_id) + " frame " + std::to_string(t);
      track.boxes.push_back(space_carve(sil, dataset.cameras, scene_grid, ctx, CarveOptions{occ, min_views}).box);
    }
    result.boxes.push_back(std::move(track));
  }
  return result;
}

}  // namespace stnerf

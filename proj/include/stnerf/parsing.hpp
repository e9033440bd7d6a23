#pragma once

#include <array>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "stnerf/camera.hpp"
#include "stnerf/dataset.hpp"
#include "stnerf/error.hpp"

namespace stnerf {

using Vec2 = Eigen::Vector2d;

// Pixel-space box, inclusive pixel-center bounds.
struct Box2D {
  double min_x = 0.0;
  double min_y = 0.0;
  double max_x = 0.0;
  double max_y = 0.0;

  Vec2 center() const { return {0.5 * (min_x + max_x), 0.5 * (min_y + max_y)}; }
  Box2D recentered(const Vec2& c) const;
};

// One entity tracked in one camera.  `boxes` and `confidence` are per frame;
// a missing box means the tracker lost the entity.
struct Tracklet2D {
  int camera_id = 0;
  int entity_id = 0;
  std::vector<std::optional<Box2D>> boxes;
  std::vector<double> confidence;

  int num_frames() const { return static_cast<int>(boxes.size()); }
};

// Predicts where the query camera should see the entity at `frame`, given a
// reference tracklet from another camera and the query's own history.
// nullopt marks an invalid prediction.
class TrajectoryPredictor {
 public:
  virtual ~TrajectoryPredictor() = default;
  virtual std::optional<Vec2> predict(const Tracklet2D& reference, const Tracklet2D& query, int frame) const = 0;
};

// Extrapolates the query's last two tracked centers before `frame`.
class ConstantVelocityPredictor : public TrajectoryPredictor {
 public:
  std::optional<Vec2> predict(const Tracklet2D& reference, const Tracklet2D& query, int frame) const override;
};

// Looks the answer up in known tracklets (synthetic scenes).
class GroundTruthPredictor : public TrajectoryPredictor {
 public:
  explicit GroundTruthPredictor(std::vector<Tracklet2D> truth) : truth_(std::move(truth)) {}
  std::optional<Vec2> predict(const Tracklet2D& reference, const Tracklet2D& query, int frame) const override;

 private:
  std::vector<Tracklet2D> truth_;
};

class FusionImpossible : public Error {
 public:
  using Error::Error;
};

class EmptyHull : public Error {
 public:
  using Error::Error;
};

struct FusionPeer {
  const Tracklet2D* tracklet = nullptr;
  double confidence = 0.0;
};

// Confidence-weighted correction of a tracked center:
//   g' = q g + (1 - q) / w * sum_{c: q_c >= tau} q_c P(c),  w = sum q_c.
// Throws FusionImpossible when no peer passes and q < 1.
Vec2 fuse_tracking(const Vec2& center, double confidence, const Tracklet2D& query, int frame,
                   std::span<const FusionPeer> peers, const TrajectoryPredictor& predictor, double tau);

// Median depth under a mask; depth is sampled at the nearest pixel of the
// (possibly lower resolution) depth map.  nullopt if no pixel has depth.
std::optional<double> median_mask_depth(const LabelMap& mask, const DepthMap& depth);

struct RefinedMask {
  LabelMap mask;
  double mean_depth = 0.0;
  bool empty = false;
};

// Keeps mask pixels whose depth lies within `deviation` of `prev_mean_depth`.
// An empty result warns and carries `prev_mean_depth` forward.
RefinedMask refine_mask(const LabelMap& mask, const DepthMap& depth, double prev_mean_depth, double deviation);

struct VoxelGrid {
  Aabb bounds;
  std::array<int, 3> resolution{64, 64, 64};
  std::vector<std::uint8_t> occupied;

  VoxelGrid() = default;
  VoxelGrid(const Aabb& b, std::array<int, 3> res);
  Vec3 voxel_size() const { return bounds.extent().cwiseQuotient(Vec3(resolution[0], resolution[1], resolution[2])); }
  Vec3 center(int i, int j, int k) const;
  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * resolution[1] + j) * resolution[0] + i;
  }
  std::size_t count() const;
};

struct CarveResult {
  VoxelGrid grid;
  Aabb box;  // tight bound of kept voxel centers, dilated by one voxel
  std::size_t kept = 0;
};

struct CarveOptions {
  // One z-depth map per camera at silhouette resolution (0 = none).  A
  // pixel whose occluder lies in front of the voxel does not carve it.
  std::span<const DepthMap> occluders;
  // Minimum number of cameras whose image contains the voxel.
  int min_views = 1;
  // With occluders, a voxel also needs positive silhouette support in this
  // fraction of the cameras that see it, so the inside of an occluder is
  // not attributed to everything it hides.
  double min_support_fraction = 0.5;
};

// A voxel survives iff its center projects onto a nonzero silhouette pixel
// in every camera whose image contains the projection.  Throws EmptyHull
// (message prefixed with `context`) when nothing survives.
CarveResult space_carve(std::span<const LabelMap> silhouettes, std::span<const CameraModel> cameras,
                        const VoxelGrid& grid, const std::string& context = "space_carve",
                        const CarveOptions& options = {});

struct ParseConfig {
  double tau = 0.5;
  double deviation = 0.5;  // meters
  int grid_resolution = 64;
  bool refine_masks = true;
  // A voxel must be inside the image of at least this fraction of cameras
  // to survive carving; without it, regions only a few cameras see keep
  // their silhouette cones.
  double min_view_fraction = 0.5;
};

// Per-camera observations fed to the parser.  Defaults derive both from
// the dataset's label maps (confidence 1 wherever the entity is visible).
struct ParseInputs {
  std::function<LabelMap(int camera_index, int frame, int entity_id)> raw_mask;
  std::function<double(int camera_index, int frame, int entity_id)> confidence;
};

struct ParseResult {
  std::vector<BoundingBoxTrack> boxes;            // background (id 0) first
  std::vector<std::vector<LabelMap>> labels;      // refined, [camera][frame]
  std::vector<std::vector<Tracklet2D>> tracklets;  // [entity][camera], after fusion
  std::vector<std::string> flagged;               // frames kept with raw tracks
};

ParseResult parse_scene(const Dataset& dataset, const TrajectoryPredictor& predictor, const ParseConfig& config,
                        const ParseInputs& inputs = {});

// Tight pixel box of nonzero mask pixels.
std::optional<Box2D> mask_box(const LabelMap& mask);

}  // namespace stnerf

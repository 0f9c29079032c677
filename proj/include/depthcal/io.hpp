#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "depthcal/calib_undistort.hpp"
#include "depthcal/calibration.hpp"
#include "depthcal/geometry.hpp"
#include "depthcal/synth.hpp"

namespace depthcal {

namespace fs = std::filesystem;

/// Writes through a sibling temporary file and renames it into place.
void writeFileAtomic(const fs::path& path, std::string_view content);
std::string readFile(const fs::path& path);

/// Binary PGM (P5, maxval 65535, big-endian), one sample per pixel in millimeters.
std::string encodeDepthPgm(const DepthImage& image);
DepthImage decodeDepthPgm(std::string_view bytes);
void writeDepthPgm(const fs::path& path, const DepthImage& image);
DepthImage readDepthPgm(const fs::path& path);

/// `row,col,u,v` header then one line per corner.
std::string encodeCornersCsv(const CornerGrid& grid);
/// The grid size is taken from the largest indices unless `rows`/`cols` are given.
CornerGrid decodeCornersCsv(std::string_view text, int rows = 0, int cols = 0);
void writeCornersCsv(const fs::path& path, const CornerGrid& grid);
CornerGrid readCornersCsv(const fs::path& path, int rows = 0, int cols = 0);

/// One `key value...` line of the text formats.
struct KeyValueLine {
  int line = 0;
  std::string key;
  std::vector<std::string> values;
};

/// Splits on whitespace, dropping blank lines and `#` comments.
std::vector<KeyValueLine> parseKeyValue(std::string_view text);
/// Shortest-safe decimal: 17 significant digits.
std::string formatDouble(double value);

std::string serializeCalibration(const Calibration& calib);
Calibration parseCalibration(std::string_view text);
void writeCalibration(const fs::path& path, const Calibration& calib);
Calibration readCalibration(const fs::path& path);

/// Scene description for `simulate`: any subset of keys overriding SceneSpec::defaults().
SceneSpec parseScene(std::string_view text);

struct ManifestFrame {
  std::string id;
  bool test = false;
  std::string depth_file;
  std::string corners_file;
  std::optional<double> true_distance;
};

struct DatasetManifest {
  BoardSpec board;
  CameraIntrinsics rgb;
  CameraIntrinsics depth;
  RigidTransform initial_extrinsic;
  std::vector<ManifestFrame> frames;
};

std::string serializeManifest(const DatasetManifest& manifest);
DatasetManifest parseManifest(std::string_view text);

/// Loads `manifest.txt` and every referenced depth/corner file.
Dataset readDataset(const fs::path& dir);

/// Ground truth kept beside a synthetic dataset; never read by calibration.
struct GroundTruth {
  RigidTransform camera_to_depth;
  CameraIntrinsics depth;
  UndistortionMap field;
  GlobalMap bias;
  std::string description;
  struct FrameTruth {
    std::string id;
    bool test = false;
    double distance = 0.0;
    RigidTransform board_pose;
  };
  std::vector<FrameTruth> frames;
};

std::string serializeGroundTruth(const GroundTruth& truth);
GroundTruth parseGroundTruth(std::string_view text);
GroundTruth readGroundTruth(const fs::path& dir);
GroundTruth groundTruthOf(const SyntheticDataset& ds);

/// What readDataset would return for the written dataset, minus the millimetre rounding
/// of the depth files.
Dataset datasetOf(const SyntheticDataset& ds);

/// Writes manifest.txt, depth/*.pgm, corners/*.csv and ground_truth.txt.
void writeDataset(const fs::path& dir, const SyntheticDataset& ds);

/// ASCII PLY with the valid points as float x y z.
std::string encodePly(const OrganizedCloud& cloud);
void writePly(const fs::path& path, const OrganizedCloud& cloud);

}  // namespace depthcal

#include "depthcal/io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "depthcal/errors.hpp"

namespace depthcal {

namespace {

constexpr int kVersion = 1;

[[noreturn]] void fail(const KeyValueLine& l, const std::string& msg) {
  throw FormatError("line " + std::to_string(l.line) + " (" + l.key + "): " + msg);
}

double toDouble(std::string_view s) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw FormatError("not a finite number: '" + std::string(s) + "'");
  }
  return v;
}

long long toInteger(std::string_view s) {
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw FormatError("not an integer: '" + std::string(s) + "'");
  }
  return v;
}

int toInt(std::string_view s) {
  const long long v = toInteger(s);
  if (v < INT32_MIN || v > INT32_MAX) throw FormatError("integer out of range");
  return static_cast<int>(v);
}

void expectCount(const KeyValueLine& l, std::size_t n) {
  if (l.values.size() != n) {
    fail(l, "expected " + std::to_string(n) + " values, got " + std::to_string(l.values.size()));
  }
}

std::vector<double> doubles(const KeyValueLine& l, std::size_t from = 0) {
  std::vector<double> out;
  for (std::size_t i = from; i < l.values.size(); ++i) {
    try {
      out.push_back(toDouble(l.values[i]));
    } catch (const FormatError& e) {
      fail(l, e.what());
    }
  }
  return out;
}

std::string intrinsicsLine(std::string_view key, const CameraIntrinsics& k) {
  std::string out(key);
  out += ' ' + std::to_string(k.width) + ' ' + std::to_string(k.height);
  for (double v : {k.fx, k.fy, k.cx, k.cy, k.radial[0], k.radial[1], k.radial[2],
                   k.tangential[0], k.tangential[1]}) {
    out += ' ' + formatDouble(v);
  }
  return out + '\n';
}

CameraIntrinsics parseIntrinsics(const KeyValueLine& l) {
  expectCount(l, 11);
  CameraIntrinsics k;
  try {
    k.width = toInt(l.values[0]);
    k.height = toInt(l.values[1]);
  } catch (const FormatError& e) {
    fail(l, e.what());
  }
  const std::vector<double> v = doubles(l, 2);
  k.fx = v[0];
  k.fy = v[1];
  k.cx = v[2];
  k.cy = v[3];
  k.radial = {v[4], v[5], v[6]};
  k.tangential = {v[7], v[8]};
  try {
    k.validate();
  } catch (const InvalidArgument& e) {
    fail(l, e.what());
  }
  return k;
}

std::string transformValues(const RigidTransform& t) {
  const Vec3& p = t.translation();
  const Eigen::Quaterniond& q = t.rotation();
  std::string out;
  for (double v : {p.x(), p.y(), p.z(), q.w(), q.x(), q.y(), q.z()}) {
    out += ' ' + formatDouble(v);
  }
  return out;
}

RigidTransform parseTransform(const KeyValueLine& l, std::size_t from = 0) {
  if (l.values.size() != from + 7) fail(l, "expected tx ty tz qw qx qy qz");
  const std::vector<double> v = doubles(l, from);
  try {
    return RigidTransform::fromUnitQuaternion(Eigen::Quaterniond(v[3], v[4], v[5], v[6]),
                                              Vec3(v[0], v[1], v[2]));
  } catch (const InvalidArgument& e) {
    fail(l, e.what());
  }
}

std::string coefficientValues(const PolyFn& f, int from) {
  std::string out;
  for (int i = from; i <= f.degree(); ++i) out += ' ' + formatDouble(f.coefficient(i));
  return out;
}

// `<key> W H bx by degree` then `<row_key> col row c0..cd`, row-major.
void serializeUMap(std::string& out, std::string_view key, std::string_view row_key,
                   const UndistortionMap& m) {
  out += std::string(key) + ' ' + std::to_string(m.width()) + ' ' + std::to_string(m.height()) +
         ' ' + std::to_string(m.binX()) + ' ' + std::to_string(m.binY()) + ' ' +
         std::to_string(m.degree()) + '\n';
  for (int r = 0; r < m.rows(); ++r) {
    for (int c = 0; c < m.cols(); ++c) {
      out += std::string(row_key) + ' ' + std::to_string(c) + ' ' + std::to_string(r) +
             coefficientValues(m.control(c, r), 0) + '\n';
    }
  }
}

// `<key> W H degree` then three corner lines with the non-constant coefficients.
void serializeGMap(std::string& out, std::string_view key, std::string_view prefix,
                   const GlobalMap& g) {
  out += std::string(key) + ' ' + std::to_string(g.width()) + ' ' + std::to_string(g.height()) +
         ' ' + std::to_string(g.degree()) + '\n';
  out += std::string(prefix) + "00" + coefficientValues(g.corner00(), 1) + '\n';
  out += std::string(prefix) + "W0" + coefficientValues(g.cornerW0(), 1) + '\n';
  out += std::string(prefix) + "0H" + coefficientValues(g.corner0H(), 1) + '\n';
}

// Collects the multi-line map sections while the caller walks the file.
struct UMapReader {
  std::optional<UndistortionMap> map;
  std::set<std::pair<int, int>> seen;

  void header(const KeyValueLine& l) {
    if (map) fail(l, "map declared twice");
    expectCount(l, 5);
    try {
      const int degree = toInt(l.values[4]);
      if (degree < 1 || degree > PolyFn::kMaxDegree) fail(l, "unsupported degree");
      map = UndistortionMap(toInt(l.values[0]), toInt(l.values[1]), toInt(l.values[2]),
                            toInt(l.values[3]), degree);
    } catch (const InvalidArgument& e) {
      fail(l, e.what());
    }
  }
  void control(const KeyValueLine& l) {
    if (!map) fail(l, "control before map header");
    expectCount(l, static_cast<std::size_t>(map->degree()) + 3);
    const int c = toInt(l.values[0]);
    const int r = toInt(l.values[1]);
    if (c < 0 || r < 0 || c >= map->cols() || r >= map->rows()) fail(l, "control out of grid");
    if (!seen.insert({c, r}).second) fail(l, "duplicate control");
    const std::vector<double> v = doubles(l, 2);
    map->setControl(c, r, PolyFn(v));
  }
  UndistortionMap finish(std::string_view what) {
    if (!map) throw FormatError(std::string(what) + " missing");
    if (seen.size() != static_cast<std::size_t>(map->cols()) * map->rows()) {
      throw FormatError(std::string(what) + ": control count does not match the grid");
    }
    return *map;
  }
};

struct GMapReader {
  int width = 0;
  int height = 0;
  int degree = 0;
  std::map<std::string, PolyFn> corners;

  void header(const KeyValueLine& l) {
    if (degree) fail(l, "map declared twice");
    expectCount(l, 3);
    width = toInt(l.values[0]);
    height = toInt(l.values[1]);
    degree = toInt(l.values[2]);
    if (degree < 1 || degree > PolyFn::kMaxDegree) fail(l, "unsupported degree");
  }
  void corner(const KeyValueLine& l, const std::string& name) {
    if (!degree) fail(l, "corner before map header");
    expectCount(l, static_cast<std::size_t>(degree));
    if (corners.count(name)) fail(l, "duplicate corner");
    std::vector<double> v{0.0};
    for (double x : doubles(l)) v.push_back(x);
    corners.emplace(name, PolyFn(v, true));
  }
  GlobalMap finish(std::string_view what) {
    if (!degree || corners.size() != 3) throw FormatError(std::string(what) + " incomplete");
    try {
      return GlobalMap(width, height, corners.at("00"), corners.at("W0"), corners.at("0H"));
    } catch (const InvalidArgument& e) {
      throw FormatError(std::string(what) + ": " + e.what());
    }
  }
};

void checkVersion(const KeyValueLine& l) {
  expectCount(l, 1);
  if (toInt(l.values[0]) != kVersion) fail(l, "unsupported version");
}

std::string joinValues(const KeyValueLine& l) {
  std::string out;
  for (const std::string& v : l.values) {
    if (!out.empty()) out += ' ';
    out += v;
  }
  return out;
}

void requireKeys(const std::set<std::string>& seen, std::initializer_list<const char*> keys,
                 std::string_view what) {
  for (const char* k : keys) {
    if (!seen.count(k)) throw FormatError(std::string(what) + ": missing '" + k + "'");
  }
}

}  // namespace

void writeFileAtomic(const fs::path& path, std::string_view content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + tmp.string() + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw FormatError("write failed for " + path.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw FormatError("cannot rename into " + path.string());
  }
}

std::string readFile(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string encodeDepthPgm(const DepthImage& image) {
  image.validate();
  std::string out = "P5\n" + std::to_string(image.width) + ' ' + std::to_string(image.height) +
                    "\n65535\n";
  out.reserve(out.size() + image.data.size() * 2);
  for (double d : image.data) {
    long long mm = 0;
    if (d > 0.0 && std::isfinite(d)) mm = std::llround(d * 1000.0);
    if (mm > 65535) throw InvalidArgument("depth exceeds the 16-bit millimeter range");
    out += static_cast<char>((mm >> 8) & 0xff);
    out += static_cast<char>(mm & 0xff);
  }
  return out;
}

DepthImage decodeDepthPgm(std::string_view bytes) {
  std::size_t pos = 0;
  auto skipSpace = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&] {
    skipSpace();
    const std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) throw FormatError("malformed PGM header");
    return toInteger(bytes.substr(start, pos - start));
  };
  if (bytes.substr(0, 2) != "P5") throw FormatError("not a binary PGM (P5) file");
  pos = 2;
  const long long w = number();
  const long long h = number();
  const long long maxval = number();
  if (w <= 0 || h <= 0 || w > 1 << 16 || h > 1 << 16) throw FormatError("bad PGM dimensions");
  if (maxval != 65535) throw FormatError("PGM maxval must be 65535");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw FormatError("malformed PGM header");
  }
  ++pos;
  const std::size_t need = static_cast<std::size_t>(w * h * 2);
  if (bytes.size() - pos < need) throw FormatError("truncated PGM payload");
  DepthImage image(static_cast<int>(w), static_cast<int>(h));
  for (std::size_t i = 0; i < image.data.size(); ++i) {
    const auto hi = static_cast<unsigned char>(bytes[pos + 2 * i]);
    const auto lo = static_cast<unsigned char>(bytes[pos + 2 * i + 1]);
    image.data[i] = ((hi << 8) | lo) / 1000.0;
  }
  return image;
}

void writeDepthPgm(const fs::path& path, const DepthImage& image) {
  writeFileAtomic(path, encodeDepthPgm(image));
}

DepthImage readDepthPgm(const fs::path& path) { return decodeDepthPgm(readFile(path)); }

std::string encodeCornersCsv(const CornerGrid& grid) {
  if (grid.rows <= 0 || grid.cols <= 0 ||
      grid.points.size() != static_cast<std::size_t>(grid.rows) * grid.cols) {
    throw InvalidArgument("corner grid is incomplete");
  }
  std::string out = "row,col,u,v\n";
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      const Vec2& p = grid.at(r, c);
      out += std::to_string(r) + ',' + std::to_string(c) + ',' + formatDouble(p.x()) + ',' +
             formatDouble(p.y()) + '\n';
    }
  }
  return out;
}

CornerGrid decodeCornersCsv(std::string_view text, int rows, int cols) {
  std::istringstream in{std::string(text)};
  std::string line;
  auto trim = [](std::string& s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
    std::size_t i = 0;
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    s.erase(0, i);
  };
  if (!std::getline(in, line)) throw FormatError("empty corners file");
  trim(line);
  if (line != "row,col,u,v") throw FormatError("corners header must be 'row,col,u,v'");

  std::map<std::pair<int, int>, Vec2> found;
  int max_r = -1;
  int max_c = -1;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    trim(line);
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
      trim(cell);
      f.push_back(cell);
    }
    const std::string where = "corners line " + std::to_string(lineno);
    if (f.size() != 4) throw FormatError(where + ": expected 4 fields");
    int r = 0;
    int c = 0;
    Vec2 p;
    try {
      r = toInt(f[0]);
      c = toInt(f[1]);
      p = Vec2(toDouble(f[2]), toDouble(f[3]));
    } catch (const FormatError& e) {
      throw FormatError(where + ": " + e.what());
    }
    if (r < 0 || c < 0) throw FormatError(where + ": negative index");
    if ((rows > 0 && r >= rows) || (cols > 0 && c >= cols)) {
      throw FormatError(where + ": index outside the board");
    }
    if (!found.emplace(std::make_pair(r, c), p).second) {
      throw FormatError(where + ": duplicate corner (" + f[0] + "," + f[1] + ")");
    }
    max_r = std::max(max_r, r);
    max_c = std::max(max_c, c);
  }
  CornerGrid grid;
  grid.rows = rows > 0 ? rows : max_r + 1;
  grid.cols = cols > 0 ? cols : max_c + 1;
  if (grid.rows <= 0 || grid.cols <= 0) throw FormatError("no corners");
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      const auto it = found.find({r, c});
      if (it == found.end()) {
        throw FormatError("missing corner (" + std::to_string(r) + "," + std::to_string(c) + ")");
      }
      grid.points.push_back(it->second);
    }
  }
  return grid;
}

void writeCornersCsv(const fs::path& path, const CornerGrid& grid) {
  writeFileAtomic(path, encodeCornersCsv(grid));
}

CornerGrid readCornersCsv(const fs::path& path, int rows, int cols) {
  return decodeCornersCsv(readFile(path), rows, cols);
}

std::vector<KeyValueLine> parseKeyValue(std::string_view text) {
  std::vector<KeyValueLine> out;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    KeyValueLine kv;
    kv.line = lineno;
    if (!(ls >> kv.key)) continue;
    std::string tok;
    while (ls >> tok) kv.values.push_back(tok);
    out.push_back(std::move(kv));
  }
  return out;
}

std::string formatDouble(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

std::string serializeCalibration(const Calibration& calib) {
  std::string out = "# depthcal calibration\n";
  out += "version " + std::to_string(kVersion) + '\n';
  out += "seed " + std::to_string(calib.seed) + '\n';
  out += intrinsicsLine("rgb_intrinsics", calib.rgb);
  out += intrinsicsLine("depth_intrinsics", calib.depth);
  out += "# camera -> depth: tx ty tz qw qx qy qz\n";
  out += "extrinsic" + transformValues(calib.camera_to_depth) + '\n';
  serializeUMap(out, "umap", "u", calib.u_map);
  serializeGMap(out, "gmap", "g", calib.g_map);
  return out;
}

Calibration parseCalibration(std::string_view text) {
  Calibration c;
  UMapReader umap;
  GMapReader gmap;
  std::set<std::string> seen;
  for (const KeyValueLine& l : parseKeyValue(text)) {
    const bool repeatable = l.key == "u";
    if (!repeatable && !seen.insert(l.key).second) fail(l, "duplicate key");
    try {
      if (l.key == "version") {
        checkVersion(l);
      } else if (l.key == "seed") {
        expectCount(l, 1);
        c.seed = static_cast<std::uint64_t>(std::stoull(l.values[0]));
      } else if (l.key == "rgb_intrinsics") {
        c.rgb = parseIntrinsics(l);
      } else if (l.key == "depth_intrinsics") {
        c.depth = parseIntrinsics(l);
      } else if (l.key == "extrinsic") {
        c.camera_to_depth = parseTransform(l);
      } else if (l.key == "umap") {
        umap.header(l);
      } else if (l.key == "u") {
        umap.control(l);
      } else if (l.key == "gmap") {
        gmap.header(l);
      } else if (l.key == "g00" || l.key == "gW0" || l.key == "g0H") {
        gmap.corner(l, l.key.substr(1));
      } else {
        fail(l, "unknown key");
      }
    } catch (const std::invalid_argument&) {
      fail(l, "bad value");
    } catch (const std::out_of_range&) {
      fail(l, "value out of range");
    } catch (const FormatError& e) {
      if (std::string(e.what()).rfind("line ", 0) == 0) throw;
      fail(l, e.what());
    }
  }
  requireKeys(seen, {"version", "seed", "rgb_intrinsics", "depth_intrinsics", "extrinsic"},
              "calibration");
  c.u_map = umap.finish("umap");
  c.g_map = gmap.finish("gmap");
  if (c.u_map.width() != c.depth.width || c.u_map.height() != c.depth.height ||
      c.g_map.width() != c.depth.width || c.g_map.height() != c.depth.height) {
    throw FormatError("map dimensions do not match the depth intrinsics");
  }
  return c;
}

void writeCalibration(const fs::path& path, const Calibration& calib) {
  writeFileAtomic(path, serializeCalibration(calib));
}

Calibration readCalibration(const fs::path& path) { return parseCalibration(readFile(path)); }

SceneSpec parseScene(std::string_view text) {
  SceneSpec s = SceneSpec::defaults();
  bool depth_initial_given = false;
  double rms = 0.04;
  double rms_depth = 4.0;
  double tilt = 0.0;
  double plateau = 100.0;
  int bin = 4;
  bool distortion = true;
  double b1 = 0.97;
  double b2 = 0.008;
  std::set<std::string> seen;
  for (const KeyValueLine& l : parseKeyValue(text)) {
    if (!seen.insert(l.key).second) fail(l, "duplicate key");
    try {
      if (l.key == "seed") {
        expectCount(l, 1);
        s.seed = static_cast<std::uint64_t>(std::stoull(l.values[0]));
      } else if (l.key == "noise") {
        expectCount(l, 1);
        if (l.values[0] != "on" && l.values[0] != "off") fail(l, "expected on|off");
        s.noise_enabled = l.values[0] == "on";
      } else if (l.key == "noise_model") {
        if (l.values.empty()) fail(l, "expected coefficients");
        s.noise.coefficients = doubles(l);
      } else if (l.key == "sigma_corner") {
        expectCount(l, 1);
        s.sigma_corner = doubles(l)[0];
      } else if (l.key == "board") {
        expectCount(l, 3);
        s.board = BoardSpec{toInt(l.values[0]), toInt(l.values[1]), toDouble(l.values[2])};
      } else if (l.key == "rgb_intrinsics") {
        s.rgb = parseIntrinsics(l);
      } else if (l.key == "depth_intrinsics") {
        s.depth = parseIntrinsics(l);
      } else if (l.key == "depth_initial") {
        s.depth_initial = parseIntrinsics(l);
        depth_initial_given = true;
      } else if (l.key == "extrinsic") {
        s.camera_to_depth = parseTransform(l);
      } else if (l.key == "initial_extrinsic") {
        s.initial_extrinsic = parseTransform(l);
      } else if (l.key == "distortion") {
        if (l.values.size() == 1 && l.values[0] == "none") {
          distortion = false;
        } else if (!l.values.empty() && l.values[0] == "bowl" && l.values.size() >= 3 &&
                   l.values.size() <= 6) {
          const std::vector<double> v = doubles(l, 1);
          rms = v[0];
          rms_depth = v[1];
          if (v.size() > 2) tilt = v[2];
          if (v.size() > 3) plateau = v[3];
          if (v.size() > 4) bin = static_cast<int>(v[4]);
        } else {
          fail(l, "expected 'none' or 'bowl rms depth [tilt] [plateau] [bin]'");
        }
      } else if (l.key == "bias") {
        expectCount(l, 2);
        const std::vector<double> v = doubles(l);
        b1 = v[0];
        b2 = v[1];
      } else if (l.key == "floor") {
        expectCount(l, 1);
        if (l.values[0] == "none") {
          s.floor.reset();
        } else {
          s.floor = Plane::fromNormalOffset(Vec3::UnitY(), toDouble(l.values[0]));
        }
      } else if (l.key == "max_range") {
        expectCount(l, 1);
        s.max_range = doubles(l)[0];
      } else {
        fail(l, "unknown key");
      }
    } catch (const std::invalid_argument&) {
      fail(l, "bad value");
    } catch (const std::out_of_range&) {
      fail(l, "value out of range");
    } catch (const FormatError& e) {
      if (std::string(e.what()).rfind("line ", 0) == 0) throw;
      fail(l, e.what());
    }
  }
  if (!depth_initial_given) s.depth_initial = s.depth;
  s.truth = distortion ? GroundTruthDistortion::bowl(s.depth, rms, rms_depth, tilt, plateau, bin)
                       : GroundTruthDistortion::none(s.depth.width, s.depth.height, bin);
  s.truth.setBias(b1, b2);
  s.centerBoard();
  s.validate();
  return s;
}

std::string serializeManifest(const DatasetManifest& m) {
  std::string out = "# depthcal dataset\n";
  out += "version " + std::to_string(kVersion) + '\n';
  out += "board " + std::to_string(m.board.rows) + ' ' + std::to_string(m.board.cols) + ' ' +
         formatDouble(m.board.square) + '\n';
  out += intrinsicsLine("rgb_intrinsics", m.rgb);
  out += intrinsicsLine("depth_intrinsics", m.depth);
  out += "initial_extrinsic" + transformValues(m.initial_extrinsic) + '\n';
  out += "# frame id train|test depth corners [true_distance]\n";
  for (const ManifestFrame& f : m.frames) {
    out += "frame " + f.id + (f.test ? " test " : " train ") + f.depth_file + ' ' + f.corners_file;
    if (f.true_distance) out += ' ' + formatDouble(*f.true_distance);
    out += '\n';
  }
  return out;
}

DatasetManifest parseManifest(std::string_view text) {
  DatasetManifest m;
  std::set<std::string> seen;
  std::set<std::string> ids;
  for (const KeyValueLine& l : parseKeyValue(text)) {
    if (l.key != "frame" && !seen.insert(l.key).second) fail(l, "duplicate key");
    try {
      if (l.key == "version") {
        checkVersion(l);
      } else if (l.key == "board") {
        expectCount(l, 3);
        m.board = BoardSpec{toInt(l.values[0]), toInt(l.values[1]), toDouble(l.values[2])};
        m.board.validate();
      } else if (l.key == "rgb_intrinsics") {
        m.rgb = parseIntrinsics(l);
      } else if (l.key == "depth_intrinsics") {
        m.depth = parseIntrinsics(l);
      } else if (l.key == "initial_extrinsic") {
        m.initial_extrinsic = parseTransform(l);
      } else if (l.key == "frame") {
        if (l.values.size() != 4 && l.values.size() != 5) fail(l, "expected 4 or 5 values");
        ManifestFrame f;
        f.id = l.values[0];
        if (l.values[1] != "train" && l.values[1] != "test") fail(l, "expected train|test");
        f.test = l.values[1] == "test";
        f.depth_file = l.values[2];
        f.corners_file = l.values[3];
        if (l.values.size() == 5) f.true_distance = toDouble(l.values[4]);
        if (!ids.insert(f.id).second) fail(l, "duplicate frame id");
        m.frames.push_back(std::move(f));
      } else {
        fail(l, "unknown key");
      }
    } catch (const InvalidArgument& e) {
      fail(l, e.what());
    } catch (const FormatError& e) {
      if (std::string(e.what()).rfind("line ", 0) == 0) throw;
      fail(l, e.what());
    }
  }
  requireKeys(seen, {"version", "board", "rgb_intrinsics", "depth_intrinsics", "initial_extrinsic"},
              "manifest");
  return m;
}

Dataset readDataset(const fs::path& dir) {
  const DatasetManifest m = parseManifest(readFile(dir / "manifest.txt"));
  Dataset d;
  d.board = m.board;
  d.rgb = m.rgb;
  d.depth = m.depth;
  d.initial_extrinsic = m.initial_extrinsic;
  for (const ManifestFrame& mf : m.frames) {
    const fs::path depth_path = dir / mf.depth_file;
    const fs::path corners_path = dir / mf.corners_file;
    if (!fs::exists(depth_path)) throw FormatError("missing file " + depth_path.string());
    if (!fs::exists(corners_path)) throw FormatError("missing file " + corners_path.string());
    Frame f;
    f.id = mf.id;
    f.depth = readDepthPgm(depth_path);
    if (f.depth.width != m.depth.width || f.depth.height != m.depth.height) {
      throw FormatError(depth_path.string() + ": size does not match the depth intrinsics");
    }
    try {
      f.corners = readCornersCsv(corners_path, m.board.rows, m.board.cols);
    } catch (const FormatError& e) {
      throw FormatError(corners_path.string() + ": " + e.what());
    }
    if (mf.test) {
      d.test.push_back(std::move(f));
      d.test_distance.push_back(mf.true_distance);
    } else {
      d.train.push_back(std::move(f));
    }
  }
  return d;
}

std::string serializeGroundTruth(const GroundTruth& t) {
  std::string out = "# depthcal synthetic ground truth\n";
  out += "version " + std::to_string(kVersion) + '\n';
  out += "description " + t.description + '\n';
  out += "extrinsic" + transformValues(t.camera_to_depth) + '\n';
  out += intrinsicsLine("depth_intrinsics", t.depth);
  serializeUMap(out, "field", "f", t.field);
  serializeGMap(out, "bias", "b", t.bias);
  out += "# frame id train|test distance board_pose(tx ty tz qw qx qy qz)\n";
  for (const GroundTruth::FrameTruth& f : t.frames) {
    out += "frame " + f.id + (f.test ? " test " : " train ") + formatDouble(f.distance) +
           transformValues(f.board_pose) + '\n';
  }
  return out;
}

GroundTruth parseGroundTruth(std::string_view text) {
  GroundTruth t;
  UMapReader field;
  GMapReader bias;
  std::set<std::string> seen;
  for (const KeyValueLine& l : parseKeyValue(text)) {
    if (l.key != "frame" && l.key != "f" && !seen.insert(l.key).second) fail(l, "duplicate key");
    try {
      if (l.key == "version") {
        checkVersion(l);
      } else if (l.key == "description") {
        t.description = joinValues(l);
      } else if (l.key == "extrinsic") {
        t.camera_to_depth = parseTransform(l);
      } else if (l.key == "depth_intrinsics") {
        t.depth = parseIntrinsics(l);
      } else if (l.key == "field") {
        field.header(l);
      } else if (l.key == "f") {
        field.control(l);
      } else if (l.key == "bias") {
        bias.header(l);
      } else if (l.key == "b00" || l.key == "bW0" || l.key == "b0H") {
        bias.corner(l, l.key.substr(1));
      } else if (l.key == "frame") {
        if (l.values.size() != 10) fail(l, "expected id kind distance and a pose");
        GroundTruth::FrameTruth f;
        f.id = l.values[0];
        f.test = l.values[1] == "test";
        f.distance = toDouble(l.values[2]);
        f.board_pose = parseTransform(l, 3);
        t.frames.push_back(std::move(f));
      } else {
        fail(l, "unknown key");
      }
    } catch (const FormatError& e) {
      if (std::string(e.what()).rfind("line ", 0) == 0) throw;
      fail(l, e.what());
    }
  }
  requireKeys(seen, {"version", "extrinsic", "depth_intrinsics"}, "ground truth");
  t.field = field.finish("field");
  t.bias = bias.finish("bias");
  return t;
}

GroundTruth readGroundTruth(const fs::path& dir) {
  return parseGroundTruth(readFile(dir / "ground_truth.txt"));
}

GroundTruth groundTruthOf(const SyntheticDataset& ds) {
  GroundTruth t;
  t.camera_to_depth = ds.scene.camera_to_depth;
  t.depth = ds.scene.depth;
  t.field = ds.scene.truth.field;
  t.bias = ds.scene.truth.bias;
  t.description = ds.scene.truth.description;
  for (const LabeledFrame& f : ds.frames) {
    t.frames.push_back({f.frame.id, f.test, f.test ? f.true_distance : f.board_pose.translation().z(),
                        f.board_pose});
  }
  return t;
}

Dataset datasetOf(const SyntheticDataset& ds) {
  Dataset d;
  d.board = ds.scene.board;
  d.rgb = ds.scene.rgb;
  d.depth = ds.scene.depth_initial;
  d.initial_extrinsic = ds.scene.initial_extrinsic;
  for (const LabeledFrame& f : ds.frames) {
    if (f.test) {
      d.test.push_back(f.frame);
      d.test_distance.push_back(f.true_distance);
    } else {
      d.train.push_back(f.frame);
    }
  }
  return d;
}

void writeDataset(const fs::path& dir, const SyntheticDataset& ds) {
  fs::create_directories(dir / "depth");
  fs::create_directories(dir / "corners");
  DatasetManifest m;
  m.board = ds.scene.board;
  m.rgb = ds.scene.rgb;
  m.depth = ds.scene.depth_initial;
  m.initial_extrinsic = ds.scene.initial_extrinsic;
  for (const LabeledFrame& f : ds.frames) {
    ManifestFrame mf;
    mf.id = f.frame.id;
    mf.test = f.test;
    mf.depth_file = "depth/" + f.frame.id + ".pgm";
    mf.corners_file = "corners/" + f.frame.id + ".csv";
    if (f.test) mf.true_distance = f.true_distance;
    writeDepthPgm(dir / mf.depth_file, f.frame.depth);
    writeCornersCsv(dir / mf.corners_file, f.frame.corners);
    m.frames.push_back(std::move(mf));
  }
  writeFileAtomic(dir / "ground_truth.txt", serializeGroundTruth(groundTruthOf(ds)));
  writeFileAtomic(dir / "manifest.txt", serializeManifest(m));
}

std::string encodePly(const OrganizedCloud& cloud) {
  std::string body;
  std::size_t n = 0;
  char buf[96];
  for (const auto& p : cloud.points) {
    if (!p) continue;
    std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g\n", static_cast<double>(static_cast<float>(p->x())),
                  static_cast<double>(static_cast<float>(p->y())),
                  static_cast<double>(static_cast<float>(p->z())));
    body += buf;
    ++n;
  }
  return "ply\nformat ascii 1.0\nelement vertex " + std::to_string(n) +
         "\nproperty float x\nproperty float y\nproperty float z\nend_header\n" + body;
}

void writePly(const fs::path& path, const OrganizedCloud& cloud) {
  writeFileAtomic(path, encodePly(cloud));
}

}  // namespace depthcal

#include "lagtrack/io.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>
#include <opencv2/imgcodecs.hpp>

namespace lagtrack {

namespace fs = std::filesystem;

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view line, char sep) {
  std::vector<std::string> out;
  size_t start = 0;
  while (true) {
    const size_t pos = line.find(sep, start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

double to_double(const std::string& s, const std::string& context) {
  try {
    size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::InputData, "cannot parse number '" + s + "' in " + context);
  }
}

std::ifstream open_input(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::InputData, "cannot open " + path.string());
  return in;
}

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::InputData, "cannot write " + path.string());
  return out;
}

}  // namespace

std::string read_text(const fs::path& path) {
  std::ifstream in = open_input(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void to_json(nlohmann::json& j, const CameraModel& c) {
  j = nlohmann::json{
      {"position", {c.position.x(), c.position.y(), c.position.z()}},
      {"orientation", {c.orientation.x(), c.orientation.y(), c.orientation.z()}},
      {"focal_length", c.focal_length},
      {"principal_point", {c.principal_point.x(), c.principal_point.y()}},
      {"sensor_size", {c.sensor_size.x(), c.sensor_size.y()}},
      {"k1", c.radial[0]},
      {"k2", c.radial[1]},
      {"p1", c.tangential[0]},
      {"p2", c.tangential[1]},
  };
}

void from_json(const nlohmann::json& j, CameraModel& c) {
  auto vec = [&](const char* key, auto& target) {
    if (!j.contains(key)) return;
    const auto& a = j.at(key);
    for (int i = 0; i < target.size(); ++i) target[i] = a.at(static_cast<size_t>(i)).get<double>();
  };
  vec("position", c.position);
  vec("orientation", c.orientation);
  vec("principal_point", c.principal_point);
  vec("sensor_size", c.sensor_size);
  c.focal_length = j.value("focal_length", c.focal_length);
  c.radial[0] = j.value("k1", c.radial[0]);
  c.radial[1] = j.value("k2", c.radial[1]);
  c.tangential[0] = j.value("p1", c.tangential[0]);
  c.tangential[1] = j.value("p2", c.tangential[1]);
  c.validate();
}

CameraModel parse_camera(std::string_view text) {
  std::map<std::string, std::vector<double>> values;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::InputData, "camera line without '=': " + t);
    const std::string key = trim(t.substr(0, eq));
    std::istringstream rhs(t.substr(eq + 1));
    std::vector<double> nums;
    std::string tok;
    while (rhs >> tok) nums.push_back(to_double(tok, "camera key " + key));
    values[key] = nums;
  }
  CameraModel c;
  auto get = [&](const std::string& key, size_t count) -> const std::vector<double>* {
    auto it = values.find(key);
    if (it == values.end()) return nullptr;
    if (it->second.size() != count) {
      throw Error(ErrorCode::InputData, "camera key " + key + " expects " + std::to_string(count) + " values");
    }
    return &it->second;
  };
  if (auto v = get("position", 3)) c.position = {(*v)[0], (*v)[1], (*v)[2]};
  if (auto v = get("orientation", 3)) c.orientation = {(*v)[0], (*v)[1], (*v)[2]};
  if (auto v = get("focal_length", 1)) c.focal_length = (*v)[0];
  if (auto v = get("principal_point", 2)) c.principal_point = {(*v)[0], (*v)[1]};
  if (auto v = get("sensor_size", 2)) c.sensor_size = {(*v)[0], (*v)[1]};
  if (auto v = get("k1", 1)) c.radial[0] = (*v)[0];
  if (auto v = get("k2", 1)) c.radial[1] = (*v)[0];
  if (auto v = get("p1", 1)) c.tangential[0] = (*v)[0];
  if (auto v = get("p2", 1)) c.tangential[1] = (*v)[0];
  c.validate();
  return c;
}

CameraModel read_camera_file(const fs::path& path) { return parse_camera(read_text(path)); }

std::string format_camera(const CameraModel& c) {
  return fmt::format(
      "position = {:.17g} {:.17g} {:.17g}\n"
      "orientation = {:.17g} {:.17g} {:.17g}\n"
      "focal_length = {:.17g}\n"
      "principal_point = {:.17g} {:.17g}\n"
      "sensor_size = {:.17g} {:.17g}\n"
      "k1 = {:.17g}\nk2 = {:.17g}\np1 = {:.17g}\np2 = {:.17g}\n",
      c.position.x(), c.position.y(), c.position.z(), c.orientation.x(), c.orientation.y(),
      c.orientation.z(), c.focal_length, c.principal_point.x(), c.principal_point.y(),
      c.sensor_size.x(), c.sensor_size.y(), c.radial[0], c.radial[1], c.tangential[0],
      c.tangential[1]);
}

void write_camera_file(const fs::path& path, const CameraModel& camera) {
  auto out = open_output(path);
  out << format_camera(camera);
}

std::vector<GroundControlPoint> read_gcp_csv(const fs::path& path) {
  auto in = open_input(path);
  std::string line;
  if (!std::getline(in, line) || split(line, ',') != std::vector<std::string>{"label", "x", "y", "z", "u", "v"}) {
    throw Error(ErrorCode::InputData, "GCP file must start with header label,x,y,z,u,v");
  }
  std::vector<GroundControlPoint> gcps;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 6) throw Error(ErrorCode::InputData, "GCP row needs 6 fields: " + line);
    GroundControlPoint g;
    g.label = f[0];
    g.world = {to_double(f[1], "GCP"), to_double(f[2], "GCP"), to_double(f[3], "GCP")};
    g.pixel = {to_double(f[4], "GCP"), to_double(f[5], "GCP")};
    gcps.push_back(std::move(g));
  }
  return gcps;
}

void write_gcp_csv(const fs::path& path, const std::vector<GroundControlPoint>& gcps) {
  auto out = open_output(path);
  out << "label,x,y,z,u,v\n";
  for (const auto& g : gcps) {
    out << fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}\n", g.label, g.world.x(),
                       g.world.y(), g.world.z(), g.pixel.x(), g.pixel.y());
  }
}

Raster read_esri_ascii(const fs::path& path) {
  auto in = open_input(path);
  std::map<std::string, double> header;
  std::string key;
  // Six header lines (NODATA optional).
  while (in >> key) {
    std::string lower = key;
    std::transform(lower.begin(), lower.end(), lower.begin(), ::tolower);
    if (!std::isalpha(static_cast<unsigned char>(lower[0]))) {
      in.seekg(-static_cast<std::streamoff>(key.size()), std::ios::cur);
      break;
    }
    std::string value;
    in >> value;
    header[lower] = to_double(value, "ESRI header " + key);
  }
  for (const char* k : {"ncols", "nrows", "cellsize"}) {
    if (!header.count(k)) throw Error(ErrorCode::InputData, std::string("ESRI grid missing ") + k);
  }
  Raster r;
  const int cols = static_cast<int>(header["ncols"]);
  const int rows = static_cast<int>(header["nrows"]);
  r.spacing = header["cellsize"];
  if (header.count("xllcenter")) {
    r.x_min = header["xllcenter"];
    r.y_min = header["yllcenter"];
  } else {
    r.x_min = header["xllcorner"] + 0.5 * r.spacing;
    r.y_min = header["yllcorner"] + 0.5 * r.spacing;
  }
  r.values.resize(rows, cols);
  // File rows run north to south.
  for (int i = rows - 1; i >= 0; --i) {
    for (int j = 0; j < cols; ++j) {
      std::string tok;
      if (!(in >> tok)) throw Error(ErrorCode::InputData, "ESRI grid truncated: " + path.string());
      r.values(i, j) = to_double(tok, "ESRI grid");
    }
  }
  if (header.count("nodata_value")) {
    const double nodata = header["nodata_value"];
    if ((r.values.array() == nodata).any()) {
      throw Error(ErrorCode::InputData, "ESRI grid contains NODATA cells: " + path.string());
    }
  }
  return r;
}

void write_esri_ascii(const fs::path& path, const Raster& r) {
  auto out = open_output(path);
  out << fmt::format("ncols {}\nnrows {}\nxllcenter {:.17g}\nyllcenter {:.17g}\ncellsize {:.17g}\n",
                     r.cols(), r.rows(), r.x_min, r.y_min, r.spacing);
  for (int i = r.rows() - 1; i >= 0; --i) {
    for (int j = 0; j < r.cols(); ++j) {
      out << fmt::format("{}{:.17g}", j ? " " : "", r.values(i, j));
    }
    out << "\n";
  }
}

Days parse_iso8601(std::string_view text) {
  const std::string s = trim(text);
  auto fail = [&]() -> Days { throw Error(ErrorCode::InputData, "bad ISO 8601 timestamp: " + s); };
  auto num = [&](size_t pos, size_t len) {
    int v = 0;
    if (pos + len > s.size()) fail();
    const auto [p, ec] = std::from_chars(s.data() + pos, s.data() + pos + len, v);
    if (ec != std::errc() || p != s.data() + pos + len) fail();
    return v;
  };
  if (s.size() < 16 || s[4] != '-' || s[7] != '-' || (s[10] != 'T' && s[10] != ' ') || s[13] != ':') {
    fail();
  }
  const int year = num(0, 4);
  const int month = num(5, 2);
  const int day = num(8, 2);
  const int hour = num(11, 2);
  const int minute = num(14, 2);
  double second = 0.0;
  size_t pos = 16;
  if (pos < s.size() && s[pos] == ':') {
    size_t end = pos + 1;
    while (end < s.size() && (std::isdigit(static_cast<unsigned char>(s[end])) || s[end] == '.')) ++end;
    second = to_double(s.substr(pos + 1, end - pos - 1), "timestamp");
    pos = end;
  }
  double offset_minutes = 0.0;
  if (pos < s.size()) {
    if (s[pos] == 'Z') {
      ++pos;
    } else if (s[pos] == '+' || s[pos] == '-') {
      const int sign = s[pos] == '-' ? -1 : 1;
      const int oh = num(pos + 1, 2);
      size_t mpos = pos + 3;
      if (mpos < s.size() && s[mpos] == ':') ++mpos;
      const int om = mpos < s.size() ? num(mpos, 2) : 0;
      offset_minutes = sign * (oh * 60 + om);
      pos = mpos + (mpos < s.size() ? 2 : 0);
    }
    if (pos != s.size()) fail();
  }
  using namespace std::chrono;
  const year_month_day ymd{std::chrono::year{year}, std::chrono::month{static_cast<unsigned>(month)},
                           std::chrono::day{static_cast<unsigned>(day)}};
  if (!ymd.ok() || hour > 24 || minute > 59 || !(second >= 0.0 && second < 61.0)) fail();
  if (hour == 24 && (minute != 0 || second != 0.0)) fail();
  const double days = sys_days(ymd).time_since_epoch().count();
  return days + (hour * 3600.0 + minute * 60.0 + second - offset_minutes * 60.0) / 86400.0;
}

std::string format_iso8601(Days time) {
  using namespace std::chrono;
  const auto total_ms = static_cast<long long>(std::llround(time * 86400000.0));
  const long long day_count = (total_ms >= 0 ? total_ms : total_ms - 86399999) / 86400000;
  const long long ms = total_ms - day_count * 86400000;
  const year_month_day ymd{sys_days{std::chrono::days{day_count}}};
  const long long secs = ms / 1000;
  return fmt::format("{:04d}-{:02d}-{:02d}T{:02d}:{:02d}:{:02d}Z", static_cast<int>(ymd.year()),
                     static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                     secs / 3600, (secs / 60) % 60, secs % 60);
}

std::vector<ManifestEntry> read_image_manifest(const fs::path& path) {
  auto in = open_input(path);
  std::string line;
  std::vector<ManifestEntry> entries;
  bool first = true;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto f = split(line, ',');
    if (first) {
      first = false;
      if (f.size() == 3 && f[0] == "timestamp_iso8601") continue;
    }
    if (f.size() != 3) throw Error(ErrorCode::InputData, "manifest row needs 3 fields: " + line);
    ManifestEntry e;
    e.time = parse_iso8601(f[0]);
    e.camera_id = static_cast<int>(to_double(f[1], "manifest camera_id"));
    e.path = f[2];
    if (e.path.is_relative()) e.path = path.parent_path() / e.path;
    entries.push_back(std::move(e));
  }
  std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    return a.time < b.time || (a.time == b.time && a.camera_id < b.camera_id);
  });
  return entries;
}

void write_image_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
  auto out = open_output(path);
  out << "timestamp_iso8601,camera_id,path\n";
  for (const auto& e : entries) {
    out << format_iso8601(e.time) << "," << e.camera_id << "," << e.path.generic_string() << "\n";
  }
}

RgbImage read_image(const fs::path& path) {
  const cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw Error(ErrorCode::InputData, "cannot decode image " + path.string());
  RgbImage img(bgr.cols, bgr.rows);
  for (int r = 0; r < bgr.rows; ++r) {
    const auto* row = bgr.ptr<cv::Vec3b>(r);
    for (int c = 0; c < bgr.cols; ++c) {
      img.at(r, c, 0) = row[c][2];
      img.at(r, c, 1) = row[c][1];
      img.at(r, c, 2) = row[c][0];
    }
  }
  return img;
}

void write_image(const fs::path& path, const RgbImage& image) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  cv::Mat bgr(image.height, image.width, CV_8UC3);
  for (int r = 0; r < image.height; ++r) {
    auto* row = bgr.ptr<cv::Vec3b>(r);
    for (int c = 0; c < image.width; ++c) {
      row[c] = cv::Vec3b(image.at(r, c, 2), image.at(r, c, 1), image.at(r, c, 0));
    }
  }
  if (!cv::imwrite(path.string(), bgr)) {
    throw Error(ErrorCode::InputData, "cannot write image " + path.string());
  }
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t hash) {
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

std::uint64_t file_digest(const fs::path& path) { return fnv1a(read_text(path)); }

std::string hex64(std::uint64_t value) { return fmt::format("{:016x}", value); }

}  // namespace lagtrack

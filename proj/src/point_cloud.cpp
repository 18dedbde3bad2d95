#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "gmmloc/errors.h"
#include "gmmloc/map_builder.h"

namespace gmmloc {

PointCloud load_xyz(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open point cloud " + path.string());
  PointCloud cloud;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ss(line);
    double x, y, z;
    if (!(ss >> x)) continue;
    if (!(ss >> y >> z)) throw ParseError("expected 'x y z'", line_no);
    std::string extra;
    if (ss >> extra) throw ParseError("trailing data '" + extra + "'", line_no);
    const Vec3 p(x, y, z);
    if (!p.allFinite()) throw ParseError("non-finite coordinate", line_no);
    cloud.points.push_back(p);
  }
  return cloud;
}

void save_xyz(const PointCloud& cloud, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write point cloud " + path.string());
  out.precision(17);
  for (const auto& p : cloud.points) out << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
}

namespace {

struct PlyProperty {
  std::string name;
  int size = 0;  // bytes
  bool is_float = false;
};

int scalar_size(const std::string& type, bool& is_float) {
  is_float = type == "float" || type == "float32" || type == "double" || type == "float64";
  if (type == "char" || type == "uchar" || type == "int8" || type == "uint8") return 1;
  if (type == "short" || type == "ushort" || type == "int16" || type == "uint16") return 2;
  if (type == "int" || type == "uint" || type == "int32" || type == "uint32" || type == "float" ||
      type == "float32")
    return 4;
  if (type == "double" || type == "float64") return 8;
  return 0;
}

}  // namespace

PointCloud load_ply(const std::filesystem::path& path) {
  static_assert(std::endian::native == std::endian::little, "PLY reader assumes little endian");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open point cloud " + path.string());

  std::string line;
  int line_no = 0;
  auto next_line = [&]() {
    if (!std::getline(in, line)) throw ParseError("truncated PLY header", line_no);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
  };

  next_line();
  if (line != "ply") throw ParseError("missing 'ply' magic", line_no);
  long vertex_count = -1;
  bool in_vertex = false;
  bool seen_other_element_first = false;
  std::vector<PlyProperty> props;
  for (;;) {
    next_line();
    std::istringstream ss(line);
    std::string kw;
    ss >> kw;
    if (kw == "format") {
      std::string fmt;
      ss >> fmt;
      if (fmt != "binary_little_endian") throw ParseError("unsupported PLY format " + fmt, line_no);
    } else if (kw == "element") {
      std::string name;
      long count = 0;
      ss >> name >> count;
      in_vertex = name == "vertex";
      if (in_vertex) {
        vertex_count = count;
      } else if (vertex_count < 0) {
        seen_other_element_first = true;
      }
    } else if (kw == "property" && in_vertex) {
      std::string type, name;
      ss >> type;
      if (type == "list") throw ParseError("list properties on vertices are unsupported", line_no);
      ss >> name;
      PlyProperty p;
      p.name = name;
      p.size = scalar_size(type, p.is_float);
      if (p.size == 0) throw ParseError("unknown PLY type " + type, line_no);
      props.push_back(p);
    } else if (kw == "end_header") {
      break;
    }
  }
  if (vertex_count < 0) throw ParseError("PLY has no vertex element");
  if (seen_other_element_first) throw ParseError("vertex must be the first PLY element");

  int stride = 0;
  int offset[3] = {-1, -1, -1};
  int size[3] = {0, 0, 0};
  for (const auto& p : props) {
    const int axis = p.name == "x" ? 0 : p.name == "y" ? 1 : p.name == "z" ? 2 : -1;
    if (axis >= 0) {
      if (!p.is_float) throw ParseError("vertex coordinates must be float or double");
      offset[axis] = stride;
      size[axis] = p.size;
    }
    stride += p.size;
  }
  if (offset[0] < 0 || offset[1] < 0 || offset[2] < 0) {
    throw ParseError("PLY vertex lacks x/y/z");
  }

  std::vector<char> buf(static_cast<std::size_t>(stride) * vertex_count);
  in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (in.gcount() != static_cast<std::streamsize>(buf.size())) {
    throw ParseError("truncated PLY vertex data");
  }
  PointCloud cloud;
  cloud.points.reserve(vertex_count);
  for (long i = 0; i < vertex_count; ++i) {
    const char* rec = buf.data() + i * stride;
    Vec3 p;
    for (int a = 0; a < 3; ++a) {
      if (size[a] == 4) {
        float f;
        std::memcpy(&f, rec + offset[a], 4);
        p(a) = f;
      } else {
        double d;
        std::memcpy(&d, rec + offset[a], 8);
        p(a) = d;
      }
    }
    if (!p.allFinite()) throw ParseError("non-finite coordinate in vertex " + std::to_string(i));
    cloud.points.push_back(p);
  }
  return cloud;
}

void save_ply(const PointCloud& cloud, const std::filesystem::path& path, bool use_double) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write point cloud " + path.string());
  const char* type = use_double ? "double" : "float";
  out << "ply\nformat binary_little_endian 1.0\nelement vertex " << cloud.size() << "\n"
      << "property " << type << " x\nproperty " << type << " y\nproperty " << type << " z\n"
      << "end_header\n";
  for (const auto& p : cloud.points) {
    for (int a = 0; a < 3; ++a) {
      if (use_double) {
        const double d = p(a);
        out.write(reinterpret_cast<const char*>(&d), 8);
      } else {
        const float f = static_cast<float>(p(a));
        out.write(reinterpret_cast<const char*>(&f), 4);
      }
    }
  }
}

PointCloud load_point_cloud(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return ext == ".ply" ? load_ply(path) : load_xyz(path);
}

}  // namespace gmmloc

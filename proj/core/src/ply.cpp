#include "ply.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "erpgs/error.hpp"

namespace erpgs::ply {
namespace {

static_assert(std::endian::native == std::endian::little, "PLY writer assumes a little-endian host");

bool parse_type(const std::string& s, ScalarType& t) {
  if (s == "char" || s == "int8") t = ScalarType::kInt8;
  else if (s == "uchar" || s == "uint8") t = ScalarType::kUint8;
  else if (s == "short" || s == "int16") t = ScalarType::kInt16;
  else if (s == "ushort" || s == "uint16") t = ScalarType::kUint16;
  else if (s == "int" || s == "int32") t = ScalarType::kInt32;
  else if (s == "uint" || s == "uint32") t = ScalarType::kUint32;
  else if (s == "float" || s == "float32") t = ScalarType::kFloat32;
  else if (s == "double" || s == "float64") t = ScalarType::kFloat64;
  else return false;
  return true;
}

const char* type_name(ScalarType t) {
  switch (t) {
    case ScalarType::kInt8: return "char";
    case ScalarType::kUint8: return "uchar";
    case ScalarType::kInt16: return "short";
    case ScalarType::kUint16: return "ushort";
    case ScalarType::kInt32: return "int";
    case ScalarType::kUint32: return "uint";
    case ScalarType::kFloat32: return "float";
    case ScalarType::kFloat64: return "double";
  }
  return "double";
}

std::size_t type_size(ScalarType t) {
  switch (t) {
    case ScalarType::kInt8:
    case ScalarType::kUint8: return 1;
    case ScalarType::kInt16:
    case ScalarType::kUint16: return 2;
    case ScalarType::kInt32:
    case ScalarType::kUint32:
    case ScalarType::kFloat32: return 4;
    case ScalarType::kFloat64: return 8;
  }
  return 8;
}

template <typename T>
double load_as(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return static_cast<double>(v);
}

double decode(ScalarType t, const char* p) {
  switch (t) {
    case ScalarType::kInt8: return load_as<std::int8_t>(p);
    case ScalarType::kUint8: return load_as<std::uint8_t>(p);
    case ScalarType::kInt16: return load_as<std::int16_t>(p);
    case ScalarType::kUint16: return load_as<std::uint16_t>(p);
    case ScalarType::kInt32: return load_as<std::int32_t>(p);
    case ScalarType::kUint32: return load_as<std::uint32_t>(p);
    case ScalarType::kFloat32: return load_as<float>(p);
    case ScalarType::kFloat64: return load_as<double>(p);
  }
  return 0.0;
}

template <typename T>
void store_as(double v, std::string& out) {
  const T x = static_cast<T>(v);
  char buf[sizeof(T)];
  std::memcpy(buf, &x, sizeof(T));
  out.append(buf, sizeof(T));
}

void encode(ScalarType t, double v, std::string& out) {
  switch (t) {
    case ScalarType::kInt8: store_as<std::int8_t>(std::lround(v), out); break;
    case ScalarType::kUint8: store_as<std::uint8_t>(std::lround(v), out); break;
    case ScalarType::kInt16: store_as<std::int16_t>(std::lround(v), out); break;
    case ScalarType::kUint16: store_as<std::uint16_t>(std::lround(v), out); break;
    case ScalarType::kInt32: store_as<std::int32_t>(std::lround(v), out); break;
    case ScalarType::kUint32: store_as<std::uint32_t>(std::lround(v), out); break;
    case ScalarType::kFloat32: store_as<float>(v, out); break;
    case ScalarType::kFloat64: store_as<double>(v, out); break;
  }
}

}  // namespace

int VertexTable::find(const std::string& name) const {
  for (std::size_t i = 0; i < properties.size(); ++i) {
    if (properties[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

VertexTable read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(path.string(), "", "cannot open PLY file");
  const std::string where = path.string();
  std::string line;
  std::getline(in, line);
  if (line != "ply" && line != "ply\r") throw LoadError(where, "", "missing PLY magic");

  VertexTable t;
  enum class Format { kAscii, kBinaryLe } format = Format::kAscii;
  bool in_vertex = false, seen_vertex = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "end_header") break;
    if (key == "format") {
      std::string f;
      ls >> f;
      if (f == "ascii") format = Format::kAscii;
      else if (f == "binary_little_endian") format = Format::kBinaryLe;
      else throw LoadError(where, "format", "unsupported PLY format '" + f + "'");
    } else if (key == "comment") {
      t.comments.push_back(line.size() > 8 ? line.substr(8) : "");
    } else if (key == "element") {
      std::string name;
      std::size_t n = 0;
      ls >> name >> n;
      if (seen_vertex && name != "vertex") {
        in_vertex = false;
        continue;  // trailing elements are ignored
      }
      if (name != "vertex") throw LoadError(where, "element", "the vertex element must come first");
      in_vertex = seen_vertex = true;
      t.count = n;
    } else if (key == "property" && in_vertex) {
      std::string type, name;
      ls >> type;
      if (type == "list") throw LoadError(where, "property", "list properties on vertices are not supported");
      ls >> name;
      ScalarType st;
      if (!parse_type(type, st)) throw LoadError(where, name, "unknown property type '" + type + "'");
      t.properties.push_back({name, st});
    }
  }
  if (!seen_vertex) throw LoadError(where, "element", "no vertex element");

  const std::size_t np = t.properties.size();
  t.values.resize(t.count * np);
  if (format == Format::kAscii) {
    for (std::size_t i = 0; i < t.values.size(); ++i) {
      if (!(in >> t.values[i])) throw LoadError(where, "", "truncated vertex data");
    }
  } else {
    std::size_t stride = 0;
    for (const auto& p : t.properties) stride += type_size(p.type);
    std::vector<char> row(stride);
    for (std::size_t r = 0; r < t.count; ++r) {
      if (!in.read(row.data(), static_cast<std::streamsize>(stride))) {
        throw LoadError(where, "", "truncated vertex data");
      }
      const char* p = row.data();
      for (std::size_t c = 0; c < np; ++c) {
        t.values[r * np + c] = decode(t.properties[c].type, p);
        p += type_size(t.properties[c].type);
      }
    }
  }
  return t;
}

void write(const std::filesystem::path& path, const VertexTable& table) {
  std::string out = "ply\nformat binary_little_endian 1.0\n";
  for (const auto& c : table.comments) out += "comment " + c + "\n";
  out += "element vertex " + std::to_string(table.count) + "\n";
  for (const auto& p : table.properties) out += std::string("property ") + type_name(p.type) + " " + p.name + "\n";
  out += "end_header\n";
  const std::size_t np = table.properties.size();
  for (std::size_t r = 0; r < table.count; ++r) {
    for (std::size_t c = 0; c < np; ++c) encode(table.properties[c].type, table.values[r * np + c], out);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw LoadError(path.string(), "", "cannot open for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw LoadError(path.string(), "", "write failed");
}

}  // namespace erpgs::ply

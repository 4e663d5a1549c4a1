#pragma once

// Minimal PLY support: a single vertex element with scalar properties,
// ascii or binary little-endian. Enough for splat checkpoints and SfM points.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace erpgs::ply {

enum class ScalarType { kInt8, kUint8, kInt16, kUint16, kInt32, kUint32, kFloat32, kFloat64 };

struct Property {
  std::string name;
  ScalarType type;
};

struct VertexTable {
  std::vector<std::string> comments;
  std::vector<Property> properties;
  std::size_t count = 0;
  std::vector<double> values;  // row-major count × properties.size()

  int find(const std::string& name) const;
  double at(std::size_t row, int column) const { return values[row * properties.size() + column]; }
};

VertexTable read(const std::filesystem::path& path);

/// Writes binary little-endian; each value is converted to its property type.
void write(const std::filesystem::path& path, const VertexTable& table);

}  // namespace erpgs::ply

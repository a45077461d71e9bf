#include "bcore/common.hpp"

#include <bit>
#include <fstream>
#include <sstream>

namespace bcore {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

SeedTree SeedTree::child(std::string_view tag, std::uint64_t index) const noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  std::uint64_t s = splitmix64(state_ ^ h);
  s = splitmix64(s ^ splitmix64(index));
  return SeedTree(s);
}

void write_matrix_file(const std::filesystem::path& path, Json header,
                       const Eigen::Ref<const Eigen::MatrixXd>& m) {
  static_assert(std::endian::native == std::endian::little,
                "matrix artifacts are little-endian");
  header["rows"] = m.rows();
  header["cols"] = m.cols();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << header.dump() << '\n';
  const RowMatrix rm = m;
  out.write(reinterpret_cast<const char*>(rm.data()),
            static_cast<std::streamsize>(rm.size() * sizeof(double)));
  if (!out) throw DataError("short write to " + path.string());
}

MatrixFile read_matrix_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("missing header in " + path.string());
  MatrixFile f;
  try {
    f.header = Json::parse(line);
  } catch (const Json::exception& e) {
    throw DataError("corrupt header in " + path.string() + ": " + e.what());
  }
  if (!f.header.contains("rows") || !f.header.contains("cols"))
    throw DataError("header lacks rows/cols in " + path.string());
  const auto rows = f.header["rows"].get<Eigen::Index>();
  const auto cols = f.header["cols"].get<Eigen::Index>();
  if (rows < 0 || cols < 0) throw DataError("negative shape in " + path.string());
  RowMatrix rm(rows, cols);
  in.read(reinterpret_cast<char*>(rm.data()),
          static_cast<std::streamsize>(rm.size() * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(rm.size() * sizeof(double)))
    throw DataError("truncated payload in " + path.string());
  f.matrix = rm;
  return f;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

}  // namespace bcore
